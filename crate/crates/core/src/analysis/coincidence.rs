use super::{check_sorted, AnalysisError, CoincidenceWindows, Offsets};

/// Greedy earliest-match pairing: each record of `a`, in time order, takes the
/// earliest unused record of `b` inside its window. Returns index pairs.
pub fn match_pairs(
    a: &[u64],
    b: &[u64],
    window: u64,
    offset: i64,
) -> Result<Vec<(usize, usize)>, AnalysisError> {
    check_sorted(a, "a")?;
    check_sorted(b, "b")?;
    let half = (window / 2) as i128;
    let mut pairs = Vec::new();
    let mut j = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        let center = ta as i128 + offset as i128;
        let lo = center - half;
        while j < b.len() && (b[j] as i128) < lo {
            j += 1;
        }
        if j == b.len() {
            break;
        }
        if (b[j] as i128) <= center + half {
            pairs.push((i, j));
            j += 1;
        }
    }
    Ok(pairs)
}

/// Number of `a` records with a partner in `b` within `window` around
/// `t_a + offset`; each `b` record is used at most once.
pub fn count_coincidences(
    a: &[u64],
    b: &[u64],
    window: u64,
    offset: i64,
) -> Result<u64, AnalysisError> {
    Ok(match_pairs(a, b, window, offset)?.len() as u64)
}

/// Signal timestamps of signal–idler pairs that also have a herald within the
/// herald window.
pub fn heralded_pair_times(
    herald: &[u64],
    signal: &[u64],
    idler: &[u64],
    windows: &CoincidenceWindows,
    offsets: &Offsets,
) -> Result<Vec<u64>, AnalysisError> {
    windows.validate()?;
    check_sorted(herald, "herald")?;
    let pair_times = pair_times(signal, idler, windows.pair_window, offsets.idler_minus_signal)?;
    Ok(match_pairs(&pair_times, herald, windows.herald_window, offsets.herald_minus_signal)?
        .into_iter()
        .map(|(i, _)| pair_times[i])
        .collect())
}

/// Three-fold coincidences: signal–idler pairs within the pair window whose
/// signal time has a herald within the herald window.
pub fn heralded_coincidences(
    herald: &[u64],
    signal: &[u64],
    idler: &[u64],
    windows: &CoincidenceWindows,
    offsets: &Offsets,
) -> Result<u64, AnalysisError> {
    Ok(heralded_pair_times(herald, signal, idler, windows, offsets)?.len() as u64)
}

/// Signal timestamps of greedily matched signal–idler pairs.
pub(crate) fn pair_times(
    signal: &[u64],
    idler: &[u64],
    window: u64,
    offset: i64,
) -> Result<Vec<u64>, AnalysisError> {
    Ok(match_pairs(signal, idler, window, offset)?
        .into_iter()
        .map(|(i, _)| signal[i])
        .collect())
}
