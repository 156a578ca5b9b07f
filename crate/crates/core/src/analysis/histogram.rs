use super::{check_sorted, AnalysisError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Counts of pairwise delays `t_b - t_a` in `[min_delay, max_delay)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayHistogram {
    pub bin_width: i64,
    pub min_delay: i64,
    pub max_delay: i64,
    pub counts: Vec<u64>,
    /// Seconds of data summed into the histogram.
    pub integration_time: f64,
}

impl DelayHistogram {
    pub fn zeros(bin_width: i64, range: (i64, i64), integration_time: f64) -> Result<Self, AnalysisError> {
        let (min_delay, max_delay) = range;
        if bin_width <= 0 {
            return Err(AnalysisError::InvalidHistogram("bin width must be positive".into()));
        }
        if max_delay <= min_delay {
            return Err(AnalysisError::InvalidHistogram(format!(
                "empty range [{min_delay}, {max_delay})"
            )));
        }
        let span = max_delay - min_delay;
        if span % bin_width != 0 {
            return Err(AnalysisError::InvalidHistogram(format!(
                "bin width {bin_width} does not divide range length {span}"
            )));
        }
        Ok(Self {
            bin_width,
            min_delay,
            max_delay,
            counts: vec![0; (span / bin_width) as usize],
            integration_time,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, k: usize) -> i64 {
        self.min_delay + k as i64 * self.bin_width
    }

    /// Adds another histogram with identical binning.
    pub fn accumulate(&mut self, other: &DelayHistogram) -> Result<(), AnalysisError> {
        if (self.bin_width, self.min_delay, self.max_delay)
            != (other.bin_width, other.min_delay, other.max_delay)
        {
            return Err(AnalysisError::InvalidHistogram("binning mismatch".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.integration_time += other.integration_time;
        Ok(())
    }

    /// CSV with header `bin_start_ps,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_ps,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{c}", self.bin_start(k));
        }
        out
    }
}

/// Histogram of all delays `t_b - t_a` falling in `range`, found with a
/// sliding two-pointer sweep.
pub fn cross_histogram(
    a: &[u64],
    b: &[u64],
    bin_width: i64,
    range: (i64, i64),
    integration_time: f64,
) -> Result<DelayHistogram, AnalysisError> {
    check_sorted(a, "a")?;
    check_sorted(b, "b")?;
    let mut hist = DelayHistogram::zeros(bin_width, range, integration_time)?;
    let (min, max) = (range.0 as i128, range.1 as i128);
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i128;
        while start < b.len() && (b[start] as i128) - ta < min {
            start += 1;
        }
        for &tb in &b[start..] {
            let d = tb as i128 - ta;
            if d >= max {
                break;
            }
            hist.counts[((d - min) / bin_width as i128) as usize] += 1;
        }
    }
    Ok(hist)
}

/// Center of the fullest bin whose start lies within `half_width` of `around`.
/// Falls back to `around` for an empty search region.
pub fn find_peak(hist: &DelayHistogram, around: i64, half_width: i64) -> i64 {
    let mut best: Option<(u64, usize)> = None;
    for (k, &c) in hist.counts.iter().enumerate() {
        let center = hist.bin_start(k) + hist.bin_width / 2;
        if (center - around).abs() > half_width {
            continue;
        }
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, k));
        }
    }
    match best {
        Some((c, k)) if c > 0 => hist.bin_start(k) + hist.bin_width / 2,
        _ => around,
    }
}

/// Background level estimated from the bins outside an exclusion region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentalEstimate {
    /// Accidental coincidences per second in one window.
    pub per_second: f64,
    /// Standard error of `per_second`.
    pub std_error: f64,
    /// Mean count per histogram bin outside the exclusion.
    pub background_per_bin: f64,
    pub bins_used: usize,
    pub window: u64,
}

impl AccidentalEstimate {
    /// Expected accidentals in the window over `seconds` of data.
    pub fn expected_counts(&self, seconds: f64) -> f64 {
        self.per_second * seconds
    }
}

/// Mean bin level outside `exclusion` (half-open, ps), rescaled to a window
/// of `window` ps and to a rate per second of integration.
pub fn accidental_rate(
    hist: &DelayHistogram,
    window: u64,
    exclusion: (i64, i64),
) -> Result<AccidentalEstimate, AnalysisError> {
    if !(hist.integration_time > 0.0) {
        return Err(AnalysisError::InvalidHistogram("integration time must be positive".into()));
    }
    let outside: Vec<f64> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            let start = hist.bin_start(k);
            start + hist.bin_width <= exclusion.0 || start >= exclusion.1
        })
        .map(|(_, &c)| c as f64)
        .collect();
    if outside.is_empty() {
        return Err(AnalysisError::ExclusionCoversRange);
    }
    let n = outside.len() as f64;
    let mean = outside.iter().sum::<f64>() / n;
    let std_error = if outside.len() > 1 {
        let var = outside.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let scale = window as f64 / hist.bin_width as f64 / hist.integration_time;
    Ok(AccidentalEstimate {
        per_second: mean * scale,
        std_error: std_error * scale,
        background_per_bin: mean,
        bins_used: outside.len(),
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        let h = cross_histogram(&[0], &[100, 250], 100, (0, 300), 1.0).unwrap();
        assert_eq!(h.counts, vec![0, 1, 1]);
    }

    #[test]
    fn empty_a_gives_zeros() {
        let h = cross_histogram(&[], &[1, 2, 3], 10, (-50, 50), 1.0).unwrap();
        assert_eq!(h.counts, vec![0; 10]);
    }

    #[test]
    fn negative_delays_and_upper_edge() {
        let h = cross_histogram(&[100], &[0, 50, 99, 100, 150], 50, (-100, 50), 1.0).unwrap();
        // delays -100, -50, -1, 0 in range; 50 excluded
        assert_eq!(h.counts, vec![1, 2, 1]);
    }

    #[test]
    fn invalid_binning() {
        assert!(cross_histogram(&[], &[], 7, (0, 100), 1.0).is_err());
        assert!(cross_histogram(&[], &[], 0, (0, 100), 1.0).is_err());
        assert!(cross_histogram(&[], &[], 10, (10, 10), 1.0).is_err());
    }

    #[test]
    fn flat_background() {
        let mut h = DelayHistogram::zeros(50, (-500, 500), 2.0).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 8);
        h.counts[10] = 500;
        let est = accidental_rate(&h, 300, (-150, 150)).unwrap();
        // window = 6 bins of level 8 over 2 s
        assert!((est.per_second - 6.0 * 8.0 / 2.0).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert!(matches!(
            accidental_rate(&h, 300, (-1000, 1000)),
            Err(AnalysisError::ExclusionCoversRange)
        ));
    }

    #[test]
    fn peak_search() {
        let mut h = DelayHistogram::zeros(10, (-100, 100), 1.0).unwrap();
        h.counts[3] = 50; // far peak outside search
        h.counts[12] = 9;
        assert_eq!(find_peak(&h, 0, 40), 25);
        assert_eq!(find_peak(&DelayHistogram::zeros(10, (-100, 100), 1.0).unwrap(), 7, 40), 7);
    }
}
