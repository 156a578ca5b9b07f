use super::coincidence::pair_times;
use super::histogram::{accidental_rate, cross_histogram, find_peak, DelayHistogram};
use super::{check_sorted, match_pairs, AnalysisError, CoincidenceWindows, Offsets};
use crate::constants::{PS_PER_S, S_PER_HOUR};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Streams recorded while the projectors were set to one (ℓs, ℓi) setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSegment {
    pub setting: (i32, i32),
    pub duration_ps: u64,
    /// Merged heralding detections.
    pub herald: Vec<u64>,
    pub signal: Vec<u64>,
    pub idler: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub windows: CoincidenceWindows,
    pub offsets: Offsets,
    /// Wall-clock bin length for error bars (s).
    pub time_bin_s: f64,
    /// Count three-fold (herald, signal, idler) instead of signal–idler coincidences.
    pub heralded: bool,
    pub bin_width_ps: i64,
    /// Histogram covers offset ± this many picoseconds.
    pub half_range_ps: i64,
    /// Side-band exclusion half-width in units of the coincidence window.
    pub exclusion_factor: f64,
    /// Center the exclusion on the histogram maximum within one window of the
    /// expected offset (otherwise on the offset itself).
    pub fit_peak: bool,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            windows: CoincidenceWindows::default(),
            offsets: Offsets::default(),
            time_bin_s: 1.5 * S_PER_HOUR,
            heralded: false,
            bin_width_ps: 50,
            half_range_ps: 25_000,
            exclusion_factor: 3.0,
            fit_peak: true,
        }
    }
}

impl MatrixOptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        self.windows.validate()?;
        if !(self.time_bin_s > 0.0) {
            return Err(AnalysisError::InvalidOption("time bin must be positive".into()));
        }
        if self.bin_width_ps <= 0 || self.half_range_ps <= 0 || self.half_range_ps % self.bin_width_ps != 0 {
            return Err(AnalysisError::InvalidOption(
                "histogram half range must be a positive multiple of the bin width".into(),
            ));
        }
        if !(self.exclusion_factor > 0.0) {
            return Err(AnalysisError::InvalidOption("exclusion factor must be positive".into()));
        }
        Ok(())
    }

    /// Window used for the counted coincidence.
    pub fn counting_window(&self) -> u64 {
        if self.heralded {
            self.windows.herald_window
        } else {
            self.windows.unheralded_window
        }
    }

    fn counting_offset(&self) -> i64 {
        if self.heralded {
            self.offsets.herald_minus_signal
        } else {
            self.offsets.idler_minus_signal
        }
    }

    fn histogram_range(&self) -> (i64, i64) {
        let c = self.counting_offset();
        (c - self.half_range_ps, c + self.half_range_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBin {
    pub counts: u64,
    pub duration_s: f64,
}

/// Additive per-segment results; several can be merged into one matrix cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub setting: (i32, i32),
    pub duration_s: f64,
    pub raw: u64,
    pub histogram: DelayHistogram,
    pub bins: Vec<TimeBin>,
}

impl SegmentCounts {
    /// Appends a later piece of the same setting (e.g. the next simulation
    /// block), keeping its time bins separate.
    pub fn merge(&mut self, other: &SegmentCounts) -> Result<(), AnalysisError> {
        if other.setting != self.setting {
            return Err(AnalysisError::CellMismatch);
        }
        self.histogram.accumulate(&other.histogram)?;
        self.duration_s += other.duration_s;
        self.raw += other.raw;
        self.bins.extend_from_slice(&other.bins);
        Ok(())
    }
}

/// Counts coincidences of one segment, splits them into time bins and
/// histograms the partner delays.
pub fn analyze_segment(
    setting: (i32, i32),
    duration_ps: u64,
    herald: &[u64],
    signal: &[u64],
    idler: &[u64],
    options: &MatrixOptions,
) -> Result<SegmentCounts, AnalysisError> {
    options.validate()?;
    check_sorted(herald, "herald")?;
    let duration_s = duration_ps as f64 / PS_PER_S;
    let (events, histogram) = if options.heralded {
        let pairs = pair_times(
            signal,
            idler,
            options.windows.pair_window,
            options.offsets.idler_minus_signal,
        )?;
        let hist = cross_histogram(&pairs, herald, options.bin_width_ps, options.histogram_range(), duration_s)?;
        let matched = match_pairs(
            &pairs,
            herald,
            options.windows.herald_window,
            options.offsets.herald_minus_signal,
        )?;
        (matched.into_iter().map(|(i, _)| pairs[i]).collect::<Vec<_>>(), hist)
    } else {
        let hist = cross_histogram(signal, idler, options.bin_width_ps, options.histogram_range(), duration_s)?;
        let events = pair_times(
            signal,
            idler,
            options.windows.unheralded_window,
            options.offsets.idler_minus_signal,
        )?;
        (events, hist)
    };

    let n_bins = ((duration_s / options.time_bin_s).floor() as usize).max(1);
    let mut bins = vec![
        TimeBin {
            counts: 0,
            duration_s: duration_s / n_bins as f64,
        };
        n_bins
    ];
    for &t in &events {
        let k = if duration_ps == 0 {
            0
        } else {
            ((t as u128 * n_bins as u128) / duration_ps as u128).min(n_bins as u128 - 1) as usize
        };
        bins[k].counts += 1;
    }
    Ok(SegmentCounts {
        setting,
        duration_s,
        raw: events.len() as u64,
        histogram,
        bins,
    })
}

/// One cell of a correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub raw: u64,
    pub integration_time_s: f64,
    /// Expected accidental coincidences over the whole integration time.
    pub accidentals: f64,
    pub accidental_per_hour: f64,
    /// Accidental-corrected coincidence rate.
    pub rate_per_hour: f64,
    pub error_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub pump_ell: i32,
    pub heralded: bool,
    pub time_bin_s: f64,
    pub cells: BTreeMap<(i32, i32), CellStats>,
}

/// Merges segment results per setting and applies the accidental correction.
/// `expected_cells` lists the settings that must be present; when empty, every
/// setting found in `results` becomes a cell.
pub fn assemble_matrix(
    pump_ell: i32,
    results: &[SegmentCounts],
    expected_cells: &[(i32, i32)],
    options: &MatrixOptions,
) -> Result<CorrelationMatrix, AnalysisError> {
    options.validate()?;
    let mut grouped: BTreeMap<(i32, i32), Vec<&SegmentCounts>> = BTreeMap::new();
    for r in results {
        grouped.entry(r.setting).or_default().push(r);
    }
    let cells: Vec<(i32, i32)> = if expected_cells.is_empty() {
        grouped.keys().copied().collect()
    } else {
        expected_cells.to_vec()
    };
    if cells.is_empty() {
        return Err(AnalysisError::ZeroDuration);
    }

    let window = options.counting_window();
    let mut out = BTreeMap::new();
    for cell in cells {
        let segs = grouped.get(&cell).ok_or(AnalysisError::MissingCell(cell.0, cell.1))?;
        let mut hist = segs[0].histogram.clone();
        for s in &segs[1..] {
            hist.accumulate(&s.histogram)?;
        }
        let total_s: f64 = segs.iter().map(|s| s.duration_s).sum();
        if !(total_s > 0.0) {
            return Err(AnalysisError::ZeroDuration);
        }
        let raw: u64 = segs.iter().map(|s| s.raw).sum();

        let offset = options.counting_offset();
        let center = if options.fit_peak {
            find_peak(&hist, offset, (window / 2) as i64)
        } else {
            offset
        };
        let half_excl = (options.exclusion_factor * window as f64).round() as i64;
        let acc = accidental_rate(&hist, window, (center - half_excl, center + half_excl))?;

        let accidentals = acc.per_second * total_s;
        let rate_per_s = (raw as f64 - accidentals) / total_s;
        let bins: Vec<&TimeBin> = segs.iter().flat_map(|s| s.bins.iter()).collect();
        let error_per_s = if bins.len() >= 2 {
            let rates: Vec<f64> = bins
                .iter()
                .map(|b| b.counts as f64 / b.duration_s - acc.per_second)
                .collect();
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            (raw as f64 + (acc.std_error * total_s).powi(2)).sqrt() / total_s
        };
        out.insert(
            cell,
            CellStats {
                raw,
                integration_time_s: total_s,
                accidentals,
                accidental_per_hour: acc.per_second * S_PER_HOUR,
                rate_per_hour: rate_per_s * S_PER_HOUR,
                error_per_hour: error_per_s * S_PER_HOUR,
            },
        );
    }
    Ok(CorrelationMatrix {
        pump_ell,
        heralded: options.heralded,
        time_bin_s: options.time_bin_s,
        cells: out,
    })
}

/// Builds a correlation matrix from a projection scan. Segments are analyzed
/// in parallel; the result does not depend on scheduling.
pub fn build_matrix(
    pump_ell: i32,
    scan: &[ScanSegment],
    expected_cells: &[(i32, i32)],
    options: &MatrixOptions,
) -> Result<CorrelationMatrix, AnalysisError> {
    if scan.iter().all(|s| s.duration_ps == 0) {
        return Err(AnalysisError::ZeroDuration);
    }
    let results = scan
        .par_iter()
        .map(|s| analyze_segment(s.setting, s.duration_ps, &s.herald, &s.signal, &s.idler, options))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_matrix(pump_ell, &results, expected_cells, options)
}

impl CorrelationMatrix {
    pub fn total_raw(&self) -> u64 {
        self.cells.values().map(|c| c.raw).sum()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.cells.values().map(|c| c.rate_per_hour).collect()
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!(
            "# config_hash={config_hash}\n# pump_ell={}\n# heralded={}\nell_s,ell_i,raw,integration_time_s,accidentals,accidental_per_hour,rate_per_hour,error_per_hour\n",
            self.pump_ell, self.heralded
        );
        for (&(ls, li), c) in &self.cells {
            let _ = writeln!(
                out,
                "{ls},{li},{},{},{},{},{},{}",
                c.raw,
                c.integration_time_s,
                c.accidentals,
                c.accidental_per_hour,
                c.rate_per_hour,
                c.error_per_hour
            );
        }
        out
    }

    /// Reads the layout written by [`CorrelationMatrix::to_csv`]; returns the
    /// matrix and its config hash.
    pub fn from_csv(text: &str) -> Result<(CorrelationMatrix, String), AnalysisError> {
        let bad = |msg: String| AnalysisError::InvalidOption(format!("matrix CSV: {msg}"));
        let mut hash = None;
        let mut pump_ell = None;
        let mut heralded = None;
        let mut cells = BTreeMap::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta.trim().split_once('=').ok_or_else(|| bad(format!("line {}: bad comment", n + 1)))?;
                match k {
                    "config_hash" => hash = Some(v.to_string()),
                    "pump_ell" => pump_ell = Some(v.parse().map_err(|_| bad(format!("line {}: pump_ell", n + 1)))?),
                    "heralded" => heralded = Some(v.parse().map_err(|_| bad(format!("line {}: heralded", n + 1)))?),
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if !line.starts_with("ell_s,ell_i,raw,") {
                    return Err(bad(format!("line {}: missing header", n + 1)));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("line {}: expected 8 fields", n + 1)));
            }
            let num = |i: usize| -> Result<f64, AnalysisError> {
                f[i].parse().map_err(|_| bad(format!("line {}: field {}", n + 1, i + 1)))
            };
            let key = (
                f[0].parse().map_err(|_| bad(format!("line {}: ell_s", n + 1)))?,
                f[1].parse().map_err(|_| bad(format!("line {}: ell_i", n + 1)))?,
            );
            cells.insert(
                key,
                CellStats {
                    raw: f[2].parse().map_err(|_| bad(format!("line {}: raw", n + 1)))?,
                    integration_time_s: num(3)?,
                    accidentals: num(4)?,
                    accidental_per_hour: num(5)?,
                    rate_per_hour: num(6)?,
                    error_per_hour: num(7)?,
                },
            );
        }
        Ok((
            CorrelationMatrix {
                pump_ell: pump_ell.ok_or_else(|| bad("missing pump_ell".into()))?,
                heralded: heralded.unwrap_or(false),
                time_bin_s: f64::NAN,
                cells,
            },
            hash.unwrap_or_default(),
        ))
    }

    pub fn export(&self, config_hash: &str) -> MatrixExport {
        MatrixExport {
            config_hash: config_hash.to_string(),
            pump_ell: self.pump_ell,
            heralded: self.heralded,
            time_bin_s: self.time_bin_s,
            cells: self
                .cells
                .iter()
                .map(|(&(ls, li), c)| (format!("{ls},{li}"), *c))
                .collect(),
        }
    }
}

/// JSON form of a matrix: cells keyed `"ell_s,ell_i"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixExport {
    pub config_hash: String,
    pub pump_ell: i32,
    pub heralded: bool,
    pub time_bin_s: f64,
    pub cells: BTreeMap<String, CellStats>,
}

impl MatrixExport {
    pub fn into_matrix(self) -> Result<CorrelationMatrix, AnalysisError> {
        let mut cells = BTreeMap::new();
        for (key, stats) in self.cells {
            let parsed = key
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| AnalysisError::InvalidOption(format!("bad cell key {key:?}")))?;
            cells.insert(parsed, stats);
        }
        Ok(CorrelationMatrix {
            pump_ell: self.pump_ell,
            heralded: self.heralded,
            time_bin_s: self.time_bin_s,
            cells,
        })
    }
}

/// Sample Pearson coefficient of the corrected rates, cells in ascending
/// (ℓs, ℓi) order.
pub fn pearson(a: &CorrelationMatrix, b: &CorrelationMatrix) -> Result<f64, AnalysisError> {
    if !a.cells.keys().eq(b.cells.keys()) {
        return Err(AnalysisError::CellMismatch);
    }
    pearson_slices(&a.rates(), &b.rates())
}

pub(crate) fn pearson_slices(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&u, &v) in x.iter().zip(y) {
        sxy += (u - mx) * (v - my);
        sxx += (u - mx) * (u - mx);
        syy += (v - my) * (v - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Share of the corrected rate in cells obeying ℓs + ℓi = ℓp, clamped to [0, 1].
pub fn diagonal_fraction(m: &CorrelationMatrix) -> Result<f64, AnalysisError> {
    let total: f64 = m.cells.values().map(|c| c.rate_per_hour).sum();
    if !(total > 0.0) {
        return Err(AnalysisError::UndefinedFraction);
    }
    let on: f64 = m
        .cells
        .iter()
        .filter(|(&(ls, li), _)| ls + li == m.pump_ell)
        .map(|(_, c)| c.rate_per_hour)
        .sum();
    Ok((on / total).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(pump_ell: i32, rates: &[((i32, i32), f64)]) -> CorrelationMatrix {
        CorrelationMatrix {
            pump_ell,
            heralded: false,
            time_bin_s: 1.0,
            cells: rates
                .iter()
                .map(|&(k, r)| {
                    (
                        k,
                        CellStats {
                            raw: 0,
                            integration_time_s: 1.0,
                            accidentals: 0.0,
                            accidental_per_hour: 0.0,
                            rate_per_hour: r,
                            error_per_hour: 0.0,
                        },
                    )
                })
                .collect(),
        }
    }

    fn grid(f: impl Fn(i32, i32) -> f64) -> Vec<((i32, i32), f64)> {
        let mut v = Vec::new();
        for ls in -1..=1 {
            for li in -1..=1 {
                v.push(((ls, li), f(ls, li)));
            }
        }
        v
    }

    #[test]
    fn pearson_self_and_negated() {
        let a = matrix(0, &grid(|ls, li| (3 * ls + li) as f64 + 0.5 * (ls * li) as f64));
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        let neg = matrix(0, &grid(|ls, li| -((3 * ls + li) as f64 + 0.5 * (ls * li) as f64)));
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let flat = matrix(0, &grid(|_, _| 2.0));
        assert_eq!(pearson(&a, &flat), Err(AnalysisError::ZeroVariance));
        let other = matrix(0, &[((0, 0), 1.0)]);
        assert_eq!(pearson(&a, &other), Err(AnalysisError::CellMismatch));
    }

    #[test]
    fn diagonal_fraction_cases() {
        let noiseless = matrix(0, &grid(|ls, li| if ls + li == 0 { 5.0 } else { 0.0 }));
        assert_eq!(diagonal_fraction(&noiseless).unwrap(), 1.0);
        let uniform = matrix(0, &grid(|_, _| 1.0));
        assert!((diagonal_fraction(&uniform).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let zero = matrix(0, &grid(|_, _| 0.0));
        assert_eq!(diagonal_fraction(&zero), Err(AnalysisError::UndefinedFraction));
        let negative_off = matrix(0, &grid(|ls, li| if ls + li == 0 { 1.0 } else { -0.01 }));
        assert_eq!(diagonal_fraction(&negative_off).unwrap(), 1.0);
    }

    #[test]
    fn zero_duration_scan_rejected() {
        let seg = ScanSegment {
            setting: (0, 0),
            duration_ps: 0,
            herald: vec![],
            signal: vec![],
            idler: vec![],
        };
        assert_eq!(
            build_matrix(0, &[seg], &[(0, 0)], &MatrixOptions::default()),
            Err(AnalysisError::ZeroDuration)
        );
    }

    #[test]
    fn missing_cell_named() {
        let seg = ScanSegment {
            setting: (0, 0),
            duration_ps: 1_000_000,
            herald: vec![],
            signal: vec![10],
            idler: vec![10],
        };
        assert_eq!(
            build_matrix(0, &[seg], &[(0, 0), (1, -1)], &MatrixOptions::default()),
            Err(AnalysisError::MissingCell(1, -1))
        );
    }

    #[test]
    fn export_round_trip() {
        let a = matrix(-1, &grid(|ls, li| (ls - li) as f64));
        let json = serde_json::to_string(&a.export("abc")).unwrap();
        assert!(json.contains("\"-1,0\""));
        let back: MatrixExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.into_matrix().unwrap(), a);
        let (from_csv, hash) = CorrelationMatrix::from_csv(&a.to_csv("abc")).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(from_csv.cells, a.cells);
        assert_eq!(from_csv.pump_ell, -1);
    }
}
