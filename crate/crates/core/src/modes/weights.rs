use super::{overlap_integral, phasematch_amplitude, LgMode, ModesError, PhaseMatchParams};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// (radial index, topological charge) of a signal or idler mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub p: u32,
    pub ell: i32,
}

impl ModeIndex {
    pub const fn new(p: u32, ell: i32) -> Self {
        Self { p, ell }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeWeight {
    pub signal: ModeIndex,
    pub idler: ModeIndex,
    pub weight: f64,
}

/// Relative pair-emission probabilities over a grid of signal/idler modes for
/// one pump mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeWeightTable {
    pub pump: LgMode,
    pub entries: Vec<ModeWeight>,
    pub normalized: bool,
}

/// Inputs for [`spdc_mode_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRequest {
    pub pump: LgMode,
    /// Common waist of signal and idler (m).
    pub signal_idler_waist: f64,
    pub p_max: u32,
    pub ell_min: i32,
    pub ell_max: i32,
    pub phasematch: PhaseMatchParams,
}

impl SpectrumRequest {
    /// Pump waist is `r_w0` times the signal/idler waist.
    pub fn from_ratio(
        pump_ell: i32,
        r_w0: f64,
        signal_idler_waist: f64,
        p_max: u32,
        ell_range: (i32, i32),
        phasematch: PhaseMatchParams,
    ) -> Self {
        Self {
            pump: LgMode {
                p: 0,
                ell: pump_ell,
                w0: r_w0 * signal_idler_waist,
            },
            signal_idler_waist,
            p_max,
            ell_min: ell_range.0,
            ell_max: ell_range.1,
            phasematch,
        }
    }
}

/// Weight of each (signal, idler) pair is |Λ · Φ|², normalized over the grid.
pub fn spdc_mode_weights(request: &SpectrumRequest) -> Result<ModeWeightTable, ModesError> {
    request.pump.validate()?;
    if request.ell_min > request.ell_max {
        return Err(ModesError::InvalidRequest(format!(
            "empty ell range [{}, {}]",
            request.ell_min, request.ell_max
        )));
    }
    let phase = phasematch_amplitude(&request.phasematch)?;
    let w = request.signal_idler_waist;
    LgMode::new(0, 0, w)?;

    let mut entries = Vec::new();
    for ps in 0..=request.p_max {
        for ls in request.ell_min..=request.ell_max {
            for pi in 0..=request.p_max {
                for li in request.ell_min..=request.ell_max {
                    let signal = LgMode { p: ps, ell: ls, w0: w };
                    let idler = LgMode { p: pi, ell: li, w0: w };
                    let lambda = overlap_integral(&request.pump, &signal, &idler)?;
                    entries.push(ModeWeight {
                        signal: ModeIndex::new(ps, ls),
                        idler: ModeIndex::new(pi, li),
                        weight: (lambda * phase).norm_sqr(),
                    });
                }
            }
        }
    }

    let total: f64 = entries.iter().map(|e| e.weight).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(ModesError::DegenerateSpectrum);
    }
    for e in &mut entries {
        e.weight /= total;
    }
    Ok(ModeWeightTable {
        pump: request.pump,
        entries,
        normalized: true,
    })
}

impl ModeWeightTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn weight(&self, signal: ModeIndex, idler: ModeIndex) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.signal == signal && e.idler == idler)
            .map(|e| e.weight)
    }

    /// Distinct (ℓs, ℓi) labels present in the table, sorted.
    pub fn oam_cells(&self) -> Vec<(i32, i32)> {
        let mut cells: Vec<(i32, i32)> =
            self.entries.iter().map(|e| (e.signal.ell, e.idler.ell)).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    pub fn validate(&self) -> Result<(), ModesError> {
        for e in &self.entries {
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(ModesError::Invariant(format!(
                    "negative or non-finite weight {} at {:?}/{:?}",
                    e.weight, e.signal, e.idler
                )));
            }
            if e.signal.ell + e.idler.ell != self.pump.ell && e.weight != 0.0 {
                return Err(ModesError::Invariant(format!(
                    "nonzero weight on non-conserving pair {:?}/{:?} for pump ell {}",
                    e.signal, e.idler, self.pump.ell
                )));
            }
        }
        if self.normalized && (self.total_weight() - 1.0).abs() > 1e-12 {
            return Err(ModesError::Invariant(format!(
                "normalized table sums to {}",
                self.total_weight()
            )));
        }
        Ok(())
    }

    /// CSV with header `p_s,ell_s,p_i,ell_i,weight`; weights carry 12
    /// significant digits in scientific notation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p_s,ell_s,p_i,ell_i,weight\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.11e}",
                e.signal.p, e.signal.ell, e.idler.p, e.idler.ell, e.weight
            );
        }
        out
    }

    /// Reads the CSV layout written by [`ModeWeightTable::to_csv`]. The pump
    /// mode is not part of the file and must be supplied.
    pub fn from_csv(pump: LgMode, text: &str) -> Result<Self, ModesError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some(h) if h.trim() == "p_s,ell_s,p_i,ell_i,weight" => {}
            other => return Err(ModesError::Csv(format!("unexpected header {other:?}"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(ModesError::Csv(format!("row {}: expected 5 fields", n + 1)));
            }
            let bad = |what: &str| ModesError::Csv(format!("row {}: bad {what}", n + 1));
            entries.push(ModeWeight {
                signal: ModeIndex::new(
                    fields[0].parse().map_err(|_| bad("p_s"))?,
                    fields[1].parse().map_err(|_| bad("ell_s"))?,
                ),
                idler: ModeIndex::new(
                    fields[2].parse().map_err(|_| bad("p_i"))?,
                    fields[3].parse().map_err(|_| bad("ell_i"))?,
                ),
                weight: fields[4].parse().map_err(|_| bad("weight"))?,
            });
        }
        let total: f64 = entries.iter().map(|e| e.weight).sum();
        let table = Self {
            pump,
            entries,
            normalized: (total - 1.0).abs() <= 1e-12,
        };
        table.validate()?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(ell_p: i32, r: f64) -> SpectrumRequest {
        SpectrumRequest::from_ratio(
            ell_p,
            r,
            1e-4,
            0,
            (-1, 1),
            PhaseMatchParams::new(0.0, 0.025).unwrap(),
        )
    }

    #[test]
    fn pump_minus_one_support() {
        let t = spdc_mode_weights(&request(-1, 3.3)).unwrap();
        for e in &t.entries {
            let on = matches!((e.signal.ell, e.idler.ell), (0, -1) | (-1, 0));
            assert_eq!(on, e.weight > 0.0, "{e:?}");
        }
        t.validate().unwrap();
    }

    #[test]
    fn pump_two_support() {
        let t = spdc_mode_weights(&request(2, 4.3)).unwrap();
        let w = t.weight(ModeIndex::new(0, 1), ModeIndex::new(0, 1)).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let t = spdc_mode_weights(&request(0, 2.4)).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("p_s,ell_s,p_i,ell_i,weight\n"));
        let back = ModeWeightTable::from_csv(t.pump, &csv).unwrap();
        for (a, b) in t.entries.iter().zip(&back.entries) {
            assert_eq!(a.signal, b.signal);
            assert!((a.weight - b.weight).abs() <= 1e-11 * a.weight.max(1e-300));
        }
    }

    #[test]
    fn empty_range_rejected() {
        let mut r = request(0, 2.4);
        r.ell_min = 2;
        r.ell_max = 1;
        assert!(matches!(spdc_mode_weights(&r), Err(ModesError::InvalidRequest(_))));
    }

    #[test]
    fn phase_mismatch_cancels_in_normalization() {
        let a = spdc_mode_weights(&request(0, 2.4)).unwrap();
        let mut r = request(0, 2.4);
        r.phasematch = PhaseMatchParams::new(40.0, 0.025).unwrap();
        let b = spdc_mode_weights(&r).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((x.weight - y.weight).abs() < 1e-14);
        }
    }
}
