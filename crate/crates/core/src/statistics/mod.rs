//! Photon-number statistics of the pump: two-mode squeezed vacuum from the
//! first source, gain calibration from measured rates, beam-splitter loss and
//! the single-to-multi-pair ratio.

mod csv;

pub use self::csv::{distribution_from_csv, distribution_to_csv};

use crate::constants::photon_energy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default truncation policy: keep the unaccounted probability below this.
pub const DEFAULT_TAIL_BOUND: f64 = 1e-12;

/// Gains at or above this value leave the low-gain regime.
pub const LOW_GAIN_LIMIT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("n_max = {n_max} leaves tail {tail:e} above {requested:e}; use n_max >= {suggested}")]
    TruncationTooSmall {
        n_max: usize,
        tail: f64,
        requested: f64,
        suggested: usize,
    },
    #[error("ratio undefined: distribution has no one- or multi-photon content")]
    UndefinedRatio,
    #[error("distribution CSV: {0}")]
    Csv(String),
}

fn invalid(msg: impl Into<String>) -> StatsError {
    StatsError::InvalidParameter(msg.into())
}

/// P(n) for n = 0..=n_max plus an upper bound on the probability beyond n_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    pub probs: Vec<f64>,
    pub tail_bound: f64,
}

impl PhotonNumberDistribution {
    pub fn new(probs: Vec<f64>, tail_bound: f64) -> Result<Self, StatsError> {
        let dist = Self { probs, tail_bound };
        dist.validate()?;
        Ok(dist)
    }

    pub fn n_max(&self) -> usize {
        self.probs.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.probs.is_empty() {
            return Err(invalid("distribution needs at least P(0)"));
        }
        if let Some((n, p)) = self
            .probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p >= 0.0 && **p <= 1.0 + 1e-12))
        {
            return Err(invalid(format!("P({n}) = {p} outside [0, 1]")));
        }
        if !(self.tail_bound >= 0.0) {
            return Err(invalid(format!("tail bound {} is negative", self.tail_bound)));
        }
        let sum: f64 = self.probs.iter().sum();
        if sum > 1.0 + 1e-12 || sum + self.tail_bound < 1.0 - 1e-12 {
            return Err(invalid(format!(
                "probabilities sum to {sum} with tail bound {}",
                self.tail_bound
            )));
        }
        Ok(())
    }

    /// Vacuum: P(0) = 1.
    pub fn vacuum() -> Self {
        Self {
            probs: vec![1.0],
            tail_bound: 0.0,
        }
    }

    /// Fock state |n⟩.
    pub fn fock(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self {
            probs,
            tail_bound: 0.0,
        }
    }

    /// Poissonian (coherent-state) statistics truncated at the default tail bound.
    pub fn poissonian(mean: f64) -> Result<Self, StatsError> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(invalid(format!("mean photon number {mean}")));
        }
        if mean == 0.0 {
            return Ok(Self::vacuum());
        }
        let mut probs = Vec::new();
        let mut term = (-mean).exp();
        let mut n = 0usize;
        // Run past the mode, then until the terms fall below the tail bound.
        loop {
            probs.push(term);
            n += 1;
            term *= mean / n as f64;
            if n as f64 > mean && term < DEFAULT_TAIL_BOUND * 1e-3 {
                break;
            }
        }
        // Tail of a Poisson beyond the mode is bounded by a geometric series.
        let ratio = mean / (n as f64 + 1.0);
        let tail = term / (1.0 - ratio);
        let sum: f64 = probs.iter().sum();
        Ok(Self {
            probs,
            tail_bound: tail.max(1.0 - sum).max(0.0),
        })
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - mean).powi(2) * p)
            .sum()
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Σ_{n≥2} P(n) over the retained support.
    pub fn multi_photon(&self) -> f64 {
        self.probs.iter().skip(2).sum()
    }
}

fn tanh2(gamma: f64) -> f64 {
    let t = gamma.tanh();
    t * t
}

/// Two-mode squeezed vacuum photon-number distribution
/// P(n) = tanh^{2n}γ / cosh²γ for n = 0..=n_max.
pub fn pn_tmsv(gamma: f64, n_max: usize) -> Result<PhotonNumberDistribution, StatsError> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gain {gamma} must be finite and non-negative")));
    }
    let x = tanh2(gamma);
    let p0 = 1.0 - x; // 1/cosh²γ
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut term = p0;
    for _ in 0..=n_max {
        probs.push(term);
        term *= x;
    }
    // Σ_{n > n_max} (1 - x) x^n = x^{n_max + 1}
    let tail_bound = x.powi(n_max as i32 + 1);
    Ok(PhotonNumberDistribution { probs, tail_bound })
}

/// Smallest truncation order with a tail below `max_tail`.
pub fn tmsv_order_for_tail(gamma: f64, max_tail: f64) -> usize {
    let x = tanh2(gamma);
    if x == 0.0 {
        return 0;
    }
    let needed = (max_tail.ln() / x.ln()).ceil() - 1.0;
    needed.max(0.0) as usize
}

/// Like [`pn_tmsv`] but refuses a truncation whose tail exceeds `max_tail`.
pub fn pn_tmsv_bounded(
    gamma: f64,
    n_max: usize,
    max_tail: f64,
) -> Result<PhotonNumberDistribution, StatsError> {
    let dist = pn_tmsv(gamma, n_max)?;
    if dist.tail_bound > max_tail {
        return Err(StatsError::TruncationTooSmall {
            n_max,
            tail: dist.tail_bound,
            requested: max_tail,
            suggested: tmsv_order_for_tail(gamma, max_tail),
        });
    }
    Ok(dist)
}

/// [`pn_tmsv`] truncated by the default tail policy.
pub fn pn_tmsv_auto(gamma: f64) -> Result<PhotonNumberDistribution, StatsError> {
    let n_max = tmsv_order_for_tail(gamma, DEFAULT_TAIL_BOUND);
    pn_tmsv(gamma, n_max)
}

/// Drive amplitude α_d = √n_d, n_d = power · t_coh / (ħ 2πc/λ).
pub fn alpha_from_drive(power: f64, lambda_d: f64, t_coh: f64) -> Result<f64, StatsError> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(invalid(format!("drive power {power}")));
    }
    if !(lambda_d > 0.0 && t_coh > 0.0) {
        return Err(invalid("wavelength and coherence time must be positive"));
    }
    Ok((power * t_coh / photon_energy(lambda_d)).sqrt())
}

/// Drive power needed for amplitude `alpha` (inverse of [`alpha_from_drive`]).
pub fn drive_for_alpha(alpha: f64, lambda_d: f64, t_coh: f64) -> f64 {
    alpha * alpha * photon_energy(lambda_d) / t_coh
}

/// Effective nonlinear coefficient of the first source and the drive
/// properties it was calibrated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCalibration {
    pub kappa: f64,
    pub t_coh: f64,
    pub lambda_d: f64,
}

impl GainCalibration {
    pub fn new(kappa: f64, t_coh: f64, lambda_d: f64) -> Result<Self, StatsError> {
        if !(kappa > 0.0 && t_coh > 0.0 && lambda_d > 0.0) {
            return Err(invalid("kappa, t_coh and lambda_d must be positive"));
        }
        Ok(Self {
            kappa,
            t_coh,
            lambda_d,
        })
    }

    /// γ = α_d κ at the given drive power.
    pub fn gain(&self, power: f64) -> Result<f64, StatsError> {
        Ok(alpha_from_drive(power, self.lambda_d, self.t_coh)? * self.kappa)
    }
}

/// Intermediate values produced while calibrating κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub calibration: GainCalibration,
    pub eta_coup: f64,
    pub p1: f64,
    pub gamma: f64,
    pub alpha_d: f64,
    /// Set when γ ≥ [`LOW_GAIN_LIMIT`], where P(1) ≈ γ² no longer holds.
    pub low_gain_warning: Option<String>,
}

/// Infers κ from the measured herald–pump coincidence rate and pump singles
/// rate at a low drive power.
pub fn calibrate_kappa(
    coincidence_rate: f64,
    singles_rate: f64,
    t_coh: f64,
    power: f64,
    lambda_d: f64,
) -> Result<CalibrationReport, StatsError> {
    if !(coincidence_rate > 0.0 && singles_rate > 0.0) {
        return Err(invalid("rates must be positive"));
    }
    if coincidence_rate > singles_rate {
        return Err(invalid(format!(
            "coincidence rate {coincidence_rate} exceeds singles rate {singles_rate}"
        )));
    }
    if !(power > 0.0) {
        return Err(invalid("calibration drive power must be positive"));
    }
    let alpha_d = alpha_from_drive(power, lambda_d, t_coh)?;
    let eta_coup = coincidence_rate / singles_rate;
    let p1 = singles_rate / eta_coup * t_coh;
    let gamma = p1.sqrt();
    let kappa = gamma / alpha_d;
    let low_gain_warning = (gamma >= LOW_GAIN_LIMIT).then(|| {
        format!("gain {gamma:.4} is outside the low-gain regime (>= {LOW_GAIN_LIMIT})")
    });
    Ok(CalibrationReport {
        calibration: GainCalibration::new(kappa, t_coh, lambda_d)?,
        eta_coup,
        p1,
        gamma,
        alpha_d,
        low_gain_warning,
    })
}

/// Rates the calibration model predicts for a source with gain coefficient
/// `kappa`: returns (coincidence_rate, singles_rate).
pub fn forward_rates(
    kappa: f64,
    eta_coup: f64,
    t_coh: f64,
    power: f64,
    lambda_d: f64,
) -> Result<(f64, f64), StatsError> {
    let gamma = alpha_from_drive(power, lambda_d, t_coh)? * kappa;
    let singles = gamma * gamma * eta_coup / t_coh;
    Ok((eta_coup * singles, singles))
}

/// Transmission factors between the first source and the second crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    pub eta_det: f64,
    pub eta_smf: f64,
    pub eta_slm: f64,
    pub eta_total: f64,
}

impl LossBudget {
    pub fn new(eta_det: f64, eta_smf: f64, eta_slm: f64) -> Result<Self, StatsError> {
        for (name, v) in [("eta_det", eta_det), ("eta_smf", eta_smf), ("eta_slm", eta_slm)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(Self {
            eta_det,
            eta_smf,
            eta_slm,
            eta_total: eta_smf * eta_slm,
        })
    }

    /// Fiber coupling inferred from a measured coupling efficiency that
    /// includes the detector: η_SMF = η_coup / η_det.
    pub fn from_coupling(eta_coup: f64, eta_det: f64, eta_slm: f64) -> Result<Self, StatsError> {
        Self::new(eta_det, eta_coup / eta_det, eta_slm)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        let fresh = Self::new(self.eta_det, self.eta_smf, self.eta_slm)?;
        if (fresh.eta_total - self.eta_total).abs() > 1e-12 {
            return Err(invalid(format!(
                "eta_total {} != eta_smf * eta_slm = {}",
                self.eta_total, fresh.eta_total
            )));
        }
        Ok(())
    }
}

fn binomial_pmf(j: usize, n: usize, eta: f64) -> f64 {
    if eta == 1.0 {
        return if n == j { 1.0 } else { 0.0 };
    }
    if eta == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln_choose = statrs::function::factorial::ln_binomial(j as u64, n as u64);
    (ln_choose + n as f64 * eta.ln() + (j - n) as f64 * (-eta).ln_1p()).exp()
}

/// Beam-splitter loss with transmission `eta`:
/// P'(n) = Σ_{j≥n} P(j) C(j,n) ηⁿ (1−η)^{j−n}.
pub fn apply_loss(
    dist: &PhotonNumberDistribution,
    eta: f64,
) -> Result<PhotonNumberDistribution, StatsError> {
    dist.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("transmission {eta} outside [0, 1]")));
    }
    let n_max = dist.n_max();
    let mut out = vec![0.0; n_max + 1];
    for (j, &pj) in dist.probs.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        for (n, slot) in out.iter_mut().enumerate().take(j + 1) {
            *slot += pj * binomial_pmf(j, n, eta);
        }
    }
    Ok(PhotonNumberDistribution {
        probs: out,
        tail_bound: dist.tail_bound,
    })
}

/// Single-pair to multi-pair ratio P(1)/P(>1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MultipairRatio {
    /// Ratio with bounds from the unresolved tail: `lower` assumes the whole
    /// tail is multi-photon, `upper` assumes none of it is.
    Finite { ratio: f64, lower: f64, upper: f64 },
    /// No multi-photon content in the retained support. `lower` is
    /// P(1)/tail_bound (infinite when the tail bound is zero).
    Infinite { lower: f64 },
}

impl MultipairRatio {
    pub fn value(&self) -> f64 {
        match *self {
            MultipairRatio::Finite { ratio, .. } => ratio,
            MultipairRatio::Infinite { .. } => f64::INFINITY,
        }
    }
}

pub fn multipair_ratio(dist: &PhotonNumberDistribution) -> Result<MultipairRatio, StatsError> {
    dist.validate()?;
    let p1 = dist.prob(1);
    let multi = dist.multi_photon();
    if multi == 0.0 {
        if p1 == 0.0 {
            return Err(StatsError::UndefinedRatio);
        }
        let lower = if dist.tail_bound > 0.0 {
            p1 / dist.tail_bound
        } else {
            f64::INFINITY
        };
        return Ok(MultipairRatio::Infinite { lower });
    }
    Ok(MultipairRatio::Finite {
        ratio: p1 / multi,
        lower: p1 / (multi + dist.tail_bound),
        upper: p1 / multi,
    })
}

/// Mean and standard deviation of the total OAM (units of ħ) carried by a
/// pump with charge `ell_p` and photon statistics `dist`.
pub fn oam_fluctuation(dist: &PhotonNumberDistribution, ell_p: i32) -> Result<(f64, f64), StatsError> {
    dist.validate()?;
    let l = ell_p as f64;
    Ok((l * dist.mean(), l.abs() * dist.variance().max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_at_zero_gain() {
        let d = pn_tmsv(0.0, 4).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.tail_bound, 0.0);
    }

    #[test]
    fn thermal_ratio_is_constant() {
        let g = 0.7;
        let d = pn_tmsv(g, 30).unwrap();
        let x = g.tanh().powi(2);
        for n in 0..30 {
            assert!((d.probs[n + 1] / d.probs[n] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn bounded_truncation_suggests_order() {
        let err = pn_tmsv_bounded(0.5, 3, 1e-12).unwrap_err();
        let StatsError::TruncationTooSmall { suggested, .. } = err else {
            panic!("wrong error {err:?}")
        };
        let d = pn_tmsv_bounded(0.5, suggested, 1e-12).unwrap();
        assert!(d.tail_bound <= 1e-12);
        assert!(pn_tmsv(0.5, suggested - 1).unwrap().tail_bound > 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(pn_tmsv(-0.1, 3).is_err());
        assert!(alpha_from_drive(1e-3, 0.0, 1e-9).is_err());
        assert!(calibrate_kappa(2.0, 1.0, 1e-9, 1e-3, 5e-7).is_err());
        assert!(apply_loss(&pn_tmsv(0.1, 5).unwrap(), 1.5).is_err());
        assert!(LossBudget::new(0.5, 0.0, 0.7).is_err());
    }

    #[test]
    fn zero_drive_gives_zero_amplitude() {
        assert_eq!(alpha_from_drive(0.0, 524.59e-9, 0.3e-9).unwrap(), 0.0);
    }

    #[test]
    fn loss_extremes() {
        let d = pn_tmsv(0.4, 40).unwrap();
        let same = apply_loss(&d, 1.0).unwrap();
        assert_eq!(same.probs, d.probs);
        let gone = apply_loss(&d, 0.0).unwrap();
        assert!((gone.probs[0] - d.total()).abs() < 1e-15);
        assert!(gone.probs[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn direct_ratio() {
        let d = PhotonNumberDistribution::new(vec![0.89, 0.1, 0.01], 0.0).unwrap();
        let r = multipair_ratio(&d).unwrap();
        assert!((r.value() - 10.0).abs() < 1e-12);
        assert!(matches!(
            multipair_ratio(&PhotonNumberDistribution::fock(1)).unwrap(),
            MultipairRatio::Infinite { .. }
        ));
        assert_eq!(
            multipair_ratio(&PhotonNumberDistribution::vacuum()),
            Err(StatsError::UndefinedRatio)
        );
    }

    #[test]
    fn oam_of_fock_poisson_vacuum() {
        let (m, s) = oam_fluctuation(&PhotonNumberDistribution::fock(1), 2).unwrap();
        assert_eq!((m, s), (2.0, 0.0));
        let (m, s) = oam_fluctuation(&PhotonNumberDistribution::vacuum(), -3).unwrap();
        assert_eq!((m, s), (0.0, 0.0));
        let poisson = PhotonNumberDistribution::poissonian(4.0).unwrap();
        let (m, s) = oam_fluctuation(&poisson, 1).unwrap();
        assert!((m - 4.0).abs() < 1e-10);
        assert!((s - 2.0).abs() < 1e-10);
        assert!((s / m - 0.5).abs() < 1e-10);
    }

    #[test]
    fn poissonian_respects_tail_policy() {
        for mean in [0.01, 1.0, 4.0, 30.0] {
            let d = PhotonNumberDistribution::poissonian(mean).unwrap();
            d.validate().unwrap();
            assert!(d.tail_bound < DEFAULT_TAIL_BOUND, "mean {mean}: {}", d.tail_bound);
        }
    }
}
