//! Laguerre-Gaussian modes, the three-mode transverse overlap, the longitudinal
//! phase-matching amplitude, and the down-conversion mode spectrum built from
//! both.
//!
//! All profiles are evaluated in the waist plane of the crystal. Lengths are in
//! meters.

mod quadrature;
mod weights;

pub use quadrature::GaussLaguerre;
pub use weights::{spdc_mode_weights, ModeIndex, ModeWeight, ModeWeightTable, SpectrumRequest};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModesError {
    #[error("invalid mode p={p} ell={ell} w0={w0}: {reason}")]
    InvalidMode {
        p: i64,
        ell: i32,
        w0: f64,
        reason: &'static str,
    },
    #[error("invalid phase-matching parameters: {0}")]
    InvalidPhaseMatch(&'static str),
    #[error("radial quadrature did not converge: relative change {achieved:e} with {nodes} nodes")]
    Quadrature { achieved: f64, nodes: usize },
    #[error("invalid spectrum request: {0}")]
    InvalidRequest(String),
    #[error("every mode pair has zero weight, cannot normalize")]
    DegenerateSpectrum,
    #[error("mode table CSV: {0}")]
    Csv(String),
    #[error("mode table invariant violated: {0}")]
    Invariant(String),
}

/// One Laguerre-Gaussian mode: radial index `p`, topological charge `ell`,
/// waist `w0` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgMode {
    pub p: u32,
    pub ell: i32,
    pub w0: f64,
}

impl LgMode {
    pub fn new(p: u32, ell: i32, w0: f64) -> Result<Self, ModesError> {
        let mode = Self { p, ell, w0 };
        mode.validate()?;
        Ok(mode)
    }

    /// Builds a mode from a signed radial index, rejecting negative values.
    pub fn try_from_signed(p: i64, ell: i32, w0: f64) -> Result<Self, ModesError> {
        if p < 0 {
            return Err(ModesError::InvalidMode {
                p,
                ell,
                w0,
                reason: "radial index must be non-negative",
            });
        }
        Self::new(p as u32, ell, w0)
    }

    pub fn validate(&self) -> Result<(), ModesError> {
        if !(self.w0.is_finite() && self.w0 > 0.0) {
            return Err(ModesError::InvalidMode {
                p: self.p as i64,
                ell: self.ell,
                w0: self.w0,
                reason: "waist must be finite and positive",
            });
        }
        Ok(())
    }

    fn abs_ell(&self) -> u32 {
        self.ell.unsigned_abs()
    }

    /// sqrt(2 p! / (π (p+|ℓ|)!)) / w0
    fn norm(&self) -> f64 {
        let p = self.p as f64;
        let l = self.abs_ell() as f64;
        let log_ratio = ln_factorial(p) - ln_factorial(p + l);
        (2.0 / PI * log_ratio.exp()).sqrt() / self.w0
    }

    /// Real radial profile; the full mode is this times exp(i ℓ φ).
    pub fn radial(&self, rho: f64) -> f64 {
        let s = rho / self.w0;
        let x = 2.0 * s * s;
        let l = self.abs_ell();
        self.norm()
            * (std::f64::consts::SQRT_2 * s).powi(l as i32)
            * generalized_laguerre(self.p, l as f64, x)
            * (-s * s).exp()
    }
}

fn ln_factorial(n: f64) -> f64 {
    statrs::function::gamma::ln_gamma(n + 1.0)
}

/// L_n^{(α)}(x) by the three-term recurrence.
pub fn generalized_laguerre(n: u32, alpha: f64, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Normalized LG mode value at polar position (rho, phi) in the waist plane.
pub fn eval_lg(mode: &LgMode, rho: f64, phi: f64) -> Result<Complex64, ModesError> {
    mode.validate()?;
    Ok(Complex64::from_polar(1.0, mode.ell as f64 * phi) * mode.radial(rho))
}

/// Tolerances for the radial overlap quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapOptions {
    /// Relative agreement required between successive node counts.
    pub rel_tol: f64,
    /// Largest rule tried before giving up.
    pub max_nodes: usize,
}

impl Default for OverlapOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_nodes: 256,
        }
    }
}

/// Λ = ∫ d²ϱ u_p u_s* u_i*.
pub fn overlap_integral(
    pump: &LgMode,
    signal: &LgMode,
    idler: &LgMode,
) -> Result<Complex64, ModesError> {
    overlap_integral_with(pump, signal, idler, OverlapOptions::default())
}

pub fn overlap_integral_with(
    pump: &LgMode,
    signal: &LgMode,
    idler: &LgMode,
    options: OverlapOptions,
) -> Result<Complex64, ModesError> {
    pump.validate()?;
    signal.validate()?;
    idler.validate()?;
    if pump.ell != signal.ell + idler.ell {
        return Ok(Complex64::new(0.0, 0.0));
    }

    // With x = aρ², a = Σ 1/w², the integrand becomes x^m e^{-x} times a
    // polynomial in x, where 2m = |ℓp| + |ℓs| + |ℓi| (always even once the
    // charges are conserved).
    let modes = [pump, signal, idler];
    let a: f64 = modes.iter().map(|m| 1.0 / (m.w0 * m.w0)).sum();
    let total_l: u32 = modes.iter().map(|m| m.abs_ell()).sum();
    debug_assert!(total_l % 2 == 0);
    let m = (total_l / 2) as i32;

    let mut log_prefactor = (2.0 * PI).ln() - (2.0 * a).ln() - m as f64 * a.ln()
        + (total_l as f64) * 0.5 * 2f64.ln();
    for mode in &modes {
        log_prefactor += mode.norm().ln() - mode.abs_ell() as f64 * mode.w0.ln();
    }
    let prefactor = log_prefactor.exp();

    let poly = |x: f64| -> f64 {
        modes
            .iter()
            .map(|mode| {
                let arg = 2.0 * x / (a * mode.w0 * mode.w0);
                generalized_laguerre(mode.p, mode.abs_ell() as f64, arg)
            })
            .product()
    };

    let degree = (pump.p + signal.p + idler.p) as usize;
    let mut nodes = (degree / 2 + 2).max(4);
    let mut previous = GaussLaguerre::new(nodes, m as f64).integrate(poly);
    let mut achieved = f64::INFINITY;
    while nodes * 2 <= options.max_nodes {
        nodes *= 2;
        let (value, magnitude) =
            GaussLaguerre::new(nodes, m as f64).integrate_with_magnitude(poly);
        let scale = value.abs().max(1e-3 * magnitude);
        achieved = if scale == 0.0 { 0.0 } else { (value - previous).abs() / scale };
        if achieved <= options.rel_tol {
            return Ok(Complex64::new(prefactor * value, 0.0));
        }
        previous = value;
    }
    Err(ModesError::Quadrature { achieved, nodes })
}

/// Longitudinal phase-matching parameters: wave-vector mismatch `delta_k`
/// (rad/m) and crystal length (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchParams {
    pub delta_k: f64,
    pub crystal_length: f64,
}

impl PhaseMatchParams {
    pub fn new(delta_k: f64, crystal_length: f64) -> Result<Self, ModesError> {
        let params = Self {
            delta_k,
            crystal_length,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModesError> {
        if !(self.crystal_length.is_finite() && self.crystal_length > 0.0) {
            return Err(ModesError::InvalidPhaseMatch("crystal length must be positive"));
        }
        if !self.delta_k.is_finite() {
            return Err(ModesError::InvalidPhaseMatch("delta_k must be finite"));
        }
        Ok(())
    }
}

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// ∫₀ᴸ e^{iΔk z} dz = L e^{iΔkL/2} sinc(ΔkL/2).
pub fn phasematch_amplitude(params: &PhaseMatchParams) -> Result<Complex64, ModesError> {
    params.validate()?;
    let half = 0.5 * params.delta_k * params.crystal_length;
    Ok(Complex64::from_polar(params.crystal_length * sinc(half), half))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peak_value() {
        let m = LgMode::new(0, 0, 1.0).unwrap();
        let v = eval_lg(&m, 0.0, 0.0).unwrap();
        assert!((v.re - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn vortex_core_is_dark() {
        let m = LgMode::new(0, 1, 1.0).unwrap();
        for phi in [0.0, 1.0, 4.0] {
            assert_eq!(eval_lg(&m, 0.0, phi).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn azimuthal_phase_rotates() {
        let m = LgMode::new(0, 2, 1.0).unwrap();
        let a = eval_lg(&m, 1.0, 0.0).unwrap();
        let b = eval_lg(&m, 1.0, PI / 4.0).unwrap();
        assert!((a.norm() - b.norm()).abs() < 1e-15);
        let expected = a * Complex64::from_polar(1.0, 2.0 * PI / 4.0);
        assert!((b - expected).norm() < 1e-15);
    }

    #[test]
    fn invalid_modes_rejected() {
        assert!(matches!(
            LgMode::try_from_signed(-1, 0, 1.0),
            Err(ModesError::InvalidMode { .. })
        ));
        assert!(LgMode::new(0, 0, 0.0).is_err());
        assert!(LgMode::new(0, 0, -2.0).is_err());
        let bad = LgMode {
            p: 0,
            ell: 0,
            w0: f64::NAN,
        };
        assert!(eval_lg(&bad, 0.0, 0.0).is_err());
    }

    #[test]
    fn selection_rule_short_circuits() {
        let p = LgMode::new(0, 0, 2.0).unwrap();
        let s = LgMode::new(3, 1, 1.0).unwrap();
        let i = LgMode::new(2, 1, 1.0).unwrap();
        let v = overlap_integral(&p, &s, &i).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn three_gaussian_closed_form() {
        let (wp, ws, wi) = (2.4e-4, 1e-4, 1.3e-4);
        let v = overlap_integral(
            &LgMode::new(0, 0, wp).unwrap(),
            &LgMode::new(0, 0, ws).unwrap(),
            &LgMode::new(0, 0, wi).unwrap(),
        )
        .unwrap();
        let a = 1.0 / (wp * wp) + 1.0 / (ws * ws) + 1.0 / (wi * wi);
        let expected = 2.0 * PI * (2.0 / PI).powf(1.5) / (wp * ws * wi) / (2.0 * a);
        assert!((v.re - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn signal_idler_exchange_symmetry() {
        let p = LgMode::new(1, 1, 3.3).unwrap();
        let s = LgMode::new(0, -1, 1.0).unwrap();
        let i = LgMode::new(2, 2, 1.0).unwrap();
        let a = overlap_integral(&p, &s, &i).unwrap();
        let b = overlap_integral(&p, &i, &s).unwrap();
        assert!((a - b).norm() <= 1e-14 * a.norm());
    }

    #[test]
    fn phase_matching_values() {
        let l = 0.025;
        let v = phasematch_amplitude(&PhaseMatchParams::new(0.0, l).unwrap()).unwrap();
        assert_eq!(v, Complex64::new(l, 0.0));
        let z = phasematch_amplitude(&PhaseMatchParams::new(2.0 * PI / l, l).unwrap()).unwrap();
        assert!(z.norm() < 1e-17);
        assert!(PhaseMatchParams::new(0.0, 0.0).is_err());
        assert!(PhaseMatchParams::new(f64::NAN, 1.0).is_err());
    }
}
