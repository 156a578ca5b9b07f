//! Closed-form rate predictions and the calibration of free parameters
//! against measured rates.
//!
//! Predictions assume the analysis offsets equal the detector delay
//! differences and treat detector timing as Gaussian. Unheralded and
//! heralded rates refer to the configured projection setting.

use super::{
    DetectorSet, DetectorSpec, ExperimentConfig, PumpSource, SecondSource, SimError,
};
use crate::analysis::CoincidenceWindows;
use crate::constants::{PS_PER_S, S_PER_HOUR};
use crate::modes::{spdc_mode_weights, ModeWeightTable, PhaseMatchParams, SpectrumRequest};
use crate::statistics::{calibrate_kappa, drive_for_alpha, LossBudget};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Expected rates (Hz unless noted) for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub mean_pairs_per_slot: f64,
    /// Projection pass probability of an emitted pair at the configured setting.
    pub projection_probability: f64,
    /// Converted pump photons per second (all modes).
    pub conversion_rate: f64,
    pub herald_singles: f64,
    pub signal_singles: f64,
    pub idler_singles: f64,
    /// Genuine signal–idler pairs within the pair window.
    pub pair_rate: f64,
    /// Genuine signal–idler coincidences within the unheralded window.
    pub unheralded: f64,
    /// Pairs with a herald in the herald window, accidentals included.
    pub heralded_raw: f64,
    /// Accidental heralded coincidences per herald window.
    pub accidental: f64,
}

impl RatePrediction {
    pub fn per_hour(v: f64) -> f64 {
        v * S_PER_HOUR
    }
}

/// Measured rates the calibration reproduces (per hour).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTargets {
    pub unheralded_per_hour: f64,
    /// Heralded pair rate before accidental correction.
    pub heralded_per_hour: f64,
    /// Accidental rate per herald window.
    pub accidental_per_hour: f64,
}

impl Default for RateTargets {
    fn default() -> Self {
        Self {
            unheralded_per_hour: 40.2,
            heralded_per_hour: 1.3,
            accidental_per_hour: 0.14,
        }
    }
}

/// Outcome of [`calibrate_rates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCalibration {
    pub drive_power: f64,
    pub gamma: f64,
    pub herald_coupling: f64,
    /// Fitted conversion probability per pump photon at the crystal.
    pub conversion_probability: f64,
    pub prediction: RatePrediction,
    /// Detected heralding-arm singles per mW of drive with the ND filter
    /// removed.
    pub herald_singles_per_mw: f64,
    /// Pair rate per mW of a coherent pump at the pump wavelength implied by
    /// the fitted conversion probability (setting (0, 0), detected pairs).
    pub implied_coherent_pairs_per_mw: f64,
}

/// P(|Δ| ≤ half) for Δ ~ N(0, σ²), with the half-width widened by half a
/// picosecond for rounding to the integer grid.
fn capture(window_ps: u64, sigma_ps: f64) -> f64 {
    let half = (window_ps / 2) as f64 + 0.5;
    if sigma_ps <= 0.0 {
        return 1.0;
    }
    erf(half / (sigma_ps * std::f64::consts::SQRT_2))
}

fn pair_sigma(a: &DetectorSpec, b: &DetectorSpec) -> f64 {
    (a.jitter_sigma.powi(2) + b.jitter_sigma.powi(2)).sqrt() * PS_PER_S
}

/// Projection pass probability at `setting` averaged over the table weights.
pub fn projection_probability(
    table: &ModeWeightTable,
    setting: (i32, i32),
    epsilon: f64,
    radial_acceptance: &[f64],
) -> f64 {
    let n = table.oam_cells().len();
    let radial = |p: u32| radial_acceptance.get(p as usize).copied().unwrap_or(0.0);
    let total = table.total_weight();
    table
        .entries
        .iter()
        .map(|e| {
            let base = if (e.signal.ell, e.idler.ell) == setting {
                1.0 - epsilon
            } else if n > 1 {
                epsilon / (n - 1) as f64
            } else {
                0.0
            };
            e.weight / total * base * radial(e.signal.p) * radial(e.idler.p)
        })
        .sum()
}

/// E[(1 - q)^n] over the size-biased thermal distribution with tanh²γ = x:
/// the chance that none of the heralding photons sharing a slot with a
/// converted pump photon is registered.
fn missed_herald_probability(q: f64, x: f64) -> f64 {
    ((1.0 - q) * (1.0 - x).powi(2)) / (1.0 - x * (1.0 - q)).powi(2)
}

pub fn predict_rates(config: &ExperimentConfig, windows: &CoincidenceWindows) -> Result<RatePrediction, SimError> {
    config.validate_static()?;
    windows
        .validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let det: &DetectorSet = &config.detectors;
    let t = config.t_coh;
    let pi = projection_probability(
        &config.second_source.modes,
        config.projection,
        config.crosstalk_epsilon,
        &config.second_source.radial_acceptance,
    );
    let c = config.conversion_per_pump_photon();
    let h = config.herald_detection_probability();
    let (m, x, conversion_rate, herald_singles) = match config.pump_source {
        PumpSource::Heralded => {
            let gamma = config.gain()?;
            let m = gamma.sinh().powi(2);
            (m, gamma.tanh().powi(2), m * c / t, m * h / t)
        }
        PumpSource::Coherent { .. } => (0.0, 0.0, config.coherent_photons_per_slot() * c / t, 0.0),
    };
    let herald_darks = det.herald_a.dark_rate + if config.herald_split == 2 { det.herald_b.dark_rate } else { 0.0 };
    let herald_singles = herald_singles + herald_darks;

    let projected = conversion_rate * pi;
    let detected_pairs = projected * det.signal.efficiency * det.idler.efficiency;
    let si_sigma = pair_sigma(&det.signal, &det.idler);
    let pair_rate = detected_pairs * capture(windows.pair_window, si_sigma);
    let unheralded = detected_pairs * capture(windows.unheralded_window, si_sigma);

    let herald_sigma = pair_sigma(&det.herald_a, &det.signal).max(pair_sigma(&det.herald_b, &det.signal));
    let q = h * capture(windows.herald_window, herald_sigma);
    let genuine = match config.pump_source {
        PumpSource::Heralded => 1.0 - missed_herald_probability(q, x),
        PumpSource::Coherent { .. } => 0.0,
    };
    let a = herald_singles * windows.herald_window as f64 / PS_PER_S;
    Ok(RatePrediction {
        mean_pairs_per_slot: m,
        projection_probability: pi,
        conversion_rate,
        herald_singles,
        signal_singles: projected * det.signal.efficiency + det.signal.dark_rate,
        idler_singles: projected * det.idler.efficiency + det.idler.dark_rate,
        pair_rate,
        unheralded,
        heralded_raw: pair_rate * (genuine + a - genuine * a),
        accidental: pair_rate * a,
    })
}

/// Fits the drive power, the heralding-arm coupling and the conversion
/// probability of a heralded configuration so that [`predict_rates`]
/// reproduces `targets`. All other fields of `base` are kept.
///
/// The accidental-to-unheralded ratio fixes the heralding singles rate, the
/// heralded-to-unheralded ratio then fixes the split between gain and
/// heralding efficiency, and the unheralded rate fixes the conversion
/// probability.
pub fn calibrate_rates(
    base: &ExperimentConfig,
    targets: &RateTargets,
    windows: &CoincidenceWindows,
) -> Result<(ExperimentConfig, RateCalibration), SimError> {
    if base.pump_source != PumpSource::Heralded {
        return Err(SimError::Calibration("rate calibration needs the heralded source".into()));
    }
    let u = targets.unheralded_per_hour / S_PER_HOUR;
    let hr = targets.heralded_per_hour / S_PER_HOUR;
    let acc = targets.accidental_per_hour / S_PER_HOUR;
    if !(u > 0.0 && hr > 0.0 && acc > 0.0) {
        return Err(SimError::Calibration("targets must be positive".into()));
    }
    // Shape factors of the current detector model, independent of the unknowns.
    let probe = predict_rates(base, windows)?;
    let det = &base.detectors;
    let si_sigma = pair_sigma(&det.signal, &det.idler);
    let rho = capture(windows.pair_window, si_sigma) / capture(windows.unheralded_window, si_sigma);
    let w_h = windows.herald_window as f64 / PS_PER_S;
    let herald_darks = probe.herald_singles - probe.mean_pairs_per_slot * base.herald_detection_probability() / base.t_coh;

    let singles = acc / (u * rho * w_h);
    let m_h = (singles - herald_darks) * base.t_coh;
    if !(m_h > 0.0) {
        return Err(SimError::Calibration(
            "accidental target below the heralding dark-count floor".into(),
        ));
    }
    let a = singles * w_h;
    let g = (hr / (u * rho) - a) / (1.0 - a);
    let herald_sigma = pair_sigma(&det.herald_a, &det.signal).max(pair_sigma(&det.herald_b, &det.signal));
    let cap_h = capture(windows.herald_window, herald_sigma);
    let per_unit_coupling = base.herald_detection_probability() / base.herald_coupling.max(f64::MIN_POSITIVE);
    let h_max = if base.herald_coupling > 0.0 {
        per_unit_coupling
    } else {
        base.herald_nd_transmission
            * if base.herald_split == 2 {
                0.5 * (det.herald_a.efficiency + det.herald_b.efficiency)
            } else {
                det.herald_a.efficiency
            }
    };
    let herald_probability = |h: f64| {
        let m = m_h / h;
        let x = m / (1.0 + m);
        1.0 - missed_herald_probability(h * cap_h, x)
    };
    if !(g > 0.0) || herald_probability(h_max) < g {
        return Err(SimError::Calibration(format!(
            "heralding probability {g:.4} per pair is not reachable with the heralding-arm losses"
        )));
    }
    // herald_probability increases with h along the constraint m·h = m_h.
    let (mut lo, mut hi) = (0.0f64, h_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if herald_probability(mid) < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = 0.5 * (lo + hi);
    let m = m_h / h;
    let gamma = m.sqrt().asinh();
    if base.kappa1 <= 0.0 {
        return Err(SimError::Calibration("kappa must be positive".into()));
    }
    let drive_power = drive_for_alpha(gamma / base.kappa1, base.drive_wavelength, base.t_coh);

    let mut cfg = base.clone();
    cfg.drive_power = drive_power;
    cfg.herald_coupling = h / h_max;
    let detected_per_conversion = probe.projection_probability
        * det.signal.efficiency
        * det.idler.efficiency
        * capture(windows.unheralded_window, si_sigma);
    if !(detected_per_conversion > 0.0) {
        return Err(SimError::Calibration("projection or detection probability is zero".into()));
    }
    let c = u * base.t_coh / (m * detected_per_conversion);
    let p_conv = c / base.pump_losses.eta_total;
    if !(p_conv <= 1.0) {
        return Err(SimError::Calibration(format!("conversion probability {p_conv} exceeds 1")));
    }
    cfg.second_source.conversion_probability = p_conv;
    let prediction = predict_rates(&cfg, windows)?;

    let mut coherent = cfg.clone();
    coherent.pump_source = PumpSource::Coherent {
        power: 1e-3,
        wavelength: 783e-9,
    };
    coherent.projection = (0, 0);
    let implied = predict_rates(&coherent, windows)?.unheralded;

    Ok((
        cfg,
        RateCalibration {
            drive_power,
            gamma,
            herald_coupling: h / h_max,
            conversion_probability: p_conv,
            prediction,
            herald_singles_per_mw: m / base.t_coh * h / base.herald_nd_transmission / (drive_power * 1e3),
            implied_coherent_pairs_per_mw: implied,
        },
    ))
}

/// Crosstalk ε that gives the expected diagonal fraction `target` over
/// `settings`. The fraction is a ratio of functions linear in ε, so the
/// solution is closed-form.
pub fn calibrate_crosstalk(
    table: &ModeWeightTable,
    settings: &[(i32, i32)],
    radial_acceptance: &[f64],
    target: f64,
) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(SimError::Calibration(format!("target fraction {target} outside [0, 1]")));
    }
    let ell_p = table.pump.ell;
    let sums = |eps: f64| {
        settings.iter().fold((0.0, 0.0), |(on, all), &s| {
            let r = projection_probability(table, s, eps, radial_acceptance);
            if s.0 + s.1 == ell_p {
                (on + r, all + r)
            } else {
                (on, all + r)
            }
        })
    };
    let (d0, t0) = sums(0.0);
    let (d1, t1) = sums(1.0);
    let (dd, dt) = (d1 - d0, t1 - t0);
    let denom = dd - target * dt;
    if denom.abs() < 1e-15 {
        return Err(SimError::Calibration("diagonal fraction does not depend on epsilon".into()));
    }
    let eps = (target * t0 - d0) / denom;
    if !(0.0..=1.0).contains(&eps) {
        return Err(SimError::Calibration(format!(
            "diagonal fraction {target} needs epsilon {eps} outside [0, 1]"
        )));
    }
    Ok(eps)
}

/// ℓp = 0 experiment with the measured first-source calibration, the
/// heralding-arm attenuation, 80 % detectors with 100 Hz dark counts, a
/// crosstalk giving a 76 % diagonal fraction on the 3×3 grid, and the
/// remaining free parameters fitted to the measured rates at setting (0, 0).
/// `flux_scale` multiplies the fitted conversion probability afterwards.
pub fn reference_calibrated(flux_scale: f64) -> Result<(ExperimentConfig, RateCalibration), SimError> {
    if !(flux_scale > 0.0 && flux_scale.is_finite()) {
        return Err(SimError::InvalidConfig("flux scale must be positive".into()));
    }
    let t_coh = 0.3e-9;
    let drive_wavelength = 524.59e-9;
    let first = calibrate_kappa(216e3, 1.13e6, t_coh, 614e-6, drive_wavelength)?;
    let pump_losses = LossBudget::from_coupling(first.eta_coup, 0.5, 0.7)?;

    let request = SpectrumRequest::from_ratio(0, 2.4, 50e-6, 0, (-1, 1), PhaseMatchParams::new(0.0, 25e-3)?);
    let modes = spdc_mode_weights(&request)?;
    let radial_acceptance = vec![1.0];
    let settings = super::grid_settings(-1, 1);
    let epsilon = calibrate_crosstalk(&modes, &settings, &radial_acceptance, 0.76)?;

    let base = ExperimentConfig {
        pump_source: PumpSource::Heralded,
        drive_power: 614e-6,
        drive_wavelength,
        kappa1: first.calibration.kappa,
        t_coh,
        herald_coupling: 1.0,
        herald_nd_transmission: 0.1,
        herald_split: 2,
        pump_losses,
        pump_ell: 0,
        second_source: SecondSource {
            modes,
            conversion_probability: 0.0,
            radial_acceptance,
        },
        crosstalk_epsilon: epsilon,
        detectors: DetectorSet::uniform(DetectorSpec::new(0.8, 100.0, 30e-12)),
        projection: (0, 0),
        duration: 1.0,
        seed: 0,
    };
    let (mut cfg, report) = calibrate_rates(&base, &RateTargets::default(), &CoincidenceWindows::default())?;
    let scaled = cfg.second_source.conversion_probability * flux_scale;
    if scaled > 1.0 {
        return Err(SimError::InvalidConfig(format!(
            "flux scale {flux_scale} pushes the conversion probability to {scaled}"
        )));
    }
    cfg.second_source.conversion_probability = scaled;
    Ok((cfg, report))
}
