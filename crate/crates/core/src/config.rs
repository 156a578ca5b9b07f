//! Declarative run configuration in TOML.
//!
//! Every section and key is optional; missing values take the ℓp = 0
//! defaults. Physical quantities accept either a bare SI number or a string
//! with a unit (`"614 uW"`, `"0.3 ns"`, `"10 min"`). See the README for the
//! full schema.
//!
//! Three parameters are normally fitted rather than given: the drive power,
//! the heralding-arm coupling and the second-source conversion probability.
//! They are fitted together (from the `[calibration]` target rates) unless
//! all three are set. The crosstalk ε is calibrated from
//! `projection.diagonal_target` over the scan grid unless
//! `projection.crosstalk` is set.
//!
//! The config hash is the SHA-256 of a canonical JSON rendering of the fully
//! resolved file: defaults filled in, quantities converted to SI, keys sorted,
//! numbers in shortest round-trip form without trailing zeros.

use crate::analysis::{CoincidenceWindows, MatrixOptions, Offsets};
use crate::constants::PS_PER_S;
use crate::modes::{spdc_mode_weights, PhaseMatchParams, SpectrumRequest};
use crate::montecarlo::{
    calibrate_crosstalk, calibrate_rates, grid_settings, DetectorSet, DetectorSpec, ExperimentConfig,
    PumpSource, RateCalibration, RateTargets, SecondSource, SimError,
};
use crate::statistics::{calibrate_kappa, CalibrationReport, LossBudget, StatsError};
use crate::units::{Dimension, QuantityInput, UnitError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("{key}: {source}")]
    Unit { key: String, source: UnitError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Statistics(#[from] StatsError),
}

impl ConfigError {
    /// True when the failure is numerical (a fit or quadrature that did not
    /// converge) rather than a malformed file.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ConfigError::Simulation(SimError::Calibration(_) | SimError::Modes(_))
                | ConfigError::Statistics(StatsError::TruncationTooSmall { .. } | StatsError::UndefinedRatio)
        )
    }
}

fn q(text: &str) -> QuantityInput {
    QuantityInput::Text(text.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstSourceSection {
    pub drive_wavelength: QuantityInput,
    pub coherence_time: QuantityInput,
    /// Fitted when absent (see module docs).
    pub drive_power: Option<QuantityInput>,
    /// Explicit gain coefficient; otherwise derived from the measured rates below.
    pub kappa: Option<f64>,
    pub calibration_coincidences: QuantityInput,
    pub calibration_singles: QuantityInput,
    pub calibration_power: QuantityInput,
}

impl Default for FirstSourceSection {
    fn default() -> Self {
        Self {
            drive_wavelength: q("524.59 nm"),
            coherence_time: q("0.3 ns"),
            drive_power: None,
            kappa: None,
            calibration_coincidences: q("216 kHz"),
            calibration_singles: q("1.13 MHz"),
            calibration_power: q("614 uW"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeraldSection {
    /// Fitted when absent.
    pub coupling: Option<f64>,
    pub nd_transmission: f64,
    pub split: u8,
}

impl Default for HeraldSection {
    fn default() -> Self {
        Self {
            coupling: None,
            nd_transmission: 0.1,
            split: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Heralded,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpSection {
    pub ell: i32,
    pub source: SourceKind,
    pub coherent_power: QuantityInput,
    pub wavelength: QuantityInput,
    pub eta_det: f64,
    pub eta_smf: Option<f64>,
    pub eta_slm: f64,
}

impl Default for PumpSection {
    fn default() -> Self {
        Self {
            ell: 0,
            source: SourceKind::Heralded,
            coherent_power: q("12 uW"),
            wavelength: q("783 nm"),
            eta_det: 0.5,
            eta_smf: None,
            eta_slm: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondSourceSection {
    /// Fitted when absent.
    pub conversion_probability: Option<f64>,
    pub signal_waist: QuantityInput,
    pub r_w0: f64,
    pub p_max: u32,
    pub ell_min: i32,
    pub ell_max: i32,
    pub crystal_length: QuantityInput,
    /// Wave-vector mismatch (1/m).
    pub delta_k: f64,
    pub radial_acceptance: Vec<f64>,
}

impl Default for SecondSourceSection {
    fn default() -> Self {
        Self {
            conversion_probability: None,
            signal_waist: q("50 um"),
            r_w0: 2.4,
            p_max: 0,
            ell_min: -1,
            ell_max: 1,
            crystal_length: q("25 mm"),
            delta_k: 0.0,
            radial_acceptance: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub ell_s: i32,
    pub ell_i: i32,
    pub crosstalk: Option<f64>,
    pub diagonal_target: f64,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self {
            ell_s: 0,
            ell_i: 0,
            crosstalk: None,
            diagonal_target: 0.76,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub unheralded_per_hour: f64,
    pub heralded_per_hour: f64,
    pub accidental_per_hour: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let t = RateTargets::default();
        Self {
            unheralded_per_hour: t.unheralded_per_hour,
            heralded_per_hour: t.heralded_per_hour,
            accidental_per_hour: t.accidental_per_hour,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub dark_rate: QuantityInput,
    pub jitter: QuantityInput,
    pub delay: QuantityInput,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            efficiency: 0.8,
            dark_rate: q("100 Hz"),
            jitter: q("30 ps"),
            delay: q("0 ps"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorsSection {
    pub herald_a: DetectorSection,
    pub herald_b: DetectorSection,
    pub signal: DetectorSection,
    pub idler: DetectorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub settings: Vec<[i32; 2]>,
    pub time_per_setting: QuantityInput,
    pub flux_scale: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            settings: grid_settings(-1, 1).into_iter().map(|(s, i)| [s, i]).collect(),
            time_per_setting: q("1 s"),
            flux_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub pair_window: QuantityInput,
    pub herald_window: QuantityInput,
    pub unheralded_window: QuantityInput,
    pub idler_offset: QuantityInput,
    pub herald_offset: QuantityInput,
    pub bin_width: QuantityInput,
    pub half_range: QuantityInput,
    pub time_bin: QuantityInput,
    pub exclusion_factor: f64,
    pub fit_peak: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            pair_window: q("1 ns"),
            herald_window: q("300 ps"),
            unheralded_window: q("400 ps"),
            idler_offset: q("0 ps"),
            herald_offset: q("0 ps"),
            bin_width: q("50 ps"),
            half_range: q("25 ns"),
            time_bin: q("1.5 h"),
            exclusion_factor: 3.0,
            fit_peak: true,
        }
    }
}

/// Inputs of the photon-statistics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub drive_power: QuantityInput,
    pub tail_bound: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            drive_power: q("72.7 mW"),
            tail_bound: 1e-12,
        }
    }
}

/// The file as written, every section optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub first_source: FirstSourceSection,
    pub herald: HeraldSection,
    pub pump: PumpSection,
    pub second_source: SecondSourceSection,
    pub projection: ProjectionSection,
    pub calibration: CalibrationSection,
    pub detectors: DetectorsSection,
    pub scan: ScanSection,
    pub analysis: AnalysisSection,
    pub stats: StatsSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            seed: 1,
            first_source: FirstSourceSection::default(),
            herald: HeraldSection::default(),
            pump: PumpSection::default(),
            second_source: SecondSourceSection::default(),
            projection: ProjectionSection::default(),
            calibration: CalibrationSection::default(),
            detectors: DetectorsSection::default(),
            scan: ScanSection::default(),
            analysis: AnalysisSection::default(),
            stats: StatsSection::default(),
        }
    }
}

fn to_si(key: &str, v: &mut QuantityInput, dim: Dimension) -> Result<f64, ConfigError> {
    let si = v.to_si(dim).map_err(|source| ConfigError::Unit {
        key: key.to_string(),
        source,
    })?;
    *v = QuantityInput::Number(si);
    Ok(si)
}

fn ps(seconds: f64, key: &str) -> Result<i64, ConfigError> {
    let v = (seconds * PS_PER_S).round();
    if !v.is_finite() || v.abs() > 1e18 {
        return Err(ConfigError::Invalid(format!("{key} out of range")));
    }
    Ok(v as i64)
}

fn window_ps(seconds: f64, key: &str) -> Result<u64, ConfigError> {
    let v = ps(seconds, key)?;
    if v <= 0 {
        return Err(ConfigError::Invalid(format!("{key} must be positive")));
    }
    Ok(v as u64)
}

/// Scan plan from the `[scan]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub settings: Vec<(i32, i32)>,
    pub time_per_setting: f64,
    pub flux_scale: f64,
}

/// Everything a command needs, resolved from a [`ConfigFile`].
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    /// The file with defaults filled in and quantities in SI units.
    pub normalized: ConfigFile,
    pub experiment: ExperimentConfig,
    pub scan: ScanPlan,
    pub analysis: MatrixOptions,
    pub first_source: CalibrationReport,
    /// Present when rates were fitted.
    pub rate_fit: Option<RateCalibration>,
    /// Drive power of the photon-statistics report (W).
    pub stats_drive_power: f64,
    pub stats_tail_bound: f64,
    pub config_hash: String,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Converts every quantity to SI in place.
    pub fn normalize(&mut self) -> Result<(), ConfigError> {
        let f = &mut self.first_source;
        to_si("first_source.drive_wavelength", &mut f.drive_wavelength, Dimension::Length)?;
        to_si("first_source.coherence_time", &mut f.coherence_time, Dimension::Time)?;
        if let Some(p) = f.drive_power.as_mut() {
            to_si("first_source.drive_power", p, Dimension::Power)?;
        }
        to_si("first_source.calibration_coincidences", &mut f.calibration_coincidences, Dimension::Frequency)?;
        to_si("first_source.calibration_singles", &mut f.calibration_singles, Dimension::Frequency)?;
        to_si("first_source.calibration_power", &mut f.calibration_power, Dimension::Power)?;
        to_si("pump.coherent_power", &mut self.pump.coherent_power, Dimension::Power)?;
        to_si("pump.wavelength", &mut self.pump.wavelength, Dimension::Length)?;
        to_si("second_source.signal_waist", &mut self.second_source.signal_waist, Dimension::Length)?;
        to_si("second_source.crystal_length", &mut self.second_source.crystal_length, Dimension::Length)?;
        for (name, d) in [
            ("herald_a", &mut self.detectors.herald_a),
            ("herald_b", &mut self.detectors.herald_b),
            ("signal", &mut self.detectors.signal),
            ("idler", &mut self.detectors.idler),
        ] {
            to_si(&format!("detectors.{name}.dark_rate"), &mut d.dark_rate, Dimension::Frequency)?;
            to_si(&format!("detectors.{name}.jitter"), &mut d.jitter, Dimension::Time)?;
            to_si(&format!("detectors.{name}.delay"), &mut d.delay, Dimension::Time)?;
        }
        to_si("stats.drive_power", &mut self.stats.drive_power, Dimension::Power)?;
        to_si("scan.time_per_setting", &mut self.scan.time_per_setting, Dimension::Time)?;
        let a = &mut self.analysis;
        for (key, v) in [
            ("analysis.pair_window", &mut a.pair_window),
            ("analysis.herald_window", &mut a.herald_window),
            ("analysis.unheralded_window", &mut a.unheralded_window),
            ("analysis.idler_offset", &mut a.idler_offset),
            ("analysis.herald_offset", &mut a.herald_offset),
            ("analysis.bin_width", &mut a.bin_width),
            ("analysis.half_range", &mut a.half_range),
            ("analysis.time_bin", &mut a.time_bin),
        ] {
            to_si(key, v, Dimension::Time)?;
        }
        Ok(())
    }

    /// Canonical JSON of the normalized file (used for hashing).
    pub fn canonical_json(&self) -> Result<String, ConfigError> {
        let mut copy = self.clone();
        copy.normalize()?;
        let value = serde_json::to_value(&copy).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut out = String::new();
        write_canonical(&value, &mut out);
        Ok(out)
    }

    pub fn config_hash(&self) -> Result<String, ConfigError> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    /// Analysis options only; needs no fitting.
    pub fn analysis_options(&self) -> Result<MatrixOptions, ConfigError> {
        let mut copy = self.clone();
        copy.normalize()?;
        let a = &copy.analysis;
        let num = |v: &QuantityInput| match v {
            QuantityInput::Number(x) => *x,
            QuantityInput::Text(_) => unreachable!("normalized"),
        };
        let options = MatrixOptions {
            windows: CoincidenceWindows {
                pair_window: window_ps(num(&a.pair_window), "analysis.pair_window")?,
                herald_window: window_ps(num(&a.herald_window), "analysis.herald_window")?,
                unheralded_window: window_ps(num(&a.unheralded_window), "analysis.unheralded_window")?,
            },
            offsets: Offsets {
                idler_minus_signal: ps(num(&a.idler_offset), "analysis.idler_offset")?,
                herald_minus_signal: ps(num(&a.herald_offset), "analysis.herald_offset")?,
            },
            time_bin_s: num(&a.time_bin),
            heralded: false,
            bin_width_ps: ps(num(&a.bin_width), "analysis.bin_width")?,
            half_range_ps: ps(num(&a.half_range), "analysis.half_range")?,
            exclusion_factor: a.exclusion_factor,
            fit_peak: a.fit_peak,
        };
        options
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(options)
    }

    /// Resolves the file into runnable configuration, fitting free
    /// parameters where needed.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let config_hash = self.config_hash()?;
        let analysis = self.analysis_options()?;
        let mut n = self.clone();
        n.normalize()?;
        let num = |v: &QuantityInput| match v {
            QuantityInput::Number(x) => *x,
            QuantityInput::Text(_) => unreachable!("normalized"),
        };

        let fs = &n.first_source;
        let t_coh = num(&fs.coherence_time);
        let drive_wavelength = num(&fs.drive_wavelength);
        let first_source = calibrate_kappa(
            num(&fs.calibration_coincidences),
            num(&fs.calibration_singles),
            t_coh,
            num(&fs.calibration_power),
            drive_wavelength,
        )?;
        let kappa1 = fs.kappa.unwrap_or(first_source.calibration.kappa);

        let p = &n.pump;
        let pump_losses = match p.eta_smf {
            Some(eta_smf) => LossBudget::new(p.eta_det, eta_smf, p.eta_slm)?,
            None => LossBudget::from_coupling(first_source.eta_coup, p.eta_det, p.eta_slm)?,
        };

        let s = &n.second_source;
        let request = SpectrumRequest::from_ratio(
            p.ell,
            s.r_w0,
            num(&s.signal_waist),
            s.p_max,
            (s.ell_min, s.ell_max),
            PhaseMatchParams::new(s.delta_k, num(&s.crystal_length)).map_err(SimError::from)?,
        );
        let modes = spdc_mode_weights(&request).map_err(SimError::from)?;

        if n.scan.settings.is_empty() {
            return Err(ConfigError::Invalid("scan.settings is empty".into()));
        }
        let settings: Vec<(i32, i32)> = n.scan.settings.iter().map(|s| (s[0], s[1])).collect();
        let crosstalk = match n.projection.crosstalk {
            Some(eps) => eps,
            None => calibrate_crosstalk(&modes, &settings, &s.radial_acceptance, n.projection.diagonal_target)?,
        };

        let detector = |d: &DetectorSection| DetectorSpec {
            efficiency: d.efficiency,
            dark_rate: num(&d.dark_rate),
            jitter_sigma: num(&d.jitter),
            delay: num(&d.delay),
        };
        let time_per_setting = num(&n.scan.time_per_setting);
        let mut experiment = ExperimentConfig {
            pump_source: PumpSource::Heralded,
            drive_power: 0.0,
            drive_wavelength,
            kappa1,
            t_coh,
            herald_coupling: 1.0,
            herald_nd_transmission: n.herald.nd_transmission,
            herald_split: n.herald.split,
            pump_losses,
            pump_ell: p.ell,
            second_source: SecondSource {
                modes,
                conversion_probability: 0.0,
                radial_acceptance: s.radial_acceptance.clone(),
            },
            crosstalk_epsilon: crosstalk,
            detectors: DetectorSet {
                herald_a: detector(&n.detectors.herald_a),
                herald_b: detector(&n.detectors.herald_b),
                signal: detector(&n.detectors.signal),
                idler: detector(&n.detectors.idler),
            },
            projection: (n.projection.ell_s, n.projection.ell_i),
            duration: time_per_setting,
            seed: n.seed,
        };

        let given = [
            fs.drive_power.is_some(),
            n.herald.coupling.is_some(),
            s.conversion_probability.is_some(),
        ];
        let rate_fit = if given.iter().all(|&g| g) {
            experiment.drive_power = num(fs.drive_power.as_ref().expect("checked"));
            experiment.herald_coupling = n.herald.coupling.expect("checked");
            experiment.second_source.conversion_probability = s.conversion_probability.expect("checked");
            None
        } else if given.iter().any(|&g| g) {
            return Err(ConfigError::Invalid(
                "set all of first_source.drive_power, herald.coupling and \
                 second_source.conversion_probability, or none of them"
                    .into(),
            ));
        } else {
            // Rates refer to the (0, 0)-like configured projection.
            let targets = RateTargets {
                unheralded_per_hour: n.calibration.unheralded_per_hour,
                heralded_per_hour: n.calibration.heralded_per_hour,
                accidental_per_hour: n.calibration.accidental_per_hour,
            };
            let (fitted, report) = calibrate_rates(&experiment, &targets, &analysis.windows)?;
            experiment = fitted;
            Some(report)
        };

        if !(n.scan.flux_scale > 0.0 && n.scan.flux_scale.is_finite()) {
            return Err(ConfigError::Invalid("scan.flux_scale must be positive".into()));
        }
        experiment.second_source.conversion_probability *= n.scan.flux_scale;
        if p.source == SourceKind::Coherent {
            experiment.pump_source = PumpSource::Coherent {
                power: num(&p.coherent_power),
                wavelength: num(&p.wavelength),
            };
        }
        experiment.validate_static()?;
        if !(time_per_setting >= 0.0) {
            return Err(ConfigError::Invalid("scan.time_per_setting must be >= 0".into()));
        }

        Ok(ResolvedConfig {
            normalized: n.clone(),
            experiment,
            scan: ScanPlan {
                settings,
                time_per_setting,
                flux_scale: n.scan.flux_scale,
            },
            analysis,
            first_source,
            rate_fit,
            stats_drive_power: num(&n.stats.drive_power),
            stats_tail_bound: n.stats.tail_bound,
            config_hash,
        })
    }
}

/// Writes `value` as JSON with sorted object keys and floats in shortest
/// round-trip decimal form (`1`, `0.1`, `0.0000003`).
fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f == 0.0 {
                    out.push('0');
                } else {
                    let _ = write!(out, "{f}");
                }
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}
