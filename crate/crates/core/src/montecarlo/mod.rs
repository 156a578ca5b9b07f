//! Event-level Monte Carlo of the cascaded source.
//!
//! Time is cut into coherence-time slots. In each slot the first source emits
//! n pairs drawn from the two-mode squeezed vacuum distribution. Each heralding
//! photon passes the ND filter, the 50:50 split and a detector; each pump
//! photon survives the pump losses and converts in the second crystal with a
//! fixed probability. A converted photon produces a signal/idler pair whose
//! (ℓs, ℓi) is drawn from the mode weight table, then passes the projective
//! measurement and the detectors. Jitter, delays and dark counts come last.
//!
//! Only slots that produce an observable effect are visited: pairs whose
//! heralding photon is lost and whose pump photon does not convert leave no
//! trace, and thinning a geometric photon-number distribution gives another
//! geometric distribution, so slots are skipped geometrically.
//!
//! The run is split into blocks of [`BLOCK_SLOTS`] slots. Block `b` draws from
//! its own ChaCha8 stream seeded with `derive_seed(seed, b)`, so blocks can be
//! generated in any order or in parallel with identical results.

mod calibration;
mod sampler;
pub mod seeding;

pub use calibration::{
    calibrate_crosstalk, calibrate_rates, reference_calibrated, predict_rates, projection_probability,
    RateCalibration, RatePrediction, RateTargets,
};
pub use sampler::{BlockOutput, BlockSimulator, BLOCK_SLOTS};

use crate::constants::{photon_energy, PS_PER_S};
use crate::modes::{ModesError, ModeWeightTable};
use crate::statistics::{alpha_from_drive, LossBudget, StatsError};
use crate::stream::{Channel, EventStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mode weight table is empty")]
    EmptyModeTable,
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

fn check_prob(name: &str, v: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Where the second crystal's pump photons come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PumpSource {
    /// Single photons from the first source, heralded by their partners.
    Heralded,
    /// Laser-like light with Poissonian statistics (the stimulated regime).
    /// Heralding detectors then see only dark counts.
    Coherent { power: f64, wavelength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Hz.
    pub dark_rate: f64,
    /// Standard deviation of the Gaussian timing jitter (s).
    pub jitter_sigma: f64,
    /// Fixed cable/electronic delay added to every genuine detection (s).
    pub delay: f64,
}

impl DetectorSpec {
    pub const fn new(efficiency: f64, dark_rate: f64, jitter_sigma: f64) -> Self {
        Self {
            efficiency,
            dark_rate,
            jitter_sigma,
            delay: 0.0,
        }
    }

    fn validate(&self, name: &str) -> Result<(), SimError> {
        check_prob(&format!("{name} efficiency"), self.efficiency)?;
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(invalid(format!("{name} dark rate must be finite and >= 0")));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(invalid(format!("{name} jitter must be finite and >= 0")));
        }
        if !self.delay.is_finite() {
            return Err(invalid(format!("{name} delay must be finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub herald_a: DetectorSpec,
    pub herald_b: DetectorSpec,
    pub signal: DetectorSpec,
    pub idler: DetectorSpec,
}

impl DetectorSet {
    pub fn uniform(spec: DetectorSpec) -> Self {
        Self {
            herald_a: spec,
            herald_b: spec,
            signal: spec,
            idler: spec,
        }
    }

    pub fn get(&self, channel: Channel) -> &DetectorSpec {
        match channel {
            Channel::HeraldA => &self.herald_a,
            Channel::HeraldB => &self.herald_b,
            Channel::Signal => &self.signal,
            Channel::Idler => &self.idler,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut DetectorSpec {
        match channel {
            Channel::HeraldA => &mut self.herald_a,
            Channel::HeraldB => &mut self.herald_b,
            Channel::Signal => &mut self.signal,
            Channel::Idler => &mut self.idler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondSource {
    pub modes: ModeWeightTable,
    /// Probability that a pump photon reaching the crystal converts into a
    /// detected-mode pair (fiber coupling of signal and idler included).
    pub conversion_probability: f64,
    /// Acceptance of the projective measurement per radial index p; indices
    /// beyond the list are rejected. `[1.0]` keeps only p = 0.
    pub radial_acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pump_source: PumpSource,
    /// Drive power of the first source (W).
    pub drive_power: f64,
    /// Drive wavelength (m).
    pub drive_wavelength: f64,
    /// First-source gain coefficient κ (γ = κ·α_d).
    pub kappa1: f64,
    /// Coherence time, also the slot length (s).
    pub t_coh: f64,
    /// Fiber coupling of the heralding arm before the ND filter.
    pub herald_coupling: f64,
    pub herald_nd_transmission: f64,
    /// Number of heralding detectors (1 or 2).
    pub herald_split: u8,
    pub pump_losses: LossBudget,
    pub pump_ell: i32,
    pub second_source: SecondSource,
    pub crosstalk_epsilon: f64,
    pub detectors: DetectorSet,
    /// Measured (ℓs, ℓi).
    pub projection: (i32, i32),
    /// Run length (s).
    pub duration: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_static()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be positive"));
        }
        if self.duration * PS_PER_S >= u64::MAX as f64 {
            return Err(invalid("duration exceeds the 64-bit picosecond range"));
        }
        Ok(())
    }

    /// Everything except the duration.
    pub(crate) fn validate_static(&self) -> Result<(), SimError> {
        if self.second_source.modes.is_empty() {
            return Err(SimError::EmptyModeTable);
        }
        self.second_source.modes.validate()?;
        if !(self.second_source.modes.total_weight() > 0.0) {
            return Err(invalid("mode weight table has zero total weight"));
        }
        if self.second_source.modes.pump.ell != self.pump_ell {
            return Err(invalid(format!(
                "pump ell {} differs from mode table pump ell {}",
                self.pump_ell, self.second_source.modes.pump.ell
            )));
        }
        check_prob("conversion probability", self.second_source.conversion_probability)?;
        for (p, &a) in self.second_source.radial_acceptance.iter().enumerate() {
            check_prob(&format!("radial acceptance[{p}]"), a)?;
        }
        check_prob("crosstalk epsilon", self.crosstalk_epsilon)?;
        check_prob("herald coupling", self.herald_coupling)?;
        check_prob("herald ND transmission", self.herald_nd_transmission)?;
        if !matches!(self.herald_split, 1 | 2) {
            return Err(invalid(format!("herald split must be 1 or 2, got {}", self.herald_split)));
        }
        self.pump_losses.validate()?;
        if !(self.t_coh > 0.0 && self.t_coh.is_finite()) {
            return Err(invalid("coherence time must be positive"));
        }
        if self.t_coh * PS_PER_S < 1.0 {
            return Err(invalid("coherence time below the 1 ps time grid"));
        }
        for c in Channel::ALL {
            self.detectors.get(c).validate(c.name())?;
        }
        match self.pump_source {
            PumpSource::Heralded => {
                if !(self.drive_power >= 0.0 && self.drive_power.is_finite()) {
                    return Err(invalid("drive power must be finite and >= 0"));
                }
                if !(self.kappa1 >= 0.0 && self.kappa1.is_finite()) {
                    return Err(invalid("kappa must be finite and >= 0"));
                }
                if !(self.drive_wavelength > 0.0) {
                    return Err(invalid("drive wavelength must be positive"));
                }
            }
            PumpSource::Coherent { power, wavelength } => {
                if !(power >= 0.0 && power.is_finite()) || !(wavelength > 0.0) {
                    return Err(invalid("coherent pump needs power >= 0 and a positive wavelength"));
                }
            }
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> u64 {
        (self.duration * PS_PER_S).round() as u64
    }

    /// Parametric gain γ of the first source.
    pub fn gain(&self) -> Result<f64, SimError> {
        if self.drive_power == 0.0 || self.kappa1 == 0.0 {
            return Ok(0.0);
        }
        Ok(self.kappa1 * alpha_from_drive(self.drive_power, self.drive_wavelength, self.t_coh)?)
    }

    /// Mean first-source pairs per slot, sinh²γ.
    pub fn mean_pairs_per_slot(&self) -> Result<f64, SimError> {
        Ok(self.gain()?.sinh().powi(2))
    }

    /// Probability that one heralding photon is detected by either detector.
    pub fn herald_detection_probability(&self) -> f64 {
        let eff = if self.herald_split == 2 {
            0.5 * (self.detectors.herald_a.efficiency + self.detectors.herald_b.efficiency)
        } else {
            self.detectors.herald_a.efficiency
        };
        self.herald_coupling * self.herald_nd_transmission * eff
    }

    /// Probability that one pump photon leaving the first source converts.
    pub fn conversion_per_pump_photon(&self) -> f64 {
        self.pump_losses.eta_total * self.second_source.conversion_probability
    }

    /// Mean coherent-pump photons per slot at the crystal input (before
    /// pump losses); zero for the heralded source.
    pub fn coherent_photons_per_slot(&self) -> f64 {
        match self.pump_source {
            PumpSource::Heralded => 0.0,
            PumpSource::Coherent { power, wavelength } => power * self.t_coh / photon_energy(wavelength),
        }
    }

    /// Number of distinct (ℓs, ℓi) labels in the mode table.
    pub fn table_cells(&self) -> usize {
        self.second_source.modes.oam_cells().len()
    }
}

/// Per-record simulation truth. Never written to tag files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Genuine,
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub origin: Origin,
    /// Emitted (ℓs, ℓi) for genuine signal and idler records.
    pub emitted: Option<(i32, i32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedCount {
    pub ell_s: i32,
    pub ell_i: i32,
    pub count: u64,
}

/// Aggregate truth of a run, written as a JSON sidecar. Counts per channel
/// are indexed by channel id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSummary {
    pub pump_ell: i32,
    pub projection: (i32, i32),
    pub seed: u64,
    pub duration_ps: u64,
    pub slots: u64,
    /// First-source pairs whose heralding photon was detected or whose pump
    /// photon converted.
    pub active_pairs: u64,
    pub herald_photons_detected: u64,
    /// Pump photons converted in the second crystal (= emitted pairs).
    pub conversions: u64,
    /// Conversions in slots with at least one detected heralding photon.
    pub heralded_conversions: u64,
    /// Emitted pairs that passed the projective measurement.
    pub projected_pairs: u64,
    /// Emitted pairs with ℓs + ℓi ≠ ℓp.
    pub conservation_violations: u64,
    /// Emitted pairs per (ℓs, ℓi), sorted.
    pub emitted: Vec<EmittedCount>,
    pub genuine_counts: [u64; 4],
    pub dark_counts: [u64; 4],
}

impl GroundTruthSummary {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            pump_ell: config.pump_ell,
            projection: config.projection,
            seed: config.seed,
            duration_ps: 0,
            slots: 0,
            active_pairs: 0,
            herald_photons_detected: 0,
            conversions: 0,
            heralded_conversions: 0,
            projected_pairs: 0,
            conservation_violations: 0,
            emitted: Vec::new(),
            genuine_counts: [0; 4],
            dark_counts: [0; 4],
        }
    }

    pub fn emitted_map(&self) -> BTreeMap<(i32, i32), u64> {
        self.emitted.iter().map(|e| ((e.ell_s, e.ell_i), e.count)).collect()
    }

    pub(crate) fn set_emitted(&mut self, map: &BTreeMap<(i32, i32), u64>) {
        self.emitted = map
            .iter()
            .map(|(&(ell_s, ell_i), &count)| EmittedCount { ell_s, ell_i, count })
            .collect();
    }

    /// Adds the counts of a later block of the same run.
    pub fn merge(&mut self, other: &GroundTruthSummary) {
        self.duration_ps += other.duration_ps;
        self.slots += other.slots;
        self.active_pairs += other.active_pairs;
        self.herald_photons_detected += other.herald_photons_detected;
        self.conversions += other.conversions;
        self.heralded_conversions += other.heralded_conversions;
        self.projected_pairs += other.projected_pairs;
        self.conservation_violations += other.conservation_violations;
        let mut map = self.emitted_map();
        for e in &other.emitted {
            *map.entry((e.ell_s, e.ell_i)).or_insert(0) += e.count;
        }
        self.set_emitted(&map);
        for k in 0..4 {
            self.genuine_counts[k] += other.genuine_counts[k];
            self.dark_counts[k] += other.dark_counts[k];
        }
    }
}

/// Time-ordered streams of one run, one per channel in channel-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub duration_ps: u64,
    pub streams: Vec<EventStream>,
    /// Parallel to `streams[k].timestamps`.
    pub truth: Vec<Vec<RecordTruth>>,
    pub summary: GroundTruthSummary,
}

impl SimulationOutput {
    pub fn stream(&self, channel: Channel) -> &EventStream {
        &self.streams[channel.index()]
    }

    pub fn truth(&self, channel: Channel) -> &[RecordTruth] {
        &self.truth[channel.index()]
    }

    /// Both heralding channels merged into one sorted list.
    pub fn herald_merged(&self) -> Vec<u64> {
        crate::stream::merge_sorted(&[
            &self.stream(Channel::HeraldA).timestamps,
            &self.stream(Channel::HeraldB).timestamps,
        ])
    }

    fn empty(config: &ExperimentConfig) -> Self {
        Self {
            duration_ps: 0,
            streams: Channel::ALL.iter().map(|&c| EventStream::empty(c)).collect(),
            truth: vec![Vec::new(); 4],
            summary: GroundTruthSummary::new(config),
        }
    }
}

/// Simulates one run. Deterministic in (config, seed) and independent of the
/// number of worker threads.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationOutput, SimError> {
    let sim = BlockSimulator::new(config)?;
    let blocks: Vec<BlockOutput> = (0..sim.n_blocks()).into_par_iter().map(|b| sim.block(b)).collect();

    let mut out = SimulationOutput::empty(config);
    out.duration_ps = sim.duration_ps();
    for c in Channel::ALL {
        let k = c.index();
        let n: usize = blocks.iter().map(|b| b.timestamps[k].len()).sum();
        let mut records: Vec<(u64, RecordTruth)> = Vec::with_capacity(n);
        for b in &blocks {
            records.extend(b.timestamps[k].iter().copied().zip(b.truth[k].iter().copied()));
        }
        // Jitter can carry a record across a block boundary.
        records.sort_by_key(|r| r.0);
        out.streams[k].timestamps = records.iter().map(|r| r.0).collect();
        out.truth[k] = records.into_iter().map(|r| r.1).collect();
    }
    for b in &blocks {
        out.summary.merge(&b.summary);
    }
    Ok(out)
}

/// Config of scan setting `index`: same experiment, measured setting
/// replaced, seed derived from the master seed.
pub fn setting_config(
    config: &ExperimentConfig,
    index: usize,
    setting: (i32, i32),
    time_per_setting: f64,
) -> ExperimentConfig {
    let mut c = config.clone();
    c.projection = setting;
    c.duration = time_per_setting;
    c.seed = seeding::derive_seed(config.seed, index as u64);
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanBundle {
    pub index: usize,
    pub setting: (i32, i32),
    pub seed: u64,
    pub output: SimulationOutput,
}

/// Runs [`simulate`] once per setting, in scan order, with per-setting seeds
/// from [`seeding::derive_seed`].
pub fn run_projection_scan(
    config: &ExperimentConfig,
    settings: &[(i32, i32)],
    time_per_setting: f64,
) -> Result<Vec<ScanBundle>, SimError> {
    if settings.is_empty() {
        return Err(invalid("scan needs at least one setting"));
    }
    if !(time_per_setting >= 0.0 && time_per_setting.is_finite()) {
        return Err(invalid("time per setting must be finite and >= 0"));
    }
    config.validate_static()?;
    settings
        .iter()
        .enumerate()
        .map(|(index, &setting)| {
            let c = setting_config(config, index, setting, time_per_setting);
            let output = if c.duration_ps() == 0 {
                SimulationOutput::empty(&c)
            } else {
                simulate(&c)?
            };
            Ok(ScanBundle {
                index,
                setting,
                seed: c.seed,
                output,
            })
        })
        .collect()
}

/// Square grid of settings with ℓs, ℓi in `[lo, hi]`, row-major in ℓs.
pub fn grid_settings(lo: i32, hi: i32) -> Vec<(i32, i32)> {
    (lo..=hi).flat_map(|s| (lo..=hi).map(move |i| (s, i))).collect()
}
