use super::seeding::derive_seed;
use super::{ExperimentConfig, GroundTruthSummary, Origin, PumpSource, RecordTruth, SimError};
use crate::constants::PS_PER_S;
use crate::stream::Channel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use std::collections::BTreeMap;

/// Slots per block (≈ 5 ms at a 0.3 ns coherence time).
pub const BLOCK_SLOTS: u64 = 1 << 24;

/// Per-slot model of the active (observable) first-source pairs.
#[derive(Debug, Clone, Copy)]
enum SlotModel {
    /// Active pairs per slot are geometric: P(k) = (1 - q) q^k. Each active
    /// pair is herald-only, conversion-only or both.
    Thermal {
        q: f64,
        herald_only: f64,
        conversion_only: f64,
    },
    /// Conversions per slot are Poissonian with this mean.
    Poissonian { mean: f64 },
}

#[derive(Debug, Clone)]
struct Emission {
    ell: (i32, i32),
    conserving: bool,
    /// Probability that the projective measurement passes this pair.
    acceptance: f64,
}

#[derive(Debug, Clone, Copy)]
struct ChannelTiming {
    jitter_ps: f64,
    delay_ps: f64,
}

/// Failures before the first success of Bernoulli(p) trials, by inversion.
#[derive(Debug, Clone, Copy)]
struct GeometricSkip {
    inv_log_fail: f64,
}

impl GeometricSkip {
    fn new(p: f64) -> Self {
        Self {
            inv_log_fail: 1.0 / (-p.min(1.0)).ln_1p(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let u = 1.0 - rng.random::<f64>();
        let k = (u.ln() * self.inv_log_fail).floor();
        if k >= u64::MAX as f64 {
            u64::MAX
        } else {
            k as u64
        }
    }
}

/// Precomputed sampler for one run; [`BlockSimulator::block`] is a pure
/// function of the block index.
#[derive(Debug, Clone)]
pub struct BlockSimulator {
    config: ExperimentConfig,
    model: SlotModel,
    slot_ps: f64,
    duration_ps: u64,
    total_slots: u64,
    /// P(detector A | heralding photon detected).
    herald_a_share: f64,
    emissions: Vec<Emission>,
    cumulative: Vec<f64>,
    timing: [ChannelTiming; 4],
}

/// Records and truth of one block, each channel sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub index: u64,
    pub start_ps: u64,
    pub end_ps: u64,
    pub timestamps: [Vec<u64>; 4],
    pub truth: [Vec<RecordTruth>; 4],
    pub summary: GroundTruthSummary,
}

impl BlockOutput {
    pub fn channel(&self, channel: Channel) -> &[u64] {
        &self.timestamps[channel.index()]
    }

    pub fn herald_merged(&self) -> Vec<u64> {
        crate::stream::merge_sorted(&[self.channel(Channel::HeraldA), self.channel(Channel::HeraldB)])
    }
}

impl BlockSimulator {
    pub fn new(config: &ExperimentConfig) -> Result<Self, SimError> {
        config.validate()?;
        let c = config.conversion_per_pump_photon();
        let model = match config.pump_source {
            PumpSource::Heralded => {
                let gamma = config.gain()?;
                let x = gamma.tanh().powi(2);
                let h = config.herald_detection_probability();
                let herald_only = h * (1.0 - c);
                let conversion_only = c * (1.0 - h);
                let active = herald_only + conversion_only + h * c;
                // Thinning (1 - x) x^n by `active` leaves a geometric law.
                let q = x * active / (1.0 - x * (1.0 - active));
                SlotModel::Thermal {
                    q,
                    herald_only: herald_only / active.max(f64::MIN_POSITIVE),
                    conversion_only: conversion_only / active.max(f64::MIN_POSITIVE),
                }
            }
            PumpSource::Coherent { .. } => SlotModel::Poissonian {
                mean: config.coherent_photons_per_slot() * c,
            },
        };

        let slot_ps = config.t_coh * PS_PER_S;
        let duration_ps = config.duration_ps();
        let total_slots = (duration_ps as f64 / slot_ps).ceil() as u64;

        let (ea, eb) = (config.detectors.herald_a.efficiency, config.detectors.herald_b.efficiency);
        let herald_a_share = if config.herald_split == 1 || ea + eb == 0.0 {
            1.0
        } else {
            ea / (ea + eb)
        };

        let n_cells = config.table_cells();
        let table = &config.second_source.modes;
        let radial = |p: u32| config.second_source.radial_acceptance.get(p as usize).copied().unwrap_or(0.0);
        let mut emissions = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for e in table.entries.iter().filter(|e| e.weight > 0.0) {
            let ell = (e.signal.ell, e.idler.ell);
            let base = if ell == config.projection {
                1.0 - config.crosstalk_epsilon
            } else if n_cells > 1 {
                config.crosstalk_epsilon / (n_cells - 1) as f64
            } else {
                0.0
            };
            emissions.push(Emission {
                ell,
                conserving: ell.0 + ell.1 == config.pump_ell,
                acceptance: base * radial(e.signal.p) * radial(e.idler.p),
            });
            acc += e.weight;
            cumulative.push(acc);
        }
        for v in &mut cumulative {
            *v /= acc;
        }

        let timing = Channel::ALL.map(|ch| {
            let d = config.detectors.get(ch);
            ChannelTiming {
                jitter_ps: d.jitter_sigma * PS_PER_S,
                delay_ps: d.delay * PS_PER_S,
            }
        });

        Ok(Self {
            config: config.clone(),
            model,
            slot_ps,
            duration_ps,
            total_slots,
            herald_a_share,
            emissions,
            cumulative,
            timing,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn total_slots(&self) -> u64 {
        self.total_slots
    }

    pub fn n_blocks(&self) -> u64 {
        self.total_slots.div_ceil(BLOCK_SLOTS)
    }

    /// Probability that a slot contains at least one active pair.
    pub fn active_slot_probability(&self) -> f64 {
        match self.model {
            SlotModel::Thermal { q, .. } => q,
            SlotModel::Poissonian { mean } => -(-mean).exp_m1(),
        }
    }

    fn block_bounds(&self, index: u64) -> (u64, u64, u64, u64) {
        let first = index * BLOCK_SLOTS;
        let last = ((index + 1) * BLOCK_SLOTS).min(self.total_slots);
        let start_ps = ((first as f64 * self.slot_ps) as u64).min(self.duration_ps);
        let end_ps = if last == self.total_slots {
            self.duration_ps
        } else {
            ((last as f64 * self.slot_ps) as u64).min(self.duration_ps)
        };
        (first, last, start_ps, end_ps)
    }

    fn emit(
        &self,
        rng: &mut ChaCha8Rng,
        out: &mut BlockOutput,
        channel: Channel,
        t: f64,
        emitted: Option<(i32, i32)>,
    ) {
        let timing = self.timing[channel.index()];
        let mut t = t + timing.delay_ps;
        if timing.jitter_ps > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            t += timing.jitter_ps * z;
        }
        let ts = t.round().clamp(0.0, self.duration_ps as f64) as u64;
        let k = channel.index();
        out.timestamps[k].push(ts);
        out.truth[k].push(RecordTruth {
            origin: Origin::Genuine,
            emitted,
        });
        out.summary.genuine_counts[k] += 1;
    }

    fn convert(&self, rng: &mut ChaCha8Rng, out: &mut BlockOutput, emitted: &mut BTreeMap<(i32, i32), u64>, t: f64) {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.emissions.len() - 1);
        let e = &self.emissions[idx];
        *emitted.entry(e.ell).or_insert(0) += 1;
        if !e.conserving {
            out.summary.conservation_violations += 1;
        }
        if e.acceptance <= 0.0 || rng.random::<f64>() >= e.acceptance {
            return;
        }
        out.summary.projected_pairs += 1;
        let det = &self.config.detectors;
        if rng.random::<f64>() < det.signal.efficiency {
            self.emit(rng, out, Channel::Signal, t, Some(e.ell));
        }
        if rng.random::<f64>() < det.idler.efficiency {
            self.emit(rng, out, Channel::Idler, t, Some(e.ell));
        }
    }

    /// Generates block `index`; blocks partition the run in time order.
    pub fn block(&self, index: u64) -> BlockOutput {
        let (first, last, start_ps, end_ps) = self.block_bounds(index);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, index));
        let mut out = BlockOutput {
            index,
            start_ps,
            end_ps,
            timestamps: Default::default(),
            truth: Default::default(),
            summary: GroundTruthSummary::new(&self.config),
        };
        out.summary.slots = last.saturating_sub(first);
        out.summary.duration_ps = end_ps - start_ps;
        let mut emitted = BTreeMap::new();

        let p_active = self.active_slot_probability();
        if p_active > 0.0 && first < last {
            let skip = GeometricSkip::new(p_active);
            let mut slot = first;
            loop {
                slot = slot.saturating_add(skip.sample(&mut rng));
                if slot >= last {
                    break;
                }
                let t = (slot as f64 + rng.random::<f64>()) * self.slot_ps;
                slot += 1;
                if t >= self.duration_ps as f64 {
                    continue;
                }
                self.active_slot(&mut rng, &mut out, &mut emitted, t);
            }
        }
        out.summary.set_emitted(&emitted);

        let span_s = (end_ps - start_ps) as f64 / PS_PER_S;
        for ch in Channel::ALL {
            let rate = self.config.detectors.get(ch).dark_rate;
            if rate <= 0.0 || end_ps <= start_ps {
                continue;
            }
            let n = Poisson::new(rate * span_s).map(|d| d.sample(&mut rng) as u64).unwrap_or(0);
            let k = ch.index();
            for _ in 0..n {
                out.timestamps[k].push(rng.random_range(start_ps..end_ps));
                out.truth[k].push(RecordTruth {
                    origin: Origin::Dark,
                    emitted: None,
                });
            }
            out.summary.dark_counts[k] += n;
        }

        for k in 0..4 {
            if out.timestamps[k].windows(2).all(|w| w[0] <= w[1]) {
                continue;
            }
            // Genuine records are nearly sorted and darks form a second run,
            // which the stable sort merges in linear time.
            let mut records: Vec<(u64, RecordTruth)> = out.timestamps[k]
                .iter()
                .copied()
                .zip(out.truth[k].iter().copied())
                .collect();
            records.sort_by_key(|r| r.0);
            out.timestamps[k] = records.iter().map(|r| r.0).collect();
            out.truth[k] = records.into_iter().map(|r| r.1).collect();
        }
        out
    }

    fn active_slot(
        &self,
        rng: &mut ChaCha8Rng,
        out: &mut BlockOutput,
        emitted: &mut BTreeMap<(i32, i32), u64>,
        t: f64,
    ) {
        match self.model {
            SlotModel::Thermal {
                q,
                herald_only,
                conversion_only,
            } => {
                // At least one active pair; the excess is geometric again.
                let extra = if rng.random::<f64>() < q {
                    1 + GeometricSkip::new(1.0 - q).sample(rng)
                } else {
                    0
                };
                let k = 1 + extra;
                let mut heralds = 0u64;
                let mut conversions = 0u64;
                for _ in 0..k {
                    let u: f64 = rng.random();
                    if u < herald_only {
                        heralds += 1;
                    } else if u < herald_only + conversion_only {
                        conversions += 1;
                    } else {
                        heralds += 1;
                        conversions += 1;
                    }
                }
                out.summary.active_pairs += k;
                out.summary.herald_photons_detected += heralds;
                out.summary.conversions += conversions;
                if heralds > 0 {
                    out.summary.heralded_conversions += conversions;
                }
                for _ in 0..heralds {
                    let ch = if rng.random::<f64>() < self.herald_a_share {
                        Channel::HeraldA
                    } else {
                        Channel::HeraldB
                    };
                    self.emit(rng, out, ch, t, None);
                }
                for _ in 0..conversions {
                    self.convert(rng, out, emitted, t);
                }
            }
            SlotModel::Poissonian { mean } => {
                // Poisson(mean) conditioned on >= 1, by inversion.
                let norm = -(-mean).exp_m1();
                let u: f64 = rng.random::<f64>() * norm;
                let mut k = 1u64;
                let mut term = mean * (-mean).exp();
                let mut cdf = term;
                while cdf < u && k < 10_000 {
                    k += 1;
                    term *= mean / k as f64;
                    cdf += term;
                }
                out.summary.active_pairs += k;
                out.summary.conversions += k;
                for _ in 0..k {
                    self.convert(rng, out, emitted, t);
                }
            }
        }
    }
}
