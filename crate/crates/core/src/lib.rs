//! Simulation and analysis toolkit for cascaded down-conversion experiments
//! in which heralded single photons carrying orbital angular momentum pump a
//! second nonlinear crystal.
//!
//! * [`modes`]: Laguerre-Gaussian overlaps and the second-source mode spectrum.
//! * [`statistics`]: first-source photon statistics and loss.
//! * [`montecarlo`]: event-level detector stream simulation.
//! * [`tagstream`]: binary and CSV time-tag files.
//! * [`analysis`]: coincidences, accidentals and correlation matrices.
//! * [`config`]: TOML run configuration.

pub mod analysis;
pub mod config;
pub mod constants;
pub mod modes;
pub mod montecarlo;
pub mod statistics;
pub mod stream;
pub mod tagstream;
pub mod units;
