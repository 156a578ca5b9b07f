//! Coincidence analysis of time-tag streams: delay histograms, windowed
//! coincidence counting with greedy earliest-match pairing, accidental
//! estimation from histogram side bands, and assembly of OAM correlation
//! matrices.
//!
//! Timestamps are integer picoseconds and every input list must be sorted.
//! A window of width `w` centered at delay `d` accepts partner delays in the
//! closed interval `[d - ⌊w/2⌋, d + ⌊w/2⌋]`.

mod coincidence;
mod histogram;
mod matrix;

pub use coincidence::{count_coincidences, heralded_coincidences, heralded_pair_times, match_pairs};
pub use histogram::{accidental_rate, cross_histogram, find_peak, AccidentalEstimate, DelayHistogram};
pub use matrix::{
    analyze_segment, assemble_matrix, build_matrix, diagonal_fraction, pearson, CellStats,
    CorrelationMatrix, MatrixExport, MatrixOptions, ScanSegment, SegmentCounts, TimeBin,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{stream} timestamps are not sorted (index {index})")]
    Unsorted { stream: &'static str, index: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("exclusion region covers the whole histogram")]
    ExclusionCoversRange,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("no scan segment for cell ({0}, {1})")]
    MissingCell(i32, i32),
    #[error("scan has zero integration time")]
    ZeroDuration,
    #[error("matrices have different cell sets")]
    CellMismatch,
    #[error("correlation undefined: a matrix has zero variance")]
    ZeroVariance,
    #[error("fraction undefined: matrix total is not positive")]
    UndefinedFraction,
}

pub(crate) fn check_sorted(ts: &[u64], stream: &'static str) -> Result<(), AnalysisError> {
    match crate::stream::first_unsorted(ts) {
        Some(index) => Err(AnalysisError::Unsorted { stream, index }),
        None => Ok(()),
    }
}

/// Coincidence window widths in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceWindows {
    /// Signal–idler window used to form pairs before heralding.
    pub pair_window: u64,
    /// Pair–herald window.
    pub herald_window: u64,
    /// Signal–idler window for unheralded pair counting.
    pub unheralded_window: u64,
}

impl Default for CoincidenceWindows {
    fn default() -> Self {
        Self {
            pair_window: 1_000,
            herald_window: 300,
            unheralded_window: 400,
        }
    }
}

impl CoincidenceWindows {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.pair_window == 0 || self.herald_window == 0 || self.unheralded_window == 0 {
            return Err(AnalysisError::InvalidOption("coincidence windows must be positive".into()));
        }
        Ok(())
    }
}

/// Expected delays (ps) of the partner channels relative to the signal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offsets {
    pub idler_minus_signal: i64,
    pub herald_minus_signal: i64,
}
