//! Subjective and objective evaluation: MOS ratings, inconsistency
//! histograms, related/unrelated pair statistics and Pearson correlation.

mod histogram;
mod pairs;
mod ratings;
mod stats;

use thiserror::Error;

pub use histogram::{inconsistency_histogram, Component, Histogram};
pub use pairs::{all_frame_audio_pairs, default_references, pair_stats, Pair, PairStats, Relation};
pub use ratings::{
    format_timestamp, header_row, rating_row, read_ratings, write_ratings, RatingRecord,
    RATINGS_HEADER,
};
pub use stats::{
    correlate, mos_aggregate, pearson, population_stats, CorrelationReport, GroupBy, GroupSummary,
    PairKey, RaterMode,
};

use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("mos {0} outside 1..=5")]
    InvalidMos(i64),
    #[error("no ratings")]
    EmptyRatings,
    #[error("no input values")]
    EmptyInput,
    #[error("invalid bin count {0}")]
    InvalidBins(usize),
    #[error("frame '{0}' is not in the manifest")]
    UnknownFrame(String),
    #[error("unknown id '{0}'")]
    UnknownId(String),
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("no metric value for pair ({frame_id}, {audio_id})")]
    MissingMetric { frame_id: String, audio_id: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}
