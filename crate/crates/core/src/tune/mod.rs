//! Schedule search for convolutions, tuning records, and graph-level layout
//! selection by dynamic programming.

use alloc::string::String;

use thiserror::Error;

use crate::conv::ConvError;

mod dp;
mod measure;
mod model;
mod records;
mod search;

pub use dp::{graph_tune_dp, tune_layouts, LayoutAssignment, LayoutProblem};
pub use measure::{fnv1a, Tuner};
pub use model::{features, CostModel, KnnModel, FEATURES_VERSION};
pub use records::{RecordStore, RecordsHeader, TuningRecord, SCHEMA_VERSION};
pub use search::{synthetic_surface, trials_to_reach, tune_model, tune_model_with, tune_random, TuneOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schedule space for {0} is empty")]
    EmptySpace(String),
    #[error("no config of {0} could be measured")]
    NoValidConfig(String),
    #[error("schedule {config} of {key} disagrees with the reference at element {index}: {got} vs {expected}")]
    Mismatch { key: String, config: String, index: usize, got: f32, expected: f32 },
    #[error("node `{0}` has no candidate layout")]
    NoCandidates(String),
    #[error("unsupported graph shape: {0}")]
    UnsupportedShape(String),
    #[error("transform cost: {0}")]
    TransformCost(String),
    #[error(transparent)]
    Conv(#[from] ConvError),
}
