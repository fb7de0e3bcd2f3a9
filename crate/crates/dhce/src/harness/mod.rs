//! Training loop, evaluation, checkpoints, configuration, and the
//! glue the CLI drives.
//!
//! The data-parallel inner loops (per-patient gradients, per-patient
//! evaluation, per-parameter gradient checking) run on rayon when the
//! `parallel` feature is enabled (the default) and fall back to plain
//! sequential iteration without it. Reduction order is fixed either
//! way, so the two modes are bit-identical.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod inspect;
mod metrics;
mod prep;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, EncoderSpec, FORMAT_VERSION,
    MAGIC,
};
pub use config::{parse_rules, rules_to_string, EncoderConfig, SplitSpec, TrainConfig};
pub use eval::{
    evaluate, evaluate_constant_scores, evaluate_prepared, frequency_scores, predict_next,
};
pub use gradcheck::{run_gradcheck, GradCheckSummary, GRADCHECK_EPS, GRADCHECK_TOLERANCE};
pub use inspect::render_patient;
pub use metrics::{bce_sum, precision_at_k, rank_codes, EvalReport};
pub use prep::{prepare_dataset, PreparedPatient};
pub use train::{batch_gradients, build_encoder, train, train_with_mode, EpochLog, TrainOutcome};

use thiserror::Error;

use crate::ehr::DataError;
use crate::events::EncodeError;
use crate::hypergraph::HypergraphError;
use crate::model::PrepareError;
use crate::numkit::NumError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("dataset contains codes unknown to the vocabulary: {}", codes.join(", "))]
    UnknownCodes { codes: Vec<String> },
    #[error("non-finite loss while training on patient {patient_id}")]
    NonFiniteLoss { patient_id: String },
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("evaluation dataset is empty")]
    EmptyEvalSet,
    #[error("gradient batch is empty")]
    EmptyBatch,
    #[error("patient {patient_id} has no visits")]
    NoVisits { patient_id: String },
}

impl From<PrepareError> for HarnessError {
    fn from(e: PrepareError) -> Self {
        match e {
            PrepareError::Hypergraph(e) => Self::Hypergraph(e),
            PrepareError::Encode(e) => Self::Encode(e),
            PrepareError::Num(e) => Self::Num(e),
            PrepareError::Data(e) => Self::Data(e),
        }
    }
}

impl HarnessError {
    /// CLI exit code: 2 for data/config problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Num(_) | Self::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}

/// How the data-parallel loops execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl ExecMode {
    pub fn default_mode() -> Self {
        #[cfg(feature = "parallel")]
        {
            ExecMode::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order. The parallel path shards
/// the map only; callers reduce the returned vector sequentially, so
/// results do not depend on the mode or thread count.
pub fn map_ordered<T: Sync, R: Send>(
    mode: ExecMode,
    items: &[T],
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    match mode {
        ExecMode::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
    }
}
