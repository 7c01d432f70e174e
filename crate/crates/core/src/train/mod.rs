//! Pairwise ranking optimization with adaptive-moment updates and
//! validation-based model selection.

mod adam;
mod loss;
mod trainer;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use loss::bpr_loss;
pub use trainer::{train, EpochRecord, TrainConfig, TrainLog, TrainOutcome, Trainer};
