//! Training: learning-rate schedule, Adam, curriculum stages with early
//! stopping, and checkpoints.

mod adam;
mod checkpoint;
mod plan;
mod schedule;
mod trainer;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{
    from_named, to_named, Checkpoint, CurriculumState, NamedTensor, OptimizerState, RngState, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use plan::{CurriculumPlan, StageConfig};
pub use schedule::LrSchedule;
pub use trainer::{ProgressRecord, StageProgress, StageSummary, StepRecord, TrainConfig, Trainer};
