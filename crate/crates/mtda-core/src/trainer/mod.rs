//! Training orchestration: configuration, the alternating loop and baseline
//! modes, run logging, and checkpoints.

mod checkpoint;
mod config;
mod run;
mod sink;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{BetaGranularity, Mode, TrainConfig};
pub use run::{
    EpochSnapshot, RunState, StepCounters, StudentUnit, TeacherUnit, TrainJob, DIVERGENCE_CAP,
};
pub use sink::{JsonlSink, NullSink, RunSink, StepRecord};
