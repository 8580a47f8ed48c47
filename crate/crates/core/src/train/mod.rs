//! Optimization, checkpointing and evaluation.

mod adam;
mod checkpoint;
mod config;
mod evaluate;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Record, MAGIC, VERSION};
pub use config::{RunConfig, TrainConfig};
pub use evaluate::{derain, evaluate, EvalReport, EvalRow};
pub use trainer::{
    load_model, model_records, LogRow, StepLosses, TrainState, Trainer, CHECKPOINT_FILE, LOG_FILE,
};
