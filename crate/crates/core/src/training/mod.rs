//! Adam, checkpoints and the three-stage transfer-learning curriculum.

mod adam;
mod checkpoint;
mod config;
mod pipeline;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Stage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use pipeline::{
    corpus_loss, examples, init_stage2, length_batches, load_inventory, run_pipeline,
    train_epochs, train_stage1, train_stage2, train_stage3, EpochRecord, Example,
    PipelineOutput, StageResult, LOG_FILE,
};
