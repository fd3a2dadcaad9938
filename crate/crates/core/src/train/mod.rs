pub mod checkpoint;
mod config;
mod eval;
mod sgd;
mod state;
mod trainer;

pub use checkpoint::{Checkpoint, Record, RecordData};
pub use config::{lr_at_epoch, StepSchedule, TrainConfig};
pub use eval::{evaluate, predict, CropPolicy, Evaluation};
pub use sgd::Sgd;
pub use state::{checkpoint_config, checkpoint_precision, load_model, model_checkpoint};
pub use trainer::{CondenseEvent, EpochMetrics, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE};
