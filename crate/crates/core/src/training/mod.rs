//! Segmentation training: BCE+Dice loss, IoU/F1 metrics, Adam with cosine
//! annealing, synthetic and folder datasets, checkpoints and run configs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use config::{DataConfig, DataSource, RunConfig, TrainRecipe};
pub use data::{load_image_folder, synth_dataset, Dataset, SampleBatch, SynthConfig};
pub use loss::loss_bce_dice;
pub use metrics::{iou_f1, metrics_iou_f1};
pub use optim::{cosine_lr, Adam};
pub use trainer::{evaluate, train, EpochMetrics, Evaluation, Split, METRICS_HEADER};
