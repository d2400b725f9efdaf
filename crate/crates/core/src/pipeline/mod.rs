//! Configuration, model assembly, data handling, training and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod features;
pub mod gradients;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Arch, Config, DataConfig, ModelConfig, Preset, TrainConfig};
pub use data::{load_dataset, load_sample, prepare, Sample};
pub use metrics::{evaluate_scores, Metrics};
pub use model::{bce_loss, one_hot, Model, ModelInput, ModelOutput};
pub use synth::{generate_dataset, SynthConfig};
pub use train::{Adam, TrainLog, Trainer};
