//! Data, training loop, checkpoints, evaluation and diagnostics.

mod checkpoint;
mod config;
mod evaluate;
pub mod grad_suite;
mod optim;
mod synth;
mod trainer;
mod volume;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry};
pub use config::{parse_model_config, DataSpec, RunConfig, TrainConfig};
pub use evaluate::{argmax_classes, evaluate, evaluate_params, predict_batch, predict_volume, EvalReport, EvalRow};
pub use optim::{poly_lr, Sgd};
pub use synth::{generate_synthetic, load_dataset, save_dataset, Case, SynthSpec};
pub use trainer::{derive_seed, load_data, Trainer};
pub use volume::Volume;
