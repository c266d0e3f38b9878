//! Data, augmentation, optimisation, training and evaluation.

pub mod augment;
pub mod config;
pub mod data;
pub mod export;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod train;

pub use augment::Dihedral;
pub use config::{load_config, parse_override, DataConfig, ExperimentConfig, RunConfig};
pub use data::{load_dataset, load_pairs, save_dataset, stack, BitemporalSample, Provenance};
pub use export::{predict_export, Exported};
pub use metrics::{error_map, evaluate_maps, Confusion, MetricsReport};
pub use optim::{Adam, AdamConfig};
pub use synth::{generate_one, generate_range, synth_generate, SynthSpec};
pub use train::{evaluate, load_training_data, predict, train, EpochRecord, StopReason, TrainOutcome, TrainReport};
