//! Batch experiment runner: config parsing, dataset ingestion, model
//! assembly with or without Pool Skip insertions, training loop
//! orchestration, and CSV reporting.

pub mod config;
pub mod data;
pub mod model;
pub mod report;
pub mod run;

pub use config::{parse_config, DataSource, ExperimentConfig};
pub use data::{gen_synthetic, load_cifar_binary, Sample};
pub use model::{infer_shapes, LayerSpec, Model};
pub use run::{run_experiment, run_seed, RunArtifacts, SeedOutcome};
