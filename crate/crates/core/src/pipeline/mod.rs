//! Configuration, orchestration and replication experiments.

pub mod config;
pub mod recovery;
pub mod replicate;
pub mod run;

pub use config::{CorruptionConfig, DesignConfig, DesignMode, PipelineConfig};
pub use replicate::{replicate, PRESETS};
pub use run::{run_pipeline, synthesize, Artifacts, Inputs, Manifest};
