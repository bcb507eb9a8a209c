//! Experiment configuration, shape generators and the command drivers.

pub mod commands;
pub mod config;
pub mod shapes;

pub use commands::{
    cmd_check, cmd_export_fields, cmd_fit_kernel, cmd_register, config_hash, run_dir,
};
pub use config::{apply_override, ExperimentConfig};
