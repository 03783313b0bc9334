//! Command-line pipeline: tabulate, discretize, build the causal model,
//! sample a counterfactual, interpolate to a minimal repair, validate and
//! export plot-ready artifacts.

pub mod commands;
pub mod config;
pub mod heatmap;

pub use commands::{
    cmd_build_model, cmd_discretize, cmd_export_heatmap, cmd_interpolate, cmd_repair, cmd_search, cmd_validate, exit,
    outputs, Which,
};
pub use config::PipelineConfig;
