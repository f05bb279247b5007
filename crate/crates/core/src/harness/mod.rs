//! Run configuration, presets, and the command implementations behind the
//! `optinc` binary.

pub mod commands;
pub mod config;

pub use commands::{
    cascade_cmd, cost_cmd, decompose_cmd, e2e_cmd, eval_cmd, gen_dataset, rounds_cmd, train_cmd, DecomposeSummary,
    GenSummary, TrainSummary,
};
pub use config::{preset, BitWeighting, RunConfig, PRESETS};
