//! Configuration-driven front end for `mmpart` experiments.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_bounds, cmd_mc, cmd_reach, run_reach, CliError};
pub use config::{canonical_json, parse_config, ConfigError, Experiment, ExperimentConfig};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod guide {}
