//! Configuration-driven driver for the `regime-alloc` engine.
//!
//! The binary exposes four subcommands: `simulate` writes a synthetic
//! planted-regime dataset, `tune` runs the walk-forward regime stage and
//! reports the selected jump penalties, `backtest` runs every configured
//! strategy, and `report` re-renders metrics from stored daily files.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
