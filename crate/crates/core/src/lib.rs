//! Regime-switching asset allocation.
//!
//! The crate identifies bull and bear regimes per asset with statistical
//! jump models, forecasts the next day's regime with gradient-boosted
//! trees, and turns the forecasts into portfolio weights with a
//! long-only mean-variance optimizer. A daily backtester with linear
//! transaction costs evaluates the result.
//!
//! | module | role |
//! |---|---|
//! | [`market_data`] | return/macro panels, CSV ingestion, EWM and rolling estimators |
//! | [`features`] | return and macro features, standardization |
//! | [`jump_model`] | jump-penalized temporal clustering |
//! | [`gbdt`] | boosted-tree classifier |
//! | [`pipeline`] | walk-forward regime forecasts and jump-penalty selection |
//! | [`mvo`] | mean-variance QP with trading costs |
//! | [`allocation`] | strategy rules that produce target weights |
//! | [`backtest`] | daily simulation and performance metrics |
//! | [`synthgen`] | synthetic regime-switching universes |

pub mod allocation;
pub mod backtest;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod jump_model;
pub mod linalg;
pub mod market_data;
pub mod mvo;
pub mod pipeline;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
pub use linalg::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/jump-models.md")]
    mod jump_models {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/backtesting.md")]
    mod backtesting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
