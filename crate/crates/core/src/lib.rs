//! Agent-based limit order book simulation for studying optimal execution.
//!
//! The crate is organised bottom-up: [`lob`] is the matching engine,
//! [`impact`] fits and applies the aggregate impact law, [`agents`] and
//! [`sim`] produce a trading session, [`execution`] samples a meta-order
//! schedule, [`slippage`] decomposes the cost of a paired run, [`policy`]
//! trains the schedule distribution, and [`frontier`] compares strategies
//! against the mean-variance frontier.

pub mod agents;
pub mod calibration;
pub mod events;
pub mod execution;
pub mod experiment;
pub mod frontier;
pub mod impact;
pub mod lob;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod series;
pub mod session;
pub mod sim;
pub mod slippage;

use thiserror::Error;

pub use lob::{Order, OrderBook, Side, Trade};

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("order book error: {0}")]
    Book(#[from] lob::BookError),
    #[error("impact fit failed: {0}")]
    Fit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("slippage is undefined: the executor traded no volume")]
    NoExecutedVolume,
    #[error("paired legs diverged at t={0} ms before the executor acted")]
    LegDivergence(i64),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
