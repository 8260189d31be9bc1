//! Daily-loop hedging backtester.
//!
//! The crate simulates a portfolio that allocates capital across three
//! option-hedging sleeves (collar, straddle, delta-neutral) plus cash.
//! Each trading day the engine computes market features, retrieves similar
//! past episodes from an in-memory buffer, scores candidate sleeve weights
//! against their realized outcomes, applies a drawdown-triggered safety
//! override, and executes the resulting orders against mid-market marks
//! with explicit transaction costs.
//!
//! Module map:
//! - [`market`]: OHLCV bars, CSV loading, synthetic regime-switching paths,
//!   feature extraction and calibration statistics.
//! - [`pricing`]: European option pricing and delta under constant volatility.
//! - [`agents`]: per-sleeve order generation (collar, straddle, delta-neutral).
//! - [`memory`]: episodic buffer with cosine top-k retrieval and outcome
//!   backfill.
//! - [`controller`]: allocation decisions (heuristic grid search, optional
//!   remote model, stochastic wrapper) and decision validation.
//! - [`safety`]: deterministic drawdown override with hysteresis.
//! - [`engine`]: portfolio accounting, order execution, the daily loop, and
//!   baseline strategies.
//! - [`metrics`]: risk and performance statistics for equity curves.
//! - [`runner`]: config parsing, run orchestration, and file outputs.

pub mod agents;
pub mod calendar;
pub mod config;
pub mod controller;
pub mod engine;
pub mod error;
pub mod llm;
pub mod market;
pub mod memory;
pub mod metrics;
pub mod pricing;
pub mod runner;
pub mod safety;

pub use error::{Error, Result};
