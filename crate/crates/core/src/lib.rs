//! Streaming temporal-graph training with history-based pseudo-supervision
//! (historical average, moving average, persistent forecast), plus the
//! analytic label-variance and regret-bound calculators with their Monte
//! Carlo cross-checks.

pub mod error;
pub mod eval;
pub mod experiments;
pub mod model;
pub mod pseudo;
pub mod rng;
pub mod stream;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
