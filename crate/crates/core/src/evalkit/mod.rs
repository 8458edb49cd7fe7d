//! Metrics, dataset statistics and the ablation runner.

mod metrics;
mod report;
mod stats;

pub use metrics::*;
pub use report::*;
pub use stats::*;
