//! Retrieval metrics and compression sweeps.

pub mod metrics;
pub mod sweep;

pub use metrics::{map_at_k, recall_at_k, retrieve, RetrievalResult};
pub use sweep::{rows_to_csv, run_sweep, SweepConfig, SweepContext, SweepRow, METHODS};
