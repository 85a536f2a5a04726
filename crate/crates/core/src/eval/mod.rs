//! Success metrics, multi-attack benchmarks, hyperparameter sweeps and result export.

pub mod benchmark;
pub mod export;
pub mod metrics;
pub mod svg;
pub mod sweep;

pub use benchmark::{comparison_rows, run_benchmark, select_samples, SampleFilter};
pub use export::{export_results, ExportFormat};
pub use metrics::{
    aggregate_macro, aggregate_micro, compute_asr, compute_average_distance, ComparisonRow,
    MetricsReport, OutcomeRow, SampleError, Scored,
};
pub use sweep::{run_sweep, sweep_means, SweepMean, SweepParameter, SweepRow, SweepSpec};
