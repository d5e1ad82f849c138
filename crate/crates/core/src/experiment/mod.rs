//! Experiment runner: paired pruned/unpruned training, weight audits,
//! sparsification sweeps, the RMT verification suite and plot tables.

pub mod analyze;
pub mod config;
pub mod plot;
pub mod run;
pub mod verify;

pub use analyze::{analyze_container, analyze_weights, sparsify_sweep, xi_for_budget, LayerAnalysis, SweepPoint};
pub use config::{AnalyzeConfig, DatasetSpec, PlotConfig, PlotKind, RunConfig, SweepConfig, Task, VerifyConfig};
pub use plot::{emit_plot_data, Table};
pub use run::{aggregate, run_experiment, run_experiment_on, run_seed, EpochRow, ExperimentReport, SeedRun, Variant};
pub use verify::{verify_rmt, PropertyResult, VerifyReport};
