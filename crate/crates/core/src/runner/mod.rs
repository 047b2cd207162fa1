//! Configuration, presets, seed streams, single runs, sweeps and reports.

mod config;
mod presets;
mod report;
mod run;
pub mod seeds;
mod svg;
mod sweep;

pub use config::{space_label, Precision, RunConfig};
pub use presets::{preset, PRESET_NAMES, SMOKE_ENTROPY_COEF, SMOKE_LEARNING_RATE};
pub use report::{load_runs, report, strategy_color, LoadedRun, PlottedRow};
pub use run::{
    deterministic_mode, read_metrics, read_summary, run, RunOptions, RunResult, RunSummary, DETERMINISTIC_ENV,
};
pub use svg::{Chart, Series};
pub use sweep::{aggregate, run_dir_name, sweep, write_aggregate, AggregateRow, SweepOptions};
