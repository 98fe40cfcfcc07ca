//! Experiment orchestration: configuration, multi-seed runs, metrics files,
//! reward curves and the bundled self-checks.

pub mod config;
pub mod plot;
pub mod run;
pub mod synthetic;
pub mod verify;

pub use config::RunConfig;
pub use plot::{curves, plot_curves, render_svg, Curve};
pub use run::{read_metrics, run_experiment, train_seeds, write_metrics, MetricsRow, RunReport, SeedReport};
pub use synthetic::{recover_machine, RecoveryConfig, RecoveryOutcome};
pub use verify::{run_suite, Check, Suite};
