//! Scenario configuration, drivers and the CSV/JSON file formats they emit.

pub mod config;
pub mod decay;
pub mod run;
pub mod schedule_io;
pub mod series;
pub mod snapshot;

pub use config::{ScenarioConfig, Scenario};
pub use decay::{fit_decay_rate, DecayFit};
pub use run::{run_convergence, run_grad_check, run_optimize, run_simulate, simulate_schedule};
pub use schedule_io::{parse_schedule_csv, read_schedule_csv, write_schedule_csv};
pub use series::{SeriesRow, TimeSeries};
pub use snapshot::{emit_snapshot, Snapshot};
