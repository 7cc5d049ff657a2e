//! Named scenarios, their configuration, and reproducible output files.
//!
//! Each run writes `<scenario>.csv`, one row per observation with the columns
//! of [`CSV_HEADER`], and `<scenario>.summary.toml` holding the configuration
//! echo, metrics and pass/fail checks. Floats are printed with 17 significant
//! digits so equal configurations give byte-identical files.

mod config;
mod output;
mod scenarios;

pub use config::{parse_config, parse_config_with_overrides, RunConfig, Scenario, KEYS};
pub use output::{fmt_f64, series_csv, write_atomic, Check, Metric, SeriesRow, CSV_HEADER};
pub use scenarios::{
    checkpoint_interval, run_scenario, simulate, trajectory_seed, RunSummary, BORN_ALPHA, BORN_TOTAL, CHANNEL_STATES,
    LIOUVILLE_STATES, LOW_ENTROPY_STATES, PERES_CAP, Z_LIMIT,
};
