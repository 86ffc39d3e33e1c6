//! Command implementations behind the `drowsyfed` binary.

pub mod compare;
pub mod config;
pub mod prep;
pub mod run;

pub use compare::{compare, Comparison, RunSummary};
pub use config::{load_config, parse_config, ConfigRun, Sweep};
pub use prep::{prep, PrepOptions, PrepReport};
pub use run::{run_config, run_one};
