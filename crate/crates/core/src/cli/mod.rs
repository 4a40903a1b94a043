//! Command implementations behind the `kinlyap` binary.

pub mod config;
pub mod presets;
pub mod run;
pub mod svg;
pub mod validate;

pub use config::RunConfig;
pub use presets::{cmd_reproduce, preset_runs, Simulation};
pub use run::{cmd_certify, cmd_run, execute, prepare, RunSummary};
pub use validate::cmd_validate;
