//! Scenario runner: loads TOML scenarios, runs closed loops and analyses,
//! and writes CSV files plus a key-value `summary.txt`.

pub mod reproduce;
pub mod run;
pub mod scenario;

pub use run::{run_scenario, Report, Selection};
pub use scenario::{ConfigError, LoadedScenario, Overrides};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CHECK_FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const RUNTIME: u8 = 3;
}
