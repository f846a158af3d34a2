//! Scenario files, metrics reports and benchmark suites.

pub mod bench;
pub mod oracle;
pub mod report;
pub mod scenario;

pub use report::{MetricsReport, Record, Value};
pub use scenario::{run_scenario, Job, JobSpan, Scenario, ScenarioOutcome, TimedJob};
pub use oracle::{run_oracle, OracleKernel, OracleOpts};
