//! Closed-loop driver, the server-farm benchmark, reporting and the
//! experiment pipeline used by the command-line tool.

pub mod benchmark;
pub mod closed_loop;
pub mod config;
pub mod report;

pub use benchmark::{build_datacenter_benchmark, Benchmark, BenchmarkError, BenchmarkSpec};
pub use closed_loop::{closed_loop_run, monte_carlo, RunConfig, RunFailure, StepRecord, TrajectoryLog};
pub use report::{nominal_input_violations, violation_report, ViolationReport};
