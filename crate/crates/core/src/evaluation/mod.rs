//! Scenario generation, metrics, aggregation and the benchmark sweep.

mod benchmark;
mod metrics;
mod scenario;
mod stats;

pub use benchmark::{
    compare_tables, derive_seed, read_records, run_benchmark, summarize, write_records, BenchmarkOutput,
    BenchmarkSetup, Comparison, EpsilonBlock, KeptRollout, Method, MetricsRecord, SolveSummary, Summary,
};
pub use metrics::{collision_flag, energy, final_position_error, INVALID_FINAL_ERROR};
pub use scenario::{generate_scenarios, Scenario, ScenarioRules};
pub use stats::{aggregate, welch_t_test, Aggregate, Direction, Stat, TTest, SIGNIFICANCE};
