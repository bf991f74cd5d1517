//! Scenario replay, randomized workloads, the correctness oracle and the
//! subscriber benchmark.

pub mod bench;
pub mod oracle;
pub mod random;
pub mod scenario;


pub use bench::{measure, run_bench, BenchParams, BenchReport, StageMillis};
pub use oracle::{OracleReport, OracleSpec, OracleSubscription, Pair};
pub use random::{run_random, RandomParams, RandomReport};
pub use scenario::{run_scenario, ExecutionCheck, Scenario, ScenarioEvent, ScenarioReport, ScenarioRun};

use crate::brokers::Transport;
use crate::error::Result;

/// Accepts and drops every POST.
pub struct Discard;

impl Transport for Discard {
    fn post(&self, _url: &str, _body: &serde_json::Value) -> Result<()> {
        Ok(())
    }
}
