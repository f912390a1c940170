//! Runner, backends and the built-in scenario suite.

pub mod harness;
pub mod http;
pub mod report;
pub mod scripted;
pub mod suite;

pub use harness::{replay, run_episode, Outcome, RunSpec, Trajectory};
pub use report::{Report, SuiteConfig};
pub use scripted::{RuleTable, ScriptedBackend};
