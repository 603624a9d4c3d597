//! Derivative-free stochastic tree search over discretized domains.
//!
//! The search core ([`search`]) expands a root node into exactly one child per
//! dimension, scores nodes with a visit-count-dependent upper confidence bound
//! whose exploration weight tracks the best observed label, and only ever
//! back-propagates visit counts between the current root and the accepted
//! child. [`driver`] wraps it into two campaigns: one where node values come
//! straight from the objective, and an active-learning loop where a trained
//! [`surrogate`] stands in for the objective and [`sampler`] picks the batch
//! sent for ground-truth evaluation.
//!
//! External programs can serve objective values over newline-delimited JSON
//! ([`evalproto`]); [`bench`] is the command-line harness on top of all of it.

pub mod bench;
pub mod driver;
pub mod error;
pub mod evalproto;
pub mod objectives;
pub mod sampler;
pub mod search;
pub mod space;
pub mod surrogate;

pub use driver::{
    convergence_ratio, random_search_baseline, run_exact, run_surrogate, Ablations, RunConfig,
    RunHistory, Scenario,
};
pub use error::{Error, Result};
pub use objectives::{Benchmark, BenchmarkObjective, Direction, Objective};
pub use search::{DucbParams, RolloutRecord, VisitTable};
pub use space::{ConstraintSet, Point, SearchSpace};
