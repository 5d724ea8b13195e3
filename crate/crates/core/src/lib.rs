#![forbid(unsafe_code)]

//! Guarded-fragment query engine over a simulated MapReduce runtime.
//!
//! The pipeline: parse a program of guarded queries, extract its semi-join
//! equations, group them into multi-semi-join jobs with a cost model that
//! charges each input its own merge work, stage the queries along the
//! dependency graph, and execute the resulting job DAG on a deterministic
//! in-process MapReduce engine with full byte accounting. A naive reference
//! evaluator serves as the correctness oracle for every strategy, and exact
//! brute-force optimizers bound the greedy ones.

pub mod config;
pub mod cost;
pub mod data;
pub mod dot;
pub mod eval;
pub mod mr;
pub mod ops;
pub mod planner;
pub mod query;
pub mod report;
pub mod stats;
pub mod workload;

pub use config::Config;
pub use data::{Database, Relation};
pub use planner::Strategy;
pub use query::{parse_program, validate, SgfQuery};
