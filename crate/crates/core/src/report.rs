//! Strategy execution with oracle verification, and the comparison report.
//!
//! Every run re-evaluates the program with the reference evaluator and
//! compares all output relations; a report's `oracle_match` is true exactly
//! when they agree. Comparison tables carry absolute and relative numbers
//! (relative to the first successfully executed strategy).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::Config;
use crate::cost::MB;
use crate::data::{Database, Relation};
use crate::eval::{eval_sgf, EvalError};
use crate::mr::{run_plan, stable_hash, EngineError, PlanMetrics};
use crate::planner::{build_plan, greedy_sgf, Plan, PlanError, Strategy};
use crate::query::{DependencyGraph, SgfQuery};
use crate::stats::PlanStats;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Outcome of executing one strategy.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub oracle_match: bool,
    /// Cardinality per output relation.
    pub cardinalities: BTreeMap<String, u64>,
    /// Stable checksum over all output relations.
    pub checksum: u64,
    pub metrics: PlanMetrics,
    pub wall_ms: u64,
}

fn outputs_checksum(outputs: &BTreeMap<String, Relation>) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for (name, rel) in outputs {
        h ^= stable_hash(name.as_bytes());
        h = h.wrapping_mul(0x100000001b3);
        h ^= stable_hash(rel.to_tsv().as_bytes());
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn collect_outputs(db: &Database, program: &SgfQuery) -> BTreeMap<String, Relation> {
    program
        .queries
        .iter()
        .map(|q| {
            (
                q.output.clone(),
                db.relation(&q.output).cloned().unwrap_or_else(|| {
                    Relation::new(q.out_vars.len())
                }),
            )
        })
        .collect()
}

/// A complete run: the report, the plan that was executed, and the output
/// relations the engine produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub plan: Plan,
    pub outputs: BTreeMap<String, Relation>,
}

/// Plans and executes one strategy, verifying the result against the
/// reference evaluator.
pub fn run_strategy(
    db: &Database,
    program: &SgfQuery,
    strategy: Strategy,
    cfg: &Config,
) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let stats = PlanStats::measure(db, program, cfg);
    let uses_dynamic = cfg.dynamic_replan
        && matches!(strategy, Strategy::Greedy | Strategy::GreedySgf)
        && program.queries.len() > 1;
    let (plan, out_db, metrics) = if uses_dynamic {
        run_dynamic(db, program, strategy, cfg)?
    } else {
        let plan = build_plan(program, strategy, &stats, cfg)?;
        let (out_db, metrics) = run_plan(db, &plan.dag, cfg)?;
        (plan, out_db, metrics)
    };

    let outputs = collect_outputs(&out_db, program);
    let expected = eval_sgf(db, program)?;
    let oracle_match = outputs == expected;
    let report = RunReport {
        strategy,
        oracle_match,
        cardinalities: outputs.iter().map(|(n, r)| (n.clone(), r.len() as u64)).collect(),
        checksum: outputs_checksum(&outputs),
        metrics,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(RunOutcome {
        report,
        plan,
        outputs,
    })
}

/// Stage-at-a-time execution with re-planning: after each stage runs, the
/// measured sizes of its outputs replace the planner's bounds and the
/// remaining queries are re-staged.
fn run_dynamic(
    db: &Database,
    program: &SgfQuery,
    strategy: Strategy,
    cfg: &Config,
) -> Result<(Plan, Database, PlanMetrics), RunError> {
    let mut working = db.clone();
    let mut remaining: Vec<usize> = (0..program.queries.len()).collect();
    let mut all_jobs = Vec::new();
    let mut net_cost = 0.0f64;
    let mut rounds = 0u64;
    let mut last_plan = None;

    while !remaining.is_empty() {
        let sub = SgfQuery {
            queries: remaining.iter().map(|&q| program.queries[q].clone()).collect(),
        };
        let stats = PlanStats::measure(&working, &sub, cfg);
        let graph = DependencyGraph::from_query(&sub);
        let sort = greedy_sgf(&sub, &graph);
        let first_stage: Vec<usize> = sort.stages[0].clone();
        let stage_program = SgfQuery {
            queries: first_stage.iter().map(|&q| sub.queries[q].clone()).collect(),
        };
        let plan = build_plan(&stage_program, strategy, &stats, cfg)?;
        let (next_db, metrics) = run_plan(&working, &plan.dag, cfg)?;
        working = next_db;
        rounds += metrics.rounds;
        net_cost += metrics.net_cost;
        all_jobs.extend(metrics.jobs);
        let placed: Vec<usize> = first_stage.iter().map(|&q| remaining[q]).collect();
        remaining.retain(|q| !placed.contains(q));
        last_plan = Some(plan);
    }

    let metrics = PlanMetrics {
        rounds,
        total_cost: all_jobs.iter().map(|j| j.measured_cost).sum(),
        net_cost,
        estimated_total_cost: None,
        input_bytes: all_jobs.iter().map(|j| j.input_bytes).sum(),
        shuffle_bytes: all_jobs.iter().map(|j| j.shuffle_bytes).sum(),
        reduce_output_bytes: all_jobs.iter().map(|j| j.reduce_output_bytes).sum(),
        jobs: all_jobs,
    };
    Ok((last_plan.expect("at least one stage"), working, metrics))
}

/// One row of a comparison: a successful run or the failure reason.
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum CompareRow {
    Ok(Box<RunReport>),
    Failed { strategy: Strategy, error: String },
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn all_verified(&self) -> bool {
        self.rows.iter().all(|row| match row {
            CompareRow::Ok(r) => r.oracle_match,
            CompareRow::Failed { .. } => false,
        })
    }

    /// Plain-text table; relative columns are ratios against the first
    /// successful row.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let base = self.rows.iter().find_map(|r| match r {
            CompareRow::Ok(r) => Some(r),
            _ => None,
        });
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8} {:>8} {:>7}",
            "strategy",
            "oracle",
            "total_cost",
            "net_cost",
            "input_MB",
            "shuffle_MB",
            "rel_tot",
            "rel_net",
            "rel_in",
            "rounds"
        );
        for row in &self.rows {
            match row {
                CompareRow::Ok(r) => {
                    let m = &r.metrics;
                    let rel = |x: f64, b: f64| if b > 0.0 { x / b } else { 1.0 };
                    let (rt, rn, ri) = match base {
                        Some(b) => (
                            rel(m.total_cost, b.metrics.total_cost),
                            rel(m.net_cost, b.metrics.net_cost),
                            rel(m.input_bytes as f64, b.metrics.input_bytes as f64),
                        ),
                        None => (1.0, 1.0, 1.0),
                    };
                    let _ = writeln!(
                        out,
                        "{:<12} {:>7} {:>12.2} {:>12.2} {:>12.3} {:>12.3} {:>8.3} {:>8.3} {:>8.3} {:>7}",
                        r.strategy.name(),
                        if r.oracle_match { "ok" } else { "FAIL" },
                        m.total_cost,
                        m.net_cost,
                        m.input_bytes as f64 / MB,
                        m.shuffle_bytes as f64 / MB,
                        rt,
                        rn,
                        ri,
                        m.rounds
                    );
                }
                CompareRow::Failed { strategy, error } => {
                    let _ = writeln!(out, "{:<12} {:>7} {}", strategy.name(), "-", error);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Runs each strategy in turn; one strategy failing (for instance, not being
/// applicable) does not abort the others.
pub fn compare(
    db: &Database,
    program: &SgfQuery,
    strategies: &[Strategy],
    cfg: &Config,
) -> CompareReport {
    let rows = strategies
        .iter()
        .map(|&s| match run_strategy(db, program, s, cfg) {
            Ok(outcome) => CompareRow::Ok(Box::new(outcome.report)),
            Err(e) => CompareRow::Failed {
                strategy: s,
                error: e.to_string(),
            },
        })
        .collect();
    CompareReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_program;
    use crate::workload::{generate, template_query, WorkloadSpec};

    fn small_spec() -> WorkloadSpec {
        WorkloadSpec {
            guard_tuples: 300,
            conditional_tuples: 300,
            selectivity: 0.5,
            value_width: 8,
            seed: 11,
        }
    }

    #[test]
    fn all_strategies_match_oracle_on_a1() {
        let program = template_query("A1").unwrap();
        let db = generate(&program, &small_spec()).unwrap().db;
        let cfg = Config::default();
        for strategy in [
            Strategy::Seq,
            Strategy::Par,
            Strategy::Greedy,
            Strategy::SeqUnit,
            Strategy::ParUnit,
        ] {
            let outcome = run_strategy(&db, &program, strategy, &cfg).unwrap();
            assert!(outcome.report.oracle_match, "{strategy} diverged from the oracle");
        }
    }

    #[test]
    fn compare_keeps_going_after_inapplicable_strategy() {
        let program = parse_program(
            "Z := SELECT (x, y) FROM R(x,y) WHERE (S(x,y) OR S(y,x)) AND T(x,z);",
        )
        .unwrap();
        let db = generate(&program, &small_spec()).unwrap().db;
        let cfg = Config::default();
        let report = compare(&db, &program, &[Strategy::OneRound, Strategy::Par], &cfg);
        assert_eq!(report.rows.len(), 2);
        assert!(matches!(report.rows[0], CompareRow::Failed { .. }));
        assert!(matches!(report.rows[1], CompareRow::Ok(_)));
        assert!(!report.all_verified());
        let table = report.render_table();
        assert!(table.contains("PAR"));
    }

    #[test]
    fn dynamic_replan_matches_oracle() {
        let program = template_query("C4").unwrap();
        let db = generate(&program, &small_spec()).unwrap().db;
        let cfg = Config {
            dynamic_replan: true,
            ..Config::default()
        };
        let outcome = run_strategy(&db, &program, Strategy::Greedy, &cfg).unwrap();
        assert!(outcome.report.oracle_match);
    }

    #[test]
    fn exact_strategies_match_oracle_and_never_plan_worse() {
        let program = template_query("C1").unwrap();
        let db = generate(&program, &small_spec()).unwrap().db;
        let cfg = Config::default();
        let greedy = run_strategy(&db, &program, Strategy::Greedy, &cfg).unwrap();
        for strategy in [Strategy::OptBsgf, Strategy::OptSgf] {
            let outcome = run_strategy(&db, &program, strategy, &cfg).unwrap();
            assert!(outcome.report.oracle_match, "{strategy} diverged");
            assert!(
                outcome.plan.estimated_cost() <= greedy.plan.estimated_cost() + 1e-9,
                "{strategy} planned worse than the greedy plan"
            );
        }
    }

    #[test]
    fn empty_guard_relation_runs_cleanly() {
        let program = template_query("A3").unwrap();
        let mut spec = small_spec();
        spec.guard_tuples = 0;
        let db = generate(&program, &spec).unwrap().db;
        for strategy in [Strategy::Par, Strategy::Greedy, Strategy::OneRound, Strategy::Seq] {
            let outcome = run_strategy(&db, &program, strategy, &Config::default()).unwrap();
            assert!(outcome.report.oracle_match);
            assert_eq!(outcome.report.cardinalities["ZA3"], 0);
        }
    }

    #[test]
    fn exact_grouping_rejects_oversized_pools() {
        // 16 equations exceed the partition-enumeration guard.
        let program = template_query("B1").unwrap();
        let db = generate(&program, &small_spec()).unwrap().db;
        let cfg = Config::default();
        let err = run_strategy(&db, &program, Strategy::OptBsgf, &cfg).unwrap_err();
        assert!(err.to_string().contains("too large"), "{err}");
    }
}
