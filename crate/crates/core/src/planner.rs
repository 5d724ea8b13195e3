//! Plan construction: equation grouping (greedy and exact), multiway
//! topological sorts of the query dependency graph (greedy and exact), and
//! the strategy catalog that materializes executable job DAGs.
//!
//! Grouping starts from singleton blocks and repeatedly merges the pair with
//! the largest positive gain, where the gain of merging two blocks is the
//! cost saved by evaluating their union in one job. Stage computation colors
//! dependency-graph vertices: each iteration takes a vertex whose
//! predecessors are all placed and inserts it into the existing stage with
//! the largest nonzero relation overlap when that keeps the sort valid,
//! otherwise opens a new stage. Exact counterparts enumerate set partitions
//! and are guarded by instance-size limits.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::config::Config;
use crate::cost::CostConstants;
use crate::mr::{JobSpec, PlanDag};
use crate::ops::{
    build_chain_step_job, build_eval_job, build_msj_job, build_one_round_job,
    build_projection_job, build_union_project_job, extract_semijoins, one_round_eligible,
    ChainEmit, EvalEntry, Extraction, OpsError, SemiJoinEquation,
};
use crate::query::{Atom, BsgfQuery, ConditionTree, DependencyGraph, SgfQuery};
use crate::stats::{chain_step_cost, eval_cost, msj_cost, one_round_cost, projection_cost, PlanStats, Volume};
use crate::ops::AtomSignature;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("strategy {strategy} is not applicable: {reason}")]
    StrategyInapplicable { strategy: Strategy, reason: String },
    #[error("{what} instance too large: {size} > {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error(transparent)]
    Ops(#[from] OpsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Seq,
    Par,
    Greedy,
    OneRound,
    SeqUnit,
    ParUnit,
    GreedySgf,
    OptBsgf,
    OptSgf,
}

impl serde::Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Seq,
        Strategy::Par,
        Strategy::Greedy,
        Strategy::OneRound,
        Strategy::SeqUnit,
        Strategy::ParUnit,
        Strategy::GreedySgf,
        Strategy::OptBsgf,
        Strategy::OptSgf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Seq => "SEQ",
            Strategy::Par => "PAR",
            Strategy::Greedy => "GREEDY",
            Strategy::OneRound => "ONE_ROUND",
            Strategy::SeqUnit => "SEQUNIT",
            Strategy::ParUnit => "PARUNIT",
            Strategy::GreedySgf => "GREEDY_SGF",
            Strategy::OptBsgf => "OPT_BSGF",
            Strategy::OptSgf => "OPT_SGF",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == up)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A partition of an equation pool into job blocks, each block sorted and
/// blocks ordered by smallest member.
pub type Partition = Vec<Vec<usize>>;

/// An ordered sequence of stages over query indices; every dependency edge
/// crosses from an earlier stage to a later one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiwayTopoSort {
    pub stages: Vec<Vec<usize>>,
}

impl MultiwayTopoSort {
    pub fn is_valid(&self, graph: &DependencyGraph) -> bool {
        let mut stage_of = vec![usize::MAX; graph.nodes];
        let mut seen = 0usize;
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.is_empty() {
                return false;
            }
            for &node in stage {
                if node >= graph.nodes || stage_of[node] != usize::MAX {
                    return false;
                }
                stage_of[node] = si;
                seen += 1;
            }
        }
        seen == graph.nodes
            && graph
                .edges
                .iter()
                .all(|&(u, v)| stage_of[u] < stage_of[v])
    }
}

// ---------------------------------------------------------------------------
// Equation grouping
// ---------------------------------------------------------------------------

fn block_cost(pool: &[SemiJoinEquation], block: &[usize], stats: &PlanStats, c: &CostConstants) -> f64 {
    let refs: Vec<&SemiJoinEquation> = block.iter().map(|&i| &pool[i]).collect();
    msj_cost(&refs, stats, c)
}

/// Cost saved by evaluating two disjoint blocks in one job.
pub fn gain(
    pool: &[SemiJoinEquation],
    left: &[usize],
    right: &[usize],
    stats: &PlanStats,
    c: &CostConstants,
) -> f64 {
    let mut merged: Vec<usize> = left.iter().chain(right).copied().collect();
    merged.sort_unstable();
    block_cost(pool, left, stats, c) + block_cost(pool, right, stats, c)
        - block_cost(pool, &merged, stats, c)
}

/// Greedy grouping: start from singletons, repeatedly merge the pair with
/// the greatest strictly positive gain. Ties keep the earliest pair in block
/// order.
pub fn greedy_bsgf(pool: &[SemiJoinEquation], stats: &PlanStats, c: &CostConstants) -> Partition {
    let mut blocks: Partition = (0..pool.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..blocks.len() {
            for j in (i + 1)..blocks.len() {
                let g = gain(pool, &blocks[i], &blocks[j], stats, c);
                if g > 0.0 && best.is_none_or(|(bg, _, _)| g > bg) {
                    best = Some((g, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                let right = blocks.remove(j);
                blocks[i].extend(right);
                blocks[i].sort_unstable();
            }
            None => return blocks,
        }
    }
}

const BRUTE_FORCE_BSGF_LIMIT: usize = 12;

/// Exact minimizer over all set partitions of the pool. Ties keep the first
/// partition in restricted-growth-string order.
pub fn brute_force_bsgf(
    pool: &[SemiJoinEquation],
    stats: &PlanStats,
    c: &CostConstants,
) -> Result<(Partition, f64), PlanError> {
    let n = pool.len();
    if n > BRUTE_FORCE_BSGF_LIMIT {
        return Err(PlanError::TooLarge {
            what: "equation grouping",
            size: n,
            limit: BRUTE_FORCE_BSGF_LIMIT,
        });
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut block_costs: BTreeMap<u32, f64> = BTreeMap::new();
    let mut cost_of = |mask: u32| -> f64 {
        *block_costs.entry(mask).or_insert_with(|| {
            let block: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            block_cost(pool, &block, stats, c)
        })
    };

    let mut assignment = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;

    fn enumerate(
        idx: usize,
        max_used: usize,
        assignment: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
        n: usize,
        cost_of: &mut dyn FnMut(u32) -> f64,
    ) {
        if idx == n {
            let blocks = max_used + 1;
            let mut masks = vec![0u32; blocks];
            for (i, &b) in assignment.iter().enumerate() {
                masks[b] |= 1 << i;
            }
            let total: f64 = masks.iter().map(|&m| cost_of(m)).sum();
            if best.as_ref().is_none_or(|(_, bc)| total < *bc) {
                *best = Some((assignment.clone(), total));
            }
            return;
        }
        for b in 0..=max_used + 1 {
            assignment[idx] = b;
            enumerate(idx + 1, max_used.max(b), assignment, best, n, cost_of);
        }
    }
    // First element always opens block 0.
    enumerate(1, 0, &mut assignment, &mut best, n, &mut cost_of);

    let (assignment, total) = best.expect("at least one partition");
    let blocks = assignment.iter().copied().max().unwrap_or(0) + 1;
    let mut partition: Partition = vec![Vec::new(); blocks];
    for (i, &b) in assignment.iter().enumerate() {
        partition[b].push(i);
    }
    Ok((partition, total))
}

// ---------------------------------------------------------------------------
// Stage computation
// ---------------------------------------------------------------------------

/// Number of distinct relations mentioned by query `q` that are also
/// mentioned by some query in `stage`.
pub fn overlap(program: &SgfQuery, q: usize, stage: &[usize]) -> usize {
    let mine = program.queries[q].mentioned_relations();
    let theirs: BTreeSet<&str> = stage
        .iter()
        .flat_map(|&p| program.queries[p].mentioned_relations())
        .collect();
    mine.intersection(&theirs).count()
}

/// Overlap-driven stage computation. Every iteration places one ready vertex
/// into the existing stage with maximal nonzero overlap when the sort stays
/// valid, or appends a new stage.
pub fn greedy_sgf(program: &SgfQuery, graph: &DependencyGraph) -> MultiwayTopoSort {
    greedy_sgf_counted(program, graph).0
}

/// As `greedy_sgf`, also returning the number of candidate (vertex, stage)
/// placements examined; the iteration count is cubic in the graph size.
pub fn greedy_sgf_counted(
    program: &SgfQuery,
    graph: &DependencyGraph,
) -> (MultiwayTopoSort, u64) {
    let n = graph.nodes;
    let mut blue: BTreeSet<usize> = (0..n).collect();
    let mut stages: Vec<Vec<usize>> = Vec::new();
    let mut stage_of: Vec<usize> = vec![usize::MAX; n];
    let mut steps = 0u64;

    while !blue.is_empty() {
        let ready: Vec<usize> = blue
            .iter()
            .copied()
            .filter(|&u| graph.predecessors(u).all(|p| !blue.contains(&p)))
            .collect();
        debug_assert!(!ready.is_empty());

        let mut best: Option<(usize, usize, usize)> = None; // (overlap, u, stage)
        for &u in &ready {
            let min_stage = graph
                .predecessors(u)
                .map(|p| stage_of[p] + 1)
                .max()
                .unwrap_or(0);
            for (si, stage) in stages.iter().enumerate().skip(min_stage) {
                steps += 1 + stage.len() as u64;
                let ov = overlap(program, u, stage);
                if ov > 0 && best.is_none_or(|(bo, _, _)| ov > bo) {
                    best = Some((ov, u, si));
                }
            }
        }
        match best {
            Some((_, u, si)) => {
                stages[si].push(u);
                stages[si].sort_unstable();
                stage_of[u] = si;
                blue.remove(&u);
            }
            None => {
                let u = ready[0];
                stage_of[u] = stages.len();
                stages.push(vec![u]);
                blue.remove(&u);
            }
        }
    }
    (MultiwayTopoSort { stages }, steps.max(1))
}

const BRUTE_FORCE_SGF_LIMIT: usize = 8;

/// Exact stage optimization: enumerates every stage partition of the
/// dependency graph (partitions with no internal edge and an acyclic block
/// quotient; stage order does not affect cost), costing each stage with the
/// greedy grouping. Returns the best sort, its cost and the number of
/// distinct stage partitions enumerated.
pub fn brute_force_sgf(
    program: &SgfQuery,
    graph: &DependencyGraph,
    stats: &PlanStats,
    cfg: &Config,
) -> Result<(MultiwayTopoSort, f64, usize), PlanError> {
    let n = graph.nodes;
    if n > BRUTE_FORCE_SGF_LIMIT {
        return Err(PlanError::TooLarge {
            what: "stage enumeration",
            size: n,
            limit: BRUTE_FORCE_SGF_LIMIT,
        });
    }
    let extractions = Extractions::of(program)?;

    let mut valid_count = 0usize;
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    let mut assignment = vec![0usize; n];

    fn order_blocks(blocks: &[Vec<usize>], graph: &DependencyGraph) -> Option<Vec<Vec<usize>>> {
        // No internal edges allowed; order blocks topologically over the
        // quotient, smallest first block on ties.
        let k = blocks.len();
        let mut block_of = vec![0usize; graph.nodes];
        for (bi, block) in blocks.iter().enumerate() {
            for &v in block {
                block_of[v] = bi;
            }
        }
        let mut quotient: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(u, v) in &graph.edges {
            if block_of[u] == block_of[v] {
                return None;
            }
            quotient.insert((block_of[u], block_of[v]));
        }
        let mut indegree = vec![0usize; k];
        for &(_, b) in &quotient {
            indegree[b] += 1;
        }
        let mut placed = vec![false; k];
        let mut order = Vec::with_capacity(k);
        for _ in 0..k {
            let next = (0..k).find(|&b| !placed[b] && indegree[b] == 0)?;
            placed[next] = true;
            order.push(blocks[next].clone());
            for &(a, b) in &quotient {
                if a == next {
                    indegree[b] -= 1;
                }
            }
        }
        Some(order)
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        idx: usize,
        max_used: usize,
        assignment: &mut Vec<usize>,
        n: usize,
        graph: &DependencyGraph,
        stage_cost: &mut dyn FnMut(&[usize]) -> f64,
        valid_count: &mut usize,
        best: &mut Option<(Vec<Vec<usize>>, f64)>,
    ) {
        if idx == n {
            let blocks_n = max_used + 1;
            let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); blocks_n];
            for (i, &b) in assignment.iter().enumerate() {
                blocks[b].push(i);
            }
            if let Some(ordered) = order_blocks(&blocks, graph) {
                *valid_count += 1;
                let total: f64 = ordered.iter().map(|stage| stage_cost(stage)).sum();
                if best.as_ref().is_none_or(|(_, bc)| total < *bc) {
                    *best = Some((ordered, total));
                }
            }
            return;
        }
        for b in 0..=max_used + 1 {
            assignment[idx] = b;
            enumerate(
                idx + 1,
                max_used.max(b),
                assignment,
                n,
                graph,
                stage_cost,
                valid_count,
                best,
            );
        }
    }

    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut stage_cost_fn = |stage: &[usize]| -> f64 {
        let key = stage.to_vec();
        if let Some(&c) = memo.get(&key) {
            return c;
        }
        let c = stage_cost(program, &extractions, stage, stats, cfg);
        memo.insert(key, c);
        c
    };

    if n == 0 {
        return Ok((MultiwayTopoSort { stages: Vec::new() }, 0.0, 1));
    }
    enumerate(
        1,
        0,
        &mut assignment,
        n,
        graph,
        &mut stage_cost_fn,
        &mut valid_count,
        &mut best,
    );
    let (stages, cost) = best.expect("at least one valid partition");
    Ok((MultiwayTopoSort { stages }, cost, valid_count))
}

// ---------------------------------------------------------------------------
// Stage costs
// ---------------------------------------------------------------------------

/// Per-query extraction cache; queries without a WHERE clause hold `None`.
pub struct Extractions {
    per_query: Vec<Option<Extraction>>,
}

impl Extractions {
    pub fn of(program: &SgfQuery) -> Result<Extractions, OpsError> {
        let per_query = program
            .queries
            .iter()
            .map(|q| q.condition.as_ref().map(|_| extract_semijoins(q)).transpose())
            .collect::<Result<_, _>>()?;
        Ok(Extractions { per_query })
    }

    pub fn get(&self, q: usize) -> Option<&Extraction> {
        self.per_query[q].as_ref()
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.per_query
            .iter()
            .flatten()
            .flat_map(|ex| ex.warnings.iter())
            .filter(|w| seen.insert(w.as_str()))
            .cloned()
            .collect()
    }
}

/// Pools the stage's equations, in query order.
fn stage_pool(extractions: &Extractions, stage: &[usize]) -> Vec<SemiJoinEquation> {
    stage
        .iter()
        .filter_map(|&q| extractions.get(q))
        .flat_map(|ex| ex.equations.iter().cloned())
        .collect()
}

fn eval_cost_entries(
    program: &SgfQuery,
    extractions: &Extractions,
    stage: &[usize],
) -> Vec<(String, Vec<String>, String)> {
    stage
        .iter()
        .filter_map(|&q| {
            extractions.get(q).map(|ex| {
                (
                    program.queries[q].guard.relation.clone(),
                    ex.equations.iter().map(|e| e.output.clone()).collect(),
                    program.queries[q].output.clone(),
                )
            })
        })
        .collect()
}

/// Cost of evaluating one stage as a basic program under greedy grouping:
/// grouped semi-join jobs plus the shared boolean-combination job plus
/// projection passes.
fn stage_cost(
    program: &SgfQuery,
    extractions: &Extractions,
    stage: &[usize],
    stats: &PlanStats,
    cfg: &Config,
) -> f64 {
    let pool = stage_pool(extractions, stage);
    let mut total = 0.0;
    if !pool.is_empty() {
        let partition = greedy_bsgf(&pool, stats, &cfg.cost);
        for block in &partition {
            total += block_cost(&pool, block, stats, &cfg.cost);
        }
        total += eval_cost(&eval_cost_entries(program, extractions, stage), stats, &cfg.cost);
    }
    for &q in stage {
        if extractions.get(q).is_none() {
            total += projection_cost(
                &program.queries[q].guard.relation,
                &program.queries[q].output,
                stats,
                &cfg.cost,
            );
        }
    }
    total
}

/// Cost of a full stage sequence under greedy grouping.
pub fn sgf_plan_cost(
    program: &SgfQuery,
    sort: &MultiwayTopoSort,
    stats: &PlanStats,
    cfg: &Config,
) -> Result<f64, PlanError> {
    let extractions = Extractions::of(program)?;
    let mut total = 0.0;
    for stage in &sort.stages {
        total += stage_cost(program, &extractions, stage, stats, cfg);
    }
    Ok(total)
}

/// Cost of one basic program for a single stage of queries under a given
/// partition of its pooled equations.
pub fn bsgf_program_cost(
    program: &SgfQuery,
    stage: &[usize],
    partition: &Partition,
    stats: &PlanStats,
    cfg: &Config,
) -> Result<f64, PlanError> {
    let extractions = Extractions::of(program)?;
    let pool = stage_pool(&extractions, stage);
    let mut total = 0.0;
    for block in partition {
        total += block_cost(&pool, block, stats, &cfg.cost);
    }
    if !pool.is_empty() {
        total += eval_cost(&eval_cost_entries(program, &extractions, stage), stats, &cfg.cost);
    }
    for &q in stage {
        if extractions.get(q).is_none() {
            total += projection_cost(
                &program.queries[q].guard.relation,
                &program.queries[q].output,
                stats,
                &cfg.cost,
            );
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Plan materialization
// ---------------------------------------------------------------------------

/// A fully materialized plan: the job DAG plus its stage structure for
/// reporting.
#[derive(Debug)]
pub struct Plan {
    pub strategy: Strategy,
    pub dag: PlanDag,
    /// Query output names per stage.
    pub stages: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

impl Plan {
    pub fn estimated_cost(&self) -> f64 {
        self.dag
            .jobs
            .iter()
            .map(|j| j.estimated_cost.unwrap_or(0.0))
            .sum()
    }
}

struct StageBuild {
    jobs: Vec<JobSpec>,
    /// Indices (within `jobs`) of first-round and last-round jobs, used by
    /// sequential strategies to wire ordering constraints.
    sources: Vec<usize>,
    sinks: Vec<usize>,
}

/// Builds the jobs of one stage: one semi-join job per block, a boolean
/// combination job (shared per stage, or one per query), and projection
/// passes for queries without conditions.
#[allow(clippy::too_many_arguments)]
fn build_stage_jobs(
    program: &SgfQuery,
    extractions: &Extractions,
    stage: &[usize],
    partition: &Partition,
    shared_eval: bool,
    stats: &PlanStats,
    cfg: &Config,
    stage_tag: &str,
) -> Result<StageBuild, PlanError> {
    let pool = stage_pool(extractions, stage);
    let mut jobs = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();

    for (bi, block) in partition.iter().enumerate() {
        let eqs: Vec<SemiJoinEquation> = block.iter().map(|&i| pool[i].clone()).collect();
        let mut job = build_msj_job(&eqs, cfg, &format!("{stage_tag}-msj{bi}"))?;
        job.estimated_cost = Some(block_cost(&pool, block, stats, &cfg.cost));
        sources.push(jobs.len());
        jobs.push(job);
    }

    let make_entry = |q: usize| -> EvalEntry {
        let query = &program.queries[q];
        let ex = extractions.get(q).expect("query has equations");
        EvalEntry {
            output: query.output.clone(),
            guard: query.guard.clone(),
            out_vars: query.out_vars.clone(),
            formula: ex.formula.clone(),
            x_relations: ex.equations.iter().map(|e| e.output.clone()).collect(),
        }
    };
    let where_queries: Vec<usize> = stage
        .iter()
        .copied()
        .filter(|&q| extractions.get(q).is_some())
        .collect();
    if !where_queries.is_empty() {
        if shared_eval {
            let entries: Vec<EvalEntry> = where_queries.iter().map(|&q| make_entry(q)).collect();
            let mut job = build_eval_job(&entries, cfg, &format!("{stage_tag}-eval"))?;
            job.estimated_cost = Some(eval_cost(
                &eval_cost_entries(program, extractions, stage),
                stats,
                &cfg.cost,
            ));
            sinks.push(jobs.len());
            jobs.push(job);
        } else {
            for &q in &where_queries {
                let entries = vec![make_entry(q)];
                let mut job = build_eval_job(
                    &entries,
                    cfg,
                    &format!("{stage_tag}-eval-{}", program.queries[q].output),
                )?;
                job.estimated_cost = Some(eval_cost(
                    &eval_cost_entries(program, extractions, &[q]),
                    stats,
                    &cfg.cost,
                ));
                sinks.push(jobs.len());
                jobs.push(job);
            }
        }
    }
    for &q in stage {
        if extractions.get(q).is_none() {
            let query = &program.queries[q];
            let mut job =
                build_projection_job(query, &format!("{stage_tag}-proj-{}", query.output));
            job.estimated_cost = Some(projection_cost(
                &query.guard.relation,
                &query.output,
                stats,
                &cfg.cost,
            ));
            sources.push(jobs.len());
            sinks.push(jobs.len());
            jobs.push(job);
        }
    }
    Ok(StageBuild { jobs, sources, sinks })
}

/// Splits a condition into disjunctive clauses of possibly negated atoms.
/// Returns `None` when the condition does not have that shape.
fn dnf_clauses(cond: &ConditionTree) -> Option<Vec<Vec<(Atom, bool)>>> {
    fn literals(node: &ConditionTree, out: &mut Vec<(Atom, bool)>) -> bool {
        match node {
            ConditionTree::And(l, r) => literals(l, out) && literals(r, out),
            ConditionTree::Leaf(a) => {
                out.push((a.clone(), false));
                true
            }
            ConditionTree::Not(inner) => match inner.as_ref() {
                ConditionTree::Leaf(a) => {
                    out.push((a.clone(), true));
                    true
                }
                _ => false,
            },
            ConditionTree::Or(..) => false,
        }
    }
    fn clauses(node: &ConditionTree, out: &mut Vec<Vec<(Atom, bool)>>) -> bool {
        match node {
            ConditionTree::Or(l, r) => clauses(l, out) && clauses(r, out),
            other => {
                let mut lits = Vec::new();
                if literals(other, &mut lits) {
                    out.push(lits);
                    true
                } else {
                    false
                }
            }
        }
    }
    let mut out = Vec::new();
    clauses(cond, &mut out).then_some(out)
}

/// Builds the chain jobs of one query for the sequential strategy. Returns
/// (jobs, source indices, sink indices) relative to the returned vector.
fn build_query_chains(
    query: &BsgfQuery,
    stats: &PlanStats,
    cfg: &Config,
) -> Result<StageBuild, PlanError> {
    let mut jobs = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    let Some(cond) = &query.condition else {
        let mut job = build_projection_job(query, &format!("seq-proj-{}", query.output));
        job.estimated_cost = Some(projection_cost(
            &query.guard.relation,
            &query.output,
            stats,
            &cfg.cost,
        ));
        sources.push(0);
        sinks.push(0);
        jobs.push(job);
        return Ok(StageBuild { jobs, sources, sinks });
    };
    let clauses = dnf_clauses(cond).ok_or_else(|| PlanError::StrategyInapplicable {
        strategy: Strategy::Seq,
        reason: format!(
            "{}: condition is not a disjunction of conjunctions of literals",
            query.output
        ),
    })?;
    let single = clauses.len() == 1;
    let mut clause_outputs = Vec::new();
    for (ci, clause) in clauses.iter().enumerate() {
        let mut source = query.guard.relation.clone();
        let mut bound = stats.relation(&source);
        if bound == Volume::default() {
            bound = stats.z_bound(&source);
        }
        for (ti, (atom, negated)) in clause.iter().enumerate() {
            let last = ti + 1 == clause.len();
            let output = if last && single {
                query.output.clone()
            } else if last {
                format!("{}.c{ci}", query.output)
            } else {
                format!("{}.c{ci}s{ti}", query.output)
            };
            let emit = if last && single {
                ChainEmit::Project
            } else {
                ChainEmit::Full
            };
            let mut job = build_chain_step_job(
                query,
                &source,
                ti == 0,
                atom,
                *negated,
                emit,
                &output,
                &format!("seq-{}-c{ci}s{ti}", query.output),
            );
            let key = crate::query::join_key(&query.guard, atom);
            let sig = AtomSignature::of(atom, &key);
            job.estimated_cost = Some(chain_step_cost(bound, &sig, stats, &cfg.cost));
            if ti == 0 {
                sources.push(jobs.len());
            }
            if last && single {
                sinks.push(jobs.len());
            }
            jobs.push(job);
            source = output;
        }
        if !single {
            clause_outputs.push(source);
        }
    }
    if !single {
        let mut job = build_union_project_job(
            query,
            &clause_outputs,
            &format!("seq-{}-union", query.output),
        );
        job.estimated_cost = Some(projection_cost(
            &query.guard.relation,
            &query.output,
            stats,
            &cfg.cost,
        ));
        sinks.push(jobs.len());
        jobs.push(job);
    }
    Ok(StageBuild { jobs, sources, sinks })
}

/// Appends a stage's jobs to the plan, wiring sequencing edges from the
/// previous sequential group when requested.
struct PlanAssembler {
    jobs: Vec<JobSpec>,
    sequence_edges: Vec<(usize, usize)>,
    prev_sinks: Vec<usize>,
}

impl PlanAssembler {
    fn new() -> PlanAssembler {
        PlanAssembler {
            jobs: Vec::new(),
            sequence_edges: Vec::new(),
            prev_sinks: Vec::new(),
        }
    }

    fn push(&mut self, build: StageBuild, sequence_after_previous: bool) {
        let base = self.jobs.len();
        if sequence_after_previous {
            for &sink in &self.prev_sinks {
                for &src in &build.sources {
                    self.sequence_edges.push((sink, base + src));
                }
            }
        }
        self.prev_sinks = build.sinks.iter().map(|&s| base + s).collect();
        self.jobs.extend(build.jobs);
    }

    fn finish(self) -> PlanDag {
        let mut dag = PlanDag::new(self.jobs);
        for (a, b) in self.sequence_edges {
            dag.add_edge(a, b);
        }
        dag
    }
}

/// Materializes the job DAG for a strategy.
pub fn build_plan(
    program: &SgfQuery,
    strategy: Strategy,
    stats: &PlanStats,
    cfg: &Config,
) -> Result<Plan, PlanError> {
    let graph = DependencyGraph::from_query(program);
    let extractions = Extractions::of(program)?;
    let mut warnings = extractions.warnings();

    let singleton_partition = |pool_len: usize| -> Partition { (0..pool_len).map(|i| vec![i]).collect() };

    let mut assembler = PlanAssembler::new();
    let mut stage_names: Vec<Vec<String>> = Vec::new();

    match strategy {
        Strategy::Seq | Strategy::SeqUnit => {
            // One query at a time, in definition order.
            for (qi, query) in program.queries.iter().enumerate() {
                let build = match strategy {
                    Strategy::Seq => build_query_chains(query, stats, cfg)?,
                    _ => build_stage_jobs(
                        program,
                        &extractions,
                        &[qi],
                        &singleton_partition(
                            extractions.get(qi).map_or(0, |ex| ex.equations.len()),
                        ),
                        true,
                        stats,
                        cfg,
                        &format!("s{qi}"),
                    )?,
                };
                stage_names.push(vec![query.output.clone()]);
                assembler.push(build, qi > 0);
            }
        }
        Strategy::OneRound => {
            for (qi, query) in program.queries.iter().enumerate() {
                if !one_round_eligible(query) {
                    let reason = match build_one_round_job(query, cfg, "probe") {
                        Err(OpsError::NotEligible { reason, .. }) => reason,
                        _ => "not eligible".to_string(),
                    };
                    return Err(PlanError::StrategyInapplicable {
                        strategy,
                        reason: format!("{}: {reason}", query.output),
                    });
                }
                let mut job = build_one_round_job(query, cfg, &format!("1r-{}", query.output))?;
                job.estimated_cost = Some(match extractions.get(qi) {
                    Some(ex) => {
                        let refs: Vec<&SemiJoinEquation> = ex.equations.iter().collect();
                        one_round_cost(&refs, stats, &cfg.cost)
                    }
                    None => projection_cost(
                        &query.guard.relation,
                        &query.output,
                        stats,
                        &cfg.cost,
                    ),
                });
                stage_names.push(vec![query.output.clone()]);
                assembler.push(
                    StageBuild {
                        jobs: vec![job],
                        sources: vec![0],
                        sinks: vec![0],
                    },
                    false,
                );
            }
        }
        Strategy::Par | Strategy::ParUnit => {
            for (si, stage) in graph.level_stages().iter().enumerate() {
                let pool = stage_pool(&extractions, stage);
                let build = build_stage_jobs(
                    program,
                    &extractions,
                    stage,
                    &singleton_partition(pool.len()),
                    strategy == Strategy::Par,
                    stats,
                    cfg,
                    &format!("s{si}"),
                )?;
                stage_names.push(stage.iter().map(|&q| program.queries[q].output.clone()).collect());
                assembler.push(build, false);
            }
        }
        Strategy::Greedy | Strategy::GreedySgf | Strategy::OptBsgf | Strategy::OptSgf => {
            let sort = match strategy {
                Strategy::OptSgf => brute_force_sgf(program, &graph, stats, cfg)?.0,
                _ => greedy_sgf(program, &graph),
            };
            for (si, stage) in sort.stages.iter().enumerate() {
                let pool = stage_pool(&extractions, stage);
                let partition = match strategy {
                    Strategy::OptBsgf => brute_force_bsgf(&pool, stats, &cfg.cost)?.0,
                    _ => greedy_bsgf(&pool, stats, &cfg.cost),
                };
                let build = build_stage_jobs(
                    program,
                    &extractions,
                    stage,
                    &partition,
                    true,
                    stats,
                    cfg,
                    &format!("s{si}"),
                )?;
                stage_names.push(stage.iter().map(|&q| program.queries[q].output.clone()).collect());
                assembler.push(build, false);
            }
        }
    }

    for eq_warning in &mut warnings {
        eq_warning.insert_str(0, "plan: ");
    }
    Ok(Plan {
        strategy,
        dag: assembler.finish(),
        stages: stage_names,
        warnings,
    })
}
