//! Deterministic simulated MapReduce runtime.
//!
//! Jobs are (map, reduce) pairs over named relations. Execution splits each
//! input, runs map tasks over the splits, groups all emitted key-value pairs
//! by key, distributes groups over reducers by a stable key hash, and runs
//! reduce tasks. Map and reduce tasks may run on a worker pool of any size;
//! outputs and every byte counter are identical to the single-threaded run.
//!
//! A plan is a DAG of jobs. Rounds are the longest-path layering; jobs in a
//! round see all upstream outputs materialized. Metrics mirror what a real
//! cluster would report: bytes read from the distributed store, map output
//! bytes/records (the shuffle volume), and bytes written by reducers, plus a
//! cost-model evaluation of the measured sizes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::config::Config;
use crate::cost::{job_cost_per_input, InputCostPart, MB};
use crate::data::{Database, Relation, Tuple};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("job {job}: input relation {relation} is missing")]
    MissingInput { job: String, relation: String },
    #[error("job {job}: output relation {relation} already exists")]
    DuplicateOutput { job: String, relation: String },
    #[error("plan contains a cycle")]
    CyclicPlan,
    #[error("job {job}: malformed message for key {key:?}: {reason}")]
    MalformedMessage {
        job: String,
        key: Vec<u8>,
        reason: String,
    },
}

// ---------------------------------------------------------------------------
// Wire encodings
// ---------------------------------------------------------------------------

/// Unsigned LEB128.
pub fn put_uvarint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

pub fn get_uvarint(buf: &[u8]) -> Option<(u64, usize)> {
    let mut v = 0u64;
    let mut shift = 0u32;
    for (i, byte) in buf.iter().enumerate() {
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Some((v, i + 1));
        }
        shift += 7;
        if shift >= 64 {
            return None;
        }
    }
    None
}

pub const KEY_SEP: u8 = 0x1f;
pub const KEY_ARITY_END: u8 = 0x1e;

/// Canonical key bytes for a value tuple: decimal arity, then 0x1e, then the
/// values joined by 0x1f. Equal tuples always produce equal bytes.
pub fn encode_key(values: &[&str]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + values.iter().map(|v| v.len() + 1).sum::<usize>());
    out.extend_from_slice(values.len().to_string().as_bytes());
    out.push(KEY_ARITY_END);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(KEY_SEP);
        }
        out.extend_from_slice(v.as_bytes());
    }
    out
}

pub fn decode_key(key: &[u8]) -> Option<Vec<String>> {
    let sep = key.iter().position(|&b| b == KEY_ARITY_END)?;
    let arity: usize = std::str::from_utf8(&key[..sep]).ok()?.parse().ok()?;
    let rest = &key[sep + 1..];
    if arity == 0 {
        return rest.is_empty().then(Vec::new);
    }
    let values: Vec<String> = rest
        .split(|&b| b == KEY_SEP)
        .map(|part| String::from_utf8(part.to_vec()).ok())
        .collect::<Option<_>>()?;
    (values.len() == arity).then_some(values)
}

/// Stable FNV-1a hash used for reducer assignment.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyValue {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl KeyValue {
    pub fn bytes(&self) -> u64 {
        (self.key.len() + self.value.len()) as u64
    }
}

/// Everything a map invocation may depend on besides the fact itself.
#[derive(Debug, Clone, Copy)]
pub struct MapContext {
    /// Index of the input within the job's input list.
    pub input: usize,
    /// Stable ordinal of the input relation in the database.
    pub relation_ordinal: usize,
    /// Index of the fact in the relation's canonical order.
    pub record: usize,
}

/// Pure map/reduce logic of a job. Implementations must be deterministic and
/// must not keep mutable state.
pub trait JobLogic: Send + Sync {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>);

    /// `values` arrive sorted by byte content. Emissions are
    /// (output index, tuple) pairs.
    fn reduce(
        &self,
        key: &[u8],
        values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Tuple),
    ) -> Result<(), String>;
}

#[derive(Debug, Clone, Serialize)]
pub struct JobInput {
    pub relation: String,
    pub role: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobOutput {
    pub relation: String,
    pub arity: usize,
}

#[derive(Clone)]
pub struct JobSpec {
    pub id: String,
    /// Short human label for plan rendering, e.g. the grouped equations.
    pub label: String,
    pub inputs: Vec<JobInput>,
    pub outputs: Vec<JobOutput>,
    pub logic: Arc<dyn JobLogic>,
    /// Planner's cost estimate, when planned.
    pub estimated_cost: Option<f64>,
}

impl std::fmt::Debug for JobSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobSpec")
            .field("id", &self.id)
            .field("label", &self.label)
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .field("estimated_cost", &self.estimated_cost)
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct InputMetrics {
    pub relation: String,
    pub bytes: u64,
    pub records: u64,
    pub splits: u64,
    pub map_output_bytes: u64,
    pub map_output_records: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobMetrics {
    pub id: String,
    pub label: String,
    pub inputs: Vec<InputMetrics>,
    pub input_bytes: u64,
    pub map_output_bytes: u64,
    pub map_output_records: u64,
    pub shuffle_bytes: u64,
    pub groups: u64,
    pub num_reducers: u64,
    pub reduce_output_bytes: u64,
    pub reduce_output_records: u64,
    pub estimated_cost: Option<f64>,
    pub measured_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanMetrics {
    pub jobs: Vec<JobMetrics>,
    pub rounds: u64,
    pub total_cost: f64,
    pub net_cost: f64,
    pub estimated_total_cost: Option<f64>,
    pub input_bytes: u64,
    pub shuffle_bytes: u64,
    pub reduce_output_bytes: u64,
}

impl PlanMetrics {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metrics serialize")
    }
}

// ---------------------------------------------------------------------------
// Splits and the worker pool
// ---------------------------------------------------------------------------

/// Contiguous record ranges covering `records`, one per mapper. The mapper
/// count is `max(1, ceil(bytes / split_size))`; an empty input still gets one
/// (empty) split so its mapper runs.
pub fn split_input(bytes: u64, records: usize, split_size_mb: f64) -> Vec<(usize, usize)> {
    let m = (((bytes as f64 / MB) / split_size_mb).ceil() as usize).max(1);
    let m = m.min(records.max(1));
    let per = records.div_ceil(m).max(1);
    let mut out = Vec::with_capacity(m);
    let mut start = 0usize;
    for _ in 0..m {
        let end = (start + per).min(records);
        out.push((start, end));
        start = end;
    }
    out
}

/// Runs `work` over `0..n` on `threads` workers and returns results in index
/// order regardless of scheduling.
fn parallel_indexed<R, F>(n: usize, threads: usize, work: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = work(i);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

// ---------------------------------------------------------------------------
// Job execution
// ---------------------------------------------------------------------------

/// Executes one job against a database and returns its output relations plus
/// measured metrics.
pub fn run_job(
    db: &Database,
    job: &JobSpec,
    cfg: &Config,
) -> Result<(BTreeMap<String, Relation>, JobMetrics), EngineError> {
    let threads = cfg.worker_threads();

    // Resolve inputs and lay out map tasks, one per split.
    struct Task<'a> {
        input: usize,
        ordinal: usize,
        facts: Vec<(usize, &'a Tuple)>,
    }
    let mut tasks: Vec<Task> = Vec::new();
    let mut input_meta: Vec<(u64, u64, u64)> = Vec::new(); // bytes, records, splits
    for (idx, input) in job.inputs.iter().enumerate() {
        let rel = db.relation(&input.relation).ok_or_else(|| EngineError::MissingInput {
            job: job.id.clone(),
            relation: input.relation.clone(),
        })?;
        let ordinal = db.ordinal(&input.relation).expect("relation has ordinal");
        let facts: Vec<&Tuple> = rel.iter().collect();
        let bytes = rel.serialized_bytes();
        let splits = split_input(bytes, facts.len(), cfg.cost.split_size);
        input_meta.push((bytes, facts.len() as u64, splits.len() as u64));
        for (start, end) in splits {
            tasks.push(Task {
                input: idx,
                ordinal,
                facts: facts[start..end]
                    .iter()
                    .enumerate()
                    .map(|(off, t)| (start + off, *t))
                    .collect(),
            });
        }
    }

    // Map phase.
    let logic = &job.logic;
    let map_results: Vec<(usize, Vec<KeyValue>)> = parallel_indexed(tasks.len(), threads, |i| {
        let task = &tasks[i];
        let mut out = Vec::new();
        for &(record, values) in &task.facts {
            logic.map(
                MapContext {
                    input: task.input,
                    relation_ordinal: task.ordinal,
                    record,
                },
                values,
                &mut out,
            );
        }
        (task.input, out)
    });

    // Per-input map output accounting, in task order.
    let mut per_input_out: Vec<(u64, u64)> = vec![(0, 0); job.inputs.len()];
    for (input, kvs) in &map_results {
        for kv in kvs {
            per_input_out[*input].0 += kv.bytes();
            per_input_out[*input].1 += 1;
        }
    }

    // Shuffle: group by key; values per group sorted for determinism.
    let mut groups: BTreeMap<Vec<u8>, Vec<Vec<u8>>> = BTreeMap::new();
    for (_, kvs) in map_results {
        for kv in kvs {
            groups.entry(kv.key).or_default().push(kv.value);
        }
    }
    for values in groups.values_mut() {
        values.sort_unstable();
    }

    let map_output_bytes: u64 = per_input_out.iter().map(|(b, _)| *b).sum();
    let map_output_records: u64 = per_input_out.iter().map(|(_, r)| *r).sum();
    let num_reducers = cfg.cost.reducers_for(map_output_bytes as f64 / MB);
    let num_groups = groups.len() as u64;

    // Assign groups to reducers by stable key hash; each reducer walks its
    // groups in key order.
    let group_list: Vec<(Vec<u8>, Vec<Vec<u8>>)> = groups.into_iter().collect();
    let mut reducer_groups: Vec<Vec<usize>> = vec![Vec::new(); num_reducers as usize];
    for (i, (key, _)) in group_list.iter().enumerate() {
        reducer_groups[(stable_hash(key) % num_reducers) as usize].push(i);
    }

    type ReduceOut = Result<Vec<(usize, Tuple)>, EngineError>;
    let reduce_results: Vec<ReduceOut> =
        parallel_indexed(reducer_groups.len(), threads, |r| {
            let mut emitted = Vec::new();
            for &gi in &reducer_groups[r] {
                let (key, values) = &group_list[gi];
                logic
                    .reduce(key, values, &mut |out_idx, tuple| {
                        emitted.push((out_idx, tuple));
                    })
                    .map_err(|reason| EngineError::MalformedMessage {
                        job: job.id.clone(),
                        key: key.clone(),
                        reason,
                    })?;
            }
            Ok(emitted)
        });

    let mut outputs: BTreeMap<String, Relation> = job
        .outputs
        .iter()
        .map(|o| (o.relation.clone(), Relation::new(o.arity)))
        .collect();
    for result in reduce_results {
        for (out_idx, tuple) in result? {
            let spec = &job.outputs[out_idx];
            outputs
                .get_mut(&spec.relation)
                .expect("declared output")
                .insert(tuple);
        }
    }

    let reduce_output_bytes: u64 = outputs.values().map(|r| r.serialized_bytes()).sum();
    let reduce_output_records: u64 = outputs.values().map(|r| r.len() as u64).sum();

    // Cost-model evaluation of the measured sizes.
    let parts: Vec<InputCostPart> = job
        .inputs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let (bytes, _records, _splits) = input_meta[i];
            let (out_bytes, out_records) = per_input_out[i];
            InputCostPart::new(bytes as f64 / MB, out_bytes as f64 / MB, out_records, &cfg.cost)
        })
        .collect();
    let measured = job_cost_per_input(
        &parts,
        reduce_output_bytes as f64 / MB,
        num_reducers,
        &cfg.cost,
    );

    let metrics = JobMetrics {
        id: job.id.clone(),
        label: job.label.clone(),
        inputs: job
            .inputs
            .iter()
            .enumerate()
            .map(|(i, input)| InputMetrics {
                relation: input.relation.clone(),
                bytes: input_meta[i].0,
                records: input_meta[i].1,
                splits: input_meta[i].2,
                map_output_bytes: per_input_out[i].0,
                map_output_records: per_input_out[i].1,
            })
            .collect(),
        input_bytes: input_meta.iter().map(|(b, _, _)| *b).sum(),
        map_output_bytes,
        map_output_records,
        shuffle_bytes: map_output_bytes,
        groups: num_groups,
        num_reducers,
        reduce_output_bytes,
        reduce_output_records,
        estimated_cost: job.estimated_cost,
        measured_cost: measured.total,
    };
    Ok((outputs, metrics))
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

/// A DAG of jobs. Edges carry both data dependencies (consumer reads a
/// producer's output) and explicit sequencing constraints added by
/// strategies that are sequential by definition.
#[derive(Debug, Clone, Default)]
pub struct PlanDag {
    pub jobs: Vec<JobSpec>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl PlanDag {
    pub fn new(jobs: Vec<JobSpec>) -> PlanDag {
        let mut dag = PlanDag {
            jobs,
            edges: BTreeSet::new(),
        };
        dag.add_data_edges();
        dag
    }

    /// Adds an edge for every (producer, consumer) relation hand-off.
    fn add_data_edges(&mut self) {
        for (p, producer) in self.jobs.iter().enumerate() {
            let outs: BTreeSet<&str> =
                producer.outputs.iter().map(|o| o.relation.as_str()).collect();
            for (c, consumer) in self.jobs.iter().enumerate() {
                if p == c {
                    continue;
                }
                if consumer.inputs.iter().any(|i| outs.contains(i.relation.as_str())) {
                    self.edges.insert((p, c));
                }
            }
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        self.edges.insert((from, to));
    }

    /// Longest-path layering; jobs in one round are mutually independent.
    pub fn rounds(&self) -> Result<Vec<Vec<usize>>, EngineError> {
        let n = self.jobs.len();
        let mut level = vec![0usize; n];
        let mut indegree = vec![0usize; n];
        for &(_, c) in &self.edges {
            indegree[c] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0usize;
        let mut head = 0usize;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            seen += 1;
            for &(p, c) in self.edges.range((u, 0)..(u + 1, 0)) {
                debug_assert_eq!(p, u);
                level[c] = level[c].max(level[u] + 1);
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen != n {
            return Err(EngineError::CyclicPlan);
        }
        let depth = level.iter().copied().max().map_or(0, |m| m + 1);
        let mut rounds = vec![Vec::new(); depth];
        for (job, lvl) in level.iter().enumerate() {
            rounds[*lvl].push(job);
        }
        Ok(rounds)
    }

    pub fn estimated_total_cost(&self) -> Option<f64> {
        self.jobs.iter().map(|j| j.estimated_cost).sum()
    }
}

/// Executes a plan round by round against an extension of `db`. Returns the
/// extended database (base relations plus every job output) and the plan
/// metrics.
pub fn run_plan(
    db: &Database,
    plan: &PlanDag,
    cfg: &Config,
) -> Result<(Database, PlanMetrics), EngineError> {
    let rounds = plan.rounds()?;
    let mut working = db.clone();
    let mut job_metrics: Vec<Option<JobMetrics>> = vec![None; plan.jobs.len()];
    let mut net_cost = 0.0f64;
    for round in &rounds {
        let mut round_max = 0.0f64;
        for &ji in round {
            let job = &plan.jobs[ji];
            let (outputs, metrics) = run_job(&working, job, cfg)?;
            for (name, rel) in outputs {
                working
                    .insert_relation(&name, rel)
                    .map_err(|_| EngineError::DuplicateOutput {
                        job: job.id.clone(),
                        relation: name.clone(),
                    })?;
            }
            round_max = round_max.max(metrics.measured_cost);
            job_metrics[ji] = Some(metrics);
        }
        net_cost += round_max;
    }
    let jobs: Vec<JobMetrics> = job_metrics.into_iter().map(|m| m.expect("job ran")).collect();
    let metrics = PlanMetrics {
        rounds: rounds.len() as u64,
        total_cost: jobs.iter().map(|j| j.measured_cost).sum(),
        net_cost,
        estimated_total_cost: plan.estimated_total_cost(),
        input_bytes: jobs.iter().map(|j| j.input_bytes).sum(),
        shuffle_bytes: jobs.iter().map(|j| j.shuffle_bytes).sum(),
        reduce_output_bytes: jobs.iter().map(|j| j.reduce_output_bytes).sum(),
        jobs,
    };
    Ok((working, metrics))
}
