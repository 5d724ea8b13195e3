//! Planning statistics: per-relation sizes plus per-equation request volumes
//! and per-assert-atom volumes, measured by simulating the map side on a
//! uniform sample of each input, or constructed synthetically under the
//! uniform assumption that a message weighs as much as its originating fact.
//!
//! Output sizes are never estimated downward: a semi-join output is bounded
//! by its request payload volume, and an intermediate query output by the
//! projection volume of its guard. Later-stage guards and conditionals fall
//! back to those propagated bounds.

use std::collections::BTreeMap;

use crate::config::Config;
use crate::cost::{job_cost_per_input, CostConstants, InputCostPart, MB};
use crate::data::Database;
use crate::ops::{extract_semijoins, AtomSignature, Pattern, SemiJoinEquation};
use crate::query::{Atom, SgfQuery};

/// Bytes (MB) and record count of a data volume; records are fractional
/// because sampled estimates are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Volume {
    pub mb: f64,
    pub records: f64,
}

impl Volume {
    pub fn new(mb: f64, records: f64) -> Volume {
        Volume { mb, records }
    }

    pub fn add(&mut self, other: Volume) {
        self.mb += other.mb;
        self.records += other.records;
    }
}

/// Everything the planner knows about sizes before running anything.
#[derive(Debug, Clone, Default)]
pub struct PlanStats {
    /// Relation sizes: exact for materialized relations, propagated upper
    /// bounds for intermediate outputs.
    relations: BTreeMap<String, Volume>,
    /// Request message volume per equation output name.
    requests: BTreeMap<String, Volume>,
    /// Assert message volume per structural atom signature.
    asserts: BTreeMap<AtomSignature, Volume>,
    /// Upper bound of each equation's output size.
    x_bounds: BTreeMap<String, Volume>,
    /// Upper bound (or exact size) of each query output.
    z_bounds: BTreeMap<String, Volume>,
}

/// Deterministic 64-bit mix used for sampling decisions.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn sampled(seed: u64, index: usize, rate: f64) -> bool {
    if rate >= 1.0 {
        return true;
    }
    let draw = splitmix(seed.wrapping_add(index as u64)) as f64 / u64::MAX as f64;
    draw < rate
}

/// Request message size on the wire: key bytes plus kind byte, id varint and
/// the payload.
fn request_bytes(key_len: usize, payload_len: usize) -> f64 {
    (key_len + 2 + payload_len) as f64
}

fn assert_bytes(key_len: usize) -> f64 {
    (key_len + 2) as f64
}

fn key_len(values_len: usize, arity: usize) -> usize {
    // decimal arity + separator byte + values + separators between them
    let digits = if arity == 0 { 1 } else { (arity as f64).log10() as usize + 1 };
    digits + 1 + values_len + arity.saturating_sub(1)
}

impl PlanStats {
    pub fn relation(&self, name: &str) -> Volume {
        self.relations.get(name).copied().unwrap_or_default()
    }

    pub fn request(&self, equation_output: &str) -> Volume {
        self.requests.get(equation_output).copied().unwrap_or_default()
    }

    pub fn assert_volume(&self, sig: &AtomSignature) -> Volume {
        self.asserts.get(sig).copied().unwrap_or_default()
    }

    pub fn x_bound(&self, equation_output: &str) -> Volume {
        self.x_bounds.get(equation_output).copied().unwrap_or_default()
    }

    pub fn z_bound(&self, output: &str) -> Volume {
        self.z_bounds.get(output).copied().unwrap_or_default()
    }

    /// Measures statistics for a program by sampling every base relation and
    /// simulating the map side: request volume per equation, assert volume
    /// per distinct atom signature, projection bounds per query.
    pub fn measure(db: &Database, program: &SgfQuery, cfg: &Config) -> PlanStats {
        let rate = cfg.sample_rate;
        let seed = cfg.sample_seed;
        let mut stats = PlanStats::default();

        for (name, rel) in db.relations() {
            stats.relations.insert(
                name.to_string(),
                Volume::new(rel.serialized_bytes() as f64 / MB, rel.len() as f64),
            );
        }

        // Collect every distinct assert signature and the atoms behind it.
        let mut sig_atoms: BTreeMap<AtomSignature, Atom> = BTreeMap::new();
        let mut extractions = Vec::new();
        for q in &program.queries {
            let ex = q.condition.as_ref().map(|_| {
                extract_semijoins(q).expect("query has a condition")
            });
            if let Some(ex) = &ex {
                for eq in &ex.equations {
                    sig_atoms
                        .entry(AtomSignature::of(&eq.cond, &eq.key))
                        .or_insert_with(|| eq.cond.clone());
                }
            }
            extractions.push(ex);
        }

        // Per query, in definition order: guard-side volumes.
        for (qi, q) in program.queries.iter().enumerate() {
            let scale = if rate >= 1.0 { 1.0 } else { 1.0 / rate };
            let proj_arity = q.out_vars.len();
            let (proj_bound, req_per_eq) = match db.relation(&q.guard.relation) {
                Some(rel) => {
                    let pattern = Pattern::compile(&q.guard);
                    let out_positions: Vec<usize> = q
                        .out_vars
                        .iter()
                        .map(|v| q.guard.position_of(v).expect("validated"))
                        .collect();
                    let rel_seed = seed ^ fnv(q.guard.relation.as_bytes());
                    let mut proj = Volume::default();
                    let mut per_eq: Vec<Volume> = extractions[qi]
                        .as_ref()
                        .map(|ex| vec![Volume::default(); ex.equations.len()])
                        .unwrap_or_default();
                    for (idx, fact) in rel.iter().enumerate() {
                        if !sampled(rel_seed, idx, rate) || !pattern.matches(fact) {
                            continue;
                        }
                        let proj_len: usize =
                            out_positions.iter().map(|&p| fact[p].len()).sum();
                        let proj_row = (proj_len + proj_arity.saturating_sub(1) + 1) as f64;
                        proj.add(Volume::new(proj_row * scale / MB, scale));
                        if let Some(ex) = &extractions[qi] {
                            for (ei, eq) in ex.equations.iter().enumerate() {
                                let klen: usize = eq
                                    .key
                                    .iter()
                                    .map(|v| {
                                        fact[q.guard.position_of(v).expect("key var")].len()
                                    })
                                    .sum();
                                let payload = proj_len + proj_arity.saturating_sub(1);
                                let bytes = request_bytes(
                                    key_len(klen, eq.key.len()),
                                    payload,
                                );
                                per_eq[ei].add(Volume::new(bytes * scale / MB, scale));
                            }
                        }
                    }
                    (proj, per_eq)
                }
                None => {
                    // Intermediate guard: propagate its bound.
                    let bound = stats.z_bound(&q.guard.relation);
                    let per_eq = extractions[qi]
                        .as_ref()
                        .map(|ex| vec![bound; ex.equations.len()])
                        .unwrap_or_default();
                    (bound, per_eq)
                }
            };
            if let Some(ex) = &extractions[qi] {
                for (ei, eq) in ex.equations.iter().enumerate() {
                    stats.requests.insert(eq.output.clone(), req_per_eq[ei]);
                    stats.x_bounds.insert(eq.output.clone(), proj_bound);
                }
            }
            stats.z_bounds.insert(q.output.clone(), proj_bound);
        }

        // Assert volumes per signature.
        for (sig, atom) in &sig_atoms {
            let volume = match db.relation(&sig.relation) {
                Some(rel) => {
                    let scale = if rate >= 1.0 { 1.0 } else { 1.0 / rate };
                    let pattern = Pattern::compile(atom);
                    let key_positions = sig.key_positions().to_vec();
                    let rel_seed = seed ^ fnv(sig.relation.as_bytes());
                    let mut vol = Volume::default();
                    for (idx, fact) in rel.iter().enumerate() {
                        if !sampled(rel_seed, idx, rate) || !pattern.matches(fact) {
                            continue;
                        }
                        let klen: usize = key_positions.iter().map(|&p| fact[p].len()).sum();
                        let bytes = assert_bytes(key_len(klen, key_positions.len()));
                        vol.add(Volume::new(bytes * scale / MB, scale));
                    }
                    vol
                }
                None => stats.z_bound(&sig.relation),
            };
            stats.asserts.insert(sig.clone(), volume);
        }
        stats
    }

    /// Synthetic statistics under the uniform assumption: every message
    /// weighs as much as its originating fact and output bounds equal the
    /// guard size. Relations are given as (name, MB, records).
    pub fn synthetic(relations: &[(&str, f64, f64)], program: &SgfQuery) -> PlanStats {
        let mut stats = PlanStats::default();
        for (name, mb, records) in relations {
            stats
                .relations
                .insert(name.to_string(), Volume::new(*mb, *records));
        }
        for q in &program.queries {
            let guard_vol = stats
                .relations
                .get(&q.guard.relation)
                .copied()
                .unwrap_or_else(|| stats.z_bound(&q.guard.relation));
            if let Some(ex) = q.condition.as_ref().map(|_| extract_semijoins(q).unwrap()) {
                for eq in &ex.equations {
                    stats.requests.insert(eq.output.clone(), guard_vol);
                    stats.x_bounds.insert(eq.output.clone(), guard_vol);
                    let sig = AtomSignature::of(&eq.cond, &eq.key);
                    let cond_vol = stats
                        .relations
                        .get(&eq.cond.relation)
                        .copied()
                        .unwrap_or_else(|| stats.z_bound(&eq.cond.relation));
                    stats.asserts.insert(sig, cond_vol);
                }
            }
            stats.z_bounds.insert(q.output.clone(), guard_vol);
        }
        stats
    }

    /// Registers an exact size for a materialized relation, superseding any
    /// propagated bound.
    pub fn set_relation(&mut self, name: &str, volume: Volume) {
        self.relations.insert(name.to_string(), volume);
        self.z_bounds.insert(name.to_string(), volume);
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    crate::mr::stable_hash(bytes)
}

// ---------------------------------------------------------------------------
// Shape-level costs
// ---------------------------------------------------------------------------

/// Cost of one multi-semi-join job over a block of equations: each distinct
/// relation is read once; its map output is the sum of the request volumes of
/// the equations it guards and the assert volumes of the distinct atom
/// signatures it feeds. The output bound is the sum of the block's request
/// payload bounds.
pub fn msj_cost(block: &[&SemiJoinEquation], stats: &PlanStats, c: &CostConstants) -> f64 {
    let mut per_input: BTreeMap<&str, Volume> = BTreeMap::new();
    for eq in block {
        per_input.entry(&eq.guard.relation).or_default();
        per_input.entry(&eq.cond.relation).or_default();
    }
    for eq in block {
        per_input
            .get_mut(eq.guard.relation.as_str())
            .expect("guard input present")
            .add(stats.request(&eq.output));
    }
    let mut seen_sigs = BTreeMap::new();
    for eq in block {
        let sig = AtomSignature::of(&eq.cond, &eq.key);
        seen_sigs.entry(sig).or_insert(&eq.cond.relation);
    }
    for (sig, rel) in &seen_sigs {
        per_input
            .get_mut(rel.as_str())
            .expect("conditional input present")
            .add(stats.assert_volume(sig));
    }

    let parts: Vec<InputCostPart> = per_input
        .iter()
        .map(|(rel, m)| {
            let n = stats.relation(rel);
            InputCostPart::new(n.mb, m.mb, m.records.round() as u64, c)
        })
        .collect();
    let m_total: f64 = parts.iter().map(|p| p.m_mb).sum();
    let k: f64 = block.iter().map(|eq| stats.x_bound(&eq.output).mb).sum();
    job_cost_per_input(&parts, k, c.reducers_for(m_total), c).total
}

/// One stage's boolean-combination job: reads each distinct guard relation
/// once plus every semi-join output, with output bounded by the stage's
/// projection bounds.
pub fn eval_cost(
    entries: &[(String, Vec<String>, String)],
    stats: &PlanStats,
    c: &CostConstants,
) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut parts: Vec<InputCostPart> = Vec::new();
    let mut seen_guards = std::collections::BTreeSet::new();
    let mut k = 0.0;
    for (guard_rel, x_names, output) in entries {
        if seen_guards.insert(guard_rel.as_str()) {
            let v = stats.relation(guard_rel);
            parts.push(InputCostPart::new(v.mb, v.mb, v.records.round() as u64, c));
        }
        for x in x_names {
            let v = stats.x_bound(x);
            parts.push(InputCostPart::new(v.mb, v.mb, v.records.round() as u64, c));
        }
        k += stats.z_bound(output).mb;
    }
    let m_total: f64 = parts.iter().map(|p| p.m_mb).sum();
    job_cost_per_input(&parts, k, c.reducers_for(m_total), c).total
}

/// A pure projection pass: read the guard, shuffle the projection volume,
/// write the deduplicated projection.
pub fn projection_cost(
    guard_rel: &str,
    output: &str,
    stats: &PlanStats,
    c: &CostConstants,
) -> f64 {
    let n = stats.relation(guard_rel);
    let m = stats.z_bound(output);
    let parts = [InputCostPart::new(n.mb, m.mb, m.records.round() as u64, c)];
    job_cost_per_input(&parts, m.mb, c.reducers_for(m.mb), c).total
}

/// One semi-/antijoin chain step: source plus conditional relation in, the
/// filtered source out. The source size is an upper bound carried through
/// the chain.
pub fn chain_step_cost(
    source: Volume,
    cond_sig: &AtomSignature,
    stats: &PlanStats,
    c: &CostConstants,
) -> f64 {
    let asserts = stats.assert_volume(cond_sig);
    let cond_rel = stats.relation(&cond_sig.relation);
    let parts = [
        InputCostPart::new(source.mb, source.mb, source.records.round() as u64, c),
        InputCostPart::new(cond_rel.mb, asserts.mb, asserts.records.round() as u64, c),
    ];
    let m = source.mb + asserts.mb;
    job_cost_per_input(&parts, source.mb, c.reducers_for(m), c).total
}

/// The combined one-round job: one request per guard fact plus the asserts.
pub fn one_round_cost(
    block: &[&SemiJoinEquation],
    stats: &PlanStats,
    c: &CostConstants,
) -> f64 {
    let guard_rel = &block[0].guard.relation;
    let n_guard = stats.relation(guard_rel);
    let request = stats.request(&block[0].output);
    let mut per_input: BTreeMap<&str, Volume> = BTreeMap::new();
    per_input.insert(guard_rel, request);
    let mut seen_sigs = BTreeMap::new();
    for eq in block {
        per_input.entry(&eq.cond.relation).or_default();
        let sig = AtomSignature::of(&eq.cond, &eq.key);
        seen_sigs.entry(sig).or_insert(&eq.cond.relation);
    }
    for (sig, rel) in &seen_sigs {
        per_input
            .get_mut(rel.as_str())
            .expect("input present")
            .add(stats.assert_volume(sig));
    }
    let parts: Vec<InputCostPart> = per_input
        .iter()
        .map(|(rel, m)| {
            let n = if *rel == guard_rel.as_str() {
                n_guard
            } else {
                stats.relation(rel)
            };
            InputCostPart::new(n.mb, m.mb, m.records.round() as u64, c)
        })
        .collect();
    let m_total: f64 = parts.iter().map(|p| p.m_mb).sum();
    let k = stats.x_bound(&block[0].output).mb;
    job_cost_per_input(&parts, k, c.reducers_for(m_total), c).total
}
