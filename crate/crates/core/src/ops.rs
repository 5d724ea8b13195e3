//! Job builders: the multi-semi-join operator, the boolean-combination
//! operator, the combined one-round job, pure projection jobs and the
//! semi-/antijoin steps used by sequential chains.
//!
//! The multi-semi-join job evaluates a set of semi-join equations at once.
//! Guard facts send request messages keyed on the join key and carrying the
//! requested output tuple (or a tuple reference); conditional facts send
//! assert messages keyed the same way. A reducer grants a request when a
//! matching assert for the request's conditional atom is present. Assert
//! identity is structural: atoms with the same relation, the same term
//! pattern up to variable naming and the same key positions share one assert
//! id, so a single assert serves every equation over that atom.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::config::Config;
use crate::mr::{
    decode_key, encode_key, get_uvarint, put_uvarint, JobInput, JobLogic, JobOutput, JobSpec,
    KeyValue, MapContext, KEY_SEP,
};
use crate::query::{join_key, Atom, BsgfQuery, ConditionTree, Term};

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("query {0} has no WHERE clause")]
    NoCondition(String),
    #[error("duplicate semi-join output name {0}")]
    DuplicateOutputName(String),
    #[error("semi-join output {0} occurs in a right-hand side")]
    OutputInRhs(String),
    #[error("relation {0} feeds two boolean-combination entries")]
    OverlappingFormulaVariables(String),
    #[error("query {query} is not one-round eligible: {reason}")]
    NotEligible { query: String, reason: String },
}

// ---------------------------------------------------------------------------
// Equations and formulas
// ---------------------------------------------------------------------------

/// One semi-join equation: `output := SELECT out_vars FROM guard WHERE cond`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiJoinEquation {
    pub output: String,
    pub out_vars: Vec<String>,
    pub guard: Atom,
    pub cond: Atom,
    /// Join key: variables shared by guard and cond, in guard order.
    pub key: Vec<String>,
}

impl SemiJoinEquation {
    pub fn relations(&self) -> BTreeSet<&str> {
        [self.guard.relation.as_str(), self.cond.relation.as_str()]
            .into_iter()
            .collect()
    }
}

/// Propositional formula over semi-join outputs, by local variable index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BooleanFormula {
    Var(usize),
    Not(Box<BooleanFormula>),
    And(Box<BooleanFormula>, Box<BooleanFormula>),
    Or(Box<BooleanFormula>, Box<BooleanFormula>),
}

impl BooleanFormula {
    pub fn eval(&self, truth: &dyn Fn(usize) -> bool) -> bool {
        match self {
            BooleanFormula::Var(v) => truth(*v),
            BooleanFormula::Not(f) => !f.eval(truth),
            BooleanFormula::And(l, r) => l.eval(truth) && r.eval(truth),
            BooleanFormula::Or(l, r) => l.eval(truth) || r.eval(truth),
        }
    }

    pub fn vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            BooleanFormula::Var(v) => {
                out.insert(*v);
            }
            BooleanFormula::Not(f) => f.collect_vars(out),
            BooleanFormula::And(l, r) | BooleanFormula::Or(l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn render(&self, name: &dyn Fn(usize) -> String) -> String {
        fn go(f: &BooleanFormula, name: &dyn Fn(usize) -> String, out: &mut String, prec: u8) {
            let p = match f {
                BooleanFormula::Or(..) => 1,
                BooleanFormula::And(..) => 2,
                BooleanFormula::Not(_) => 3,
                BooleanFormula::Var(_) => 4,
            };
            let parens = p < prec;
            if parens {
                out.push('(');
            }
            match f {
                BooleanFormula::Var(v) => out.push_str(&name(*v)),
                BooleanFormula::Not(inner) => {
                    out.push('!');
                    go(inner, name, out, 3);
                }
                BooleanFormula::And(l, r) => {
                    go(l, name, out, 2);
                    out.push_str(" & ");
                    go(r, name, out, 3);
                }
                BooleanFormula::Or(l, r) => {
                    go(l, name, out, 1);
                    out.push_str(" | ");
                    go(r, name, out, 2);
                }
            }
            if parens {
                out.push(')');
            }
        }
        let mut s = String::new();
        go(self, name, &mut s, 0);
        s
    }
}

/// Result of turning a query's condition into equations plus a formula.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub equations: Vec<SemiJoinEquation>,
    pub formula: BooleanFormula,
    pub warnings: Vec<String>,
}

/// Extracts one equation per distinct conditional atom and the boolean
/// formula with leaves replaced by equation variables. Duplicate atoms fold
/// onto one equation with a warning; an empty join key is flagged as a
/// reduce hotspot.
pub fn extract_semijoins(q: &BsgfQuery) -> Result<Extraction, OpsError> {
    let cond = q
        .condition
        .as_ref()
        .ok_or_else(|| OpsError::NoCondition(q.output.clone()))?;
    let mut equations: Vec<SemiJoinEquation> = Vec::new();
    let mut atom_index: BTreeMap<(String, Vec<Term>), usize> = BTreeMap::new();
    let mut warnings = Vec::new();

    fn build(
        node: &ConditionTree,
        q: &BsgfQuery,
        equations: &mut Vec<SemiJoinEquation>,
        atom_index: &mut BTreeMap<(String, Vec<Term>), usize>,
        warnings: &mut Vec<String>,
    ) -> BooleanFormula {
        match node {
            ConditionTree::And(l, r) => BooleanFormula::And(
                Box::new(build(l, q, equations, atom_index, warnings)),
                Box::new(build(r, q, equations, atom_index, warnings)),
            ),
            ConditionTree::Or(l, r) => BooleanFormula::Or(
                Box::new(build(l, q, equations, atom_index, warnings)),
                Box::new(build(r, q, equations, atom_index, warnings)),
            ),
            ConditionTree::Not(c) => {
                BooleanFormula::Not(Box::new(build(c, q, equations, atom_index, warnings)))
            }
            ConditionTree::Leaf(atom) => {
                let sig = (atom.relation.clone(), atom.terms.clone());
                let idx = match atom_index.get(&sig) {
                    Some(&idx) => {
                        warnings.push(format!(
                            "{}: duplicate conditional atom {atom} folded onto one semi-join",
                            q.output
                        ));
                        idx
                    }
                    None => {
                        let idx = equations.len();
                        let key = join_key(&q.guard, atom);
                        if key.is_empty() {
                            warnings.push(format!(
                                "{}: atom {atom} shares no variable with the guard; \
                                 all messages use one key (reduce hotspot)",
                                q.output
                            ));
                        }
                        equations.push(SemiJoinEquation {
                            output: format!("{}.x{idx}", q.output),
                            out_vars: q.out_vars.clone(),
                            guard: q.guard.clone(),
                            cond: atom.clone(),
                            key,
                        });
                        atom_index.insert(sig, idx);
                        idx
                    }
                };
                BooleanFormula::Var(idx)
            }
        }
    }

    let formula = build(cond, q, &mut equations, &mut atom_index, &mut warnings);
    Ok(Extraction {
        equations,
        formula,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Compiled patterns
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Check {
    Free,
    Const(String),
    EqualTo(usize),
}

/// Positional conformance test compiled from an atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pattern {
    checks: Vec<Check>,
}

impl Pattern {
    pub fn compile(atom: &Atom) -> Pattern {
        let mut first: BTreeMap<&str, usize> = BTreeMap::new();
        let checks = atom
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| match t {
                Term::Const(c) => Check::Const(c.clone()),
                Term::Var(v) => match first.get(v.as_str()) {
                    Some(&p) => Check::EqualTo(p),
                    None => {
                        first.insert(v, i);
                        Check::Free
                    }
                },
            })
            .collect();
        Pattern { checks }
    }

    pub fn matches(&self, values: &[String]) -> bool {
        if values.len() != self.checks.len() {
            return false;
        }
        self.checks.iter().enumerate().all(|(i, c)| match c {
            Check::Free => true,
            Check::Const(v) => values[i] == *v,
            Check::EqualTo(p) => values[i] == values[*p],
        })
    }
}

/// Structural assert identity of a conditional atom: relation, term pattern
/// up to variable renaming, and key positions in key order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AtomSignature {
    pub relation: String,
    pattern: Pattern,
    key_positions: Vec<usize>,
}

impl AtomSignature {
    pub fn of(cond: &Atom, key: &[String]) -> AtomSignature {
        AtomSignature {
            relation: cond.relation.clone(),
            pattern: Pattern::compile(cond),
            key_positions: key
                .iter()
                .map(|v| cond.position_of(v).expect("key variable occurs in cond"))
                .collect(),
        }
    }

    /// Positions of the join key within the atom, in key order.
    pub fn key_positions(&self) -> &[usize] {
        &self.key_positions
    }
}

fn positions_in(atom: &Atom, vars: &[String]) -> Vec<usize> {
    vars.iter()
        .map(|v| atom.position_of(v).expect("variable occurs in atom"))
        .collect()
}

fn key_of(values: &[String], positions: &[usize]) -> Vec<u8> {
    let picked: Vec<&str> = positions.iter().map(|&p| values[p].as_str()).collect();
    encode_key(&picked)
}

// ---------------------------------------------------------------------------
// Message wire format
// ---------------------------------------------------------------------------

pub mod msg {
    //! Request/assert wire format: a kind byte (`R`/`A`, lowercase when the
    //! message packs several entries), then per entry a varint id and, for
    //! requests, a length-prefixed payload (unpacked requests use the message
    //! remainder). Byte counts feed the communication metrics directly.

    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Kind {
        Request,
        Assert,
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Entry<'a> {
        pub kind: Kind,
        pub id: u64,
        pub payload: &'a [u8],
    }

    pub fn request(id: u64, payload: &[u8]) -> Vec<u8> {
        let mut out = vec![b'R'];
        put_uvarint(&mut out, id);
        out.extend_from_slice(payload);
        out
    }

    pub fn assert(id: u64) -> Vec<u8> {
        let mut out = vec![b'A'];
        put_uvarint(&mut out, id);
        out
    }

    pub fn packed_requests(entries: &[(u64, Vec<u8>)]) -> Vec<u8> {
        let mut out = vec![b'r'];
        for (id, payload) in entries {
            put_uvarint(&mut out, *id);
            put_uvarint(&mut out, payload.len() as u64);
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn packed_asserts(ids: &[u64]) -> Vec<u8> {
        let mut out = vec![b'a'];
        for id in ids {
            put_uvarint(&mut out, *id);
        }
        out
    }

    pub fn decode(value: &[u8]) -> Result<Vec<Entry<'_>>, String> {
        let (&tag, mut rest) = value.split_first().ok_or("empty message")?;
        let mut out = Vec::new();
        match tag {
            b'R' => {
                let (id, n) = get_uvarint(rest).ok_or("truncated request id")?;
                out.push(Entry {
                    kind: Kind::Request,
                    id,
                    payload: &rest[n..],
                });
            }
            b'A' => {
                let (id, n) = get_uvarint(rest).ok_or("truncated assert id")?;
                if n != rest.len() {
                    return Err("trailing bytes after assert".to_string());
                }
                out.push(Entry {
                    kind: Kind::Assert,
                    id,
                    payload: &[],
                });
            }
            b'r' => {
                while !rest.is_empty() {
                    let (id, n) = get_uvarint(rest).ok_or("truncated packed request id")?;
                    rest = &rest[n..];
                    let (len, n) = get_uvarint(rest).ok_or("truncated payload length")?;
                    rest = &rest[n..];
                    let len = len as usize;
                    if rest.len() < len {
                        return Err("truncated payload".to_string());
                    }
                    out.push(Entry {
                        kind: Kind::Request,
                        id,
                        payload: &rest[..len],
                    });
                    rest = &rest[len..];
                }
                if out.is_empty() {
                    return Err("empty packed request".to_string());
                }
            }
            b'a' => {
                while !rest.is_empty() {
                    let (id, n) = get_uvarint(rest).ok_or("truncated packed assert id")?;
                    rest = &rest[n..];
                    out.push(Entry {
                        kind: Kind::Assert,
                        id,
                        payload: &[],
                    });
                }
                if out.is_empty() {
                    return Err("empty packed assert".to_string());
                }
            }
            other => return Err(format!("unknown message tag {other:#x}")),
        }
        Ok(out)
    }
}

/// Payload bytes for a projected tuple: values joined by the key separator.
fn tuple_payload(values: &[String], positions: &[usize]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, &p) in positions.iter().enumerate() {
        if i > 0 {
            out.push(KEY_SEP);
        }
        out.extend_from_slice(values[p].as_bytes());
    }
    out
}

fn decode_tuple_payload(payload: &[u8], arity: usize) -> Result<Vec<String>, String> {
    if arity == 0 {
        return if payload.is_empty() {
            Ok(Vec::new())
        } else {
            Err("nonempty payload for arity 0".to_string())
        };
    }
    let values: Vec<String> = payload
        .split(|&b| b == KEY_SEP)
        .map(|part| String::from_utf8(part.to_vec()).map_err(|_| "invalid utf8".to_string()))
        .collect::<Result<_, _>>()?;
    if values.len() != arity {
        return Err(format!("payload arity {} != {arity}", values.len()));
    }
    Ok(values)
}

fn tuple_id_payload(ordinal: usize, record: usize) -> Vec<u8> {
    let mut out = Vec::new();
    put_uvarint(&mut out, ordinal as u64);
    put_uvarint(&mut out, record as u64);
    out
}

fn decode_tuple_id(payload: &[u8]) -> Result<Vec<String>, String> {
    let (ordinal, n) = get_uvarint(payload).ok_or("truncated tuple id")?;
    let (record, m) = get_uvarint(&payload[n..]).ok_or("truncated tuple id")?;
    if n + m != payload.len() {
        return Err("trailing bytes after tuple id".to_string());
    }
    Ok(vec![ordinal.to_string(), record.to_string()])
}

// ---------------------------------------------------------------------------
// MSJ job
// ---------------------------------------------------------------------------

struct CompiledEquation {
    guard_pattern: Pattern,
    guard_key_positions: Vec<usize>,
    out_positions: Vec<usize>,
    assert_id: usize,
    output_index: usize,
    payload_arity: usize,
}

struct CompiledAtom {
    pattern: Pattern,
    key_positions: Vec<usize>,
}

#[derive(Default)]
struct InputDispatch {
    guard_equations: Vec<usize>,
    assert_atoms: Vec<usize>,
}

struct MsjLogic {
    equations: Vec<CompiledEquation>,
    atoms: Vec<CompiledAtom>,
    dispatch: Vec<InputDispatch>,
    packing: bool,
    tuple_id: bool,
}

/// Packs per-fact emissions that share one key and kind into single messages
/// when packing is on; singletons stay unpacked.
fn emit_messages(
    out: &mut Vec<KeyValue>,
    requests: Vec<(Vec<u8>, u64, Vec<u8>)>,
    asserts: Vec<(Vec<u8>, u64)>,
    packing: bool,
) {
    if !packing {
        for (key, id, payload) in requests {
            out.push(KeyValue {
                value: msg::request(id, &payload),
                key,
            });
        }
        for (key, id) in asserts {
            out.push(KeyValue {
                value: msg::assert(id),
                key,
            });
        }
        return;
    }
    type Group = (Vec<u8>, Vec<(u64, Vec<u8>)>);
    let mut req_groups: Vec<Group> = Vec::new();
    for (key, id, payload) in requests {
        match req_groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, entries)) => entries.push((id, payload)),
            None => req_groups.push((key, vec![(id, payload)])),
        }
    }
    for (key, entries) in req_groups {
        let value = if entries.len() == 1 {
            msg::request(entries[0].0, &entries[0].1)
        } else {
            msg::packed_requests(&entries)
        };
        out.push(KeyValue { key, value });
    }
    let mut assert_groups: Vec<(Vec<u8>, Vec<u64>)> = Vec::new();
    for (key, id) in asserts {
        match assert_groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, ids)) => ids.push(id),
            None => assert_groups.push((key, vec![id])),
        }
    }
    for (key, ids) in assert_groups {
        let value = if ids.len() == 1 {
            msg::assert(ids[0])
        } else {
            msg::packed_asserts(&ids)
        };
        out.push(KeyValue { key, value });
    }
}

impl JobLogic for MsjLogic {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>) {
        let dispatch = &self.dispatch[ctx.input];
        let mut requests: Vec<(Vec<u8>, u64, Vec<u8>)> = Vec::new();
        for &ei in &dispatch.guard_equations {
            let eq = &self.equations[ei];
            if eq.guard_pattern.matches(values) {
                let key = key_of(values, &eq.guard_key_positions);
                let payload = if self.tuple_id {
                    tuple_id_payload(ctx.relation_ordinal, ctx.record)
                } else {
                    tuple_payload(values, &eq.out_positions)
                };
                requests.push((key, ei as u64, payload));
            }
        }
        let mut asserts: Vec<(Vec<u8>, u64)> = Vec::new();
        for &ai in &dispatch.assert_atoms {
            let atom = &self.atoms[ai];
            if atom.pattern.matches(values) {
                asserts.push((key_of(values, &atom.key_positions), ai as u64));
            }
        }
        emit_messages(out, requests, asserts, self.packing);
    }

    fn reduce(
        &self,
        _key: &[u8],
        values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Vec<String>),
    ) -> Result<(), String> {
        let mut asserts: BTreeSet<u64> = BTreeSet::new();
        let mut requests: Vec<(u64, &[u8])> = Vec::new();
        for value in values {
            for entry in msg::decode(value)? {
                match entry.kind {
                    msg::Kind::Assert => {
                        asserts.insert(entry.id);
                    }
                    msg::Kind::Request => requests.push((entry.id, entry.payload)),
                }
            }
        }
        let mut emitted: BTreeSet<(u64, &[u8])> = BTreeSet::new();
        for (id, payload) in requests {
            let eq = self
                .equations
                .get(id as usize)
                .ok_or_else(|| format!("unknown equation id {id}"))?;
            if asserts.contains(&(eq.assert_id as u64)) && emitted.insert((id, payload)) {
                let tuple = if self.tuple_id {
                    decode_tuple_id(payload)?
                } else {
                    decode_tuple_payload(payload, eq.payload_arity)?
                };
                emit(eq.output_index, tuple);
            }
        }
        Ok(())
    }
}

fn role_string(guard: bool, cond: bool) -> String {
    match (guard, cond) {
        (true, true) => "guard+conditional".to_string(),
        (true, false) => "guard".to_string(),
        _ => "conditional".to_string(),
    }
}

/// Builds the single job evaluating all equations in `equations` at once.
/// Every input relation is read once regardless of how many roles it plays.
pub fn build_msj_job(
    equations: &[SemiJoinEquation],
    cfg: &Config,
    job_id: &str,
) -> Result<JobSpec, OpsError> {
    let mut seen_outputs = BTreeSet::new();
    for eq in equations {
        if !seen_outputs.insert(eq.output.as_str()) {
            return Err(OpsError::DuplicateOutputName(eq.output.clone()));
        }
    }
    for eq in equations {
        if equations
            .iter()
            .any(|other| other.guard.relation == eq.output || other.cond.relation == eq.output)
        {
            return Err(OpsError::OutputInRhs(eq.output.clone()));
        }
    }

    // Assert table with structural dedup.
    let mut atom_ids: BTreeMap<AtomSignature, usize> = BTreeMap::new();
    let mut atoms: Vec<CompiledAtom> = Vec::new();
    let mut atom_relations: Vec<String> = Vec::new();
    let mut eq_assert_ids = Vec::with_capacity(equations.len());
    for eq in equations {
        let sig = AtomSignature::of(&eq.cond, &eq.key);
        let id = *atom_ids.entry(sig.clone()).or_insert_with(|| {
            atoms.push(CompiledAtom {
                pattern: sig.pattern.clone(),
                key_positions: sig.key_positions.clone(),
            });
            atom_relations.push(eq.cond.relation.clone());
            atoms.len() - 1
        });
        eq_assert_ids.push(id);
    }

    // Inputs: each distinct relation once, alphabetical.
    let mut relations: BTreeSet<&str> = BTreeSet::new();
    for eq in equations {
        relations.insert(&eq.guard.relation);
        relations.insert(&eq.cond.relation);
    }
    let input_names: Vec<String> = relations.iter().map(|s| s.to_string()).collect();
    let input_of: BTreeMap<&str, usize> = input_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut dispatch: Vec<InputDispatch> = input_names.iter().map(|_| InputDispatch::default()).collect();
    let compiled: Vec<CompiledEquation> = equations
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            dispatch[input_of[eq.guard.relation.as_str()]]
                .guard_equations
                .push(i);
            CompiledEquation {
                guard_pattern: Pattern::compile(&eq.guard),
                guard_key_positions: positions_in(&eq.guard, &eq.key),
                out_positions: positions_in(&eq.guard, &eq.out_vars),
                assert_id: eq_assert_ids[i],
                output_index: i,
                payload_arity: eq.out_vars.len(),
            }
        })
        .collect();
    for (ai, rel) in atom_relations.iter().enumerate() {
        dispatch[input_of[rel.as_str()]].assert_atoms.push(ai);
    }

    let inputs = input_names
        .iter()
        .map(|name| {
            let idx = input_of[name.as_str()];
            JobInput {
                relation: name.clone(),
                role: role_string(
                    !dispatch[idx].guard_equations.is_empty(),
                    !dispatch[idx].assert_atoms.is_empty(),
                ),
            }
        })
        .collect();
    let outputs = equations
        .iter()
        .map(|eq| JobOutput {
            relation: eq.output.clone(),
            arity: if cfg.tuple_id { 2 } else { eq.out_vars.len() },
        })
        .collect();

    let mut label = String::from("MSJ{");
    for (i, eq) in equations.iter().enumerate() {
        if i > 0 {
            label.push(',');
        }
        let _ = write!(label, "{}", eq.output);
    }
    label.push('}');

    Ok(JobSpec {
        id: job_id.to_string(),
        label,
        inputs,
        outputs,
        logic: Arc::new(MsjLogic {
            equations: compiled,
            atoms,
            dispatch,
            packing: cfg.packing,
            tuple_id: cfg.tuple_id,
        }),
        estimated_cost: None,
    })
}

// ---------------------------------------------------------------------------
// EVAL job
// ---------------------------------------------------------------------------

/// One guarded boolean combination evaluated by an EVAL job.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub output: String,
    pub guard: Atom,
    pub out_vars: Vec<String>,
    pub formula: BooleanFormula,
    /// Relation feeding each formula variable, by variable index.
    pub x_relations: Vec<String>,
}

struct EvalRule {
    emit_id: u64,
    /// Conformance check plus projection for guard inputs; X inputs pass
    /// tuples through unchecked.
    guard: Option<(Pattern, Vec<usize>)>,
}

struct EvalEntryRt {
    guard_id: u64,
    var_ids: Vec<u64>,
    formula: BooleanFormula,
    output_index: usize,
    out_arity: usize,
}

struct EvalLogic {
    dispatch: Vec<Vec<EvalRule>>,
    entries: Vec<EvalEntryRt>,
    tuple_id: bool,
}

impl JobLogic for EvalLogic {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>) {
        for rule in &self.dispatch[ctx.input] {
            match &rule.guard {
                None => {
                    let refs: Vec<&str> = values.iter().map(|v| v.as_str()).collect();
                    let mut value = Vec::new();
                    put_uvarint(&mut value, rule.emit_id);
                    out.push(KeyValue {
                        key: encode_key(&refs),
                        value,
                    });
                }
                Some((pattern, out_positions)) => {
                    if !pattern.matches(values) {
                        continue;
                    }
                    if self.tuple_id {
                        let ordinal = ctx.relation_ordinal.to_string();
                        let record = ctx.record.to_string();
                        let mut value = Vec::new();
                        put_uvarint(&mut value, rule.emit_id);
                        value.extend_from_slice(&tuple_payload(values, out_positions));
                        out.push(KeyValue {
                            key: encode_key(&[&ordinal, &record]),
                            value,
                        });
                    } else {
                        let mut value = Vec::new();
                        put_uvarint(&mut value, rule.emit_id);
                        out.push(KeyValue {
                            key: key_of(values, out_positions),
                            value,
                        });
                    }
                }
            }
        }
    }

    fn reduce(
        &self,
        key: &[u8],
        values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Vec<String>),
    ) -> Result<(), String> {
        let mut present: BTreeSet<u64> = BTreeSet::new();
        let mut payloads: BTreeMap<u64, &[u8]> = BTreeMap::new();
        for value in values {
            let (id, n) = get_uvarint(value).ok_or("truncated id")?;
            present.insert(id);
            if n < value.len() {
                payloads.insert(id, &value[n..]);
            }
        }
        for entry in &self.entries {
            if !present.contains(&entry.guard_id) {
                continue;
            }
            let truth = |v: usize| present.contains(&entry.var_ids[v]);
            if !entry.formula.eval(&truth) {
                continue;
            }
            let tuple = if self.tuple_id {
                let payload = payloads
                    .get(&entry.guard_id)
                    .ok_or("guard message without tuple payload")?;
                decode_tuple_payload(payload, entry.out_arity)?
            } else {
                decode_key(key).ok_or("bad key")?
            };
            emit(entry.output_index, tuple);
        }
        Ok(())
    }
}

/// Builds one job evaluating all guarded boolean combinations in `entries`
/// simultaneously. The variable relations of distinct entries must be
/// disjoint.
pub fn build_eval_job(
    entries: &[EvalEntry],
    cfg: &Config,
    job_id: &str,
) -> Result<JobSpec, OpsError> {
    let mut seen_x: BTreeSet<&str> = BTreeSet::new();
    for entry in entries {
        for rel in &entry.x_relations {
            if !seen_x.insert(rel) {
                return Err(OpsError::OverlappingFormulaVariables(rel.clone()));
            }
        }
    }

    // Inputs: guards first (deduplicated, in entry order), then every
    // variable relation in entry order.
    let mut input_names: Vec<String> = Vec::new();
    let mut input_of: BTreeMap<String, usize> = BTreeMap::new();
    for entry in entries {
        if !input_of.contains_key(&entry.guard.relation) {
            input_of.insert(entry.guard.relation.clone(), input_names.len());
            input_names.push(entry.guard.relation.clone());
        }
    }
    let guard_count = input_names.len();
    for entry in entries {
        for rel in &entry.x_relations {
            input_of.insert(rel.clone(), input_names.len());
            input_names.push(rel.clone());
        }
    }

    let mut dispatch: Vec<Vec<EvalRule>> = input_names.iter().map(|_| Vec::new()).collect();
    let mut entries_rt = Vec::new();
    let mut next_id = 0u64;
    for (ei, entry) in entries.iter().enumerate() {
        let guard_id = next_id;
        next_id += 1;
        dispatch[input_of[&entry.guard.relation]].push(EvalRule {
            emit_id: guard_id,
            guard: Some((
                Pattern::compile(&entry.guard),
                positions_in(&entry.guard, &entry.out_vars),
            )),
        });
        let mut var_ids = Vec::new();
        for rel in &entry.x_relations {
            let id = next_id;
            next_id += 1;
            var_ids.push(id);
            dispatch[input_of[rel]].push(EvalRule {
                emit_id: id,
                guard: None,
            });
        }
        entries_rt.push(EvalEntryRt {
            guard_id,
            var_ids,
            formula: entry.formula.clone(),
            output_index: ei,
            out_arity: entry.out_vars.len(),
        });
    }

    let inputs = input_names
        .iter()
        .enumerate()
        .map(|(i, name)| JobInput {
            relation: name.clone(),
            role: if i < guard_count { "guard" } else { "operand" }.to_string(),
        })
        .collect();
    let outputs = entries
        .iter()
        .map(|e| JobOutput {
            relation: e.output.clone(),
            arity: e.out_vars.len(),
        })
        .collect();

    let mut label = String::from("EVAL{");
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            label.push(',');
        }
        let names = entry.x_relations.clone();
        let _ = write!(
            label,
            "{}: {}",
            entry.output,
            entry.formula.render(&|v| names[v].clone())
        );
    }
    label.push('}');

    Ok(JobSpec {
        id: job_id.to_string(),
        label,
        inputs,
        outputs,
        logic: Arc::new(EvalLogic {
            dispatch,
            entries: entries_rt,
            tuple_id: cfg.tuple_id,
        }),
        estimated_cost: None,
    })
}

// ---------------------------------------------------------------------------
// One-round job
// ---------------------------------------------------------------------------

struct OneRoundLogic {
    dispatch: Vec<InputDispatch>,
    guard_pattern: Pattern,
    guard_key_positions: Vec<usize>,
    out_positions: Vec<usize>,
    atoms: Vec<CompiledAtom>,
    /// Assert id per formula variable.
    var_assert_ids: Vec<u64>,
    formula: BooleanFormula,
    out_arity: usize,
    packing: bool,
}

impl JobLogic for OneRoundLogic {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>) {
        let dispatch = &self.dispatch[ctx.input];
        let mut requests = Vec::new();
        if !dispatch.guard_equations.is_empty() && self.guard_pattern.matches(values) {
            requests.push((
                key_of(values, &self.guard_key_positions),
                0u64,
                tuple_payload(values, &self.out_positions),
            ));
        }
        let mut asserts = Vec::new();
        for &ai in &dispatch.assert_atoms {
            let atom = &self.atoms[ai];
            if atom.pattern.matches(values) {
                asserts.push((key_of(values, &atom.key_positions), ai as u64));
            }
        }
        emit_messages(out, requests, asserts, self.packing);
    }

    fn reduce(
        &self,
        _key: &[u8],
        values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Vec<String>),
    ) -> Result<(), String> {
        let mut asserts: BTreeSet<u64> = BTreeSet::new();
        let mut requests: Vec<&[u8]> = Vec::new();
        for value in values {
            for entry in msg::decode(value)? {
                match entry.kind {
                    msg::Kind::Assert => {
                        asserts.insert(entry.id);
                    }
                    msg::Kind::Request => requests.push(entry.payload),
                }
            }
        }
        if requests.is_empty() {
            return Ok(());
        }
        // The condition's truth is uniform across the group: every leaf is
        // determined by the shared join-key value.
        let truth = |v: usize| asserts.contains(&self.var_assert_ids[v]);
        if !self.formula.eval(&truth) {
            return Ok(());
        }
        let mut emitted: BTreeSet<&[u8]> = BTreeSet::new();
        for payload in requests {
            if emitted.insert(payload) {
                emit(0, decode_tuple_payload(payload, self.out_arity)?);
            }
        }
        Ok(())
    }
}

/// True when every conditional atom shares one identical join key with the
/// guard, which makes the combined single-round job applicable. Queries
/// without a WHERE clause are trivially eligible (they compile to a pure
/// projection pass).
pub fn one_round_eligible(q: &BsgfQuery) -> bool {
    match extract_semijoins(q) {
        Err(_) => true,
        Ok(ex) => ex.equations.windows(2).all(|w| w[0].key == w[1].key),
    }
}

/// Builds the combined job evaluating an eligible query in one round: guard
/// facts request their output tuple under the shared key and the reducer
/// evaluates the boolean combination directly from the asserts in the group.
pub fn build_one_round_job(q: &BsgfQuery, cfg: &Config, job_id: &str) -> Result<JobSpec, OpsError> {
    if q.condition.is_none() {
        return Ok(build_projection_job(q, job_id));
    }
    let ex = extract_semijoins(q)?;
    if let Some(w) = ex.equations.windows(2).find(|w| w[0].key != w[1].key) {
        return Err(OpsError::NotEligible {
            query: q.output.clone(),
            reason: format!(
                "conditional atoms use different join keys ({}) vs ({})",
                w[0].key.join(","),
                w[1].key.join(",")
            ),
        });
    }

    let mut atom_ids: BTreeMap<AtomSignature, usize> = BTreeMap::new();
    let mut atoms = Vec::new();
    let mut atom_relations = Vec::new();
    let mut var_assert_ids = Vec::new();
    for eq in &ex.equations {
        let sig = AtomSignature::of(&eq.cond, &eq.key);
        let id = *atom_ids.entry(sig.clone()).or_insert_with(|| {
            atoms.push(CompiledAtom {
                pattern: sig.pattern.clone(),
                key_positions: sig.key_positions.clone(),
            });
            atom_relations.push(eq.cond.relation.clone());
            atoms.len() - 1
        });
        var_assert_ids.push(id as u64);
    }

    let mut relations: BTreeSet<&str> = BTreeSet::new();
    relations.insert(&q.guard.relation);
    for eq in &ex.equations {
        relations.insert(&eq.cond.relation);
    }
    let input_names: Vec<String> = relations.iter().map(|s| s.to_string()).collect();
    let input_of: BTreeMap<&str, usize> = input_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut dispatch: Vec<InputDispatch> = input_names.iter().map(|_| InputDispatch::default()).collect();
    dispatch[input_of[q.guard.relation.as_str()]]
        .guard_equations
        .push(0);
    for (ai, rel) in atom_relations.iter().enumerate() {
        dispatch[input_of[rel.as_str()]].assert_atoms.push(ai);
    }

    let inputs = input_names
        .iter()
        .map(|name| {
            let idx = input_of[name.as_str()];
            JobInput {
                relation: name.clone(),
                role: role_string(
                    !dispatch[idx].guard_equations.is_empty(),
                    !dispatch[idx].assert_atoms.is_empty(),
                ),
            }
        })
        .collect();

    let key = ex.equations[0].key.clone();
    Ok(JobSpec {
        id: job_id.to_string(),
        label: format!("1R{{{}}}", q.output),
        inputs,
        outputs: vec![JobOutput {
            relation: q.output.clone(),
            arity: q.out_vars.len(),
        }],
        logic: Arc::new(OneRoundLogic {
            dispatch,
            guard_pattern: Pattern::compile(&q.guard),
            guard_key_positions: positions_in(&q.guard, &key),
            out_positions: positions_in(&q.guard, &q.out_vars),
            atoms,
            var_assert_ids,
            formula: ex.formula,
            out_arity: q.out_vars.len(),
            packing: cfg.packing,
        }),
        estimated_cost: None,
    })
}

// ---------------------------------------------------------------------------
// Projection and union jobs
// ---------------------------------------------------------------------------

struct ProjectLogic {
    /// Per input: optional conformance check, plus projection positions.
    rules: Vec<(Option<Pattern>, Vec<usize>)>,
    arity: usize,
}

impl JobLogic for ProjectLogic {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>) {
        let (check, positions) = &self.rules[ctx.input];
        if let Some(pattern) = check {
            if !pattern.matches(values) {
                return;
            }
        }
        out.push(KeyValue {
            key: key_of(values, positions),
            value: Vec::new(),
        });
    }

    fn reduce(
        &self,
        key: &[u8],
        _values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Vec<String>),
    ) -> Result<(), String> {
        let tuple = decode_key(key).ok_or("bad key")?;
        if tuple.len() != self.arity {
            return Err(format!("projected arity {} != {}", tuple.len(), self.arity));
        }
        emit(0, tuple);
        Ok(())
    }
}

/// Map-only projection pass for a query without a WHERE clause.
pub fn build_projection_job(q: &BsgfQuery, job_id: &str) -> JobSpec {
    JobSpec {
        id: job_id.to_string(),
        label: format!("PROJ{{{}}}", q.output),
        inputs: vec![JobInput {
            relation: q.guard.relation.clone(),
            role: "guard".to_string(),
        }],
        outputs: vec![JobOutput {
            relation: q.output.clone(),
            arity: q.out_vars.len(),
        }],
        logic: Arc::new(ProjectLogic {
            rules: vec![(
                Some(Pattern::compile(&q.guard)),
                positions_in(&q.guard, &q.out_vars),
            )],
            arity: q.out_vars.len(),
        }),
        estimated_cost: None,
    }
}

/// Union of several guard-tuple relations projected onto the out variables;
/// the last job of a multi-clause sequential plan.
pub fn build_union_project_job(
    q: &BsgfQuery,
    sources: &[String],
    job_id: &str,
) -> JobSpec {
    let positions = positions_in(&q.guard, &q.out_vars);
    JobSpec {
        id: job_id.to_string(),
        label: format!("UNION{{{}}}", q.output),
        inputs: sources
            .iter()
            .map(|s| JobInput {
                relation: s.clone(),
                role: "branch".to_string(),
            })
            .collect(),
        outputs: vec![JobOutput {
            relation: q.output.clone(),
            arity: q.out_vars.len(),
        }],
        logic: Arc::new(ProjectLogic {
            rules: sources.iter().map(|_| (None, positions.clone())).collect(),
            arity: q.out_vars.len(),
        }),
        estimated_cost: None,
    }
}

// ---------------------------------------------------------------------------
// Chain steps (sequential strategies)
// ---------------------------------------------------------------------------

pub enum ChainEmit {
    /// Keep the full guard tuple for the next step.
    Full,
    /// Final step of a single-clause chain: emit the out-variable projection.
    Project,
}

struct ChainLogic {
    dispatch: Vec<InputDispatch>,
    source_check: Option<Pattern>,
    key_positions: Vec<usize>,
    cond: CompiledAtom,
    negated: bool,
    project: Option<Vec<usize>>,
    guard_arity: usize,
}

impl JobLogic for ChainLogic {
    fn map(&self, ctx: MapContext, values: &[String], out: &mut Vec<KeyValue>) {
        let dispatch = &self.dispatch[ctx.input];
        if !dispatch.guard_equations.is_empty() {
            let ok = self.source_check.as_ref().is_none_or(|p| p.matches(values));
            if ok {
                let all: Vec<usize> = (0..values.len()).collect();
                out.push(KeyValue {
                    key: key_of(values, &self.key_positions),
                    value: msg::request(0, &tuple_payload(values, &all)),
                });
            }
        }
        if !dispatch.assert_atoms.is_empty() && self.cond.pattern.matches(values) {
            out.push(KeyValue {
                key: key_of(values, &self.cond.key_positions),
                value: msg::assert(0),
            });
        }
    }

    fn reduce(
        &self,
        _key: &[u8],
        values: &[Vec<u8>],
        emit: &mut dyn FnMut(usize, Vec<String>),
    ) -> Result<(), String> {
        let mut has_assert = false;
        let mut requests: Vec<&[u8]> = Vec::new();
        for value in values {
            for entry in msg::decode(value)? {
                match entry.kind {
                    msg::Kind::Assert => has_assert = true,
                    msg::Kind::Request => requests.push(entry.payload),
                }
            }
        }
        if has_assert == self.negated {
            return Ok(());
        }
        let mut emitted: BTreeSet<&[u8]> = BTreeSet::new();
        for payload in requests {
            if emitted.insert(payload) {
                let tuple = decode_tuple_payload(payload, self.guard_arity)?;
                let tuple = match &self.project {
                    None => tuple,
                    Some(positions) => positions.iter().map(|&p| tuple[p].clone()).collect(),
                };
                emit(0, tuple);
            }
        }
        Ok(())
    }
}

/// One semi-join (or antijoin, when `negated`) step of a sequential chain:
/// filters `source` by the conditional atom and writes the surviving tuples
/// to `output`. `check_source` is set on the first step only, where the
/// source is the raw guard relation.
#[allow(clippy::too_many_arguments)]
pub fn build_chain_step_job(
    q: &BsgfQuery,
    source: &str,
    check_source: bool,
    cond: &Atom,
    negated: bool,
    emit: ChainEmit,
    output: &str,
    job_id: &str,
) -> JobSpec {
    let key = join_key(&q.guard, cond);
    let sig = AtomSignature::of(cond, &key);

    let mut relations: BTreeSet<&str> = BTreeSet::new();
    relations.insert(source);
    relations.insert(&cond.relation);
    let input_names: Vec<String> = relations.iter().map(|s| s.to_string()).collect();
    let mut dispatch: Vec<InputDispatch> = input_names.iter().map(|_| InputDispatch::default()).collect();
    for (i, name) in input_names.iter().enumerate() {
        if name == source {
            dispatch[i].guard_equations.push(0);
        }
        if name == &cond.relation {
            dispatch[i].assert_atoms.push(0);
        }
    }

    let (project, arity) = match emit {
        ChainEmit::Full => (None, q.guard.arity()),
        ChainEmit::Project => (
            Some(positions_in(&q.guard, &q.out_vars)),
            q.out_vars.len(),
        ),
    };
    let op = if negated { "ANTI" } else { "SEMI" };
    JobSpec {
        id: job_id.to_string(),
        label: format!("{op}{{{source} by {cond}}}"),
        inputs: input_names
            .iter()
            .enumerate()
            .map(|(i, name)| JobInput {
                relation: name.clone(),
                role: role_string(
                    !dispatch[i].guard_equations.is_empty(),
                    !dispatch[i].assert_atoms.is_empty(),
                ),
            })
            .collect(),
        outputs: vec![JobOutput {
            relation: output.to_string(),
            arity,
        }],
        logic: Arc::new(ChainLogic {
            dispatch,
            source_check: check_source.then(|| Pattern::compile(&q.guard)),
            key_positions: positions_in(&q.guard, &key),
            cond: CompiledAtom {
                pattern: sig.pattern,
                key_positions: sig.key_positions,
            },
            negated,
            project,
            guard_arity: q.guard.arity(),
        }),
        estimated_cost: None,
    }
}
