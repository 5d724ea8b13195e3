//! Built-in benchmark query templates and the deterministic data generator.
//!
//! The A-series covers single guarded queries with varying sharing patterns,
//! B1/B2 are a wide conjunction and the exclusive-one ("uniqueness")
//! disjunction, and the C-series are multi-query programs whose dependency
//! graphs exercise stage planning. Generated data is reproducible: the same
//! spec always produces byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::data::{Database, DataError, Relation};
use crate::query::{parse_program, Atom, SgfQuery};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("selectivity {0} is outside [0, 1]")]
    BadSelectivity(f64),
    #[error("value width {width} is too small for {tuples} tuples")]
    WidthTooSmall { width: u32, tuples: u64 },
    #[error("template relation {relation} needs {needed} distinct matching keys, guard offers {available}")]
    NotEnoughKeys {
        relation: String,
        needed: usize,
        available: usize,
    },
    #[error("gen-data supports variable-only atoms; {0} has a constant")]
    ConstantAtom(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Benchmark query templates by id.
pub fn builtin_templates() -> BTreeMap<&'static str, &'static str> {
    let mut m = BTreeMap::new();
    m.insert(
        "A1",
        "ZA1 := SELECT x, y, z, w FROM R(x,y,z,w) WHERE S(x) AND T(y) AND U(z) AND V(w);\n",
    );
    m.insert(
        "A2",
        "ZA2 := SELECT x, y, z, w FROM R(x,y,z,w) WHERE S(x) AND S(y) AND S(z) AND S(w);\n",
    );
    m.insert(
        "A3",
        "ZA3 := SELECT x, y, z, w FROM R(x,y,z,w) WHERE S(x) AND T(x) AND U(x) AND V(x);\n",
    );
    m.insert(
        "A4",
        "ZA4a := SELECT x, y, z, w FROM R(x,y,z,w) WHERE S(x) AND T(y) AND U(z) AND V(w);\n\
         ZA4b := SELECT x, y, z, w FROM G(x,y,z,w) WHERE W(x) AND X(y) AND Y(z) AND Q(w);\n",
    );
    m.insert(
        "A5",
        "ZA5a := SELECT x, y, z, w FROM R(x,y,z,w) WHERE S(x) AND T(y) AND U(z) AND V(w);\n\
         ZA5b := SELECT x, y, z, w FROM G(x,y,z,w) WHERE S(x) AND T(y) AND U(z) AND V(w);\n",
    );
    m.insert(
        "B1",
        "ZB1 := SELECT x, y, z, w FROM R(x,y,z,w) WHERE \
         S(x) AND T(x) AND U(x) AND V(x) AND \
         S(y) AND T(y) AND U(y) AND V(y) AND \
         S(z) AND T(z) AND U(z) AND V(z) AND \
         S(w) AND T(w) AND U(w) AND V(w);\n",
    );
    // Exclusive-one membership over S, T, U, V on the first column.
    m.insert(
        "B2",
        "ZB2 := SELECT x, y, z, w FROM R(x,y,z,w) WHERE \
         (S(x) AND NOT T(x) AND NOT U(x) AND NOT V(x)) OR \
         (NOT S(x) AND T(x) AND NOT U(x) AND NOT V(x)) OR \
         (NOT S(x) AND NOT T(x) AND U(x) AND NOT V(x)) OR \
         (NOT S(x) AND NOT T(x) AND NOT U(x) AND V(x));\n",
    );
    // Independent queries sharing conditionals: one stage suffices.
    m.insert(
        "C1",
        "ZC1a := SELECT x, y, z, w FROM R1(x,y,z,w) WHERE S(x) AND T(y);\n\
         ZC1b := SELECT x, y, z, w FROM R2(x,y,z,w) WHERE T(y) AND U(z);\n\
         ZC1c := SELECT x, y, z, w FROM R3(x,y,z,w) WHERE U(z) AND S(x);\n",
    );
    // Wider sharing across four independent queries.
    m.insert(
        "C2",
        "ZC2a := SELECT x, y, z, w FROM R1(x,y,z,w) WHERE S(x) AND T(y) AND U(z);\n\
         ZC2b := SELECT x, y, z, w FROM R2(x,y,z,w) WHERE S(x) AND T(y) AND V(w);\n\
         ZC2c := SELECT x, y, z, w FROM R1(x,y,z,w) WHERE T(y) AND U(z) AND V(w);\n\
         ZC2d := SELECT x, y, z, w FROM R2(x,y,z,w) WHERE S(x) AND U(z) AND V(w);\n",
    );
    // A diamond: two independent roots feeding a combining query.
    m.insert(
        "C3",
        "ZC3a := SELECT x, y, z, w FROM R1(x,y,z,w) WHERE S(x) AND T(y);\n\
         ZC3b := SELECT x, y, z, w FROM R2(x,y,z,w) WHERE U(z) AND V(w);\n\
         ZC3c := SELECT x, y, z, w FROM ZC3a(x,y,z,w) WHERE W(x) AND ZC3b(x,y,z,w);\n",
    );
    // Two levels with heavy conditional overlap.
    m.insert(
        "C4",
        "ZC4a := SELECT x, y, z, w FROM R1(x,y,z,w) WHERE S(x) AND T(y) AND U(z);\n\
         ZC4b := SELECT x, y, z, w FROM R2(x,y,z,w) WHERE S(x) AND T(y) AND V(w);\n\
         ZC4c := SELECT x, y, z, w FROM R3(x,y,z,w) WHERE S(x) AND U(z) AND V(w);\n\
         ZC4d := SELECT x, y, z, w FROM ZC4a(x,y,z,w) WHERE S(x) AND ZC4b(x,y,z,w);\n\
         ZC4e := SELECT x, y, z, w FROM ZC4c(x,y,z,w) WHERE T(y) AND ZC4b(x,y,z,w);\n",
    );
    m
}

pub fn template_query(id: &str) -> Result<SgfQuery, WorkloadError> {
    let text = builtin_templates()
        .get(id)
        .copied()
        .ok_or_else(|| WorkloadError::UnknownTemplate(id.to_string()))?;
    Ok(parse_program(text).expect("templates parse"))
}

/// Data generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub guard_tuples: u64,
    pub conditional_tuples: u64,
    /// Fraction of conditional rows whose key matches some guard key.
    pub selectivity: f64,
    /// Digits per generated value.
    pub value_width: u32,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            guard_tuples: 10_000,
            conditional_tuples: 10_000,
            selectivity: 0.5,
            value_width: 8,
            seed: 1,
        }
    }
}

/// Small deterministic PRNG (xorshift over a splitmix-seeded state), so
/// generated datasets never depend on external library versions.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        let mut x = seed.wrapping_add(0x9e3779b97f4a7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        Rng(x ^ (x >> 31) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }
}

/// Generated database plus the exact matched-row counts per conditional
/// relation.
#[derive(Debug)]
pub struct Generated {
    pub db: Database,
    pub matched_rows: BTreeMap<String, u64>,
}

/// Generates base relations for a program. Guard relations get
/// `guard_tuples` distinct rows with values from the guard value range.
/// Every conditional relation gets `conditional_tuples` distinct rows of
/// which exactly `floor(selectivity * conditional_tuples)` match some guard
/// key through one of the atoms referencing the relation (round-robin over
/// those atoms); the rest use values from a disjoint range, so they match no
/// guard key at all.
pub fn generate(program: &SgfQuery, spec: &WorkloadSpec) -> Result<Generated, WorkloadError> {
    if !(0.0..=1.0).contains(&spec.selectivity) {
        return Err(WorkloadError::BadSelectivity(spec.selectivity));
    }
    let width = spec.value_width;
    let lo = 10u64.pow(width.saturating_sub(1).min(18));
    let span = lo; // guard values in [lo, 2*lo)
    let needed = spec.guard_tuples.max(spec.conditional_tuples) * 4;
    if u64::from(width) < 2 || span < needed {
        return Err(WorkloadError::WidthTooSmall {
            width,
            tuples: needed,
        });
    }
    let guard_base = lo;
    let miss_base = 2 * lo;

    let outputs: std::collections::BTreeSet<&str> =
        program.queries.iter().map(|q| q.output.as_str()).collect();

    // Classify base relations: guards and conditional atoms per relation.
    let mut guard_arity: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cond_atoms: BTreeMap<&str, Vec<(&Atom, &Atom)>> = BTreeMap::new(); // rel -> (atom, guard)
    for q in &program.queries {
        if !outputs.contains(q.guard.relation.as_str()) {
            guard_arity.insert(&q.guard.relation, q.guard.arity());
        }
        if let Some(cond) = &q.condition {
            for leaf in cond.leaves() {
                if !outputs.contains(leaf.relation.as_str()) {
                    cond_atoms.entry(&leaf.relation).or_default().push((leaf, &q.guard));
                }
            }
        }
    }

    let mut rng = Rng::new(spec.seed);
    let mut db = Database::new();

    // Guards first: distinct rows, uniform values in the guard range.
    for (&name, &arity) in &guard_arity {
        let mut rel = Relation::new(arity);
        while (rel.len() as u64) < spec.guard_tuples {
            let row: Vec<String> = (0..arity)
                .map(|_| (guard_base + rng.below(span)).to_string())
                .collect();
            rel.insert(row);
        }
        db.insert_relation(name, rel)?;
    }

    // Tracks a key position through intermediate outputs down to a base
    // relation column, so conditionals hanging on later-stage guards still
    // get plausible matching values.
    fn base_column(program: &SgfQuery, relation: &str, pos: usize) -> Option<(String, usize)> {
        match program.queries.iter().find(|q| q.output == relation) {
            None => Some((relation.to_string(), pos)),
            Some(producer) => {
                let var = producer.out_vars.get(pos)?;
                let gp = producer.guard.position_of(var)?;
                base_column(program, &producer.guard.relation, gp)
            }
        }
    }

    // Conditional relations that are not guards themselves.
    let mut matched_rows = BTreeMap::new();
    for (&name, atoms) in &cond_atoms {
        if guard_arity.contains_key(name) {
            // Plays both roles; its guard rows already exist and match by
            // construction of the shared value range.
            continue;
        }
        for (atom, _) in atoms {
            if atom.terms.iter().any(|t| t.as_var().is_none()) {
                return Err(WorkloadError::ConstantAtom(atom.to_string()));
            }
        }
        let arity = atoms[0].0.arity();
        let matched = (spec.selectivity * spec.conditional_tuples as f64).floor() as u64;
        let mut rel = Relation::new(arity);

        // Per referencing atom: the guard's key columns materialized as a
        // sampling pool of (atom position, value) rows.
        struct Target {
            atom_positions: Vec<usize>,
            pool: Vec<Vec<String>>,
        }
        let mut targets = Vec::new();
        for (atom, guard) in atoms {
            let key_vars = crate::query::join_key(guard, atom);
            let mut columns = Vec::new();
            let mut atom_positions = Vec::new();
            for v in &key_vars {
                let gp = guard.position_of(v).expect("key var in guard");
                atom_positions.push(atom.position_of(v).expect("key var in atom"));
                columns.push(base_column(program, &guard.relation, gp));
            }
            let Some(columns) = columns.into_iter().collect::<Option<Vec<_>>>() else {
                continue;
            };
            if columns.is_empty() {
                continue;
            }
            let base_rel = db.relation(&columns[0].0);
            let pool: Vec<Vec<String>> = match base_rel {
                Some(rel) if columns.iter().all(|(r, _)| r == &columns[0].0) => rel
                    .iter()
                    .map(|fact| columns.iter().map(|&(_, p)| fact[p].clone()).collect())
                    .collect(),
                _ => continue,
            };
            if !pool.is_empty() {
                targets.push(Target {
                    atom_positions,
                    pool,
                });
            }
        }

        let mut attempts = 0u64;
        let mut next_target = 0usize;
        while !targets.is_empty() && (rel.len() as u64) < matched {
            let target = &targets[next_target % targets.len()];
            next_target += 1;
            let pick = &target.pool[rng.below(target.pool.len() as u64) as usize];
            let mut row: Vec<Option<String>> = vec![None; arity];
            for (v, ap) in pick.iter().zip(&target.atom_positions) {
                row[*ap] = Some(v.clone());
            }
            let row: Vec<String> = row
                .into_iter()
                .map(|slot| slot.unwrap_or_else(|| (miss_base + rng.below(span)).to_string()))
                .collect();
            rel.insert(row);
            attempts += 1;
            if attempts > 64 * spec.conditional_tuples.max(16) {
                return Err(WorkloadError::NotEnoughKeys {
                    relation: name.to_string(),
                    needed: matched as usize,
                    available: targets.iter().map(|t| t.pool.len()).sum(),
                });
            }
        }
        // Non-matching rows: all columns from the disjoint range.
        while (rel.len() as u64) < spec.conditional_tuples {
            let row: Vec<String> = (0..arity)
                .map(|_| (miss_base + rng.below(span)).to_string())
                .collect();
            rel.insert(row);
        }
        matched_rows.insert(name.to_string(), matched);
        db.insert_relation(name, rel)?;
    }
    Ok(Generated { db, matched_rows })
}

/// Generates and writes a template's data to a directory of TSV files.
pub fn gen_data_to_dir(
    program: &SgfQuery,
    spec: &WorkloadSpec,
    dir: &Path,
) -> Result<Generated, WorkloadError> {
    let generated = generate(program, spec)?;
    generated.db.save_dir(dir)?;
    Ok(generated)
}
