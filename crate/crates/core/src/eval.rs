//! Reference evaluator: direct, in-memory semantics for queries.
//!
//! This module is the correctness oracle for every execution strategy. It
//! evaluates a query per guard fact: a fact conforming to the guard
//! contributes its out-variable projection when the condition holds under the
//! substitution the fact induces. A condition leaf holds when some fact of
//! the leaf's relation agrees with the instantiated guard on the shared
//! variables and matches the leaf's constants.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::data::{Database, Relation};
use crate::query::{join_key, tuple_conforms, Atom, BsgfQuery, ConditionTree, SgfQuery};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("relation {relation} has arity {found}, query uses {expected}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
}

pub type Substitution = BTreeMap<String, String>;

fn resolve<'a>(db: &'a Database, atom: &Atom) -> Result<&'a Relation, EvalError> {
    let rel = db
        .relation(&atom.relation)
        .ok_or_else(|| EvalError::UnknownRelation(atom.relation.clone()))?;
    if rel.arity() != atom.arity() {
        return Err(EvalError::ArityMismatch {
            relation: atom.relation.clone(),
            expected: atom.arity(),
            found: rel.arity(),
        });
    }
    Ok(rel)
}

/// Truth of a condition leaf under a substitution: does some fact of the
/// leaf's relation conform to the leaf and agree with sigma on shared
/// variables?
fn leaf_holds(
    db: &Database,
    guard: &Atom,
    sigma: &Substitution,
    leaf: &Atom,
) -> Result<bool, EvalError> {
    let rel = resolve(db, leaf)?;
    let shared = join_key(guard, leaf);
    Ok(rel.iter().any(|fact| {
        tuple_conforms(fact, leaf)
            && shared.iter().all(|v| {
                let pos = leaf.position_of(v).expect("shared variable occurs in leaf");
                sigma.get(v).is_some_and(|bound| bound == &fact[pos])
            })
    }))
}

/// Evaluates a condition tree under a substitution covering the guard's
/// variables.
pub fn eval_condition(
    db: &Database,
    guard: &Atom,
    sigma: &Substitution,
    cond: &ConditionTree,
) -> Result<bool, EvalError> {
    match cond {
        ConditionTree::And(l, r) => {
            Ok(eval_condition(db, guard, sigma, l)? && eval_condition(db, guard, sigma, r)?)
        }
        ConditionTree::Or(l, r) => {
            Ok(eval_condition(db, guard, sigma, l)? || eval_condition(db, guard, sigma, r)?)
        }
        ConditionTree::Not(c) => Ok(!eval_condition(db, guard, sigma, c)?),
        ConditionTree::Leaf(atom) => leaf_holds(db, guard, sigma, atom),
    }
}

/// Per-leaf key index: the set of shared-variable projections of the leaf's
/// conforming facts. Leaf truth for a guard fact is then a set lookup.
struct LeafIndex {
    guard_positions: Vec<usize>,
    keys: BTreeSet<Vec<String>>,
}

fn build_leaf_index(db: &Database, guard: &Atom, leaf: &Atom) -> Result<LeafIndex, EvalError> {
    let rel = resolve(db, leaf)?;
    let shared = join_key(guard, leaf);
    let guard_positions = shared
        .iter()
        .map(|v| guard.position_of(v).expect("shared variable occurs in guard"))
        .collect();
    let leaf_positions: Vec<usize> = shared
        .iter()
        .map(|v| leaf.position_of(v).expect("shared variable occurs in leaf"))
        .collect();
    let mut keys = BTreeSet::new();
    for fact in rel.iter() {
        if tuple_conforms(fact, leaf) {
            keys.insert(leaf_positions.iter().map(|&p| fact[p].clone()).collect());
        }
    }
    Ok(LeafIndex {
        guard_positions,
        keys,
    })
}

fn eval_tree_indexed(cond: &ConditionTree, truth: &mut dyn FnMut(&Atom) -> bool) -> bool {
    match cond {
        ConditionTree::And(l, r) => eval_tree_indexed(l, truth) && eval_tree_indexed(r, truth),
        ConditionTree::Or(l, r) => eval_tree_indexed(l, truth) || eval_tree_indexed(r, truth),
        ConditionTree::Not(c) => !eval_tree_indexed(c, truth),
        ConditionTree::Leaf(a) => truth(a),
    }
}

/// Evaluates one member query against a database.
pub fn eval_bsgf(db: &Database, q: &BsgfQuery) -> Result<Relation, EvalError> {
    let guard_rel = resolve(db, &q.guard)?;
    let out_positions: Vec<usize> = q
        .out_vars
        .iter()
        .map(|v| q.guard.position_of(v).expect("validated query"))
        .collect();

    let mut indexes: BTreeMap<*const Atom, LeafIndex> = BTreeMap::new();
    if let Some(cond) = &q.condition {
        for leaf in cond.leaves() {
            indexes.insert(leaf as *const Atom, build_leaf_index(db, &q.guard, leaf)?);
        }
    }

    let mut out = Relation::new(q.out_vars.len());
    for fact in guard_rel.iter() {
        if !tuple_conforms(fact, &q.guard) {
            continue;
        }
        let holds = match &q.condition {
            None => true,
            Some(cond) => eval_tree_indexed(cond, &mut |leaf| {
                let index = &indexes[&(leaf as *const Atom)];
                let key: Vec<String> =
                    index.guard_positions.iter().map(|&p| fact[p].clone()).collect();
                index.keys.contains(&key)
            }),
        };
        if holds {
            out.insert(out_positions.iter().map(|&p| fact[p].clone()).collect());
        }
    }
    Ok(out)
}

/// Evaluates a whole program in definition order, materializing every output
/// into an extension of the database. Returns all output relations; the final
/// answer is the last one.
pub fn eval_sgf(db: &Database, program: &SgfQuery) -> Result<BTreeMap<String, Relation>, EvalError> {
    let mut working = db.clone();
    let mut outputs = BTreeMap::new();
    for q in &program.queries {
        let rel = eval_bsgf(&working, q)?;
        outputs.insert(q.output.clone(), rel.clone());
        working
            .insert_relation(&q.output, rel)
            .expect("output names are unique and distinct from base relations");
    }
    Ok(outputs)
}
