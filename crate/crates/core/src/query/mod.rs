//! Query AST, parser, validation and the structural operations the rest of
//! the engine is built on: conformance, projection, join keys and the
//! dependency graph of a multi-query program.

mod lexer;
mod parser;

pub use parser::{parse_program, ParseError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::data::canonical_value;

/// Source position, 1-based. Positions never participate in equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn constant(value: &str) -> Term {
        Term::Const(canonical_value(value))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub relation: String,
    pub terms: Vec<Term>,
    pub span: Span,
}

impl PartialEq for Atom {
    fn eq(&self, other: &Self) -> bool {
        self.relation == other.relation && self.terms == other.terms
    }
}

impl Eq for Atom {}

impl Atom {
    pub fn new(relation: &str, terms: Vec<Term>) -> Atom {
        Atom {
            relation: relation.to_string(),
            terms,
            span: Span::default(),
        }
    }

    pub fn arity(&self) -> usize {
        self.terms.len()
    }

    /// Variables in first-occurrence order.
    pub fn variables(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.terms {
            if let Term::Var(v) = t {
                if seen.insert(v.as_str()) {
                    out.push(v.as_str());
                }
            }
        }
        out
    }

    /// Position of the first occurrence of `var`, if any.
    pub fn position_of(&self, var: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.as_var() == Some(var))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionTree {
    And(Box<ConditionTree>, Box<ConditionTree>),
    Or(Box<ConditionTree>, Box<ConditionTree>),
    Not(Box<ConditionTree>),
    Leaf(Atom),
}

impl ConditionTree {
    /// Condition atoms in first-occurrence order, syntactic duplicates kept.
    pub fn leaves(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            ConditionTree::And(l, r) | ConditionTree::Or(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
            ConditionTree::Not(c) => c.collect_leaves(out),
            ConditionTree::Leaf(a) => out.push(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsgfQuery {
    pub output: String,
    pub out_vars: Vec<String>,
    pub guard: Atom,
    pub condition: Option<ConditionTree>,
}

impl BsgfQuery {
    /// Every relation name mentioned by the query (guard and condition).
    pub fn mentioned_relations(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        out.insert(self.guard.relation.as_str());
        if let Some(cond) = &self.condition {
            for leaf in cond.leaves() {
                out.insert(leaf.relation.as_str());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SgfQuery {
    pub queries: Vec<BsgfQuery>,
}

impl SgfQuery {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.output.as_str()).collect()
    }

    /// Base relations: mentioned relations that are not query outputs.
    pub fn base_relations(&self) -> BTreeSet<&str> {
        let outputs: BTreeSet<&str> = self.output_names().into_iter().collect();
        let mut base = BTreeSet::new();
        for q in &self.queries {
            for rel in q.mentioned_relations() {
                if !outputs.contains(rel) {
                    base.insert(rel);
                }
            }
        }
        base
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("tuple does not conform to atom {0}")]
    NotConforming(String),
    #[error("variable {0} does not occur in atom {1}")]
    VariableAbsent(String, String),
}

/// Positional conformance of a value tuple to a term vector: equal terms must
/// carry equal values and constant positions must match exactly.
pub fn tuple_conforms(values: &[String], atom: &Atom) -> bool {
    if values.len() != atom.terms.len() {
        return false;
    }
    let mut first: BTreeMap<&str, &str> = BTreeMap::new();
    for (t, v) in atom.terms.iter().zip(values) {
        match t {
            Term::Const(c) => {
                if c != v {
                    return false;
                }
            }
            Term::Var(name) => match first.get(name.as_str()) {
                Some(prev) => {
                    if *prev != v.as_str() {
                        return false;
                    }
                }
                None => {
                    first.insert(name, v);
                }
            },
        }
    }
    true
}

/// Conformance of a named fact to an atom: relation names must also agree.
pub fn fact_conforms(relation: &str, values: &[String], atom: &Atom) -> bool {
    relation == atom.relation && tuple_conforms(values, atom)
}

/// Projects a conforming tuple onto `vars`, reading each variable at its
/// first occurrence in the atom.
pub fn project(values: &[String], atom: &Atom, vars: &[String]) -> Result<Vec<String>, QueryError> {
    if !tuple_conforms(values, atom) {
        return Err(QueryError::NotConforming(atom.to_string()));
    }
    vars.iter()
        .map(|v| {
            atom.position_of(v)
                .map(|p| values[p].clone())
                .ok_or_else(|| QueryError::VariableAbsent(v.clone(), atom.to_string()))
        })
        .collect()
}

/// Join key of a guard/conditional atom pair: the variables occurring in
/// both, ordered by first occurrence in the guard.
pub fn join_key(guard: &Atom, cond: &Atom) -> Vec<String> {
    let cond_vars: BTreeSet<&str> = cond.variables().into_iter().collect();
    guard
        .variables()
        .into_iter()
        .filter(|v| cond_vars.contains(v))
        .map(|v| v.to_string())
        .collect()
}

/// Binds the guard's variables against a conforming tuple.
pub fn bind(values: &[String], atom: &Atom) -> BTreeMap<String, String> {
    let mut sigma = BTreeMap::new();
    for (t, v) in atom.terms.iter().zip(values) {
        if let Term::Var(name) = t {
            sigma.entry(name.clone()).or_insert_with(|| v.clone());
        }
    }
    sigma
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    GuardednessViolation {
        query: String,
        atom_a: String,
        atom_b: String,
        variables: Vec<String>,
    },
    OutputVarNotInGuard {
        query: String,
        variable: String,
    },
    ForwardReference {
        query: String,
        relation: String,
    },
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
        at: String,
    },
    DuplicateOutputName {
        name: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::GuardednessViolation { query, atom_a, atom_b, variables } => write!(
                f,
                "{query}: variables {} shared by {atom_a} and {atom_b} do not all occur in the guard",
                variables.join(", ")
            ),
            Violation::OutputVarNotInGuard { query, variable } => {
                write!(f, "{query}: output variable {variable} does not occur in the guard")
            }
            Violation::ForwardReference { query, relation } => {
                write!(f, "{query}: reference to {relation} which is not defined earlier")
            }
            Violation::ArityMismatch { relation, expected, found, at } => {
                write!(f, "{at}: relation {relation} used with arity {found}, expected {expected}")
            }
            Violation::DuplicateOutputName { name } => {
                write!(f, "duplicate output name {name}")
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a program and reports all violations.
pub fn validate(program: &SgfQuery) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen_outputs: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, q) in program.queries.iter().enumerate() {
        if seen_outputs.insert(q.output.as_str(), idx).is_some() {
            report.violations.push(Violation::DuplicateOutputName {
                name: q.output.clone(),
            });
        }
    }

    // Arity consistency over all atoms plus the declared output arities.
    let mut arity_map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let note_arity = |report: &mut ValidationReport,
                          arity_map: &mut BTreeMap<String, (usize, String)>,
                          rel: &str,
                          arity: usize,
                          at: String| {
        match arity_map.get(rel) {
            Some((expected, _)) if *expected != arity => {
                report.violations.push(Violation::ArityMismatch {
                    relation: rel.to_string(),
                    expected: *expected,
                    found: arity,
                    at,
                });
            }
            Some(_) => {}
            None => {
                arity_map.insert(rel.to_string(), (arity, at));
            }
        }
    };

    for (idx, q) in program.queries.iter().enumerate() {
        let qname = q.output.as_str();
        note_arity(
            &mut report,
            &mut arity_map,
            qname,
            q.out_vars.len(),
            format!("output of {qname}"),
        );
        note_arity(
            &mut report,
            &mut arity_map,
            &q.guard.relation,
            q.guard.arity(),
            format!("guard of {qname}"),
        );

        let guard_vars: BTreeSet<&str> = q.guard.variables().into_iter().collect();
        for v in &q.out_vars {
            if !guard_vars.contains(v.as_str()) {
                report.violations.push(Violation::OutputVarNotInGuard {
                    query: qname.to_string(),
                    variable: v.clone(),
                });
            }
        }

        let leaves: Vec<&Atom> = q.condition.as_ref().map(|c| c.leaves()).unwrap_or_default();
        for leaf in &leaves {
            note_arity(
                &mut report,
                &mut arity_map,
                &leaf.relation,
                leaf.arity(),
                format!("condition of {qname}"),
            );
        }

        // Guardedness: distinct condition atoms may only share guard variables.
        let mut distinct: Vec<&Atom> = Vec::new();
        for leaf in &leaves {
            if !distinct.contains(leaf) {
                distinct.push(leaf);
            }
        }
        for (i, a) in distinct.iter().enumerate() {
            for b in distinct.iter().skip(i + 1) {
                let vars_a: BTreeSet<&str> = a.variables().into_iter().collect();
                let shared: Vec<String> = b
                    .variables()
                    .into_iter()
                    .filter(|v| vars_a.contains(v) && !guard_vars.contains(v))
                    .map(|v| v.to_string())
                    .collect();
                if !shared.is_empty() {
                    report.violations.push(Violation::GuardednessViolation {
                        query: qname.to_string(),
                        atom_a: a.to_string(),
                        atom_b: b.to_string(),
                        variables: shared,
                    });
                }
            }
        }

        // References to outputs must point strictly backwards.
        let mut mentioned: Vec<&Atom> = vec![&q.guard];
        mentioned.extend(leaves);
        for atom in mentioned {
            if let Some(&def_idx) = seen_outputs.get(atom.relation.as_str()) {
                if def_idx >= idx {
                    report.violations.push(Violation::ForwardReference {
                        query: qname.to_string(),
                        relation: atom.relation.clone(),
                    });
                }
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Dependency graph
// ---------------------------------------------------------------------------

/// Dependencies between the program's member queries: an edge `(i, j)` means
/// query `j` mentions the output of query `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub nodes: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl DependencyGraph {
    pub fn from_query(program: &SgfQuery) -> DependencyGraph {
        let index: BTreeMap<&str, usize> = program
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.output.as_str(), i))
            .collect();
        let mut edges = BTreeSet::new();
        for (j, q) in program.queries.iter().enumerate() {
            for rel in q.mentioned_relations() {
                if let Some(&i) = index.get(rel) {
                    if i < j {
                        edges.insert((i, j));
                    }
                }
            }
        }
        DependencyGraph {
            nodes: program.queries.len(),
            edges,
        }
    }

    pub fn predecessors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |(_, j)| *j == node)
            .map(|(i, _)| *i)
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .range((node, 0)..(node + 1, 0))
            .map(|(_, j)| *j)
    }

    /// Longest-path level per node, 0-based; level boundaries are the stages
    /// used by level-parallel strategies.
    pub fn levels(&self) -> Vec<usize> {
        let mut level = vec![0usize; self.nodes];
        // Edges always point from lower to higher indices.
        for j in 0..self.nodes {
            for i in self.predecessors(j) {
                level[j] = level[j].max(level[i] + 1);
            }
        }
        level
    }

    /// Nodes grouped by level, i.e. the level-parallel stage layout.
    pub fn level_stages(&self) -> Vec<Vec<usize>> {
        let levels = self.levels();
        let depth = levels.iter().copied().max().map_or(0, |m| m + 1);
        let mut stages = vec![Vec::new(); depth];
        for (node, lvl) in levels.iter().enumerate() {
            stages[*lvl].push(node);
        }
        stages
    }
}

// ---------------------------------------------------------------------------
// Pretty printing
// ---------------------------------------------------------------------------

fn value_is_int(v: &str) -> bool {
    let digits = v.strip_prefix('-').unwrap_or(v);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) if value_is_int(c) => write!(f, "{c}"),
            Term::Const(c) => write!(f, "\"{c}\""),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

fn prec(c: &ConditionTree) -> u8 {
    match c {
        ConditionTree::Or(..) => 1,
        ConditionTree::And(..) => 2,
        ConditionTree::Not(_) => 3,
        ConditionTree::Leaf(_) => 4,
    }
}

fn fmt_cond(c: &ConditionTree, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
    let p = prec(c);
    let parens = p < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match c {
        ConditionTree::Or(l, r) => {
            fmt_cond(l, f, p)?;
            write!(f, " OR ")?;
            fmt_cond(r, f, p + 1)?;
        }
        ConditionTree::And(l, r) => {
            fmt_cond(l, f, p)?;
            write!(f, " AND ")?;
            fmt_cond(r, f, p + 1)?;
        }
        ConditionTree::Not(child) => {
            write!(f, "NOT ")?;
            fmt_cond(child, f, p)?;
        }
        ConditionTree::Leaf(a) => write!(f, "{a}")?,
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for ConditionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_cond(self, f, 0)
    }
}

impl fmt::Display for BsgfQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} := SELECT {} FROM {}", self.output, self.out_vars.join(", "), self.guard)?;
        if let Some(cond) = &self.condition {
            write!(f, " WHERE {cond}")?;
        }
        write!(f, ";")
    }
}

impl fmt::Display for SgfQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in &self.queries {
            writeln!(f, "{q}")?;
        }
        Ok(())
    }
}

/// Canonical text form; `parse_program` of the result reproduces the AST.
pub fn pretty_print(program: &SgfQuery) -> String {
    program.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(vals: &[&str]) -> Vec<String> {
        vals.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn conformance_examples() {
        let atom = Atom::new("R", vec![Term::var("x"), Term::constant("2"), Term::var("x"), Term::var("y")]);
        assert!(tuple_conforms(&tuple(&["1", "2", "1", "3"]), &atom));
        assert!(!tuple_conforms(&tuple(&["1", "5", "1", "3"]), &atom));
        assert!(!tuple_conforms(&tuple(&["1", "2", "9", "3"]), &atom));

        let s = Atom::new("S", vec![Term::var("x"), Term::var("y")]);
        assert!(!fact_conforms("R", &tuple(&["1", "2"]), &s));
        let rxx = Atom::new("R", vec![Term::var("x"), Term::var("x")]);
        assert!(!fact_conforms("R", &tuple(&["1", "2"]), &rxx));
        assert!(fact_conforms("R", &tuple(&["2", "2"]), &rxx));
    }

    #[test]
    fn conforms_reflexive_on_ground_atoms() {
        let atom = Atom::new("R", vec![Term::constant("1"), Term::constant("2")]);
        assert!(fact_conforms("R", &tuple(&["1", "2"]), &atom));
    }

    #[test]
    fn projection_examples() {
        let atom = Atom::new("R", vec![Term::var("x"), Term::var("y"), Term::var("x"), Term::var("z")]);
        let p = project(
            &tuple(&["1", "2", "1", "3"]),
            &atom,
            &["x".to_string(), "z".to_string()],
        )
        .unwrap();
        assert_eq!(p, tuple(&["1", "3"]));

        let id = Atom::new("R", vec![Term::var("x"), Term::var("y")]);
        assert_eq!(
            project(&tuple(&["1", "2"]), &id, &["x".to_string(), "y".to_string()]).unwrap(),
            tuple(&["1", "2"])
        );
        let unary = Atom::new("R", vec![Term::var("x")]);
        assert_eq!(project(&tuple(&["7"]), &unary, &[]).unwrap(), Vec::<String>::new());

        assert!(matches!(
            project(&tuple(&["7"]), &unary, &["q".to_string()]),
            Err(QueryError::VariableAbsent(..))
        ));
        let rxx = Atom::new("R", vec![Term::var("x"), Term::var("x")]);
        assert!(matches!(
            project(&tuple(&["1", "2"]), &rxx, &["x".to_string()]),
            Err(QueryError::NotConforming(_))
        ));
    }

    #[test]
    fn join_key_order_follows_guard() {
        let guard = Atom::new("R", vec![Term::var("x"), Term::var("y")]);
        let s = Atom::new("S", vec![Term::var("y"), Term::var("x")]);
        assert_eq!(join_key(&guard, &s), vec!["x", "y"]);
        let t = Atom::new("T", vec![Term::var("x"), Term::var("z")]);
        assert_eq!(join_key(&guard, &t), vec!["x"]);
        let u = Atom::new("U", vec![Term::var("w")]);
        assert!(join_key(&guard, &u).is_empty());
    }

    #[test]
    fn validation_accepts_the_retailer_program() {
        let q = parse_program(
            "Z1 := SELECT aut FROM Amaz(ttl,aut,\"bad\") WHERE BN(ttl,aut,\"bad\") AND BD(ttl,aut,\"bad\");\n\
             Z2 := SELECT new, aut FROM Upcoming(new,aut) WHERE NOT Z1(aut);",
        )
        .unwrap();
        assert!(validate(&q).is_ok());
    }

    #[test]
    fn validation_flags_unguarded_shared_variable() {
        let q = parse_program("Z := SELECT x FROM R(x) WHERE S(y,z) AND T(z);").unwrap();
        let report = validate(&q);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::GuardednessViolation { variables, .. }
                if variables == &vec!["z".to_string()])));
    }

    #[test]
    fn validation_flags_loose_output_variable() {
        let q = parse_program("Z := SELECT w FROM R(x,y);").unwrap();
        let report = validate(&q);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::OutputVarNotInGuard { variable, .. } if variable == "w")));
    }

    #[test]
    fn validation_flags_self_reference() {
        let q = parse_program("Z := SELECT x FROM R(x) WHERE Z(x);").unwrap();
        let report = validate(&q);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ForwardReference { relation, .. } if relation == "Z")));
    }

    #[test]
    fn dependency_graph_trivial_cases() {
        let single = parse_program("Z := SELECT x FROM R(x);").unwrap();
        let g = DependencyGraph::from_query(&single);
        assert_eq!((g.nodes, g.edges.len()), (1, 0));
        let pair = parse_program(
            "Z1 := SELECT x FROM R(x);\nZ2 := SELECT x FROM S(x);",
        )
        .unwrap();
        let g = DependencyGraph::from_query(&pair);
        assert_eq!((g.nodes, g.edges.len()), (2, 0));
        assert_eq!(g.level_stages(), vec![vec![0, 1]]);
    }
}
