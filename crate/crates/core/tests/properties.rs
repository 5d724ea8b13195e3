//! Property tests for the structural invariants: conformance/projection
//! algebra, parser round-trips, evaluator laws against an independent
//! nested-loop implementation, equivalence of the job pipeline with the
//! reference evaluator, grouping invariance, and stage-sort validity on
//! random graphs.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use sgfq_core::config::Config;
use sgfq_core::data::{Database, Relation};
use sgfq_core::eval::{eval_bsgf, eval_sgf};
use sgfq_core::mr::{run_job, run_plan, PlanDag};
use sgfq_core::ops::{build_eval_job, build_msj_job, extract_semijoins, EvalEntry};
use sgfq_core::planner::{build_plan, greedy_sgf, Strategy as PlanStrategy};
use sgfq_core::query::{
    join_key, parse_program, pretty_print, project, tuple_conforms, validate, Atom,
    DependencyGraph, SgfQuery, Term,
};
use sgfq_core::stats::PlanStats;
use sgfq_core::workload::Rng;

// ---------------------------------------------------------------------------
// Conformance and projection algebra
// ---------------------------------------------------------------------------

fn small_value() -> impl Strategy<Value = String> {
    (0u32..6).prop_map(|v| v.to_string())
}

fn ground_tuple(max_arity: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(small_value(), 1..=max_arity)
}

proptest! {
    #[test]
    fn conforms_is_reflexive_on_ground_atoms(tuple in ground_tuple(5)) {
        let atom = Atom::new("R", tuple.iter().map(|v| Term::constant(v)).collect());
        prop_assert!(tuple_conforms(&tuple, &atom));
    }

    #[test]
    fn projection_concatenates(tuple in ground_tuple(5), split in 0usize..4) {
        // Atom R(v0, v1, ...) with all-distinct variables.
        let vars: Vec<String> = (0..tuple.len()).map(|i| format!("v{i}")).collect();
        let atom = Atom::new("R", vars.iter().map(|v| Term::var(v)).collect());
        let split = split.min(vars.len());
        let (left, right) = vars.split_at(split);
        let mut concat = project(&tuple, &atom, left).unwrap();
        concat.extend(project(&tuple, &atom, right).unwrap());
        prop_assert_eq!(concat, project(&tuple, &atom, &vars).unwrap());
    }
}

// ---------------------------------------------------------------------------
// Parser round trip on generated programs
// ---------------------------------------------------------------------------

fn atom_text(rels: &'static [&'static str], vars: &'static [&'static str]) -> impl Strategy<Value = String> {
    (
        prop::sample::select(rels),
        prop::collection::vec(
            prop_oneof![
                prop::sample::select(vars).prop_map(|v| v.to_string()),
                (0i32..100).prop_map(|c| c.to_string()),
                "[a-z]{1,4}".prop_map(|s| format!("\"{s}\"")),
            ],
            1..=3,
        ),
    )
        .prop_map(|(rel, terms)| format!("{rel}({})", terms.join(",")))
}

fn cond_text() -> impl Strategy<Value = String> {
    let leaf = atom_text(&["S", "T", "U"], &["x", "y"]);
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} AND {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} OR {b})")),
            inner.prop_map(|a| format!("NOT {a}")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn parse_is_inverse_of_pretty_print(cond in cond_text()) {
        // Arities may clash between generated atoms; only well-formed texts
        // must round-trip.
        let text = format!("Z := SELECT x, y FROM R(x,y) WHERE {cond};");
        if let Ok(ast) = parse_program(&text) {
            let printed = pretty_print(&ast);
            let reparsed = parse_program(&printed).unwrap();
            prop_assert_eq!(&reparsed, &ast, "printed: {}", printed);
            prop_assert_eq!(pretty_print(&reparsed), printed);
        }
    }
}

// ---------------------------------------------------------------------------
// Random databases and queries for semantic laws
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Instance {
    text: String,
    db_rows: BTreeMap<&'static str, Vec<Vec<u32>>>,
}

fn instance(negation: bool) -> impl Strategy<Value = Instance> {
    let guard_rows = prop::collection::vec((0u32..8, 0u32..8), 0..20);
    let cond_rows = prop::collection::vec(0u32..8, 0..12);
    let atoms = prop::collection::vec(
        (
            prop::sample::select(&["S", "T", "U"][..]),
            prop::sample::select(&["x", "y"][..]),
            if negation { 0..=1usize } else { 0..=0usize },
        ),
        1..=4,
    );
    (guard_rows, cond_rows.clone(), cond_rows.clone(), cond_rows, atoms, 0usize..3).prop_map(
        |(guard, s, t, u, atoms, shape)| {
            let literals: Vec<String> = atoms
                .iter()
                .map(|(rel, var, neg)| {
                    if *neg == 1 {
                        format!("NOT {rel}({var})")
                    } else {
                        format!("{rel}({var})")
                    }
                })
                .collect();
            let cond = match shape {
                0 => literals.join(" AND "),
                1 => literals.join(" OR "),
                _ => {
                    if literals.len() > 1 {
                        format!("{} AND ({})", literals[0], literals[1..].join(" OR "))
                    } else {
                        literals[0].clone()
                    }
                }
            };
            let mut db_rows: BTreeMap<&'static str, Vec<Vec<u32>>> = BTreeMap::new();
            db_rows.insert("R", guard.into_iter().map(|(a, b)| vec![a, b]).collect());
            db_rows.insert("S", s.into_iter().map(|v| vec![v]).collect());
            db_rows.insert("T", t.into_iter().map(|v| vec![v]).collect());
            db_rows.insert("U", u.into_iter().map(|v| vec![v]).collect());
            Instance {
                text: format!("Z := SELECT x, y FROM R(x,y) WHERE {cond};"),
                db_rows,
            }
        },
    )
}

fn build_db(rows: &BTreeMap<&'static str, Vec<Vec<u32>>>) -> Database {
    let mut db = Database::new();
    for (name, tuples) in rows {
        let arity = if *name == "R" { 2 } else { 1 };
        let mut rel = Relation::new(arity);
        for t in tuples {
            rel.insert(t.iter().map(|v| v.to_string()).collect());
        }
        db.insert_relation(name, rel).unwrap();
    }
    db
}

/// Independent nested-loop evaluation: for every guard fact, check each leaf
/// by scanning the whole conditional relation.
fn nested_loop_eval(db: &Database, program: &SgfQuery) -> Relation {
    use sgfq_core::query::ConditionTree;
    let q = &program.queries[0];
    let guard = db.relation(&q.guard.relation).unwrap();
    let mut out = Relation::new(q.out_vars.len());
    fn holds(db: &Database, guard_atom: &Atom, fact: &[String], c: &ConditionTree) -> bool {
        match c {
            ConditionTree::And(l, r) => {
                holds(db, guard_atom, fact, l) && holds(db, guard_atom, fact, r)
            }
            ConditionTree::Or(l, r) => {
                holds(db, guard_atom, fact, l) || holds(db, guard_atom, fact, r)
            }
            ConditionTree::Not(inner) => !holds(db, guard_atom, fact, inner),
            ConditionTree::Leaf(atom) => {
                let rel = db.relation(&atom.relation).unwrap();
                let shared = join_key(guard_atom, atom);
                rel.iter().any(|g| {
                    tuple_conforms(g, atom)
                        && shared.iter().all(|v| {
                            let gp = guard_atom.position_of(v).unwrap();
                            let ap = atom.position_of(v).unwrap();
                            fact[gp] == g[ap]
                        })
                })
            }
        }
    }
    for fact in guard.iter() {
        if !tuple_conforms(fact, &q.guard) {
            continue;
        }
        let ok = match &q.condition {
            None => true,
            Some(c) => holds(db, &q.guard, fact, c),
        };
        if ok {
            out.insert(
                q.out_vars
                    .iter()
                    .map(|v| fact[q.guard.position_of(v).unwrap()].clone())
                    .collect(),
            );
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn evaluator_matches_nested_loop(inst in instance(true)) {
        let program = parse_program(&inst.text).unwrap();
        let db = build_db(&inst.db_rows);
        let fast = eval_bsgf(&db, &program.queries[0]).unwrap();
        let slow = nested_loop_eval(&db, &program);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn output_is_a_subset_of_the_guard_projection(inst in instance(true)) {
        let program = parse_program(&inst.text).unwrap();
        let db = build_db(&inst.db_rows);
        let out = eval_bsgf(&db, &program.queries[0]).unwrap();
        let projection: BTreeSet<Vec<String>> = db
            .relation("R")
            .unwrap()
            .iter()
            .cloned()
            .collect();
        for t in out.iter() {
            prop_assert!(projection.contains(t));
        }
    }

    #[test]
    fn negation_free_condition_is_monotone(inst in instance(false)) {
        let program = parse_program(&inst.text).unwrap();
        let db = build_db(&inst.db_rows);
        let before = eval_bsgf(&db, &program.queries[0]).unwrap();
        // Add one fact to every conditional relation.
        let mut bigger = inst.db_rows.clone();
        for (name, rows) in bigger.iter_mut() {
            if *name != "R" {
                rows.push(vec![3]);
            }
        }
        let after = eval_bsgf(&build_db(&bigger), &program.queries[0]).unwrap();
        let before_set: BTreeSet<_> = before.iter().cloned().collect();
        let after_set: BTreeSet<_> = after.iter().cloned().collect();
        prop_assert!(before_set.is_subset(&after_set));
    }

    // Pipeline equivalence: grouped semi-join jobs plus the combination job
    // compute exactly the reference semantics (out variables cover the
    // guard, as in every strategy the planner emits).
    #[test]
    fn msj_then_eval_equals_reference(inst in instance(true), grouped in any::<bool>()) {
        let program = parse_program(&inst.text).unwrap();
        let db = build_db(&inst.db_rows);
        let q = &program.queries[0];
        let ex = extract_semijoins(q).unwrap();
        let cfg = Config::default();

        let mut jobs = Vec::new();
        if grouped {
            jobs.push(build_msj_job(&ex.equations, &cfg, "msj").unwrap());
        } else {
            for (i, eq) in ex.equations.iter().enumerate() {
                jobs.push(build_msj_job(std::slice::from_ref(eq), &cfg, &format!("msj{i}")).unwrap());
            }
        }
        let entry = EvalEntry {
            output: q.output.clone(),
            guard: q.guard.clone(),
            out_vars: q.out_vars.clone(),
            formula: ex.formula.clone(),
            x_relations: ex.equations.iter().map(|e| e.output.clone()).collect(),
        };
        jobs.push(build_eval_job(&[entry], &cfg, "eval").unwrap());
        let plan = PlanDag::new(jobs);
        let (out_db, _) = run_plan(&db, &plan, &cfg).unwrap();
        let got = out_db.relation("Z").unwrap();
        let want = eval_bsgf(&db, q).unwrap();
        prop_assert_eq!(got, &want);
    }

    // Grouping invariance: one grouped job emits exactly the union of the
    // per-equation jobs' outputs.
    #[test]
    fn grouped_job_equals_union_of_singletons(inst in instance(true)) {
        let program = parse_program(&inst.text).unwrap();
        let db = build_db(&inst.db_rows);
        let ex = extract_semijoins(&program.queries[0]).unwrap();
        let cfg = Config::default();
        let grouped = build_msj_job(&ex.equations, &cfg, "msj").unwrap();
        let (grouped_out, _) = run_job(&db, &grouped, &cfg).unwrap();
        for (i, eq) in ex.equations.iter().enumerate() {
            let single = build_msj_job(std::slice::from_ref(eq), &cfg, &format!("m{i}")).unwrap();
            let (single_out, _) = run_job(&db, &single, &cfg).unwrap();
            prop_assert_eq!(&grouped_out[&eq.output], &single_out[&eq.output]);
        }
    }
}

// ---------------------------------------------------------------------------
// Program-level laws
// ---------------------------------------------------------------------------

#[test]
fn independent_queries_commute() {
    // Two orderings of independent queries produce identical outputs.
    let db = {
        let mut db = Database::new();
        let mut r = Relation::new(1);
        let mut g = Relation::new(1);
        let mut s = Relation::new(1);
        for i in 0..20 {
            r.insert(vec![i.to_string()]);
            if i % 2 == 0 {
                g.insert(vec![i.to_string()]);
            }
            if i % 3 == 0 {
                s.insert(vec![i.to_string()]);
            }
        }
        db.insert_relation("R", r).unwrap();
        db.insert_relation("G", g).unwrap();
        db.insert_relation("S", s).unwrap();
        db
    };
    let forward = parse_program(
        "Z1 := SELECT x FROM R(x) WHERE S(x);\nZ2 := SELECT x FROM G(x) WHERE S(x);",
    )
    .unwrap();
    let backward = parse_program(
        "Z2 := SELECT x FROM G(x) WHERE S(x);\nZ1 := SELECT x FROM R(x) WHERE S(x);",
    )
    .unwrap();
    let a = eval_sgf(&db, &forward).unwrap();
    let b = eval_sgf(&db, &backward).unwrap();
    assert_eq!(a, b);
}

#[test]
fn greedy_stage_sorts_are_valid_on_random_graphs() {
    // 1000 random programs: the computed stage sequence is always a valid
    // multiway topological sort.
    let mut rng = Rng::new(99);
    for _ in 0..1000 {
        let n = 2 + rng.below(7) as usize;
        let mut text = String::new();
        for i in 0..n {
            let guard = if i > 0 && rng.below(2) == 0 {
                format!("Z{}", rng.below(i as u64))
            } else {
                format!("G{i}")
            };
            let cond = match rng.below(3) {
                0 => "C1(x)".to_string(),
                1 => "C2(x)".to_string(),
                _ => format!("C{}(x)", 1 + rng.below(3)),
            };
            text.push_str(&format!(
                "Z{i} := SELECT x, y FROM {guard}(x,y) WHERE {cond};\n"
            ));
        }
        let program = parse_program(&text).unwrap();
        assert!(validate(&program).is_ok());
        let graph = DependencyGraph::from_query(&program);
        let sort = greedy_sgf(&program, &graph);
        assert!(sort.is_valid(&graph), "invalid sort for:\n{text}");
    }
}

#[test]
fn greedy_staging_step_count_is_cubic() {
    // Doubling the graph size inflates the candidate-placement count by at
    // most 8.5x, averaged over random programs.
    use sgfq_core::planner::greedy_sgf_counted;
    let mut rng = Rng::new(4242);
    let random_program = |n: usize, rng: &mut Rng| -> SgfQuery {
        let mut text = String::new();
        for i in 0..n {
            let guard = if i > 0 && rng.below(3) == 0 {
                format!("Z{}", rng.below(i as u64))
            } else {
                format!("G{i}")
            };
            let cond = format!("C{}(x)", 1 + rng.below(3));
            text.push_str(&format!(
                "Z{i} := SELECT x, y FROM {guard}(x,y) WHERE {cond};\n"
            ));
        }
        parse_program(&text).unwrap()
    };
    for n in [8usize, 16, 32] {
        let mut small = 0u64;
        let mut large = 0u64;
        for _ in 0..20 {
            let p1 = random_program(n, &mut rng);
            let p2 = random_program(2 * n, &mut rng);
            small += greedy_sgf_counted(&p1, &DependencyGraph::from_query(&p1)).1;
            large += greedy_sgf_counted(&p2, &DependencyGraph::from_query(&p2)).1;
        }
        let ratio = large as f64 / small as f64;
        assert!(ratio <= 8.5, "n {n}: step ratio {ratio}");
    }
}

#[test]
fn rounds_equal_longest_path() {
    // A plan whose dependency structure is a diamond has 3 rounds; adding a
    // tail extends the longest path by one.
    let program = parse_program(
        "Z1 := SELECT x, y FROM R1(x,y) WHERE S(x);\n\
         Z2 := SELECT x, y FROM R2(x,y) WHERE S(x);\n\
         Z3 := SELECT x, y FROM Z1(x,y) WHERE Z2(x,y);\n",
    )
    .unwrap();
    let mut db = Database::new();
    for name in ["R1", "R2"] {
        let mut rel = Relation::new(2);
        for i in 0..10 {
            rel.insert(vec![i.to_string(), (i + 1).to_string()]);
        }
        db.insert_relation(name, rel).unwrap();
    }
    let mut s = Relation::new(1);
    for i in 0..5 {
        s.insert(vec![i.to_string()]);
    }
    db.insert_relation("S", s).unwrap();

    let cfg = Config::default();
    let stats = PlanStats::measure(&db, &program, &cfg);
    let plan = build_plan(&program, PlanStrategy::Greedy, &stats, &cfg).unwrap();
    // Stage one computes Z1 and Z2 (two rounds), stage two computes Z3.
    assert_eq!(plan.dag.rounds().unwrap().len(), 4);
    let (out_db, metrics) = run_plan(&db, &plan.dag, &cfg).unwrap();
    assert_eq!(metrics.rounds, 4);
    let expected = eval_sgf(&db, &program).unwrap();
    assert_eq!(out_db.relation("Z3").unwrap(), &expected["Z3"]);
}
