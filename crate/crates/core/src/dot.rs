//! Plan export: DOT graphs and a JSON description.

use serde_json::{json, Value};

use crate::planner::Plan;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the plan's job DAG in DOT. Nodes carry the job label and its
/// estimated cost; edges are data (solid) or sequencing (dashed)
/// dependencies.
pub fn plan_to_dot(plan: &Plan) -> String {
    let mut out = String::new();
    out.push_str("digraph plan {\n");
    out.push_str("  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n");
    out.push_str(&format!(
        "  label=\"{} (estimated cost {:.2})\";\n",
        plan.strategy,
        plan.estimated_cost()
    ));
    for (i, job) in plan.dag.jobs.iter().enumerate() {
        let cost = job
            .estimated_cost
            .map(|c| format!("\\ncost {c:.2}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "  j{i} [label=\"{}\\n{}{}\"];\n",
            escape(&job.id),
            escape(&job.label),
            cost
        ));
    }
    // Mark edges that do not carry data as sequencing constraints.
    for &(a, b) in &plan.dag.edges {
        let producer_outs: std::collections::BTreeSet<&str> = plan.dag.jobs[a]
            .outputs
            .iter()
            .map(|o| o.relation.as_str())
            .collect();
        let carries_data = plan.dag.jobs[b]
            .inputs
            .iter()
            .any(|i| producer_outs.contains(i.relation.as_str()));
        if carries_data {
            out.push_str(&format!("  j{a} -> j{b};\n"));
        } else {
            out.push_str(&format!("  j{a} -> j{b} [style=dashed];\n"));
        }
    }
    out.push_str("}\n");
    out
}

/// JSON description of a plan: stages, jobs with inputs/outputs and
/// estimated costs, and the edge list.
pub fn plan_to_json(plan: &Plan) -> Value {
    let rounds = plan
        .dag
        .rounds()
        .map(|r| r.iter().map(|round| json!(round)).collect::<Vec<_>>())
        .unwrap_or_default();
    json!({
        "strategy": plan.strategy.name(),
        "estimated_cost": plan.estimated_cost(),
        "stages": plan.stages,
        "rounds": rounds,
        "jobs": plan.dag.jobs.iter().map(|j| json!({
            "id": j.id,
            "label": j.label,
            "inputs": j.inputs.iter().map(|i| json!({
                "relation": i.relation,
                "role": i.role,
            })).collect::<Vec<_>>(),
            "outputs": j.outputs.iter().map(|o| o.relation.clone()).collect::<Vec<_>>(),
            "estimated_cost": j.estimated_cost,
        })).collect::<Vec<_>>(),
        "edges": plan.dag.edges.iter().map(|&(a, b)| json!([a, b])).collect::<Vec<_>>(),
        "warnings": plan.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::planner::{build_plan, Strategy};
    use crate::query::parse_program;
    use crate::stats::PlanStats;

    #[test]
    fn dot_and_json_render() {
        let program = parse_program(
            "Z := SELECT x, y FROM R(x,y) WHERE S(x) AND T(y);",
        )
        .unwrap();
        let stats = PlanStats::synthetic(
            &[("R", 10.0, 100.0), ("S", 5.0, 50.0), ("T", 5.0, 50.0)],
            &program,
        );
        let cfg = Config::default();
        let plan = build_plan(&program, Strategy::Par, &stats, &cfg).unwrap();
        let dot = plan_to_dot(&plan);
        assert!(dot.starts_with("digraph plan {"));
        assert!(dot.contains("MSJ{"));
        assert!(dot.contains("EVAL{"));
        let v = plan_to_json(&plan);
        assert_eq!(v["strategy"], "PAR");
        assert_eq!(v["jobs"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn sequencing_edges_render_dashed() {
        let program = parse_program(
            "Z1 := SELECT x FROM R(x) WHERE S(x);\nZ2 := SELECT x FROM G(x) WHERE S(x);",
        )
        .unwrap();
        let stats = PlanStats::synthetic(
            &[("R", 1.0, 10.0), ("G", 1.0, 10.0), ("S", 1.0, 10.0)],
            &program,
        );
        let plan = build_plan(&program, Strategy::SeqUnit, &stats, &Config::default()).unwrap();
        let dot = plan_to_dot(&plan);
        // The second query only starts after the first finishes, without any
        // data flowing between them.
        assert!(dot.contains("[style=dashed]"), "{dot}");
    }
}
