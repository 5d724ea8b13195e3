//! Command-line workbench: validate and plan query programs, execute them on
//! the simulated runtime, compare strategies against the reference
//! evaluator, run benchmark templates and generate data.
//!
//! Exit codes: 0 success, 2 validation failure, 3 oracle mismatch,
//! 4 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgfq_core::config::Config;
use sgfq_core::data::Database;
use sgfq_core::dot::{plan_to_dot, plan_to_json};
use sgfq_core::planner::{build_plan, Strategy};
use sgfq_core::query::{parse_program, validate, SgfQuery};
use sgfq_core::report::{compare, run_strategy};
use sgfq_core::stats::PlanStats;
use sgfq_core::workload::{builtin_templates, gen_data_to_dir, template_query, WorkloadSpec};

#[derive(Parser)]
#[command(name = "sgfq", about = "Guarded-fragment queries on a simulated MapReduce runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual key=value overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Built-in template id (A1-A5, B1, B2, C1-C4).
    #[arg(long)]
    template: Option<String>,
    /// Query file to generate data for, instead of a template.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    guard_tuples: u64,
    #[arg(long, default_value_t = 10_000)]
    conditional_tuples: u64,
    #[arg(long, default_value_t = 0.5)]
    selectivity: f64,
    #[arg(long, default_value_t = 8)]
    value_width: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a query file.
    Validate {
        query: PathBuf,
        /// Optionally check relation arities against a data directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Plan a query and print (or export) the job DAG.
    Plan {
        query: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "GREEDY")]
        strategy: Strategy,
        /// Write the plan as a DOT graph.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Write the plan description as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Execute a query under one strategy and report metrics.
    Run {
        query: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "GREEDY")]
        strategy: Strategy,
        /// Write the run report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the output relations as TSV files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Execute several strategies and tabulate metrics side by side.
    Compare {
        query: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated strategy list.
        #[arg(long, value_delimiter = ',', default_value = "SEQ,PAR,GREEDY")]
        strategies: Vec<Strategy>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate data for a template and run a strategy comparison per
    /// (scale, selectivity) combination.
    Bench {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Comma-separated tuple-count sweep; each entry sets both the guard
        /// and conditional counts, overriding the per-count flags.
        #[arg(long, value_delimiter = ',')]
        scales: Vec<u64>,
        /// Comma-separated selectivity sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        selectivities: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "SEQ,PAR,GREEDY")]
        strategies: Vec<Strategy>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate TSV data files for a template or query file.
    GenData {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in benchmark templates.
    Templates,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_CONFIG: u8 = 4;

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn build_config(args: &ConfigArgs) -> Result<Config, String> {
    let mut cfg = Config {
        threads: 0, // all cores unless overridden
        ..Config::default()
    };
    if let Some(path) = &args.config {
        cfg.apply_file(path).map_err(|e| e.to_string())?;
    }
    for assignment in &args.set {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{assignment}`"))?;
        cfg.set(key.trim(), value.trim()).map_err(|e| e.to_string())?;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg.cost.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn load_query(path: &Path) -> Result<SgfQuery, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let program =
        parse_program(&text).map_err(|e| format!("{}:{e}", path.display()))?;
    let report = validate(&program);
    if !report.is_ok() {
        return Err(format!("{} is invalid:\n{report}", path.display()));
    }
    Ok(program)
}

fn load_data(dir: &Path) -> Result<Database, String> {
    let (db, warnings) = Database::load_dir(dir).map_err(|e| e.to_string())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(db)
}

fn workload_query(args: &WorkloadArgs) -> Result<SgfQuery, String> {
    match (&args.template, &args.query) {
        (Some(id), None) => template_query(id).map_err(|e| e.to_string()),
        (None, Some(path)) => load_query(path),
        _ => Err("exactly one of --template or --query is required".to_string()),
    }
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { query, data } => {
            let text = match fs::read_to_string(&query) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_VALIDATION, format!("{}: {e}", query.display())),
            };
            let program = match parse_program(&text) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_VALIDATION, format!("{}:{e}", query.display())),
            };
            let report = validate(&program);
            if !report.is_ok() {
                return fail(EXIT_VALIDATION, format!("invalid program:\n{report}"));
            }
            if let Some(dir) = data {
                let db = match load_data(&dir) {
                    Ok(db) => db,
                    Err(e) => return fail(EXIT_VALIDATION, e),
                };
                for q in &program.queries {
                    for rel in q.mentioned_relations() {
                        let is_output = program.queries.iter().any(|p| p.output == rel);
                        if !is_output && !db.contains(rel) {
                            return fail(
                                EXIT_VALIDATION,
                                format!("relation {rel} not found in {}", dir.display()),
                            );
                        }
                    }
                }
            }
            println!("ok: {} query(ies)", program.len());
            ExitCode::SUCCESS
        }
        Command::Plan { query, data, strategy, dot, json, config } => {
            let cfg = match build_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let program = match load_query(&query) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let db = match load_data(&data) {
                Ok(db) => db,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let stats = PlanStats::measure(&db, &program, &cfg);
            let plan = match build_plan(&program, strategy, &stats, &cfg) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            for w in &plan.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(path) = &dot {
                if let Err(e) = fs::write(path, plan_to_dot(&plan)) {
                    return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                }
            }
            let description = plan_to_json(&plan);
            if let Some(path) = &json {
                if let Err(e) = fs::write(path, serde_json::to_string_pretty(&description).unwrap())
                {
                    return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                }
            }
            if dot.is_none() && json.is_none() {
                println!("{}", serde_json::to_string_pretty(&description).unwrap());
            }
            ExitCode::SUCCESS
        }
        Command::Run { query, data, strategy, json, out, config } => {
            let cfg = match build_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let program = match load_query(&query) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let db = match load_data(&data) {
                Ok(db) => db,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let outcome = match run_strategy(&db, &program, strategy, &cfg) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if let Some(dir) = &out {
                if let Err(e) = fs::create_dir_all(dir) {
                    return fail(EXIT_CONFIG, format!("{}: {e}", dir.display()));
                }
                for (name, rel) in &outcome.outputs {
                    let path = dir.join(format!("{name}.tsv"));
                    if let Err(e) = fs::write(&path, rel.to_tsv()) {
                        return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                    }
                }
            }
            let payload = serde_json::to_string_pretty(&outcome.report).unwrap();
            if write_or_print(&json, &payload).is_err() {
                return fail(EXIT_CONFIG, "cannot write report");
            }
            if !outcome.report.oracle_match {
                return fail(EXIT_ORACLE, "strategy output differs from the reference evaluator");
            }
            ExitCode::SUCCESS
        }
        Command::Compare { query, data, strategies, json, config } => {
            let cfg = match build_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let program = match load_query(&query) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let db = match load_data(&data) {
                Ok(db) => db,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let report = compare(&db, &program, &strategies, &cfg);
            print!("{}", report.render_table());
            if let Some(path) = &json {
                let payload = serde_json::to_string_pretty(&report.to_json()).unwrap();
                if let Err(e) = fs::write(path, payload) {
                    return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                }
            }
            if !report.all_verified() {
                return fail(EXIT_ORACLE, "at least one strategy failed or diverged");
            }
            ExitCode::SUCCESS
        }
        Command::Bench { workload, scales, selectivities, strategies, json, config } => {
            let cfg = match build_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let program = match workload_query(&workload) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let scales: Vec<(u64, u64)> = if scales.is_empty() {
                vec![(workload.guard_tuples, workload.conditional_tuples)]
            } else {
                scales.iter().map(|&n| (n, n)).collect()
            };
            let mut all = Vec::new();
            let mut all_ok = true;
            for &(guard_tuples, conditional_tuples) in &scales {
                for &selectivity in &selectivities {
                    let spec = WorkloadSpec {
                        guard_tuples,
                        conditional_tuples,
                        selectivity,
                        value_width: workload.value_width,
                        seed: workload.seed,
                    };
                    let generated = match sgfq_core::workload::generate(&program, &spec) {
                        Ok(g) => g,
                        Err(e) => return fail(EXIT_CONFIG, e),
                    };
                    let report = compare(&generated.db, &program, &strategies, &cfg);
                    println!("-- guard {guard_tuples} conditional {conditional_tuples} selectivity {selectivity}");
                    print!("{}", report.render_table());
                    all_ok &= report.all_verified();
                    all.push(serde_json::json!({
                        "guard_tuples": guard_tuples,
                        "conditional_tuples": conditional_tuples,
                        "selectivity": selectivity,
                        "report": report.to_json(),
                    }));
                }
            }
            if let Some(path) = &json {
                let payload =
                    serde_json::to_string_pretty(&serde_json::Value::Array(all)).unwrap();
                if let Err(e) = fs::write(path, payload) {
                    return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                }
            }
            if !all_ok {
                return fail(EXIT_ORACLE, "at least one strategy failed or diverged");
            }
            ExitCode::SUCCESS
        }
        Command::GenData { workload, out } => {
            let program = match workload_query(&workload) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let spec = WorkloadSpec {
                guard_tuples: workload.guard_tuples,
                conditional_tuples: workload.conditional_tuples,
                selectivity: workload.selectivity,
                value_width: workload.value_width,
                seed: workload.seed,
            };
            match gen_data_to_dir(&program, &spec, &out) {
                Ok(generated) => {
                    for (name, rel) in generated.db.relations() {
                        println!("{name}: {} tuples, {} bytes", rel.len(), rel.serialized_bytes());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
        Command::Templates => {
            for (id, text) in builtin_templates() {
                println!("-- {id}\n{text}");
            }
            ExitCode::SUCCESS
        }
    }
}
