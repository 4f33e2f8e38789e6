use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use cma_plan::abstraction::{plan_choices, plan_concrete, Derived};
use cma_plan::action::Action;
use cma_plan::cma::Cma;
use cma_plan::domain::{action_to_json, cma_to_json, Domain};
use cma_plan::json::{canonical_string, SCHEMA_VERSION};
use cma_plan::mass::DEFAULT_TOL;
use cma_plan::oracle::{check_all_instantiations, CheckConfig};
use cma_plan::projection::{project_plan, Mutation, ProjectionStats};
use cma_plan::Error;

#[derive(Parser)]
#[command(
    name = "cma-plan",
    version,
    about = "Project, abstract and check plans over constraint mass assignments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every action, world and hierarchy in a domain file.
    Validate(Common),
    /// Project a world through a plan.
    Project(Common),
    /// Print the actions derived by a hierarchy.
    Abstract(Common),
    /// List the concrete plans a hierarchy node or plan stands for.
    Instantiate(Common),
    /// Sample executions and check that the projection contains them.
    Check(Common),
    /// Expected-utility bounds of a world, or of its projection through a plan.
    Eu(Common),
    /// Write a world, or its projection, as Graphviz DOT.
    ExportDot(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    world: Option<String>,
    #[arg(long)]
    plan: Option<String>,
    #[arg(long)]
    hierarchy: Option<String>,
    /// Hierarchy node; defaults to the hierarchy's root.
    #[arg(long)]
    node: Option<String>,
    #[arg(long)]
    utility: Option<String>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Checks a deliberately broken projector, to confirm the oracle notices.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    CollapseEffectIntervals,
    ForceOneCondition,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Dot,
    Text,
}

/// Why a command stopped, mapped to the exit status.
enum Failure {
    Validation(String),
    Parse(String),
    Soundness,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) => Failure::Parse(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CMA_PLAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Ignoring the error keeps an already-initialized pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Soundness) => ExitCode::from(3),
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    let (args, kind) = match cmd {
        Command::Validate(a) => (a, "validate"),
        Command::Project(a) => (a, "project"),
        Command::Abstract(a) => (a, "abstract"),
        Command::Instantiate(a) => (a, "instantiate"),
        Command::Check(a) => (a, "check"),
        Command::Eu(a) => (a, "eu"),
        Command::ExportDot(a) => (a, "export-dot"),
    };
    let text = fs::read_to_string(&args.domain)
        .map_err(|e| Failure::Parse(format!("cannot read {}: {e}", args.domain.display())))?;
    let domain = Domain::parse(&text)?;
    match kind {
        "validate" => validate(&domain, &args),
        "project" => project(&domain, &args),
        "abstract" => abstract_cmd(&domain, &args),
        "instantiate" => instantiate(&domain, &args),
        "check" => check(&domain, &args),
        "eu" => eu(&domain, &args),
        _ => export_dot(&domain, &args),
    }
}

fn required<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Parse(format!("--{flag} is required")))
}

fn emit(args: &Common, body: &str) -> Result<(), Failure> {
    match &args.out {
        Some(path) => fs::write(path, body)
            .map_err(|e| Failure::Parse(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn envelope(mut v: Value) -> String {
    v["schemaVersion"] = json!(SCHEMA_VERSION);
    canonical_string(&v)
}

fn validate(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let report = domain.validate();
    let body = match args.format.unwrap_or(Format::Text) {
        Format::Json => envelope(json!({ "ok": report.is_ok(), "issues": report.issues })),
        _ if report.issues.is_empty() => "ok\n".to_string(),
        _ => report.to_string(),
    };
    emit(args, &body)?;
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Validation(String::new()))
    }
}

fn plan_actions(plan: &[Arc<Derived>]) -> Vec<Action> {
    plan.iter().map(|d| (**d.action()).clone()).collect()
}

/// The world, projected through `--plan` when one is given.
fn world_and_projection(
    domain: &Domain,
    args: &Common,
) -> Result<(Cma, Option<ProjectionStats>), Failure> {
    let world = domain.world(required(&args.world, "world")?)?;
    match &args.plan {
        None => Ok((world.clone(), None)),
        Some(p) => {
            let plan = domain.resolve_plan(p)?;
            let (tree, stats) = project_plan(&plan_actions(&plan), world)?;
            Ok((tree, Some(stats)))
        }
    }
}

fn project(domain: &Domain, args: &Common) -> Result<(), Failure> {
    required(&args.plan, "plan")?;
    let (tree, stats) = world_and_projection(domain, args)?;
    let stats = stats.expect("a plan was given");
    let body = match args.format.unwrap_or(Format::Json) {
        Format::Json => envelope(json!({
            "world": args.world,
            "plan": args.plan,
            "tree": cma_to_json(&tree, &domain.space),
            "stats": stats,
        })),
        Format::Dot => tree.to_dot(&domain.space),
        Format::Text => {
            let mut s = format!(
                "nodes {} (tree {}), depth {}, leaves {}\n",
                stats.node_count,
                stats.tree_node_count,
                tree.depth(),
                tree.leaves().len()
            );
            for step in &stats.steps {
                s.push_str(&format!(
                    "  {}: {} leaves in, {} nodes added, {} pruned\n",
                    step.action, step.leaves_in, step.nodes_added, step.pruned
                ));
            }
            s
        }
    };
    emit(args, &body)
}

fn abstract_cmd(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let name = required(&args.hierarchy, "hierarchy")?;
    let h = domain.hierarchy(name)?;
    let built = domain.derive_hierarchy(name)?;
    let nodes: Vec<(&String, &Arc<Derived>)> = built
        .iter()
        .filter(|(n, _)| h.nodes.contains_key(*n))
        .collect();
    let body = match args.format.unwrap_or(Format::Json) {
        Format::Text => nodes
            .iter()
            .map(|(_, d)| d.action().describe(&domain.space))
            .collect::<String>(),
        _ => {
            let map: serde_json::Map<String, Value> = nodes
                .iter()
                .map(|(n, d)| (n.to_string(), action_to_json(d.action(), &domain.space)))
                .collect();
            envelope(json!({ "hierarchy": name, "root": h.root, "nodes": map }))
        }
    };
    emit(args, &body)
}

/// The derived plan named by `--plan`, or the single node given by
/// `--hierarchy`/`--node`.
fn target_plan(domain: &Domain, args: &Common) -> Result<(String, Vec<Arc<Derived>>), Failure> {
    if let Some(p) = &args.plan {
        return Ok((p.clone(), domain.resolve_plan(p)?));
    }
    let h = domain.hierarchy(required(&args.hierarchy, "hierarchy")?)?;
    let node = args.node.clone().unwrap_or_else(|| h.root.clone());
    let step = domain.resolve_step(&node)?;
    Ok((node, vec![step]))
}

fn instantiate(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let (name, plan) = target_plan(domain, args)?;
    let mut plans = Vec::new();
    for choices in plan_choices(&plan) {
        let concrete = plan_concrete(&plan, &choices)?;
        plans.push(
            concrete
                .iter()
                .map(|a| a.name().to_string())
                .collect::<Vec<_>>(),
        );
    }
    let body = match args.format.unwrap_or(Format::Json) {
        Format::Text => plans.iter().map(|p| format!("{}\n", p.join(" "))).collect(),
        _ => envelope(json!({ "target": name, "count": plans.len(), "plans": plans })),
    };
    emit(args, &body)
}

fn check(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let seed = args
        .seed
        .ok_or_else(|| Failure::Parse("--seed is required for sampling".into()))?;
    let world = domain.world(required(&args.world, "world")?)?;
    let (name, plan) = target_plan(domain, args)?;
    if args.tol.is_nan() || args.tol < 0.0 {
        return Err(Failure::Parse(format!(
            "--tol must be nonnegative, got {}",
            args.tol
        )));
    }
    let mutation = match args.inject_fault {
        None => Mutation::None,
        Some(Fault::CollapseEffectIntervals) => Mutation::CollapseEffectIntervals,
        Some(Fault::ForceOneCondition) => Mutation::ForceOneCondition,
    };
    let cfg = CheckConfig {
        tol: args.tol,
        mutation,
        ..CheckConfig::new(args.samples, seed)
    };
    let reports = check_all_instantiations(&plan, world, &cfg)?;
    let samples: usize = reports.iter().map(|r| r.samples).sum();
    let passes: usize = reports.iter().map(|r| r.passes).sum();
    let body = match args.format.unwrap_or(Format::Json) {
        Format::Text => {
            let mut s = String::new();
            for r in &reports {
                s.push_str(&format!(
                    "{}: {}/{}\n",
                    r.instantiation.join(" "),
                    r.passes,
                    r.samples
                ));
                if let Some(f) = &r.first_failure {
                    s.push_str(&format!(
                        "  sample {} (seed {}): {}\n",
                        f.sample, f.seed, f.violation
                    ));
                }
            }
            s.push_str(&format!("total: {passes}/{samples}\n"));
            s
        }
        _ => envelope(json!({
            "target": name,
            "world": args.world,
            "seed": seed,
            "samples": samples,
            "passes": passes,
            "reports": reports,
        })),
    };
    emit(args, &body)?;
    if passes == samples {
        Ok(())
    } else {
        Err(Failure::Soundness)
    }
}

fn eu(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let u = domain.utility(required(&args.utility, "utility")?)?;
    let (tree, _) = world_and_projection(domain, args)?;
    let (lo, hi) = tree.eu_interval(u)?;
    let body = match args.format.unwrap_or(Format::Json) {
        Format::Text => format!("[{lo}, {hi}]\n"),
        _ => envelope(
            json!({ "world": args.world, "plan": args.plan, "utility": args.utility, "lo": lo, "hi": hi }),
        ),
    };
    emit(args, &body)
}

fn export_dot(domain: &Domain, args: &Common) -> Result<(), Failure> {
    let (tree, _) = world_and_projection(domain, args)?;
    emit(args, &tree.to_dot(&domain.space))
}
