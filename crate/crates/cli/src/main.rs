//! Command-line front end: synthetic data generation, knowledge
//! construction, bound computation, experiment grids, and plots.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dagbounds::data::Dataset;
use dagbounds::discovery;
use dagbounds::estimation::{AdjustmentKind, CausalQuery, EstimatorKind};
use dagbounds::graph::Adjacency;
use dagbounds::grid::{self, GridConfig};
use dagbounds::knowledge::{random_knowledge, EdgeKnowledge};
use dagbounds::optimizer::{compute_bounds, BoundsMethod, SearchConfig};
use dagbounds::plot::{emit_plot, PlotKind};
use dagbounds::synthetic::{self, MechanismKind};

#[derive(Parser)]
#[command(name = "dagbounds", version, about = "Causal effect bounds under graph uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SCM and dataset (data.csv, graph.json, scm.json)
    GenData(GenDataArgs),
    /// Build sure/forbidden edge knowledge
    Knowledge(KnowledgeArgs),
    /// Compute lower/upper bounds on a causal query
    Bounds(BoundsArgs),
    /// Run an experiment grid from a JSON config
    Grid(GridArgs),
    /// Render an SVG summary of grid rows
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    /// linear | sig_add | sig_mix
    #[arg(long, default_value = "linear")]
    mechanism: String,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct KnowledgeArgs {
    #[command(subcommand)]
    source: KnowledgeSource,
}

#[derive(Subcommand)]
enum KnowledgeSource {
    /// Reveal random subsets of the true graph's edges and non-edges
    Random {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        p_sure: f64,
        #[arg(long, default_value_t = 0.5)]
        p_forbidden: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Intersect PC runs over random column orders
    Pc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = discovery::DEFAULT_N_PERMS)]
        n_perms: usize,
        #[arg(long, default_value_t = discovery::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    knowledge: PathBuf,
    /// lagrangian | dpdag | brute
    #[arg(long, default_value = "lagrangian")]
    method: String,
    /// parent | optimal
    #[arg(long, default_value = "parent")]
    adjustment: String,
    /// linear | nonlinear
    #[arg(long, default_value = "linear")]
    estimator: String,
    #[arg(long)]
    treatment: usize,
    #[arg(long)]
    outcome: usize,
    #[arg(long, default_value_t = 1.0)]
    level_high: f64,
    #[arg(long, default_value_t = 0.0)]
    level_low: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// override the node-count-based round schedule
    #[arg(long)]
    rounds: Option<usize>,
    /// cap MLP training epochs (nonlinear estimator)
    #[arg(long)]
    mlp_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// runtime-vs-space | coverage-bars
    kind: String,
    #[arg(long)]
    rows: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn init_rayon() {
    if let Ok(v) = std::env::var("DAGBOUNDS_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> Result<()> {
    env_logger::init();
    init_rayon();
    match Cli::parse().command {
        Command::GenData(args) => gen_data(args),
        Command::Knowledge(args) => knowledge(args),
        Command::Bounds(args) => bounds(args),
        Command::Grid(args) => run_grid(args),
        Command::Plot(args) => plot(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let kind = MechanismKind::parse(&args.mechanism)
        .with_context(|| format!("unknown mechanism {:?}", args.mechanism))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let (scm, data) =
        synthetic::generate_instance(args.nodes, args.edge_prob, kind, args.n, args.seed);
    data.write_csv(args.out_dir.join("data.csv"))?;
    std::fs::write(
        args.out_dir.join("graph.json"),
        serde_json::to_string_pretty(&scm.adjacency)?,
    )?;
    std::fs::write(args.out_dir.join("scm.json"), serde_json::to_string_pretty(&scm)?)?;
    println!(
        "wrote {} samples over {} nodes ({} edges) to {}",
        data.n(),
        data.d(),
        scm.adjacency.edge_count(),
        args.out_dir.display()
    );
    Ok(())
}

fn knowledge(args: KnowledgeArgs) -> Result<()> {
    match args.source {
        KnowledgeSource::Random { graph, p_sure, p_forbidden, seed, out } => {
            let adj: Adjacency = serde_json::from_str(&std::fs::read_to_string(&graph)?)?;
            let k = random_knowledge(&adj, p_sure, p_forbidden, seed);
            std::fs::write(&out, serde_json::to_string_pretty(&k)?)?;
            println!(
                "knowledge: {} sure, {} forbidden, {} uncertain slots -> {}",
                k.sure().len(),
                k.forbidden().len(),
                k.uncertain_count(),
                out.display()
            );
        }
        KnowledgeSource::Pc { data, n_perms, alpha, seed, out } => {
            let ds = Dataset::read_csv(&data)?;
            let (k, provenance) = discovery::pc_knowledge(&ds, n_perms, alpha, seed);
            std::fs::write(&out, serde_json::to_string_pretty(&k)?)?;
            let mut sidecar = out.as_os_str().to_owned();
            sidecar.push(".provenance.json");
            std::fs::write(sidecar, serde_json::to_string_pretty(&provenance)?)?;
            println!(
                "pc knowledge over {n_perms} permutations: {} sure, {} forbidden, {} uncertain -> {}",
                k.sure().len(),
                k.forbidden().len(),
                k.uncertain_count(),
                out.display()
            );
        }
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let data = Dataset::read_csv(&args.data)?;
    let k: EdgeKnowledge = serde_json::from_str(&std::fs::read_to_string(&args.knowledge)?)?;
    let method = BoundsMethod::parse(&args.method)
        .with_context(|| format!("unknown method {:?}", args.method))?;
    let adjustment = match args.adjustment.as_str() {
        "parent" => AdjustmentKind::Parent,
        "optimal" => AdjustmentKind::Optimal,
        other => bail!("unknown adjustment {other:?}"),
    };
    let estimator = match args.estimator.as_str() {
        "linear" => EstimatorKind::Linear,
        "nonlinear" => EstimatorKind::Nonlinear,
        other => bail!("unknown estimator {other:?}"),
    };
    if args.treatment >= data.d() || args.outcome >= data.d() {
        bail!("treatment/outcome out of range for {} columns", data.d());
    }
    let mut query = CausalQuery::new(args.treatment, args.outcome)
        .with_adjustment(adjustment)
        .with_estimator(estimator);
    query.level_high = args.level_high;
    query.level_low = args.level_low;

    let mut cfg = SearchConfig { rounds: args.rounds, ..SearchConfig::default() };
    if let Some(epochs) = args.mlp_epochs {
        cfg.mlp.max_epochs = epochs;
    }
    let report = compute_bounds(&data, &k, &query, method, &cfg, args.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &json)?;
            println!(
                "[{}] bounds: [{:.6}, {:.6}] (widened [{:.6}, {:.6}]) in {:.2}s -> {}",
                report.method,
                report.lower,
                report.upper,
                report.widened().0,
                report.widened().1,
                report.runtime_sec,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_grid(args: GridArgs) -> Result<()> {
    let cfg: GridConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let (rows, summary) = grid::run_grid(&cfg, &args.out)?;
    println!("{} rows -> {}", rows.len(), args.out.display());
    print!("{}", grid::format_summary(&summary));
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let kind = PlotKind::parse(&args.kind)
        .with_context(|| format!("unknown plot kind {:?}", args.kind))?;
    let rows = grid::read_rows(&args.rows)?;
    emit_plot(&rows, kind, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
