use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use riemannian_diffusion::diffusion::PooledObjective;
use riemannian_diffusion::manifold::{check_gradient, Euclidean};
use riemannian_diffusion::network::{random_connected_graph, WeightRule};
use riemannian_diffusion::rpca::{
    gradient_certificate, inject_outliers, synth_data, CertificateConfig, RobustPcaCost,
    RobustPcaOracle, SyntheticSpec,
};
use riemannian_diffusion::runner::{self, ExperimentConfig, Preset};
use riemannian_diffusion::testbed::QuadraticOracle;
use riemannian_diffusion::{Grassmann, Result};

#[derive(Parser)]
#[command(
    name = "rdiff",
    version,
    about = "Riemannian diffusion adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write traces to the output directory.
    Run(RunArgs),
    /// Finite-difference check of the robust-PCA and quadratic gradients.
    Gradcheck(GradcheckArgs),
    /// Draw a random connected graph and print its weights and mixing rate as JSON.
    Topology(TopologyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON configuration; applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of synthetic-metropolis, synthetic-uniform, mnist-metropolis,
    /// mnist-uniform, euclid-quadratic, agreement.
    #[arg(long, default_value = "synthetic-metropolis")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mc_runs: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    graph: Option<WeightRule>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    mnist_images: Option<PathBuf>,
    #[arg(long)]
    mnist_labels: Option<PathBuf>,
    /// Use 100 Monte Carlo runs unless --mc-runs is given.
    #[arg(long)]
    paper: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 20)]
    directions: usize,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long, default_value_t = 20)]
    agents: usize,
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    #[arg(long, default_value = "metropolis")]
    graph: WeightRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = args.preset.config();
    if let Some(path) = &args.config {
        config = config.with_file(path)?;
    }
    let mut flags = Map::new();
    let mut set = |key: &str, value: Value| {
        flags.insert(key.to_string(), value);
    };
    if args.paper {
        set("mc_runs", json!(100));
    }
    if let Some(v) = args.seed {
        set("seed", json!(v));
    }
    if let Some(v) = &args.out {
        set("output_path", json!(v));
    }
    if let Some(v) = args.mc_runs {
        set("mc_runs", json!(v));
    }
    if let Some(v) = args.mu {
        set("mu", json!(v));
    }
    if let Some(v) = args.alpha {
        set("alpha", json!(v));
    }
    if let Some(v) = args.graph {
        set(
            "graph",
            serde_json::to_value(v).expect("weight rule serializes"),
        );
    }
    if let Some(v) = args.horizon {
        set("horizon", json!(v));
    }
    if let Some(v) = &args.mnist_images {
        set("mnist_images", json!(v));
    }
    if let Some(v) = &args.mnist_labels {
        set("mnist_labels", json!(v));
    }
    config.merged(flags)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let config = build_config(&args)?;
    let outcome = runner::run_experiment(&config)?;
    let ok = config.mc_runs - outcome.failures.len();
    println!(
        "{ok}/{} runs completed, outputs in {}",
        config.mc_runs,
        config.output_path.display()
    );
    for f in &outcome.failures {
        eprintln!("run {} failed: {}", f.run, f.error);
    }
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec::default();
    let data = synth_data(&spec, args.seed)?;
    let dataset = inject_outliers(data.dataset, spec.outliers, args.seed)?;
    let oracle = RobustPcaOracle::new(
        Grassmann::new(spec.n, spec.p)?,
        RobustPcaCost::default(),
        Arc::new(dataset),
    )?;
    let config = CertificateConfig {
        points: args.points,
        directions: args.directions,
        h: args.h,
        ..CertificateConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let rpca = gradient_certificate(&oracle, &config, &mut rng)?;

    let quad = QuadraticOracle::random(spec.n, spec.num_agents, 1.0, 0.0, args.seed);
    let flat = Euclidean::new(spec.n);
    let mut quad_err = 0.0f64;
    for _ in 0..args.points {
        let x = riemannian_diffusion::Manifold::random_point(&flat, &mut rng);
        quad_err = quad_err.max(check_gradient(
            &flat,
            &PooledObjective(&quad),
            &x,
            args.directions,
            args.h,
            &mut rng,
        )?);
    }

    let mut pass = true;
    for (name, err) in [("robust-pca", rpca), ("quadratic", quad_err)] {
        let ok = err <= args.tol;
        pass &= ok;
        println!(
            "{name:<10} max relative error {err:.3e} (tolerance {:.0e}) {}",
            args.tol,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn topology(args: TopologyArgs) -> Result<ExitCode> {
    let graph = random_connected_graph(args.agents, args.edge_prob, args.seed)?;
    let top = args.graph.build(graph, args.seed)?;
    let text = serde_json::to_string_pretty(&top.to_document()).expect("topology serializes");
    match args.out {
        Some(path) => std::fs::write(&path, text + "\n")
            .map_err(|e| riemannian_diffusion::Error::io(&path, e))?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Topology(args) => topology(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
