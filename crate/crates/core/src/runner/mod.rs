//! Monte Carlo experiments: configuration, orchestration and output files.
//!
//! Every run `r` derives its randomness from `(seed, r)` alone, so results do
//! not depend on the number of worker threads or on completion order.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{
    run_diffusion, run_noncooperative, solve_reference, CostOracle, MetricHooks, PooledObjective,
    ReferenceConfig, StepSizes,
};
use crate::error::{Error, Result};
use crate::grassmann::Grassmann;
use crate::manifold::{Euclidean, Manifold, Point};
use crate::metrics::MetricTrace;
use crate::network::{random_connected_graph, NetworkTopology};
use crate::rpca::{
    inject_outliers, load_mnist, partition_mnist, synth_data, RobustPcaCost, RobustPcaOracle,
    SyntheticSpec,
};
use crate::seed::{self, label};
use crate::testbed::{QuadraticOracle, ZeroOracle};

pub use config::{ExperimentConfig, ExperimentKind, InitMode, MetricName, Preset};
pub use output::{
    read_trace_csv, summarize, trace_rows, write_json, write_summary_csv, write_trace_csv,
    SummaryRow, TraceRow, SUMMARY_HEADER, TRACE_HEADER,
};

pub const DIFFUSION: &str = "diffusion";
pub const NONCOOPERATIVE: &str = "noncooperative";

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "RD_THREADS";

#[derive(Debug)]
pub struct RunFailure {
    pub run: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Trace rows of the successful runs, ordered by `(run, algorithm, t)`.
    pub rows: Vec<TraceRow>,
    /// Means over the successful runs.
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
    /// Topology shared by all runs, or that of run 0 when redrawn per run.
    pub topology: Arc<NetworkTopology>,
}

/// Builds the random graph and weights for a seed.
pub fn build_topology(config: &ExperimentConfig, seed: u64) -> Result<NetworkTopology> {
    let graph = random_connected_graph(
        config.agents,
        config.edge_prob,
        seed::derive_seed(seed, &[label::TOPOLOGY]),
    )?;
    config
        .graph
        .build(graph, seed::derive_seed(seed, &[label::WEIGHTS]))
}

fn thread_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                warn!("ignoring {THREADS_VAR}={v:?}");
                available
            }
        },
        Err(_) => available,
    }
}

/// Data shared read-only by all runs.
struct Shared {
    topology: Arc<NetworkTopology>,
    mnist: Option<Arc<DMatrix<f64>>>,
}

struct Problem {
    manifold: Box<dyn Manifold>,
    oracle: Box<dyn CostOracle + Send>,
}

fn build_problem(config: &ExperimentConfig, shared: &Shared, run_seed: u64) -> Result<Problem> {
    let grassmann = || Grassmann::new(config.n, config.p);
    Ok(match config.experiment {
        ExperimentKind::SyntheticRpca => {
            let spec = SyntheticSpec {
                n: config.n,
                p: config.p,
                num_agents: config.agents,
                horizon: config.horizon,
                spectrum: config.spectrum,
                outliers: config.outliers,
            };
            let mut clean = synth_data(&spec, run_seed)?.dataset;
            if config.data_scale != 1.0 {
                clean = clean.scaled(config.data_scale);
            }
            let dataset = inject_outliers(clean, config.outliers, run_seed)?;
            let manifold = grassmann()?;
            let oracle = RobustPcaOracle::new(
                manifold,
                RobustPcaCost::new(config.delta)?,
                Arc::new(dataset),
            )?;
            Problem {
                manifold: Box::new(manifold),
                oracle: Box::new(oracle),
            }
        }
        ExperimentKind::MnistRpca => {
            let pixels = shared
                .mnist
                .as_ref()
                .expect("MNIST loaded for MNIST experiments");
            let dataset = partition_mnist(pixels, config.agents, run_seed)?;
            let manifold = grassmann()?;
            let oracle = RobustPcaOracle::new(
                manifold,
                RobustPcaCost::new(config.delta)?,
                Arc::new(dataset),
            )?;
            Problem {
                manifold: Box::new(manifold),
                oracle: Box::new(oracle),
            }
        }
        ExperimentKind::EuclidQuadratic => Problem {
            manifold: Box::new(Euclidean::new(config.n)),
            oracle: Box::new(QuadraticOracle::random(
                config.n,
                config.agents,
                1.0,
                config.noise,
                run_seed,
            )),
        },
        ExperimentKind::AgreementOnly => Problem {
            manifold: Box::new(grassmann()?),
            oracle: Box::new(ZeroOracle::new(config.agents)),
        },
    })
}

fn initial_points(
    config: &ExperimentConfig,
    manifold: &dyn Manifold,
    run_seed: u64,
) -> Result<Vec<Point>> {
    let mut rng = seed::stream(run_seed, &[label::INIT]);
    let base = manifold.random_point(&mut rng);
    match config.init_mode {
        InitMode::Shared => Ok(vec![base; config.agents]),
        InitMode::PerAgent => {
            let radius = config.init_spread.min(0.5 * manifold.injectivity_bound());
            (0..config.agents)
                .map(|_| {
                    let r = radius * rng.random::<f64>();
                    let v = manifold.random_unit_tangent(&base, &mut rng)?;
                    manifold.exp(&base, &v.scale(r))
                })
                .collect()
        }
    }
}

/// Diffusion and non-cooperative traces of Monte Carlo run `run`.
pub fn run_single(
    config: &ExperimentConfig,
    run: usize,
    topology: Option<&Arc<NetworkTopology>>,
) -> Result<(MetricTrace, MetricTrace)> {
    let shared = prepare(config)?;
    let topology = topology.cloned().unwrap_or(shared.topology.clone());
    run_with(config, &Shared { topology, ..shared }, run)
}

fn run_with(
    config: &ExperimentConfig,
    shared: &Shared,
    run: usize,
) -> Result<(MetricTrace, MetricTrace)> {
    let run_seed = seed::derive_seed(config.seed, &[run as u64]);
    let topology = if config.redraw_topology {
        Arc::new(build_topology(config, run_seed)?)
    } else {
        shared.topology.clone()
    };
    let Problem { manifold, oracle } = build_problem(config, shared, run_seed)?;
    let manifold = manifold.as_ref();
    let oracle = oracle.as_ref();
    let init = initial_points(config, manifold, run_seed)?;

    let reference = if config.wants(MetricName::Msd) {
        let sol = solve_reference(
            manifold,
            &PooledObjective(oracle),
            &init[0],
            &ReferenceConfig::default(),
        )?;
        if !sol.converged {
            warn!(
                "run {run}: reference gradient norm {:e} after {} iterations",
                sol.grad_norm, sol.iterations
            );
        }
        Some(sol.point)
    } else {
        None
    };
    let hooks = MetricHooks {
        reference,
        frechet_variance: config.wants(MetricName::FrechetVariance),
        consensus_bias: config
            .wants(MetricName::ConsensusBias)
            .then(|| topology.clone()),
        cost: config.wants(MetricName::Cost),
        grad_norm_sq: config.wants(MetricName::GradNormSq),
        diameter: None,
    };
    let steps = StepSizes::new(config.mu, config.alpha)?;
    let diffusion = run_diffusion(
        manifold,
        oracle,
        &topology,
        init.clone(),
        steps,
        config.horizon,
        &hooks,
    )?;
    let noncoop = run_noncooperative(manifold, oracle, init, config.mu, config.horizon, &hooks)?;
    Ok((diffusion.trace, noncoop.trace))
}

fn prepare(config: &ExperimentConfig) -> Result<Shared> {
    config.validate()?;
    let topology = Arc::new(build_topology(config, config.seed)?);
    let mnist = match config.experiment {
        ExperimentKind::MnistRpca => {
            let images = config.mnist_images.as_deref().expect("validated");
            let data = load_mnist(images, config.mnist_labels.as_deref())?;
            if data.pixels.nrows() != config.n {
                return Err(Error::config(
                    "n",
                    format!(
                        "images have {} pixels, config says n = {}",
                        data.pixels.nrows(),
                        config.n
                    ),
                ));
            }
            Some(Arc::new(data.pixels))
        }
        _ => None,
    };
    Ok(Shared { topology, mnist })
}

/// Runs all Monte Carlo runs in memory. Failed runs are collected rather
/// than aborting the experiment.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let shared = prepare(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Data(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(MetricTrace, MetricTrace)>> = pool.install(|| {
        (0..config.mc_runs)
            .into_par_iter()
            .map(|run| run_with(config, &shared, run))
            .collect()
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (run, result) in results.into_iter().enumerate() {
        match result {
            Ok(pair) => traces.push((run, pair)),
            Err(error) => {
                warn!("run {run} failed: {error}");
                failures.push(RunFailure { run, error });
            }
        }
    }
    let rows = trace_rows(
        traces
            .iter()
            .flat_map(|(run, (d, n))| [(*run, DIFFUSION, d), (*run, NONCOOPERATIVE, n)]),
    );
    let summary = summarize(&rows);
    let topology = if config.redraw_topology {
        Arc::new(build_topology(
            config,
            seed::derive_seed(config.seed, &[0]),
        )?)
    } else {
        shared.topology
    };
    Ok(ExperimentOutcome {
        rows,
        summary,
        failures,
        topology,
    })
}

/// Writes `trace.csv`, `summary.csv`, `topology.json`, `config.json` and
/// `failures.log` into `dir`.
pub fn write_outputs(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(config, &dir.join("config.json"))?;
    write_json(&outcome.topology.to_document(), &dir.join("topology.json"))?;
    if !outcome.rows.is_empty() {
        write_trace_csv(&outcome.rows, &dir.join("trace.csv"))?;
    }
    write_summary_csv(&outcome.summary, &dir.join("summary.csv"))?;
    let mut log = String::new();
    for f in &outcome.failures {
        writeln!(log, "run {}: {}", f.run, f.error).expect("writing to a String");
    }
    let path = dir.join("failures.log");
    std::fs::write(&path, log).map_err(|e| Error::io(&path, e))
}

/// [`execute`] followed by [`write_outputs`] into `config.output_path`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    info!(
        "{:?}: {} runs of {} rounds, K = {}, mu = {}, alpha = {}",
        config.experiment, config.mc_runs, config.horizon, config.agents, config.mu, config.alpha
    );
    let outcome = execute(config)?;
    write_outputs(config, &outcome, &config.output_path)?;
    Ok(outcome)
}
