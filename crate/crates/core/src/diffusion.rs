//! Riemannian diffusion adaptation and its baselines.
//!
//! One synchronous round:
//!
//! ```text
//! phi_k = exp_{w_k}(-mu * g_k)                               (adaptation)
//! w_k   = exp_{phi_k}(alpha * sum_l c_lk * log_{phi_k}(phi_l)) (combination)
//! ```
//!
//! where `g_k` is agent `k`'s stochastic Riemannian gradient for the round.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::manifold::{zeta_constants, CurvatureProfile, Manifold, Objective, Point, Tangent};
use crate::metrics::{
    self, consensus_bias, frechet_mean_from, max_pairwise_distance, stacked_grad_norm_sq,
    sum_squared_distances, MetricRecord, MetricTrace,
};
use crate::network::NetworkTopology;

/// Per-agent gradient and cost provider.
///
/// `stochastic_rgrad` must be a deterministic function of its arguments and
/// of whatever seed the oracle was built with.
pub trait CostOracle: Sync {
    fn num_agents(&self) -> usize;

    /// Gradient from agent `agent`'s realization for round `t` (1-based).
    fn stochastic_rgrad(&self, agent: usize, t: usize, w: &Point) -> Result<Tangent>;

    /// Local cost `J_k(w)`.
    fn local_cost(&self, agent: usize, w: &Point) -> Result<f64>;

    fn local_rgrad(&self, agent: usize, w: &Point) -> Result<Tangent>;

    /// Cost on the data of all agents pooled together.
    fn batch_cost(&self, w: &Point) -> Result<f64>;

    fn batch_rgrad(&self, w: &Point) -> Result<Tangent>;

    /// `J_k` at its own minimizer, when known in closed form.
    fn local_minimum(&self, _agent: usize) -> Option<f64> {
        None
    }
}

/// The pooled cost of an oracle as an [`Objective`].
pub struct PooledObjective<'a, O: ?Sized>(pub &'a O);

impl<O: CostOracle + ?Sized> Objective for PooledObjective<'_, O> {
    fn cost(&self, x: &Point) -> Result<f64> {
        self.0.batch_cost(x)
    }
    fn rgrad(&self, x: &Point) -> Result<Tangent> {
        self.0.batch_rgrad(x)
    }
}

/// One agent's local cost as an [`Objective`].
pub struct LocalObjective<'a, O: ?Sized> {
    pub oracle: &'a O,
    pub agent: usize,
}

impl<O: CostOracle + ?Sized> Objective for LocalObjective<'_, O> {
    fn cost(&self, x: &Point) -> Result<f64> {
        self.oracle.local_cost(self.agent, x)
    }
    fn rgrad(&self, x: &Point) -> Result<Tangent> {
        self.oracle.local_rgrad(self.agent, x)
    }
}

/// Adaptation step size `mu` and combination step size `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub mu: f64,
    pub alpha: f64,
}

impl StepSizes {
    /// `alpha = 0` is accepted and turns the combination step into a no-op.
    pub fn new(mu: f64, alpha: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::contract(format!("mu must be positive, got {mu}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::contract(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self { mu, alpha })
    }

    /// Warning text when `alpha` falls outside `(0, zeta2/zeta1)` for the
    /// given curvature profile.
    pub fn admissibility_warning(&self, profile: &CurvatureProfile) -> Option<String> {
        match zeta_constants(profile) {
            Ok((z1, z2)) if self.alpha > 0.0 && self.alpha < z2 / z1 => None,
            Ok((z1, z2)) => Some(format!(
                "alpha = {} outside the contraction range (0, {})",
                self.alpha,
                z2 / z1
            )),
            Err(e) => Some(format!("curvature profile unusable for diagnostics: {e}")),
        }
    }
}

/// Iterates of all agents after one round.
#[derive(Clone, Debug)]
pub struct AgentNetworkState {
    /// Combined iterates `w_{k,t}`.
    pub w: Vec<Point>,
    /// Intermediate iterates `phi_{k,t}`.
    pub phi: Vec<Point>,
}

impl AgentNetworkState {
    pub fn num_agents(&self) -> usize {
        self.w.len()
    }
}

/// Which metrics to record every round.
#[derive(Clone, Debug, Default)]
pub struct MetricHooks {
    /// Reference point for the MSD.
    pub reference: Option<Point>,
    pub frechet_variance: bool,
    /// Weights used for the consensus bias of the intermediate iterates.
    pub consensus_bias: Option<Arc<NetworkTopology>>,
    /// Network cost `(1/K) sum_k J_k(w_k)`.
    pub cost: bool,
    /// `(1/K^2) sum_k |grad J_k(w_k)|^2`.
    pub grad_norm_sq: bool,
    /// Warn when two agents drift further apart than this.
    pub diameter: Option<f64>,
}

impl MetricHooks {
    fn wants_anything(&self) -> bool {
        self.reference.is_some()
            || self.frechet_variance
            || self.consensus_bias.is_some()
            || self.cost
            || self.grad_norm_sq
    }
}

/// Final iterates and the per-round metrics of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: MetricTrace,
    pub state: AgentNetworkState,
}

/// `phi_k = exp_{w_k}(-mu * g_k)` for every agent, with round-`t` gradients.
pub fn adapt_step<M, O>(
    manifold: &M,
    oracle: &O,
    w: &[Point],
    mu: f64,
    t: usize,
) -> Result<Vec<Point>>
where
    M: Manifold + ?Sized,
    O: CostOracle + ?Sized,
{
    w.iter()
        .enumerate()
        .map(|(k, wk)| {
            let g = oracle
                .stochastic_rgrad(k, t, wk)
                .map_err(|e| e.at_agent(k))?;
            manifold.exp(wk, &g.scale(-mu)).map_err(|e| e.at_agent(k))
        })
        .collect()
}

/// `w_k = exp_{phi_k}(alpha * sum_l c_lk log_{phi_k}(phi_l))` for every agent.
pub fn combine_step<M>(
    manifold: &M,
    phi: &[Point],
    topology: &NetworkTopology,
    alpha: f64,
) -> Result<Vec<Point>>
where
    M: Manifold + ?Sized,
{
    let k_agents = topology.num_agents();
    if phi.len() != k_agents {
        return Err(Error::contract(format!(
            "{} iterates for a network of {k_agents} agents",
            phi.len()
        )));
    }
    if alpha == 0.0 {
        return Ok(phi.to_vec());
    }
    (0..k_agents)
        .map(|k| {
            let mut avg = Tangent::zero(&phi[k]);
            for (l, phi_l) in phi.iter().enumerate() {
                let c = topology.weight(l, k);
                if l == k || c == 0.0 {
                    continue;
                }
                let v = manifold.log(&phi[k], phi_l).map_err(|e| Error::AgentPair {
                    from: l,
                    to: k,
                    source: Box::new(e),
                })?;
                avg.axpy(c, &v)?;
            }
            manifold
                .exp(&phi[k], &avg.scale(alpha))
                .map_err(|e| e.at_agent(k))
        })
        .collect()
}

struct Recorder<'a, M: ?Sized, O: ?Sized> {
    manifold: &'a M,
    oracle: &'a O,
    hooks: &'a MetricHooks,
    warm_mean: Option<Point>,
}

impl<M: Manifold + ?Sized, O: CostOracle + ?Sized> Recorder<'_, M, O> {
    fn record(&mut self, t: usize, state: &AgentNetworkState) -> Result<MetricRecord> {
        let hooks = self.hooks;
        let mut rec = MetricRecord {
            t,
            ..Default::default()
        };
        if let Some(reference) = &hooks.reference {
            rec.msd = Some(metrics::msd(self.manifold, &state.w, reference)?);
        }
        if hooks.frechet_variance {
            let init = self.warm_mean.take().unwrap_or_else(|| state.w[0].clone());
            let mean = frechet_mean_from(
                self.manifold,
                &state.w,
                &init,
                metrics::FRECHET_TOL,
                metrics::FRECHET_MAX_ITER,
            )?;
            rec.frechet_variance = Some(sum_squared_distances(self.manifold, &state.w, &mean)?);
            self.warm_mean = Some(mean);
        }
        if let Some(top) = &hooks.consensus_bias {
            rec.consensus_bias = Some(consensus_bias(self.manifold, &state.phi, top)?);
        }
        if hooks.cost {
            let mut total = 0.0;
            for (k, wk) in state.w.iter().enumerate() {
                total += self.oracle.local_cost(k, wk).map_err(|e| e.at_agent(k))?;
            }
            rec.cost = Some(total / state.w.len() as f64);
        }
        if hooks.grad_norm_sq {
            let grads = state
                .w
                .iter()
                .enumerate()
                .map(|(k, wk)| self.oracle.local_rgrad(k, wk).map_err(|e| e.at_agent(k)))
                .collect::<Result<Vec<_>>>()?;
            rec.grad_norm_sq = Some(stacked_grad_norm_sq(&grads)?);
        }
        if let Some(diameter) = hooks.diameter {
            let spread = max_pairwise_distance(self.manifold, &state.w)?;
            if spread > diameter {
                warn!(
                    "round {t}: agents {spread} apart, beyond the configured diameter {diameter}"
                );
            }
        }
        Ok(rec)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_rounds<M, O, F>(
    manifold: &M,
    oracle: &O,
    combination: Option<(&NetworkTopology, f64)>,
    mu: f64,
    init: Vec<Point>,
    horizon: usize,
    hooks: &MetricHooks,
    mut observer: F,
) -> Result<RunOutput>
where
    M: Manifold + ?Sized,
    O: CostOracle + ?Sized,
    F: FnMut(usize, &AgentNetworkState) -> Result<()>,
{
    if horizon == 0 {
        return Err(Error::contract("horizon must be at least one round"));
    }
    if init.len() != oracle.num_agents() {
        return Err(Error::contract(format!(
            "{} initial points for {} agents",
            init.len(),
            oracle.num_agents()
        )));
    }
    for x in &init {
        manifold.check_point(x)?;
    }
    let mut recorder = Recorder {
        manifold,
        oracle,
        hooks,
        warm_mean: None,
    };
    let mut trace = MetricTrace::new();
    let mut state = AgentNetworkState {
        phi: init.clone(),
        w: init,
    };
    for t in 1..=horizon {
        let round = || -> Result<AgentNetworkState> {
            let phi = adapt_step(manifold, oracle, &state.w, mu, t)?;
            let w = match combination {
                Some((top, alpha)) => combine_step(manifold, &phi, top, alpha)?,
                None => phi.clone(),
            };
            Ok(AgentNetworkState { w, phi })
        };
        state = round().map_err(|e| e.at_round(t))?;
        observer(t, &state).map_err(|e| e.at_round(t))?;
        if hooks.wants_anything() {
            let rec = recorder.record(t, &state).map_err(|e| e.at_round(t))?;
            trace.push(rec)?;
        }
    }
    Ok(RunOutput { trace, state })
}

/// Runs `horizon` synchronous rounds of diffusion adaptation.
pub fn run_diffusion<M, O>(
    manifold: &M,
    oracle: &O,
    topology: &NetworkTopology,
    init: Vec<Point>,
    steps: StepSizes,
    horizon: usize,
    hooks: &MetricHooks,
) -> Result<RunOutput>
where
    M: Manifold + ?Sized,
    O: CostOracle + ?Sized,
{
    run_diffusion_observed(
        manifold,
        oracle,
        topology,
        init,
        steps,
        horizon,
        hooks,
        |_, _| Ok(()),
    )
}

/// As [`run_diffusion`], calling `observer` with the state after each round.
#[allow(clippy::too_many_arguments)]
pub fn run_diffusion_observed<M, O, F>(
    manifold: &M,
    oracle: &O,
    topology: &NetworkTopology,
    init: Vec<Point>,
    steps: StepSizes,
    horizon: usize,
    hooks: &MetricHooks,
    observer: F,
) -> Result<RunOutput>
where
    M: Manifold + ?Sized,
    O: CostOracle + ?Sized,
    F: FnMut(usize, &AgentNetworkState) -> Result<()>,
{
    if topology.num_agents() != oracle.num_agents() {
        return Err(Error::contract(format!(
            "topology has {} agents, oracle {}",
            topology.num_agents(),
            oracle.num_agents()
        )));
    }
    let (kmin, kmax) = manifold.curvature_bounds();
    if let Some(diameter) = hooks.diameter {
        if let Ok(profile) = CurvatureProfile::new(kmin, kmax, diameter) {
            if let Some(msg) = steps.admissibility_warning(&profile) {
                warn!("{msg}");
            }
        }
    }
    run_rounds(
        manifold,
        oracle,
        Some((topology, steps.alpha)),
        steps.mu,
        init,
        horizon,
        hooks,
        observer,
    )
}

/// Every agent runs Riemannian SGD on its own data; no combination.
pub fn run_noncooperative<M, O>(
    manifold: &M,
    oracle: &O,
    init: Vec<Point>,
    mu: f64,
    horizon: usize,
    hooks: &MetricHooks,
) -> Result<RunOutput>
where
    M: Manifold + ?Sized,
    O: CostOracle + ?Sized,
{
    StepSizes::new(mu, 0.0)?;
    run_rounds(manifold, oracle, None, mu, init, horizon, hooks, |_, _| {
        Ok(())
    })
}

/// Settings of the full-batch reference solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceConfig {
    pub initial_step: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            grad_tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub point: Point,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before `grad_tol` was met.
    pub converged: bool,
}

const MAX_HALVINGS: usize = 60;
const MAX_CONSECUTIVE_INCREASES: usize = 20;
const ARMIJO: f64 = 1e-4;
/// Relative cost change below which costs are treated as equal.
const COST_RESOLUTION: f64 = 1e-12;

/// `<s, s> / <s, y>` with `s` the last step and `y` the gradient change, both
/// carried to the new point. `None` when the curvature estimate is unusable.
fn barzilai_borwein<M: Manifold + ?Sized>(
    manifold: &M,
    from: &Point,
    to: &Point,
    grad_from: &Tangent,
    grad_to: &Tangent,
    step: f64,
) -> Option<f64> {
    let moved = manifold.transport(from, to, grad_from).ok()?;
    let s = moved.scale(-step);
    let mut y = grad_to.clone();
    y.axpy(-1.0, &moved).ok()?;
    let sy = s.dot(&y).ok()?;
    let bb = s.dot(&s).ok()? / sy;
    (sy > 0.0 && bb.is_finite()).then_some(bb)
}

/// Full-batch Riemannian gradient descent with backtracking.
///
/// The first trial step is `initial_step`, later ones the Barzilai-Borwein
/// estimate from the previous step (twice the previous step when that
/// estimate is unusable). The trial is halved until the Armijo condition
/// holds. Once cost differences drop below rounding level, a step is accepted
/// if it reduces the gradient norm instead. If no halving helps, the smallest
/// step is taken anyway; twenty such increases in a row are reported as
/// divergence.
pub fn solve_reference<M, O>(
    manifold: &M,
    objective: &O,
    init: &Point,
    config: &ReferenceConfig,
) -> Result<ReferenceSolution>
where
    M: Manifold + ?Sized,
    O: Objective + ?Sized,
{
    manifold.check_point(init)?;
    let mut x = init.clone();
    let mut cost = objective.cost(&x)?;
    let mut grad = objective.rgrad(&x)?;
    let mut step = config.initial_step;
    let mut increases = 0;
    for iteration in 0..config.max_iter {
        let grad_norm = grad.norm();
        if grad_norm <= config.grad_tol {
            return Ok(ReferenceSolution {
                point: x,
                grad_norm,
                iterations: iteration,
                converged: true,
            });
        }
        let mut trial = step;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..MAX_HALVINGS {
            match manifold.exp(&x, &grad.scale(-trial)) {
                Ok(candidate) => {
                    let c = objective.cost(&candidate)?;
                    let sufficient = c <= cost - ARMIJO * trial * grad_norm * grad_norm;
                    let flat = (c - cost).abs() <= COST_RESOLUTION * cost.abs().max(1.0)
                        && objective.rgrad(&candidate)?.norm() < grad_norm;
                    if sufficient || flat {
                        accepted = Some((candidate, c));
                        break;
                    }
                    fallback = Some((candidate, c));
                }
                Err(e) if e.is_domain() => {}
                Err(e) => return Err(e),
            }
            trial *= 0.5;
        }
        let (next, next_cost, taken) = match accepted {
            Some((candidate, c)) => {
                increases = 0;
                (candidate, c, Some(trial))
            }
            None => {
                increases += 1;
                if increases >= MAX_CONSECUTIVE_INCREASES {
                    return Err(Error::Divergence { steps: increases });
                }
                let (candidate, c) = fallback
                    .ok_or_else(|| Error::domain("no admissible step along the gradient"))?;
                (candidate, c, None)
            }
        };
        let next_grad = objective.rgrad(&next)?;
        step = match taken {
            Some(t) => {
                barzilai_borwein(manifold, &x, &next, &grad, &next_grad, t).unwrap_or(2.0 * t)
            }
            None => config.initial_step,
        };
        x = next;
        cost = next_cost;
        grad = next_grad;
    }
    let grad_norm = grad.norm();
    let converged = grad_norm <= config.grad_tol;
    if !converged {
        warn!(
            "reference solver stopped after {} iterations with gradient norm {grad_norm:e}",
            config.max_iter
        );
    }
    Ok(ReferenceSolution {
        point: x,
        grad_norm,
        iterations: config.max_iter,
        converged,
    })
}
