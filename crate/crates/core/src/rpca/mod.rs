//! Robust PCA on the Grassmannian.
//!
//! Each agent seeks the subspace `U` maximizing `E Q_delta(|U^T x|)`, where
//! `Q_delta` is a Huber-type smoothing of the absolute value. The cost is
//! `-Q_delta(|U^T x|)` averaged over samples.

mod data;
pub mod mnist;

use std::sync::Arc;

use nalgebra::{DMatrix, DVectorView};
use rand::Rng;

use crate::diffusion::{CostOracle, PooledObjective};
use crate::error::{Error, Result};
use crate::grassmann::Grassmann;
use crate::manifold::{directional_error, Manifold, Point, Tangent};

pub use data::{
    export_dataset, import_dataset, inject_outliers, synth_data, AgentDataset, DatasetMetadata,
    SyntheticData, SyntheticSpec,
};
pub use mnist::{load_mnist, partition_mnist, MnistData};

pub const DEFAULT_DELTA: f64 = 0.1;

/// `p` for `p >= delta`, `p^2 / (2 delta) + delta / 2` below.
pub fn q_delta(p: f64, delta: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::contract(format!("Q_delta needs p >= 0, got {p}")));
    }
    Ok(q_unchecked(p, delta))
}

fn q_unchecked(p: f64, delta: f64) -> f64 {
    if p >= delta {
        p
    } else {
        p * p / (2.0 * delta) + delta / 2.0
    }
}

/// Neumaier summation. Plain summation of tens of thousands of losses is
/// too noisy for finite-difference gradient checks.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustPcaCost {
    delta: f64,
}

impl Default for RobustPcaCost {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

impl RobustPcaCost {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::contract(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `-Q_delta(|U^T x|)`.
    pub fn loss(&self, u: &DMatrix<f64>, x: DVectorView<f64>) -> f64 {
        -q_unchecked((u.tr_mul(&x)).norm(), self.delta)
    }

    /// `-x x^T U / max(|U^T x|, delta)`.
    pub fn euclid_grad(&self, u: &DMatrix<f64>, x: DVectorView<f64>) -> DMatrix<f64> {
        let ux = u.tr_mul(&x);
        let p = ux.norm();
        -(x * ux.transpose()) / p.max(self.delta)
    }

    pub fn stochastic_rgrad(
        &self,
        manifold: &Grassmann,
        w: &Point,
        x: DVectorView<f64>,
    ) -> Result<Tangent> {
        manifold.egrad_to_rgrad(w, &self.euclid_grad(w.coords(), x))
    }

    /// Mean loss over the columns of `data`.
    pub fn batch_cost(&self, u: &DMatrix<f64>, data: &DMatrix<f64>) -> f64 {
        let proj = u.tr_mul(data);
        let total = compensated_sum(
            proj.column_iter()
                .map(|c| q_unchecked(c.norm(), self.delta)),
        );
        -total / data.ncols() as f64
    }

    /// Mean Euclidean gradient over the columns of `data`.
    pub fn batch_euclid_grad(&self, u: &DMatrix<f64>, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut weighted = u.tr_mul(data).transpose();
        for mut row in weighted.row_iter_mut() {
            let scale = 1.0 / row.norm().max(self.delta);
            row *= scale;
        }
        -(data * weighted) / data.ncols() as f64
    }
}

/// The robust-PCA cost over a per-agent dataset.
#[derive(Clone, Debug)]
pub struct RobustPcaOracle {
    manifold: Grassmann,
    cost: RobustPcaCost,
    dataset: Arc<AgentDataset>,
    pooled: DMatrix<f64>,
}

impl RobustPcaOracle {
    pub fn new(
        manifold: Grassmann,
        cost: RobustPcaCost,
        dataset: Arc<AgentDataset>,
    ) -> Result<Self> {
        if dataset.dim() != manifold.n() {
            return Err(Error::contract(format!(
                "dataset has dimension {}, manifold ambient dimension {}",
                dataset.dim(),
                manifold.n()
            )));
        }
        let pooled = dataset.pooled();
        Ok(Self {
            manifold,
            cost,
            dataset,
            pooled,
        })
    }

    pub fn dataset(&self) -> &AgentDataset {
        &self.dataset
    }

    pub fn cost(&self) -> &RobustPcaCost {
        &self.cost
    }
}

impl CostOracle for RobustPcaOracle {
    fn num_agents(&self) -> usize {
        self.dataset.num_agents()
    }

    fn stochastic_rgrad(&self, agent: usize, t: usize, w: &Point) -> Result<Tangent> {
        let x = self.dataset.sample(agent, t)?;
        self.cost.stochastic_rgrad(&self.manifold, w, x)
    }

    fn local_cost(&self, agent: usize, w: &Point) -> Result<f64> {
        Ok(self
            .cost
            .batch_cost(w.coords(), self.dataset.agent_samples(agent)?))
    }

    fn local_rgrad(&self, agent: usize, w: &Point) -> Result<Tangent> {
        let g = self
            .cost
            .batch_euclid_grad(w.coords(), self.dataset.agent_samples(agent)?);
        self.manifold.egrad_to_rgrad(w, &g)
    }

    fn batch_cost(&self, w: &Point) -> Result<f64> {
        self.manifold.check_point(w)?;
        Ok(self.cost.batch_cost(w.coords(), &self.pooled))
    }

    fn batch_rgrad(&self, w: &Point) -> Result<Tangent> {
        self.manifold.check_point(w)?;
        let g = self.cost.batch_euclid_grad(w.coords(), &self.pooled);
        self.manifold.egrad_to_rgrad(w, &g)
    }
}

/// Finite-difference check of the pooled robust-PCA gradient.
#[derive(Clone, Copy, Debug)]
pub struct CertificateConfig {
    pub points: usize,
    pub directions: usize,
    pub h: f64,
    /// Points with a sample this close to the kink `|U^T x| = delta` are
    /// redrawn.
    pub kink_margin: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            points: 10,
            directions: 20,
            h: 1e-6,
            kink_margin: 1e-4,
        }
    }
}

/// Largest relative finite-difference error of the pooled gradient over
/// random points and directions.
pub fn gradient_certificate<R: Rng>(
    oracle: &RobustPcaOracle,
    config: &CertificateConfig,
    rng: &mut R,
) -> Result<f64> {
    let manifold = oracle.manifold;
    let delta = oracle.cost.delta();
    let objective = PooledObjective(oracle);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < config.points {
        attempts += 1;
        if attempts > 1000 * config.points {
            return Err(Error::domain("no point found away from the Huber kink"));
        }
        let x = manifold.random_point(rng);
        let near_kink = x
            .coords()
            .tr_mul(&oracle.pooled)
            .column_iter()
            .any(|c| (c.norm() - delta).abs() < config.kink_margin);
        if near_kink {
            continue;
        }
        accepted += 1;
        let grad = objective.0.batch_rgrad(&x)?;
        for _ in 0..config.directions {
            let v = manifold.random_unit_tangent(&x, rng)?;
            worst = worst.max(directional_error(
                &manifold, &objective, &x, &grad, &v, config.h,
            )?);
        }
    }
    Ok(worst)
}
