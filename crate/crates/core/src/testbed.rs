//! Small cost oracles with known solutions, used by tests and the
//! `euclid-quadratic` and `agreement` presets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::CostOracle;
use crate::error::{Error, Result};
use crate::grassmann::Grassmann;
use crate::manifold::{Manifold, Point, Tangent};
use crate::seed::{self, label};

/// `J_k(w) = 1/2 sum_i a_ki (w_i - b_ki)^2` on flat space, with additive
/// Gaussian gradient noise.
#[derive(Clone, Debug)]
pub struct QuadraticOracle {
    curvatures: Vec<DVector<f64>>,
    centers: Vec<DVector<f64>>,
    noise: f64,
    seed: u64,
}

impl QuadraticOracle {
    pub fn new(
        curvatures: Vec<DVector<f64>>,
        centers: Vec<DVector<f64>>,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if curvatures.is_empty() || curvatures.len() != centers.len() {
            return Err(Error::contract(
                "need one curvature and one centre per agent",
            ));
        }
        let dim = centers[0].len();
        for (a, b) in curvatures.iter().zip(&centers) {
            if a.len() != dim || b.len() != dim {
                return Err(Error::contract("all agents must share the dimension"));
            }
            if a.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::contract("curvatures must be positive"));
            }
        }
        if !(noise >= 0.0) {
            return Err(Error::contract(format!(
                "noise level must be nonnegative, got {noise}"
            )));
        }
        Ok(Self {
            curvatures,
            centers,
            noise,
            seed,
        })
    }

    /// Curvatures uniform on `[0.5, 1.5]`, centres uniform on
    /// `[-spread, spread]`.
    pub fn random(dim: usize, num_agents: usize, spread: f64, noise: f64, seed: u64) -> Self {
        let mut rng = seed::stream(seed, &[label::PROBLEM]);
        let curvatures = (0..num_agents)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(0.5..=1.5)))
            .collect();
        let centers = (0..num_agents)
            .map(|_| DVector::from_fn(dim, |_, _| spread * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        Self::new(curvatures, centers, noise, seed).expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Minimizer of agent `agent`'s cost, as an `n x 1` matrix.
    pub fn center(&self, agent: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim(), 1, self.centers[agent].as_slice())
    }

    /// Minimizer of the averaged cost.
    pub fn minimizer(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, 1, |i, _| {
            let num: f64 = self
                .curvatures
                .iter()
                .zip(&self.centers)
                .map(|(a, b)| a[i] * b[i])
                .sum();
            let den: f64 = self.curvatures.iter().map(|a| a[i]).sum();
            num / den
        })
    }

    fn check(&self, agent: usize, w: &Point) -> Result<()> {
        if agent >= self.centers.len() {
            return Err(Error::contract(format!("agent {agent} out of range")));
        }
        if w.shape() != (self.dim(), 1) {
            return Err(Error::contract(format!("point has shape {:?}", w.shape())));
        }
        Ok(())
    }

    fn grad_matrix(&self, agent: usize, w: &Point) -> DMatrix<f64> {
        let (a, b) = (&self.curvatures[agent], &self.centers[agent]);
        DMatrix::from_fn(self.dim(), 1, |i, _| a[i] * (w.coords()[i] - b[i]))
    }
}

impl CostOracle for QuadraticOracle {
    fn num_agents(&self) -> usize {
        self.centers.len()
    }

    fn stochastic_rgrad(&self, agent: usize, t: usize, w: &Point) -> Result<Tangent> {
        self.check(agent, w)?;
        let mut g = self.grad_matrix(agent, w);
        if self.noise > 0.0 {
            let mut rng = seed::stream(self.seed, &[label::NOISE, agent as u64, t as u64]);
            for v in g.iter_mut() {
                *v += self.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Tangent::new(w.clone(), g)
    }

    fn local_cost(&self, agent: usize, w: &Point) -> Result<f64> {
        self.check(agent, w)?;
        let (a, b) = (&self.curvatures[agent], &self.centers[agent]);
        Ok(0.5
            * (0..self.dim())
                .map(|i| a[i] * (w.coords()[i] - b[i]).powi(2))
                .sum::<f64>())
    }

    fn local_rgrad(&self, agent: usize, w: &Point) -> Result<Tangent> {
        self.check(agent, w)?;
        Tangent::new(w.clone(), self.grad_matrix(agent, w))
    }

    fn batch_cost(&self, w: &Point) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.num_agents() {
            total += self.local_cost(k, w)?;
        }
        Ok(total / self.num_agents() as f64)
    }

    fn batch_rgrad(&self, w: &Point) -> Result<Tangent> {
        self.check(0, w)?;
        let mut g = DMatrix::zeros(self.dim(), 1);
        for k in 0..self.num_agents() {
            g += self.grad_matrix(k, w);
        }
        Tangent::new(w.clone(), g / self.num_agents() as f64)
    }

    fn local_minimum(&self, _agent: usize) -> Option<f64> {
        Some(0.0)
    }
}

/// Zero cost everywhere. Diffusion then reduces to pure agreement.
#[derive(Clone, Copy, Debug)]
pub struct ZeroOracle {
    num_agents: usize,
}

impl ZeroOracle {
    pub fn new(num_agents: usize) -> Self {
        Self { num_agents }
    }
}

impl CostOracle for ZeroOracle {
    fn num_agents(&self) -> usize {
        self.num_agents
    }
    fn stochastic_rgrad(&self, _: usize, _: usize, w: &Point) -> Result<Tangent> {
        Ok(Tangent::zero(w))
    }
    fn local_cost(&self, _: usize, _: &Point) -> Result<f64> {
        Ok(0.0)
    }
    fn local_rgrad(&self, _: usize, w: &Point) -> Result<Tangent> {
        Ok(Tangent::zero(w))
    }
    fn batch_cost(&self, _: &Point) -> Result<f64> {
        Ok(0.0)
    }
    fn batch_rgrad(&self, w: &Point) -> Result<Tangent> {
        Ok(Tangent::zero(w))
    }
    fn local_minimum(&self, _: usize) -> Option<f64> {
        Some(0.0)
    }
}

/// `J_k(U) = -1/2 tr(U^T A_k U)` on the Grassmannian with random PSD `A_k`.
/// The pooled minimizer spans the top eigenvectors of the mean `A_k`.
#[derive(Clone, Debug)]
pub struct RayleighOracle {
    manifold: Grassmann,
    matrices: Vec<DMatrix<f64>>,
    noise: f64,
    seed: u64,
}

impl RayleighOracle {
    pub fn random(n: usize, p: usize, num_agents: usize, noise: f64, seed: u64) -> Self {
        let mut rng = seed::stream(seed, &[label::PROBLEM]);
        let matrices = (0..num_agents)
            .map(|_| {
                let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                &b * b.transpose() / n as f64
            })
            .collect();
        Self {
            manifold: Grassmann::new(n, p).expect("valid dimensions"),
            matrices,
            noise,
            seed,
        }
    }

    fn egrad(&self, agent: usize, w: &Point) -> DMatrix<f64> {
        -(&self.matrices[agent] * w.coords())
    }

    fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.manifold.n();
        self.matrices
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, a| acc + a)
            / self.matrices.len() as f64
    }
}

impl CostOracle for RayleighOracle {
    fn num_agents(&self) -> usize {
        self.matrices.len()
    }

    fn stochastic_rgrad(&self, agent: usize, t: usize, w: &Point) -> Result<Tangent> {
        let mut g = self.egrad(agent, w);
        if self.noise > 0.0 {
            let mut rng = seed::stream(self.seed, &[label::NOISE, agent as u64, t as u64]);
            for v in g.iter_mut() {
                *v += self.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.manifold.egrad_to_rgrad(w, &g)
    }

    fn local_cost(&self, agent: usize, w: &Point) -> Result<f64> {
        let u = w.coords();
        Ok(-0.5 * (u.transpose() * &self.matrices[agent] * u).trace())
    }

    fn local_rgrad(&self, agent: usize, w: &Point) -> Result<Tangent> {
        self.manifold.egrad_to_rgrad(w, &self.egrad(agent, w))
    }

    fn batch_cost(&self, w: &Point) -> Result<f64> {
        let u = w.coords();
        Ok(-0.5 * (u.transpose() * self.mean_matrix() * u).trace())
    }

    fn batch_rgrad(&self, w: &Point) -> Result<Tangent> {
        self.manifold
            .egrad_to_rgrad(w, &-(self.mean_matrix() * w.coords()))
    }
}
