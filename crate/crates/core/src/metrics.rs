//! Intrinsic network statistics: Fréchet mean and variance, consensus bias,
//! mean square deviation and the stacked gradient norm.

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};
use crate::network::NetworkTopology;

pub const FRECHET_TOL: f64 = 1e-10;
pub const FRECHET_MAX_ITER: usize = 200;

/// Karcher mean, started from the first point.
pub fn frechet_mean<M: Manifold + ?Sized>(
    manifold: &M,
    points: &[Point],
    tol: f64,
    max_iter: usize,
) -> Result<Point> {
    let first = points
        .first()
        .ok_or_else(|| Error::contract("Fréchet mean of an empty set"))?;
    frechet_mean_from(manifold, points, first, tol, max_iter)
}

/// Karcher iteration `m <- exp_m((1/K) sum_k log_m(w_k))` from `init`, until
/// the mean log has norm at most `tol`.
pub fn frechet_mean_from<M: Manifold + ?Sized>(
    manifold: &M,
    points: &[Point],
    init: &Point,
    tol: f64,
    max_iter: usize,
) -> Result<Point> {
    if points.is_empty() {
        return Err(Error::contract("Fréchet mean of an empty set"));
    }
    let mut mean = init.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let step = mean_log(manifold, &mean, points)?;
        residual = step.norm();
        if residual <= tol {
            return Ok(mean);
        }
        mean = manifold.exp(&mean, &step)?;
    }
    Err(Error::FrechetMean {
        iterations: max_iter,
        residual,
        last: Box::new(mean),
    })
}

fn mean_log<M: Manifold + ?Sized>(manifold: &M, at: &Point, points: &[Point]) -> Result<Tangent> {
    let mut acc = Tangent::zero(at);
    for p in points {
        acc.axpy(1.0, &manifold.log(at, p)?)?;
    }
    Ok(acc.scale(1.0 / points.len() as f64))
}

/// `sum_k d^2(w_k, m)` about a given centre.
pub fn sum_squared_distances<M: Manifold + ?Sized>(
    manifold: &M,
    points: &[Point],
    centre: &Point,
) -> Result<f64> {
    points.iter().try_fold(0.0, |acc, p| {
        let d = manifold.dist(p, centre)?;
        Ok(acc + d * d)
    })
}

/// Fréchet variance `sum_k d^2(w_k, w_m)` with `w_m` the Fréchet mean.
pub fn frechet_variance<M: Manifold + ?Sized>(
    manifold: &M,
    points: &[Point],
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mean = frechet_mean(manifold, points, tol, max_iter)?;
    sum_squared_distances(manifold, points, &mean)
}

/// Consensus bias `sum_k sum_l c_lk d^2(phi_k, phi_l)`.
pub fn consensus_bias<M: Manifold + ?Sized>(
    manifold: &M,
    points: &[Point],
    topology: &NetworkTopology,
) -> Result<f64> {
    let k = topology.num_agents();
    if points.len() != k {
        return Err(Error::contract(format!(
            "{} points for a network of {k} agents",
            points.len()
        )));
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = topology.weight(b, a);
            if a == b || c == 0.0 {
                continue;
            }
            let d = manifold.dist(&points[a], &points[b])?;
            total += c * d * d;
        }
    }
    Ok(total)
}

/// Mean square deviation `(1/K) sum_k d^2(w_k, reference)`.
pub fn msd<M: Manifold + ?Sized>(manifold: &M, points: &[Point], reference: &Point) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("MSD of an empty set"));
    }
    Ok(sum_squared_distances(manifold, points, reference)? / points.len() as f64)
}

/// `(1/K^2) sum_k |grad J_k(w_k)|^2`, the squared norm of the stacked
/// gradient `col{(1/K) grad J_k}`.
pub fn stacked_grad_norm_sq(gradients: &[Tangent]) -> Result<f64> {
    if gradients.is_empty() {
        return Err(Error::contract("stacked gradient of an empty set"));
    }
    let k = gradients.len() as f64;
    Ok(gradients.iter().map(|g| g.norm().powi(2)).sum::<f64>() / (k * k))
}

/// Largest pairwise geodesic distance, for monitoring the diameter of the
/// region the iterates occupy.
pub fn max_pairwise_distance<M: Manifold + ?Sized>(manifold: &M, points: &[Point]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            worst = worst.max(manifold.dist(a, b)?);
        }
    }
    Ok(worst)
}

/// Metrics of one synchronous round. Absent metrics were not requested.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRecord {
    pub t: usize,
    pub msd: Option<f64>,
    pub frechet_variance: Option<f64>,
    pub consensus_bias: Option<f64>,
    pub cost: Option<f64>,
    pub grad_norm_sq: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTrace {
    records: Vec<MetricRecord>,
}

impl MetricTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.t <= last.t {
                return Err(Error::contract(format!(
                    "trace rounds must increase ({} after {})",
                    record.t, last.t
                )));
            }
        }
        for (name, value) in [
            ("msd", record.msd),
            ("frechet_variance", record.frechet_variance),
            ("consensus_bias", record.consensus_bias),
        ] {
            if let Some(v) = value {
                if v < 0.0 {
                    return Err(Error::contract(format!("{name} = {v} is negative")));
                }
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    /// Values of one metric, `None` where it was not recorded.
    pub fn series(&self, pick: impl Fn(&MetricRecord) -> Option<f64>) -> Vec<Option<f64>> {
        self.records.iter().map(pick).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::Grassmann;
    use crate::manifold::Euclidean;
    use crate::network::{metropolis_weights, random_connected_graph, AgentGraph};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(values: &[&[f64]]) -> Vec<Point> {
        values.iter().map(|v| Point::from_slice(v)).collect()
    }

    #[test]
    fn mean_of_single_point() {
        let g = Grassmann::new(5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.random_point(&mut rng);
        let m = frechet_mean(&g, std::slice::from_ref(&x), FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert!(g.dist(&m, &x).unwrap() < 1e-12);
    }

    #[test]
    fn euclidean_mean_is_arithmetic() {
        let e = Euclidean::new(2);
        let points = pts(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 3.0]]);
        let m = frechet_mean(&e, &points, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert!((m.coords() - DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn grassmann_mean_of_two_lines_is_midpoint() {
        let g = Grassmann::new(2, 1).unwrap();
        let a = g
            .point(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        let b = g
            .point(DMatrix::from_column_slice(
                2,
                1,
                &[0.4f64.cos(), 0.4f64.sin()],
            ))
            .unwrap();
        let mid = g.exp(&a, &g.log(&a, &b).unwrap().scale(0.5)).unwrap();
        let m = frechet_mean(&g, &[a.clone(), b.clone()], FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert!(g.dist(&m, &mid).unwrap() < 1e-9);
        assert_relative_eq!(g.dist(&m, &a).unwrap(), 0.2, epsilon = 1e-9);
        assert_relative_eq!(g.dist(&m, &b).unwrap(), 0.2, epsilon = 1e-9);
    }

    #[test]
    fn mean_reports_non_convergence() {
        let g = Grassmann::new(6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = g.random_point(&mut rng);
        let points: Vec<Point> = (0..5)
            .map(|_| {
                g.exp(
                    &base,
                    &g.random_unit_tangent(&base, &mut rng).unwrap().scale(0.5),
                )
                .unwrap()
            })
            .collect();
        match frechet_mean(&g, &points, 1e-300, 2) {
            Err(Error::FrechetMean {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn grassmann_mean_first_order_optimal() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = g.random_point(&mut rng);
        let points: Vec<Point> = (0..20)
            .map(|_| {
                g.exp(
                    &base,
                    &g.random_unit_tangent(&base, &mut rng).unwrap().scale(0.3),
                )
                .unwrap()
            })
            .collect();
        let m = frechet_mean(&g, &points, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        let mut total = Tangent::zero(&m);
        for p in &points {
            total.axpy(1.0, &g.log(&m, p).unwrap()).unwrap();
        }
        assert!(total.norm() <= points.len() as f64 * FRECHET_TOL);
    }

    #[test]
    fn variance_examples() {
        let e = Euclidean::new(1);
        let v =
            |p: &[&[f64]]| frechet_variance(&e, &pts(p), FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert_eq!(v(&[&[1.5], &[1.5], &[1.5]]), 0.0);
        assert_relative_eq!(v(&[&[0.0], &[2.0]]), 2.0, epsilon = 1e-12);
        assert_relative_eq!(v(&[&[0.0], &[1.0], &[2.0]]), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn euclidean_variance_is_scaled_sample_variance_and_permutation_invariant() {
        let e = Euclidean::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut points: Vec<Point> = (0..7).map(|_| e.random_point(&mut rng)).collect();
        let vf = frechet_variance(&e, &points, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        let k = points.len() as f64;
        let mean = points
            .iter()
            .fold(DMatrix::zeros(3, 1), |acc, p| acc + p.coords())
            / k;
        let biased: f64 = points
            .iter()
            .map(|p| (p.coords() - &mean).norm_squared())
            .sum::<f64>()
            / k;
        assert_relative_eq!(vf, k * biased, epsilon = 1e-12);
        points.reverse();
        let again = frechet_variance(&e, &points, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert_relative_eq!(vf, again, epsilon = 1e-12);
    }

    #[test]
    fn consensus_bias_examples() {
        let e = Euclidean::new(1);
        let top = metropolis_weights(AgentGraph::complete(2)).unwrap();
        assert_eq!(
            consensus_bias(&e, &pts(&[&[1.0], &[1.0]]), &top).unwrap(),
            0.0
        );
        assert_relative_eq!(
            consensus_bias(&e, &pts(&[&[0.0], &[2.0]]), &top).unwrap(),
            4.0
        );
        assert!(consensus_bias(&e, &pts(&[&[0.0]]), &top)
            .unwrap_err()
            .is_contract());
    }

    #[test]
    fn consensus_bias_dominates_variance_on_flat_space() {
        let e = Euclidean::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..30 {
            let top = metropolis_weights(random_connected_graph(12, 0.3, seed).unwrap()).unwrap();
            let points: Vec<Point> = (0..12).map(|_| e.random_point(&mut rng)).collect();
            let p = consensus_bias(&e, &points, &top).unwrap();
            let vf = frechet_variance(&e, &points, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
            assert!(
                p + 1e-9 >= 2.0 * (1.0 - top.lambda()) * vf,
                "P = {p}, V_F = {vf}"
            );
        }
    }

    #[test]
    fn msd_examples() {
        let e = Euclidean::new(1);
        let r = Point::from_slice(&[0.0]);
        assert_eq!(msd(&e, &pts(&[&[0.0], &[0.0]]), &r).unwrap(), 0.0);
        assert_eq!(msd(&e, &pts(&[&[0.0], &[2.0]]), &r).unwrap(), 2.0);

        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reference = g.random_point(&mut rng);
        let points: Vec<Point> = (0..5).map(|_| g.random_point(&mut rng)).collect();
        let o = Grassmann::new(5, 5)
            .unwrap()
            .random_point(&mut rng)
            .into_matrix();
        let rotated = g.point(reference.coords() * o).unwrap();
        let a = msd(&g, &points, &reference).unwrap();
        let b = msd(&g, &points, &rotated).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn stacked_gradient_examples() {
        let x = Point::from_slice(&[0.0, 0.0]);
        let g = |v: &[f64]| Tangent::new(x.clone(), DMatrix::from_column_slice(2, 1, v)).unwrap();
        assert_eq!(
            stacked_grad_norm_sq(&[g(&[0.0, 0.0]), g(&[0.0, 0.0])]).unwrap(),
            0.0
        );
        assert_relative_eq!(
            stacked_grad_norm_sq(&[g(&[1.0, 0.0]), g(&[0.0, 2.0])]).unwrap(),
            1.25
        );
        assert!(stacked_grad_norm_sq(&[]).unwrap_err().is_contract());
    }

    #[test]
    fn stacked_gradient_matches_explicit_stack() {
        let e = Euclidean::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grads: Vec<Tangent> = (0..6)
            .map(|_| {
                let x = e.random_point(&mut rng);
                e.random_unit_tangent(&x, &mut rng).unwrap().scale(3.0)
            })
            .collect();
        let k = grads.len() as f64;
        let stacked: Vec<f64> = grads
            .iter()
            .flat_map(|g| g.components().iter().map(|v| v / k).collect::<Vec<_>>())
            .collect();
        let explicit: f64 = stacked.iter().map(|v| v * v).sum();
        assert!((stacked_grad_norm_sq(&grads).unwrap() - explicit).abs() < 1e-14);
    }

    #[test]
    fn trace_rejects_bad_records() {
        let mut trace = MetricTrace::new();
        trace
            .push(MetricRecord {
                t: 1,
                msd: Some(0.5),
                ..Default::default()
            })
            .unwrap();
        assert!(trace
            .push(MetricRecord {
                t: 1,
                ..Default::default()
            })
            .is_err());
        assert!(trace
            .push(MetricRecord {
                t: 2,
                frechet_variance: Some(-1.0),
                ..Default::default()
            })
            .is_err());
        assert_eq!(trace.len(), 1);
    }
}
