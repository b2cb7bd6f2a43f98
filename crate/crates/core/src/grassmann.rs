//! The Grassmann manifold of `p`-dimensional subspaces of ℝⁿ.
//!
//! A point is stored as any `n x p` matrix with orthonormal columns; `U` and
//! `U O` for orthogonal `O` denote the same subspace and every operation here
//! is invariant to that choice. Tangent vectors are horizontal lifts at the
//! stored representative, i.e. `n x p` matrices `xi` with `U^T xi = 0`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};

/// Orthonormality slack accepted for a representative.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Relative slack accepted for `U^T xi = 0`.
pub const HORIZONTAL_TOL: f64 = 1e-10;
/// Below this deviation from orthonormality `canonicalize` returns its input.
const EXACT_ORTHONORMAL_TOL: f64 = 1e-14;
/// Smallest cosine of a principal angle accepted by `log`.
const CUT_LOCUS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grassmann {
    n: usize,
    p: usize,
}

impl Grassmann {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if p == 0 || p > n {
            return Err(Error::contract(format!(
                "Grassmann manifold needs 0 < p <= n, got n = {n}, p = {p}"
            )));
        }
        Ok(Self { n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Wraps an orthonormal representative, rejecting non-orthonormal input.
    pub fn point(&self, u: DMatrix<f64>) -> Result<Point> {
        let x = Point::new(u);
        self.check_point(&x)?;
        let drift = orthonormality_error(x.coords());
        if drift > ORTHONORMAL_TOL {
            return Err(Error::contract(format!(
                "representative is not orthonormal (|U^T U - I| = {drift:e})"
            )));
        }
        Ok(x)
    }

    /// Wraps a horizontal vector at `base`.
    pub fn tangent(&self, base: &Point, xi: DMatrix<f64>) -> Result<Tangent> {
        let v = Tangent::new(base.clone(), xi)?;
        self.check_tangent(base, &v)?;
        self.check_horizontal(&v)?;
        Ok(v)
    }

    fn check_horizontal(&self, v: &Tangent) -> Result<()> {
        let leak = v.base().coords().tr_mul(v.components()).norm();
        if leak > HORIZONTAL_TOL * v.norm().max(1.0) {
            return Err(Error::contract(format!(
                "tangent vector is not horizontal (|U^T xi| = {leak:e})"
            )));
        }
        Ok(())
    }

    /// `(I - U U^T) g`.
    pub fn project(&self, u: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        g - u * u.tr_mul(g)
    }

    /// Principal angles between two subspaces, ascending.
    ///
    /// Cosines are the singular values of `U1^T U2` (clamped to `[0, 1]`).
    /// Angles whose cosine exceeds `1/sqrt(2)` are read off the sines, the
    /// singular values of `U2 - U1 U1^T U2`, where `arccos` loses accuracy.
    pub fn principal_angles(&self, x: &Point, y: &Point) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(y)?;
        let u1 = x.coords();
        let u2 = y.coords();
        let m = u1.tr_mul(u2);
        let mut cosines: Vec<f64> = m
            .singular_values()
            .iter()
            .map(|c| c.clamp(0.0, 1.0))
            .collect();
        cosines.sort_by(|a, b| b.total_cmp(a));
        let perp = u2 - u1 * &m;
        let mut sines: Vec<f64> = perp
            .singular_values()
            .iter()
            .map(|s| s.clamp(0.0, 1.0))
            .collect();
        sines.sort_by(|a, b| a.total_cmp(b));
        Ok(cosines
            .iter()
            .zip(&sines)
            .map(|(&c, &s)| {
                if c > FRAC_1_SQRT_2 {
                    s.asin()
                } else {
                    c.acos()
                }
            })
            .collect())
    }
}

/// Max-entry deviation of `U^T U` from the identity.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let gram = u.tr_mul(u);
    let p = gram.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Thin SVD `a = X diag(s) Y^T`, returned as `(X, s, Y)`.
fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = SVD::new(a.clone(), true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok((u, svd.singular_values, v_t.transpose())),
        _ => Err(Error::domain("SVD failed to produce singular vectors")),
    }
}

fn scale_columns(a: &DMatrix<f64>, s: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s(j);
    }
    out
}

impl Manifold for Grassmann {
    fn name(&self) -> &'static str {
        "grassmann"
    }

    fn point_shape(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    /// Per-principal-angle bound, equivalently the largest admissible
    /// singular value of a tangent vector.
    fn injectivity_bound(&self) -> f64 {
        FRAC_PI_2
    }

    fn curvature_bounds(&self) -> (f64, f64) {
        let k = self.p.min(self.n - self.p);
        match (k, self.n) {
            (0, _) | (_, 2) => (0.0, 0.0),
            (1, _) => (1.0, 1.0),
            _ => (0.0, 2.0),
        }
    }

    fn exp(&self, x: &Point, v: &Tangent) -> Result<Point> {
        self.check_tangent(x, v)?;
        self.check_horizontal(v)?;
        if v.is_zero() {
            return Ok(x.clone());
        }
        let (xs, sigma, y) = thin_svd(v.components())?;
        let largest = sigma.max();
        if largest >= FRAC_PI_2 {
            return Err(Error::domain(format!(
                "tangent singular value {largest} reaches the injectivity bound pi/2"
            )));
        }
        let u = x.coords();
        let moved =
            scale_columns(&(u * &y), |j| sigma[j].cos()) + scale_columns(&xs, |j| sigma[j].sin());
        self.canonicalize(moved * y.transpose())
    }

    fn log(&self, x: &Point, y: &Point) -> Result<Tangent> {
        self.check_point(x)?;
        self.check_point(y)?;
        let u1 = x.coords();
        let u2 = y.coords();
        let m = u1.tr_mul(u2);
        let smallest_cos = m.singular_values().min();
        if smallest_cos < CUT_LOCUS_TOL {
            return Err(Error::domain(format!(
                "subspaces are at the cut locus (smallest principal cosine {smallest_cos:e})"
            )));
        }
        let residual = u2 - u1 * &m;
        // residual * M^{-1}, via M^T Z = residual^T
        let tangent_of_angles = m
            .transpose()
            .lu()
            .solve(&residual.transpose())
            .ok_or_else(|| Error::domain("U1^T U2 is singular"))?
            .transpose();
        let (q, s, r) = thin_svd(&tangent_of_angles)?;
        let xi = scale_columns(&q, |j| s[j].atan()) * r.transpose();
        Tangent::new(x.clone(), self.project(u1, &xi))
    }

    fn dist(&self, x: &Point, y: &Point) -> Result<f64> {
        Ok(self
            .principal_angles(x, y)?
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt())
    }

    fn transport(&self, x: &Point, y: &Point, v: &Tangent) -> Result<Tangent> {
        self.check_tangent(x, v)?;
        self.check_point(y)?;
        if x.same_as(y) {
            return Tangent::new(y.clone(), v.components().clone());
        }
        let velocity = self.log(x, y)?;
        let (xs, sigma, ys) = thin_svd(velocity.components())?;
        let u = x.coords();
        let coeffs = xs.tr_mul(v.components());
        // v + X (cos S - I) X^T v - U Y sin S X^T v
        let transported = v.components() + scale_columns(&xs, |j| sigma[j].cos() - 1.0) * &coeffs
            - scale_columns(&(u * &ys), |j| sigma[j].sin()) * &coeffs;
        // The formula lives at the representative reached by the geodesic;
        // rotate it onto the representative stored in `y`.
        let reached = (scale_columns(&(u * &ys), |j| sigma[j].cos())
            + scale_columns(&xs, |j| sigma[j].sin()))
            * ys.transpose();
        let align = reached.tr_mul(y.coords());
        let at_y = transported * align;
        Tangent::new(y.clone(), self.project(y.coords(), &at_y))
    }

    fn egrad_to_rgrad(&self, x: &Point, egrad: &DMatrix<f64>) -> Result<Tangent> {
        self.check_point(x)?;
        if egrad.shape() != self.point_shape() {
            return Err(Error::contract(format!(
                "Euclidean gradient has shape {:?}, expected {:?}",
                egrad.shape(),
                self.point_shape()
            )));
        }
        Tangent::new(x.clone(), self.project(x.coords(), egrad))
    }

    /// Thin QR with the positive-diagonal convention for `R`.
    fn canonicalize(&self, m: DMatrix<f64>) -> Result<Point> {
        if m.shape() != self.point_shape() {
            return Err(Error::contract(format!(
                "matrix has shape {:?}, expected {:?}",
                m.shape(),
                self.point_shape()
            )));
        }
        if orthonormality_error(&m) <= EXACT_ORTHONORMAL_TOL {
            return Ok(Point::new(m));
        }
        let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let qr = m.qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..self.p {
            let d = r[(j, j)];
            if !(d.abs() > 1e-12 * scale) {
                return Err(Error::domain(format!(
                    "matrix is rank deficient (|R[{j},{j}]| = {:e})",
                    d.abs()
                )));
            }
            if d < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Point::new(q))
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        loop {
            let g = DMatrix::from_fn(self.n, self.p, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(x) = self.canonicalize(g) {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        Grassmann::new(p, p)
            .unwrap()
            .random_point(rng)
            .into_matrix()
    }

    #[test]
    fn dist_examples() {
        let g = Grassmann::new(2, 1).unwrap();
        let e1 = g.point(col(&[1.0, 0.0])).unwrap();
        let e2 = g.point(col(&[0.0, 1.0])).unwrap();
        assert_eq!(g.dist(&e1, &e1).unwrap(), 0.0);
        assert_relative_eq!(g.dist(&e1, &e2).unwrap(), FRAC_PI_2, epsilon = 1e-15);

        let g3 = Grassmann::new(3, 1).unwrap();
        let a = g3.point(col(&[1.0, 0.0, 0.0])).unwrap();
        let b = g3.point(col(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0])).unwrap();
        assert_relative_eq!(g3.dist(&a, &b).unwrap(), FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn dist_never_nan() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = g.random_point(&mut rng);
            // Slightly inflated representative pushes cosines above one.
            let y = Point::new(x.coords() * (1.0 + 1e-13));
            let d = g.dist(&x, &y).unwrap();
            assert!(d.is_finite() && d < 1e-6, "{d}");
        }
    }

    #[test]
    fn egrad_projection() {
        let g = Grassmann::new(3, 2).unwrap();
        let u = g
            .point(DMatrix::from_row_slice(
                3,
                2,
                &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            ))
            .unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        assert!(g.egrad_to_rgrad(&u, &(u.coords() * a)).unwrap().is_zero());

        let e3_row = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let xi = g.egrad_to_rgrad(&u, &e3_row).unwrap();
        assert_eq!(xi.components(), &e3_row);

        let h = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = h.random_point(&mut rng);
            let big = DMatrix::from_fn(10, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xi = h.egrad_to_rgrad(&x, &big).unwrap();
            assert!(x.coords().tr_mul(xi.components()).amax() < 1e-12);
        }
    }

    #[test]
    fn exp_zero_is_identity() {
        let g = Grassmann::new(6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.random_point(&mut rng);
        let y = g.exp(&x, &Tangent::zero(&x)).unwrap();
        assert!(y.same_as(&x));
    }

    #[test]
    fn exp_on_projective_line() {
        let g = Grassmann::new(2, 1).unwrap();
        let u = g.point(col(&[1.0, 0.0])).unwrap();
        let angle = FRAC_PI_2 - 0.01;
        let xi = g.tangent(&u, col(&[0.0, angle])).unwrap();
        let y = g.exp(&u, &xi).unwrap();
        assert_relative_eq!(g.dist(&u, &y).unwrap(), angle, epsilon = 1e-12);
    }

    #[test]
    fn exp_rejects_large_and_vertical_steps() {
        let g = Grassmann::new(2, 1).unwrap();
        let u = g.point(col(&[1.0, 0.0])).unwrap();
        let big = Tangent::new(u.clone(), col(&[0.0, FRAC_PI_2])).unwrap();
        assert!(g.exp(&u, &big).unwrap_err().is_domain());
        let vertical = Tangent::new(u.clone(), col(&[0.1, 0.0])).unwrap();
        assert!(g.exp(&u, &vertical).unwrap_err().is_contract());
    }

    #[test]
    fn exp_is_unit_speed() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let x = g.random_point(&mut rng);
            let v = g.random_unit_tangent(&x, &mut rng).unwrap().scale(0.3);
            let y = g.exp(&x, &v).unwrap();
            assert!(orthonormality_error(y.coords()) < 1e-10);
            assert!((g.dist(&x, &y).unwrap() - v.norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn log_examples() {
        let g = Grassmann::new(2, 1).unwrap();
        let u = g.point(col(&[1.0, 0.0])).unwrap();
        let t: f64 = 0.3;
        let v = g.point(col(&[t.cos(), t.sin()])).unwrap();
        let xi = g.log(&u, &v).unwrap();
        assert_relative_eq!(xi.components()[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(xi.components()[(1, 0)], 0.3, epsilon = 1e-14);

        let h = Grassmann::new(8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = h.random_point(&mut rng);
        let o = random_orthogonal(3, &mut rng);
        let same = h.point(x.coords() * o).unwrap();
        assert!(h.log(&x, &same).unwrap().norm() < 1e-12);
    }

    #[test]
    fn log_rejects_cut_locus() {
        let g = Grassmann::new(2, 1).unwrap();
        let e1 = g.point(col(&[1.0, 0.0])).unwrap();
        let e2 = g.point(col(&[0.0, 1.0])).unwrap();
        assert!(g.log(&e1, &e2).unwrap_err().is_domain());
        assert!(g
            .transport(&e1, &e2, &Tangent::zero(&e1))
            .unwrap_err()
            .is_domain());
    }

    #[test]
    fn log_exp_roundtrip_random() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x = g.random_point(&mut rng);
            let y = g
                .exp(&x, &g.random_unit_tangent(&x, &mut rng).unwrap())
                .unwrap();
            let xi = g.log(&x, &y).unwrap();
            let back = g.exp(&x, &xi).unwrap();
            assert!(g.dist(&back, &y).unwrap() < 1e-8);
            assert!((xi.norm() - g.dist(&x, &y).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn transport_examples() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = g.random_point(&mut rng);
        let v = g.random_unit_tangent(&x, &mut rng).unwrap();
        let same = g.transport(&x, &x, &v).unwrap();
        assert_eq!(same.components(), v.components());

        for _ in 0..100 {
            let x = g.random_point(&mut rng);
            let step = g.random_unit_tangent(&x, &mut rng).unwrap().scale(0.8);
            let y0 = g.exp(&x, &step).unwrap();
            // Store y under an arbitrary representative.
            let y = g
                .point(y0.coords() * random_orthogonal(5, &mut rng))
                .unwrap();
            let forward = g.log(&x, &y).unwrap();
            let moved = g.transport(&x, &y, &forward).unwrap();
            let reverse = g.log(&y, &x).unwrap();
            assert!((moved.components() + reverse.components()).amax() < 1e-8);
            assert!(y.coords().tr_mul(moved.components()).amax() < 1e-10);
        }
    }

    #[test]
    fn canonicalize_examples() {
        let g = Grassmann::new(3, 2).unwrap();
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.canonicalize(u.clone()).unwrap().coords(), &u);
        assert_eq!(g.canonicalize(&u * 2.0).unwrap().coords(), &u);

        let h = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m = DMatrix::from_fn(10, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = h.canonicalize(m.clone()).unwrap();
            assert!(orthonormality_error(q.coords()) < 1e-12);
            // Same column space: projecting m onto span(q) loses nothing.
            assert!((h.project(q.coords(), &m)).amax() < 1e-12);
            let orthonormal = q.coords().clone();
            let again = h.canonicalize(orthonormal.clone()).unwrap();
            assert!((again.coords() - orthonormal).amax() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_rejects_rank_deficient() {
        let g = Grassmann::new(3, 2).unwrap();
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        assert!(g.canonicalize(m).unwrap_err().is_domain());
    }

    #[test]
    fn geodesic_midpoint_is_equidistant() {
        let g = Grassmann::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let x = g.random_point(&mut rng);
            let y = g
                .exp(&x, &g.random_unit_tangent(&x, &mut rng).unwrap().scale(1.2))
                .unwrap();
            let mid = g.exp(&x, &g.log(&x, &y).unwrap().scale(0.5)).unwrap();
            let a = g.dist(&x, &mid).unwrap();
            let b = g.dist(&mid, &y).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn curvature_bounds_by_shape() {
        assert_eq!(
            Grassmann::new(10, 5).unwrap().curvature_bounds(),
            (0.0, 2.0)
        );
        assert_eq!(Grassmann::new(3, 1).unwrap().curvature_bounds(), (1.0, 1.0));
        assert_eq!(Grassmann::new(2, 1).unwrap().curvature_bounds(), (0.0, 0.0));
    }
}
