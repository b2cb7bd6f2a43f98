//! Manifold abstraction shared by every algorithm in the crate.
//!
//! Points and tangent vectors are dense matrices. A [`Tangent`] always carries
//! the point it is attached to, and binary tangent operations refuse to mix
//! vectors from different tangent spaces.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A point on a manifold, stored as a dense coordinate matrix.
///
/// Cloning is cheap: the coordinates sit behind an `Arc`.
#[derive(Clone)]
pub struct Point {
    coords: Arc<DMatrix<f64>>,
}

impl Point {
    pub fn new(coords: DMatrix<f64>) -> Self {
        Self {
            coords: Arc::new(coords),
        }
    }

    /// Column vector point, the representation used by [`Euclidean`].
    pub fn from_slice(values: &[f64]) -> Self {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coords.shape()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        Arc::try_unwrap(self.coords).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Identity of the stored coordinates: same allocation or identical entries.
    pub fn same_as(&self, other: &Point) -> bool {
        Arc::ptr_eq(&self.coords, &other.coords) || *self.coords == *other.coords
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Point({r}x{c}, {:?})", self.coords.as_slice())
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug)]
pub struct Tangent {
    base: Point,
    components: DMatrix<f64>,
}

impl Tangent {
    /// Attaches `components` to `base` without any horizontality check; use
    /// [`Manifold::check_tangent`] when the input is untrusted.
    pub fn new(base: Point, components: DMatrix<f64>) -> Result<Self> {
        if base.shape() != components.shape() {
            return Err(Error::contract(format!(
                "tangent components {:?} do not match base point shape {:?}",
                components.shape(),
                base.shape()
            )));
        }
        Ok(Self { base, components })
    }

    pub fn zero(base: &Point) -> Self {
        let (r, c) = base.shape();
        Self {
            base: base.clone(),
            components: DMatrix::zeros(r, c),
        }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn into_components(self) -> DMatrix<f64> {
        self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&v| v == 0.0)
    }

    /// Frobenius norm, the metric norm for both manifolds in this crate.
    pub fn norm(&self) -> f64 {
        self.components.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            base: self.base.clone(),
            components: &self.components * s,
        }
    }

    fn same_space(&self, other: &Tangent) -> Result<()> {
        if self.base.same_as(&other.base) {
            Ok(())
        } else {
            Err(Error::contract(
                "tangent vectors belong to different tangent spaces",
            ))
        }
    }

    pub fn add(&self, other: &Tangent) -> Result<Self> {
        self.same_space(other)?;
        Ok(Self {
            base: self.base.clone(),
            components: &self.components + &other.components,
        })
    }

    /// `self += s * other`, in place.
    pub fn axpy(&mut self, s: f64, other: &Tangent) -> Result<()> {
        self.same_space(other)?;
        self.components += &other.components * s;
        Ok(())
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Tangent) -> Result<f64> {
        self.same_space(other)?;
        Ok(self.components.dot(&other.components))
    }
}

/// Operations every manifold in the crate implements.
///
/// All operations are pure. Inputs beyond the manifold's injectivity bound
/// are rejected with a domain error rather than wrapped.
pub trait Manifold: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn point_shape(&self) -> (usize, usize);

    /// Conservative bound on tangent-vector size for which `exp` is
    /// injective. Infinite for flat space.
    fn injectivity_bound(&self) -> f64;

    /// Sectional curvature range `(kappa_min, kappa_max)`, used only for
    /// step-size diagnostics.
    fn curvature_bounds(&self) -> (f64, f64);

    fn exp(&self, x: &Point, v: &Tangent) -> Result<Point>;

    fn log(&self, x: &Point, y: &Point) -> Result<Tangent>;

    fn dist(&self, x: &Point, y: &Point) -> Result<f64>;

    /// Parallel transport of `v` from `x` to `y` along the connecting geodesic.
    fn transport(&self, x: &Point, y: &Point, v: &Tangent) -> Result<Tangent>;

    /// Riemannian gradient from an ambient Euclidean gradient.
    fn egrad_to_rgrad(&self, x: &Point, egrad: &DMatrix<f64>) -> Result<Tangent>;

    fn canonicalize(&self, m: DMatrix<f64>) -> Result<Point>;

    /// Draws a point from a rotation-invariant distribution.
    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point;

    fn inner(&self, u: &Tangent, v: &Tangent) -> Result<f64> {
        u.dot(v)
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.shape() != self.point_shape() {
            return Err(Error::contract(format!(
                "{} point has shape {:?}, expected {:?}",
                self.name(),
                x.shape(),
                self.point_shape()
            )));
        }
        Ok(())
    }

    fn check_tangent(&self, x: &Point, v: &Tangent) -> Result<()> {
        self.check_point(x)?;
        if !v.base().same_as(x) {
            return Err(Error::contract(
                "tangent vector is not based at the given point",
            ));
        }
        Ok(())
    }

    /// Unit-norm tangent vector in a uniformly random direction.
    fn random_unit_tangent(&self, x: &Point, rng: &mut dyn rand::RngCore) -> Result<Tangent> {
        let (r, c) = self.point_shape();
        loop {
            let ambient = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = self.egrad_to_rgrad(x, &ambient)?;
            let norm = v.norm();
            if norm > 1e-8 {
                return Ok(v.scale(1.0 / norm));
            }
        }
    }
}

/// Flat space ℝⁿ with points stored as `n x 1` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Euclidean {
    dim: usize,
}

impl Euclidean {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Manifold for Euclidean {
    fn name(&self) -> &'static str {
        "euclidean"
    }

    fn point_shape(&self) -> (usize, usize) {
        (self.dim, 1)
    }

    fn injectivity_bound(&self) -> f64 {
        f64::INFINITY
    }

    fn curvature_bounds(&self) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn exp(&self, x: &Point, v: &Tangent) -> Result<Point> {
        self.check_tangent(x, v)?;
        if v.is_zero() {
            return Ok(x.clone());
        }
        Ok(Point::new(x.coords() + v.components()))
    }

    fn log(&self, x: &Point, y: &Point) -> Result<Tangent> {
        self.check_point(x)?;
        self.check_point(y)?;
        Tangent::new(x.clone(), y.coords() - x.coords())
    }

    fn dist(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok((y.coords() - x.coords()).norm())
    }

    fn transport(&self, x: &Point, y: &Point, v: &Tangent) -> Result<Tangent> {
        self.check_tangent(x, v)?;
        self.check_point(y)?;
        Tangent::new(y.clone(), v.components().clone())
    }

    fn egrad_to_rgrad(&self, x: &Point, egrad: &DMatrix<f64>) -> Result<Tangent> {
        self.check_point(x)?;
        Tangent::new(x.clone(), egrad.clone())
    }

    fn canonicalize(&self, m: DMatrix<f64>) -> Result<Point> {
        let x = Point::new(m);
        self.check_point(&x)?;
        Ok(x)
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        Point::new(DMatrix::from_fn(self.dim, 1, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
    }
}

/// Sectional-curvature bounds and diameter of the region the iterates live in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureProfile {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub diameter: f64,
}

impl CurvatureProfile {
    pub fn new(kappa_min: f64, kappa_max: f64, diameter: f64) -> Result<Self> {
        let profile = Self {
            kappa_min,
            kappa_max,
            diameter,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_min <= self.kappa_max) {
            return Err(Error::contract(format!(
                "kappa_min {} exceeds kappa_max {}",
                self.kappa_min, self.kappa_max
            )));
        }
        if !(self.diameter > 0.0) || !self.diameter.is_finite() {
            return Err(Error::contract(format!(
                "diameter must be positive and finite, got {}",
                self.diameter
            )));
        }
        if self.kappa_max > 0.0 {
            let limit = std::f64::consts::FRAC_PI_2 / self.kappa_max.sqrt();
            if self.diameter >= limit {
                return Err(Error::domain(format!(
                    "diameter {} must be below pi/(2 sqrt(kappa_max)) = {limit}",
                    self.diameter
                )));
            }
        }
        Ok(())
    }
}

/// Comparison constants `(zeta1, zeta2)` for geodesic triangles.
///
/// `zeta1 = B sqrt(-kmin) coth(B sqrt(-kmin))` for negative lower curvature
/// (else 1), `zeta2 = B sqrt(kmax) cot(B sqrt(kmax))` for positive upper
/// curvature (else 1).
pub fn zeta_constants(profile: &CurvatureProfile) -> Result<(f64, f64)> {
    profile.validate()?;
    let b = profile.diameter;
    let zeta1 = if profile.kappa_min >= 0.0 {
        1.0
    } else {
        let s = b * (-profile.kappa_min).sqrt();
        s / s.tanh()
    };
    let zeta2 = if profile.kappa_max <= 0.0 {
        1.0
    } else {
        let s = b * profile.kappa_max.sqrt();
        s / s.tan()
    };
    Ok((zeta1, zeta2))
}

/// Per-round Fréchet-variance contraction factor of the combination step:
/// `-2 (1 - lambda) (zeta1 alpha^2 - zeta2 alpha) / (1 + c_kappa B^2)^2`.
pub fn epsilon_constant(
    zeta1: f64,
    zeta2: f64,
    alpha: f64,
    lambda: f64,
    c_kappa: f64,
    diameter: f64,
) -> Result<f64> {
    let upper = zeta2 / zeta1;
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::domain(format!(
            "alpha = {alpha} outside the admissible interval (0, {upper})"
        )));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::domain(format!(
            "mixing rate {lambda} outside [0, 1)"
        )));
    }
    if c_kappa < 0.0 {
        return Err(Error::domain(format!(
            "c_kappa must be non-negative, got {c_kappa}"
        )));
    }
    let denom = (1.0 + c_kappa * diameter * diameter).powi(2);
    Ok(-2.0 * (1.0 - lambda) * (zeta1 * alpha * alpha - zeta2 * alpha) / denom)
}

/// A cost with a Riemannian gradient, evaluated on the full data available.
pub trait Objective {
    fn cost(&self, x: &Point) -> Result<f64>;
    fn rgrad(&self, x: &Point) -> Result<Tangent>;
}

/// Largest relative error between central geodesic finite differences and
/// `<grad f(x), v>` over `num_directions` random unit tangent directions `v`.
pub fn check_gradient<M, O, R>(
    manifold: &M,
    objective: &O,
    x: &Point,
    num_directions: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64>
where
    M: Manifold + ?Sized,
    O: Objective + ?Sized,
    R: Rng,
{
    let grad = objective.rgrad(x)?;
    let mut worst = 0.0f64;
    for _ in 0..num_directions {
        let v = manifold.random_unit_tangent(x, rng)?;
        worst = worst.max(directional_error(manifold, objective, x, &grad, &v, h)?);
    }
    Ok(worst)
}

/// Relative finite-difference error along one tangent direction.
pub fn directional_error<M, O>(
    manifold: &M,
    objective: &O,
    x: &Point,
    grad: &Tangent,
    v: &Tangent,
    h: f64,
) -> Result<f64>
where
    M: Manifold + ?Sized,
    O: Objective + ?Sized,
{
    let forward = objective.cost(&manifold.exp(x, &v.scale(h))?)?;
    let backward = objective.cost(&manifold.exp(x, &v.scale(-h))?)?;
    let fd = (forward - backward) / (2.0 * h);
    let ip = manifold.inner(grad, v)?;
    Ok((fd - ip).abs() / (ip.abs() + 1e-12))
}
