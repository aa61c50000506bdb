//! Model problems: potential, reaction coordinate, confinement and the
//! geometric quantities derived from them (local mean force, tangent/normal
//! projectors, convergence constants).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::error::{AbfError, Result};

pub type Point = Vector2<f64>;

const TWO_PI: f64 = 2.0 * PI;

/// Default floor on `|grad xi|` before it is used as a divisor.
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-12;

/// A smooth scalar potential on the plane with analytic first and second
/// derivatives.
pub trait PotentialField: Send + Sync + fmt::Debug {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> Vector2<f64>;
    fn hessian(&self, p: Point) -> Matrix2<f64>;

    /// `d^2 V0 / dy^2` for a potential declared as `V = V0 + V1` with `V1`
    /// depending on `x` only. `None` when no split is declared.
    fn split_v0_yy(&self, _p: Point) -> Option<f64> {
        None
    }

    /// The bounded part `V1` of the split, if declared.
    fn split_v1(&self, _p: Point) -> Option<f64> {
        None
    }
}

/// `V(x, y) = c cos(2 pi x) + a y sin(2 pi x) + (k/2) y^2` on `T x R`.
///
/// Split as `V0 = a y sin(2 pi x) + (k/2) y^2` and `V1 = c cos(2 pi x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPotential {
    pub c: f64,
    pub a: f64,
    pub k: f64,
}

impl TestPotential {
    pub fn new(c: f64, a: f64, k: f64) -> Self {
        Self { c, a, k }
    }

    /// The reference instance `c = 1, a = 1/2, k = 4`.
    pub fn reference() -> Self {
        Self::new(1.0, 0.5, 4.0)
    }
}

impl PotentialField for TestPotential {
    fn value(&self, p: Point) -> f64 {
        let (s, c) = (TWO_PI * p.x).sin_cos();
        self.c * c + self.a * p.y * s + 0.5 * self.k * p.y * p.y
    }

    fn gradient(&self, p: Point) -> Vector2<f64> {
        let (s, c) = (TWO_PI * p.x).sin_cos();
        Vector2::new(
            -TWO_PI * self.c * s + TWO_PI * self.a * p.y * c,
            self.a * s + self.k * p.y,
        )
    }

    fn hessian(&self, p: Point) -> Matrix2<f64> {
        let (s, c) = (TWO_PI * p.x).sin_cos();
        let xx = -TWO_PI * TWO_PI * (self.c * c + self.a * p.y * s);
        let xy = TWO_PI * self.a * c;
        Matrix2::new(xx, xy, xy, self.k)
    }

    fn split_v0_yy(&self, _p: Point) -> Option<f64> {
        Some(self.k)
    }

    fn split_v1(&self, p: Point) -> Option<f64> {
        Some(self.c * (TWO_PI * p.x).cos())
    }
}

/// Any potential multiplied by a constant factor.
#[derive(Debug, Clone)]
pub struct ScaledPotential {
    pub inner: Arc<dyn PotentialField>,
    pub factor: f64,
}

impl PotentialField for ScaledPotential {
    fn value(&self, p: Point) -> f64 {
        self.factor * self.inner.value(p)
    }
    fn gradient(&self, p: Point) -> Vector2<f64> {
        self.inner.gradient(p) * self.factor
    }
    fn hessian(&self, p: Point) -> Matrix2<f64> {
        self.inner.hessian(p) * self.factor
    }
    fn split_v0_yy(&self, p: Point) -> Option<f64> {
        self.inner.split_v0_yy(p).map(|v| v * self.factor)
    }
    fn split_v1(&self, p: Point) -> Option<f64> {
        self.inner.split_v1(p).map(|v| v * self.factor)
    }
}

/// A user-supplied nonlinear reaction coordinate.
pub trait CoordinateField: Send + Sync + fmt::Debug {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> Vector2<f64>;
    fn hessian(&self, p: Point) -> Matrix2<f64>;
}

#[derive(Debug, Clone)]
pub enum ReactionCoordinate {
    /// `xi(x, y) = x`.
    LinearX,
    Custom(Arc<dyn CoordinateField>),
}

impl ReactionCoordinate {
    pub fn is_linear_x(&self) -> bool {
        matches!(self, ReactionCoordinate::LinearX)
    }

    #[inline]
    pub fn value(&self, p: Point) -> f64 {
        match self {
            ReactionCoordinate::LinearX => p.x,
            ReactionCoordinate::Custom(f) => f.value(p),
        }
    }

    #[inline]
    pub fn gradient(&self, p: Point) -> Vector2<f64> {
        match self {
            ReactionCoordinate::LinearX => Vector2::new(1.0, 0.0),
            ReactionCoordinate::Custom(f) => f.gradient(p),
        }
    }

    #[inline]
    pub fn hessian(&self, p: Point) -> Matrix2<f64> {
        match self {
            ReactionCoordinate::LinearX => Matrix2::zeros(),
            ReactionCoordinate::Custom(f) => f.hessian(p),
        }
    }
}

/// Confining potential `W` acting on the reaction coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Confinement {
    None,
    /// `W(z) = (alpha/2) (z - center)^2`, alpha-convex.
    Harmonic { alpha: f64, center: f64 },
}

impl Confinement {
    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Confinement::None => 0.0,
            Confinement::Harmonic { alpha, center } => 0.5 * alpha * (z - center) * (z - center),
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Confinement::None => 0.0,
            Confinement::Harmonic { alpha, center } => alpha * (z - center),
        }
    }

    #[inline]
    pub fn second_derivative(&self, _z: f64) -> f64 {
        match *self {
            Confinement::None => 0.0,
            Confinement::Harmonic { alpha, .. } => alpha,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Confinement::None => Confinement::None,
            Confinement::Harmonic { alpha, center } => Confinement::Harmonic { alpha: alpha * factor, center },
        }
    }
}

/// Range of the `x` coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XDomain {
    /// The unit torus `[0, 1)`.
    Torus,
    Interval { lo: f64, hi: f64 },
}

impl XDomain {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            XDomain::Torus => (0.0, 1.0),
            XDomain::Interval { lo, hi } => (lo, hi),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, XDomain::Torus)
    }
}

/// Truncated `y` range `[lo, hi]` standing in for the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YDomain {
    pub lo: f64,
    pub hi: f64,
}

impl YDomain {
    pub fn symmetric(half_width: f64) -> Self {
        Self { lo: -half_width, hi: half_width }
    }

    /// `L = 8 / sqrt(beta k)`: eight conditional standard deviations, which
    /// leaves less than 1e-12 of Gaussian mass outside.
    pub fn default_for(beta: f64, k: f64) -> Self {
        Self::symmetric(8.0 / (beta * k).sqrt())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// The physical setup consumed by every other module.
#[derive(Debug, Clone)]
pub struct ModelProblem {
    pub beta: f64,
    pub potential: Arc<dyn PotentialField>,
    pub xi: ReactionCoordinate,
    pub confinement: Confinement,
    pub x_domain: XDomain,
    pub y_domain: YDomain,
    pub gradient_floor: f64,
}

impl ModelProblem {
    /// Test family on `T x [-L, L]` with `xi = x`, `W = 0` and the default
    /// truncation.
    pub fn test_family(potential: TestPotential, beta: f64) -> Self {
        Self {
            beta,
            potential: Arc::new(potential),
            xi: ReactionCoordinate::LinearX,
            confinement: Confinement::None,
            x_domain: XDomain::Torus,
            y_domain: YDomain::default_for(beta, potential.k),
            gradient_floor: DEFAULT_GRADIENT_FLOOR,
        }
    }

    /// The reference problem `c = 1, a = 1/2, k = 4, beta = 1`.
    pub fn reference() -> Self {
        Self::test_family(TestPotential::reference(), 1.0)
    }

    pub fn with_potential(mut self, potential: Arc<dyn PotentialField>) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_xi(mut self, xi: ReactionCoordinate) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_y_domain(mut self, y: YDomain) -> Self {
        self.y_domain = y;
        self
    }

    pub fn on_interval(mut self, lo: f64, hi: f64, confinement: Confinement) -> Self {
        self.x_domain = XDomain::Interval { lo, hi };
        self.confinement = confinement;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(AbfError::InvalidModel(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.y_domain.lo < self.y_domain.hi) {
            return Err(AbfError::InvalidModel("empty y domain".into()));
        }
        match self.x_domain {
            XDomain::Torus => {
                if self.confinement != Confinement::None {
                    return Err(AbfError::InvalidModel(
                        "the confining potential must vanish on the torus".into(),
                    ));
                }
            }
            XDomain::Interval { lo, hi } => {
                if !(lo < hi) {
                    return Err(AbfError::InvalidModel("empty x interval".into()));
                }
            }
        }
        if !(self.gradient_floor > 0.0) {
            return Err(AbfError::InvalidModel("gradient floor must be positive".into()));
        }
        Ok(())
    }

    /// Same dynamics expressed at unit inverse temperature: energies are
    /// multiplied by `beta`, and physical time is `beta` times the rescaled
    /// time.
    pub fn rescaled_to_unit_beta(&self) -> ModelProblem {
        if self.beta == 1.0 {
            return self.clone();
        }
        ModelProblem {
            beta: 1.0,
            potential: Arc::new(ScaledPotential { inner: self.potential.clone(), factor: self.beta }),
            confinement: self.confinement.scaled(self.beta),
            ..self.clone()
        }
    }

    pub fn require_unit_beta(&self) -> Result<()> {
        if self.beta != 1.0 {
            return Err(AbfError::InvalidModel(format!(
                "solver runs at beta = 1 (got {}); use rescaled_to_unit_beta",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn require_linear_x(&self) -> Result<()> {
        if !self.xi.is_linear_x() {
            return Err(AbfError::InvalidModel(
                "only xi(x, y) = x is supported by slice quadrature".into(),
            ));
        }
        Ok(())
    }

    /// `|grad xi|` at `p`, refusing values under the floor.
    pub fn gradient_norm(&self, p: Point) -> Result<f64> {
        let n = self.xi.gradient(p).norm();
        if !(n >= self.gradient_floor) {
            return Err(AbfError::DegenerateGradient { norm: n, floor: self.gradient_floor, x: p.x, y: p.y });
        }
        Ok(n)
    }

    /// Local mean force `F = grad V . grad xi / |grad xi|^2 - beta^-1 div(grad xi / |grad xi|^2)`.
    pub fn local_mean_force(&self, p: Point) -> Result<f64> {
        let gv = self.potential.gradient(p);
        if !(gv.x.is_finite() && gv.y.is_finite()) {
            return Err(AbfError::NonFiniteEvaluation { quantity: "potential gradient", x: p.x, y: p.y });
        }
        if self.xi.is_linear_x() {
            return Ok(gv.x);
        }
        let g = self.xi.gradient(p);
        let n2 = self.gradient_norm(p)?.powi(2);
        let h = self.xi.hessian(p);
        let div = h.trace() / n2 - 2.0 * g.dot(&(h * g)) / (n2 * n2);
        let f = gv.dot(&g) / n2 - div / self.beta;
        if !f.is_finite() {
            return Err(AbfError::NonFiniteEvaluation { quantity: "local mean force", x: p.x, y: p.y });
        }
        Ok(f)
    }

    /// Tangent projector `P` and normal projector `Q = grad xi (x) grad xi / |grad xi|^2`.
    pub fn projections(&self, p: Point) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        let g = self.xi.gradient(p);
        let n = self.gradient_norm(p)?;
        let q = (g * g.transpose()) / (n * n);
        Ok((Matrix2::identity() - q, q))
    }

    /// Wrap `x` onto the torus; identity on an interval.
    #[inline]
    pub fn wrap_x(&self, x: f64) -> f64 {
        match self.x_domain {
            XDomain::Torus => {
                let w = x.rem_euclid(1.0);
                // rem_euclid can round up to exactly 1.0 for tiny negative inputs
                if w >= 1.0 { 0.0 } else { w }
            }
            XDomain::Interval { .. } => x,
        }
    }
}

/// Resolution of the node grid used for sup/inf scans. Counts intervals, so
/// that doubling nests the previous nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalGrid {
    pub n_x: usize,
    pub n_y: usize,
}

impl EvalGrid {
    pub fn new(n_x: usize, n_y: usize) -> Self {
        Self { n_x, n_y }
    }

    pub fn refined(&self) -> Self {
        Self { n_x: 2 * self.n_x, n_y: 2 * self.n_y }
    }

    fn nodes(&self, model: &ModelProblem) -> Vec<Point> {
        let (xlo, xhi) = model.x_domain.bounds();
        let nx_nodes = if model.x_domain.is_periodic() { self.n_x } else { self.n_x + 1 };
        let hx = (xhi - xlo) / self.n_x as f64;
        let hy = model.y_domain.width() / self.n_y as f64;
        let mut out = Vec::with_capacity(nx_nodes * (self.n_y + 1));
        for i in 0..nx_nodes {
            for j in 0..=self.n_y {
                out.push(Point::new(xlo + i as f64 * hx, model.y_domain.lo + j as f64 * hy));
            }
        }
        out
    }
}

/// Constants `m, M, rho, r, lambda` controlling the exponential decay of the
/// microscopic entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConstants {
    /// Upper bound on `|grad xi|`.
    pub m: f64,
    /// Upper bound on the tangential gradient of the local mean force.
    pub m_coupling: f64,
    /// Uniform log-Sobolev constant of the conditional equilibrium measures.
    pub rho: f64,
    /// Macroscopic rate.
    pub r: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl ConvergenceConstants {
    /// `lambda = beta^-1 min(rho m^-2, r)`.
    pub fn overall_rate(beta: f64, rho: f64, m: f64, r: f64) -> f64 {
        (rho / (m * m)).min(r) / beta
    }

    /// Prefactor `C` of `sqrt(E_m(t)) <= C exp(-lambda t)` given the initial
    /// microscopic entropy and the initial macroscopic Fisher information.
    pub fn micro_entropy_prefactor(&self, em0: f64, i0: f64) -> f64 {
        let gap = (self.rho / (self.m * self.m) - self.r).abs();
        let coupling = self.m_coupling / (gap / self.beta) * (i0 / (2.0 * self.rho)).sqrt();
        2.0 * em0.max(0.0).sqrt().max(coupling)
    }

    /// Upper bound on `sqrt(E_m(t))`, including the resonant case
    /// `rho m^-2 = r` where the bound picks up a linear factor.
    pub fn micro_entropy_bound(&self, em0: f64, i0: f64, t: f64) -> f64 {
        let micro = self.rho / (self.m * self.m);
        if (micro - self.r).abs() <= 1e-12 * self.r.max(micro) {
            let lin = em0.max(0.0).sqrt() + self.m_coupling * (i0 / (2.0 * self.rho)).sqrt() * t;
            return lin * (-self.r * t / self.beta).exp();
        }
        self.micro_entropy_prefactor(em0, i0) * (-self.lambda * t).exp()
    }

    /// Factor `2 M^2 / rho` bounding the weighted force error by `E_m`.
    pub fn force_error_factor(&self) -> f64 {
        2.0 * self.m_coupling * self.m_coupling / self.rho
    }
}

/// Scans `grid` for `m`, `M` and the split potential's extrema, then assembles
/// the rates. `rho` is the Bakry-Emery constant of `V0` perturbed by
/// `exp(-beta osc V1)`.
pub fn convergence_constants(model: &ModelProblem, grid: EvalGrid) -> Result<ConvergenceConstants> {
    model.validate()?;
    let beta = model.beta;
    let nodes = grid.nodes(model);
    let mut m: f64 = 0.0;
    let mut m_coupling: f64 = 0.0;
    let mut v0_yy_min = f64::INFINITY;
    let mut v1_min = f64::INFINITY;
    let mut v1_max = f64::NEG_INFINITY;
    for &p in &nodes {
        m = m.max(model.xi.gradient(p).norm());
        m_coupling = m_coupling.max(tangential_force_gradient(model, p)?);
        let (Some(yy), Some(v1)) = (model.potential.split_v0_yy(p), model.potential.split_v1(p)) else {
            return Err(AbfError::ConstantsUnavailable(
                "potential does not declare a V0 + V1 split".into(),
            ));
        };
        v0_yy_min = v0_yy_min.min(yy);
        v1_min = v1_min.min(v1);
        v1_max = v1_max.max(v1);
    }
    if !(v0_yy_min > 0.0) {
        return Err(AbfError::ConstantsUnavailable(format!(
            "inf d2V0/dy2 = {v0_yy_min} is not positive; conditional measures are not uniformly log-concave"
        )));
    }
    let rho = beta * v0_yy_min * (-beta * (v1_max - v1_min)).exp();
    let r = match (model.x_domain, model.confinement) {
        (XDomain::Torus, _) => 4.0 * PI * PI,
        (XDomain::Interval { .. }, Confinement::Harmonic { alpha, .. }) if alpha > 0.0 => beta * alpha,
        _ => {
            return Err(AbfError::ConstantsUnavailable(
                "macroscopic rate needs the torus or an alpha-convex confinement".into(),
            ))
        }
    };
    Ok(ConvergenceConstants {
        m,
        m_coupling,
        rho,
        r,
        lambda: ConvergenceConstants::overall_rate(beta, rho, m, r),
        beta,
    })
}

/// `|P grad F|` at `p`: exact mixed derivative for `xi = x`, central
/// differences otherwise.
fn tangential_force_gradient(model: &ModelProblem, p: Point) -> Result<f64> {
    if model.xi.is_linear_x() {
        return Ok(model.potential.hessian(p)[(0, 1)].abs());
    }
    let h = 1e-5;
    let ex = Vector2::new(h, 0.0);
    let ey = Vector2::new(0.0, h);
    let grad_f = Vector2::new(
        (model.local_mean_force(p + ex)? - model.local_mean_force(p - ex)?) / (2.0 * h),
        (model.local_mean_force(p + ey)? - model.local_mean_force(p - ey)?) / (2.0 * h),
    );
    let (proj, _) = model.projections(p)?;
    Ok((proj * grad_f).norm())
}
