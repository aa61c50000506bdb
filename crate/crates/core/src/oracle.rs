//! Deterministic quadrature oracle: free energy, mean force, equilibrium
//! densities and conditional expectations of the local mean force.

use rayon::prelude::*;

use crate::error::{AbfError, Result};
use crate::fields::{ModelProblem, Point, XDomain};
use crate::grid::{Density1d, DensityField, Grid2d};

/// Default floor on slice mass below which a conditional expectation is
/// refused.
pub const DEFAULT_SLICE_MASS_FLOOR: f64 = 1e-30;

/// Composite trapezoid rule on the `y` slice, halving the spacing until the
/// relative change drops under `rel_tol` or `max_nodes` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YQuadrature {
    pub initial_intervals: usize,
    pub rel_tol: f64,
    pub max_nodes: usize,
}

impl Default for YQuadrature {
    fn default() -> Self {
        Self { initial_intervals: 64, rel_tol: 1e-10, max_nodes: 1 << 16 }
    }
}

impl YQuadrature {
    /// Same rule started from twice as many intervals.
    pub fn doubled(&self) -> Self {
        Self { initial_intervals: 2 * self.initial_intervals, max_nodes: 2 * self.max_nodes, ..*self }
    }
}

/// Slice integrals at one value of the reaction coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceIntegrals {
    /// `Z_z = int exp(-beta V(z, y)) dy`.
    pub z_sigma: f64,
    /// `A'(z) = Z_z^-1 int F exp(-beta V) dy`.
    pub mean_force: f64,
    pub nodes: usize,
}

/// Slice integrals for `xi = x`, where the level set is a vertical line and
/// the surface measure is `dy`.
pub fn slice_integrals(model: &ModelProblem, z: f64, quad: &YQuadrature) -> Result<SliceIntegrals> {
    let (lo, hi) = (model.y_domain.lo, model.y_domain.hi);
    let beta = model.beta;
    let eval = |y: f64| -> Result<(f64, f64)> {
        let p = Point::new(z, y);
        let w = (-beta * model.potential.value(p)).exp();
        let f = model.local_mean_force(p)?;
        Ok((w, f * w))
    };

    let mut n = quad.initial_intervals.max(1);
    let mut h = (hi - lo) / n as f64;
    let (w0, f0) = eval(lo)?;
    let (w1, f1) = eval(hi)?;
    let (mut sw, mut sf) = (0.5 * (w0 + w1), 0.5 * (f0 + f1));
    for i in 1..n {
        let (w, f) = eval(lo + i as f64 * h)?;
        sw += w;
        sf += f;
    }
    let mut z_sigma = sw * h;
    let mut mean_force = sf / sw;
    loop {
        if n + 1 > quad.max_nodes {
            break;
        }
        // add the midpoints of the current intervals
        for i in 0..n {
            let (w, f) = eval(lo + (i as f64 + 0.5) * h)?;
            sw += w;
            sf += f;
        }
        n *= 2;
        h *= 0.5;
        let z_next = sw * h;
        let mf_next = sf / sw;
        let dz = ((z_next - z_sigma) / z_next).abs();
        let dmf = (mf_next - mean_force).abs() / mean_force.abs().max(1.0);
        z_sigma = z_next;
        mean_force = mf_next;
        if !(z_sigma > 0.0 && z_sigma.is_finite()) {
            return Err(AbfError::NormalizerUnderflow(format!("slice partition function {z_sigma:e} at z = {z}")));
        }
        if dz < quad.rel_tol && dmf < quad.rel_tol {
            return Ok(SliceIntegrals { z_sigma, mean_force, nodes: n + 1 });
        }
        if 2 * n + 1 > quad.max_nodes {
            return Err(AbfError::QuadratureNotConverged { z, change: dz.max(dmf), nodes: n + 1 });
        }
    }
    Err(AbfError::QuadratureNotConverged { z, change: f64::NAN, nodes: n + 1 })
}

/// Free energy `A`, mean force `A'` and slice partition function on a grid of
/// reaction-coordinate values, with `A(z_grid[0]) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyProfile {
    pub z_grid: Vec<f64>,
    pub a_values: Vec<f64>,
    pub aprime_values: Vec<f64>,
    pub z_sigma_values: Vec<f64>,
    pub beta: f64,
    /// Period of the reaction coordinate, if it lives on a torus.
    pub period: Option<f64>,
}

impl FreeEnergyProfile {
    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    /// Locate the Hermite segment holding `z`: (left node, right node, left z,
    /// right z, left index, right index).
    fn segment(&self, z: f64) -> (f64, f64, usize, usize, f64) {
        let n = self.z_grid.len();
        let first = self.z_grid[0];
        let last = self.z_grid[n - 1];
        let mut z = z;
        if let Some(p) = self.period {
            z = first + (z - first).rem_euclid(p);
            if z > last {
                // wrap-around segment between the last node and first + period
                return (last, first + p, n - 1, 0, z);
            }
        }
        let k = match self.z_grid.binary_search_by(|v| v.partial_cmp(&z).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 2),
        };
        (self.z_grid[k], self.z_grid[k + 1], k, k + 1, z)
    }

    /// Cubic Hermite interpolation of `A` using the tabulated mean force as
    /// slopes; fourth-order accurate.
    pub fn free_energy_at(&self, z: f64) -> f64 {
        if self.len() == 1 {
            return self.a_values[0];
        }
        let (z0, z1, i0, i1, z) = self.segment(z);
        let h = z1 - z0;
        let t = (z - z0) / h;
        let (a0, a1) = (self.a_values[i0], self.a_values[i1]);
        let (d0, d1) = (self.aprime_values[i0], self.aprime_values[i1]);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * a0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * a1
            + (t3 - t2) * h * d1
    }

    /// Linear interpolation of the mean force.
    pub fn mean_force_at(&self, z: f64) -> f64 {
        if self.len() == 1 {
            return self.aprime_values[0];
        }
        let (z0, z1, i0, i1, z) = self.segment(z);
        let t = (z - z0) / (z1 - z0);
        (1.0 - t) * self.aprime_values[i0] + t * self.aprime_values[i1]
    }

    /// Mean of `A'` over `[lo, hi]`, i.e. `(A(hi) - A(lo)) / (hi - lo)`.
    pub fn bin_average_mean_force(&self, lo: f64, hi: f64) -> f64 {
        // A is periodic on the torus, so no seam correction is needed
        (self.free_energy_at(hi) - self.free_energy_at(lo)) / (hi - lo)
    }
}

/// Free energy and mean force by slice quadrature. Slices are independent and
/// computed in parallel, assembled in `z` order.
pub fn compute_free_energy(model: &ModelProblem, z_grid: &[f64], quad: &YQuadrature) -> Result<FreeEnergyProfile> {
    model.validate()?;
    model.require_linear_x()?;
    if z_grid.is_empty() {
        return Err(AbfError::InvalidArgument("empty z grid".into()));
    }
    if z_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AbfError::InvalidArgument("z grid must be strictly increasing".into()));
    }
    let slices: Vec<SliceIntegrals> = z_grid
        .par_iter()
        .map(|&z| slice_integrals(model, z, quad))
        .collect::<Result<_>>()?;
    let ln_z0 = slices[0].z_sigma.ln();
    Ok(FreeEnergyProfile {
        z_grid: z_grid.to_vec(),
        a_values: slices.iter().map(|s| -(s.z_sigma.ln() - ln_z0) / model.beta).collect(),
        aprime_values: slices.iter().map(|s| s.mean_force).collect(),
        z_sigma_values: slices.iter().map(|s| s.z_sigma).collect(),
        beta: model.beta,
        period: match model.x_domain {
            XDomain::Torus => Some(1.0),
            XDomain::Interval { .. } => None,
        },
    })
}

/// `n` equispaced points covering the reaction-coordinate range (the torus
/// excludes its right end).
pub fn default_z_grid(model: &ModelProblem, n: usize) -> Vec<f64> {
    let (lo, hi) = model.x_domain.bounds();
    match model.x_domain {
        XDomain::Torus => (0..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect(),
        XDomain::Interval { .. } => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect(),
    }
}

/// Largest discrepancy between the derivative of the free energy (taken by
/// Richardson-extrapolated centred differences of `-beta^-1 ln Z_z` with step
/// `delta`) and the quadrature mean force.
pub fn mean_force_consistency(
    model: &ModelProblem,
    profile: &FreeEnergyProfile,
    quad: &YQuadrature,
    delta: f64,
) -> Result<f64> {
    let beta = model.beta;
    let a = |z: f64| -> Result<f64> { Ok(-slice_integrals(model, z, quad)?.z_sigma.ln() / beta) };
    let diffs: Vec<f64> = profile
        .z_grid
        .par_iter()
        .zip(profile.aprime_values.par_iter())
        .map(|(&z, &ap)| -> Result<f64> {
            let d1 = (a(z + delta)? - a(z - delta)?) / (2.0 * delta);
            let d2 = (a(z + 0.5 * delta)? - a(z - 0.5 * delta)?) / delta;
            let d = (4.0 * d2 - d1) / 3.0;
            Ok((d - ap).abs())
        })
        .collect::<Result<_>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Equilibrium density of the biased dynamics and its reaction-coordinate
/// marginal, tabulated at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDensities {
    pub psi_inf: DensityField,
    /// Discrete marginal of `psi_inf`.
    pub psi_xi_inf: Density1d,
    /// `int exp(-beta V)` over the truncated domain.
    pub z_total: f64,
    /// `int exp(-beta W)` over the reaction-coordinate range.
    pub z_xi: f64,
}

impl EquilibriumDensities {
    /// Conditional equilibrium density on column `i`, normalized in `y`.
    pub fn conditional_slice(&self, i: usize) -> Vec<f64> {
        let col = self.psi_inf.column(i);
        let mass: f64 = col.iter().sum::<f64>() * self.psi_inf.grid.y.h();
        col.iter().map(|v| v / mass).collect()
    }
}

/// Tabulate `psi_inf ~ exp(-beta (V - A o xi + W o xi))` on `grid`, with `A`
/// taken from `profile` by Hermite interpolation.
pub fn compute_equilibrium(model: &ModelProblem, profile: &FreeEnergyProfile, grid: Grid2d) -> Result<EquilibriumDensities> {
    model.validate()?;
    model.require_linear_x()?;
    let beta = model.beta;
    if profile.period.is_none() {
        let (first, last) = (profile.z_grid[0], profile.z_grid[profile.len() - 1]);
        if grid.x.center(0) < first - 1e-12 || grid.x.center(grid.x.n - 1) > last + 1e-12 {
            return Err(AbfError::InvalidArgument("free-energy profile does not cover the grid".into()));
        }
    }
    let mut exponent = Vec::with_capacity(grid.len());
    let mut gibbs_exponent = Vec::with_capacity(grid.len());
    for i in 0..grid.x.n {
        let x = grid.x.center(i);
        let a = profile.free_energy_at(x);
        let w = model.confinement.value(x);
        for j in 0..grid.y.n {
            let v = model.potential.value(Point::new(x, grid.y.center(j)));
            exponent.push(-beta * (v - a + w));
            gibbs_exponent.push(-beta * v);
        }
    }
    let shift = exponent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = exponent.iter().map(|e| (e - shift).exp()).collect();
    let mut psi_inf = DensityField { grid, values, time: 0.0 };
    psi_inf.normalize()?;

    let area = grid.cell_area();
    let z_total: f64 = gibbs_exponent.iter().map(|e| e.exp()).sum::<f64>() * area;
    let z_xi: f64 = (0..grid.x.n).map(|i| (-beta * model.confinement.value(grid.x.center(i))).exp()).sum::<f64>() * grid.x.h();
    if !(z_total > 0.0 && z_total.is_finite()) {
        return Err(AbfError::NormalizerUnderflow(format!("Z = {z_total:e}")));
    }
    let psi_xi_inf = psi_inf.marginal();
    Ok(EquilibriumDensities { psi_inf, psi_xi_inf, z_total, z_xi })
}

/// Conditional expectation of the local mean force on the column containing
/// `z`, using the cell-midpoint rule in `y`.
pub fn conditional_expectation_of_f(model: &ModelProblem, field: &DensityField, z: f64, mass_floor: f64) -> Result<f64> {
    model.require_linear_x()?;
    let i = field
        .grid
        .x
        .cell_of(z)
        .ok_or_else(|| AbfError::InvalidArgument(format!("z = {z} outside the grid")))?;
    column_conditional_mean(model, field, i, mass_floor)
}

/// Same as [`conditional_expectation_of_f`] addressed by column index.
pub fn column_conditional_mean(model: &ModelProblem, field: &DensityField, i: usize, mass_floor: f64) -> Result<f64> {
    let x = field.grid.x.center(i);
    let hy = field.grid.y.h();
    let col = field.column(i);
    let mut mass = 0.0;
    let mut acc = 0.0;
    for (j, &v) in col.iter().enumerate() {
        let f = model.local_mean_force(Point::new(x, field.grid.y.center(j)))?;
        mass += v;
        acc += f * v;
    }
    if !(mass * hy > mass_floor) {
        return Err(AbfError::EmptySlice { z: x, mass: mass * hy, floor: mass_floor });
    }
    Ok(acc / mass)
}
