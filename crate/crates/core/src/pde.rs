//! Explicit finite-volume solvers for the Fokker-Planck equations at unit
//! inverse temperature.
//!
//! Face fluxes are `u * psi_face - D * (psi_R - psi_L) / h` with `u` the drift
//! at the face. `psi_face` is the centred average where the cell Peclet number
//! `|u| h / (2 D)` is at most one and the upwind value otherwise; either way
//! every update coefficient is nonnegative under the time-step bound, so the
//! scheme preserves positivity and, being conservative, mass.

use rayon::prelude::*;

use crate::bias::BiasProfile;
use crate::error::{AbfError, Result};
use crate::fields::{Confinement, ModelProblem, Point};
use crate::grid::{Axis, Density1d, DensityField, Grid2d};
use crate::oracle::DEFAULT_SLICE_MASS_FLOOR;

/// Which 2D equation to advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fp2dVariant {
    /// Adaptive bias, metric form of the dynamics.
    AbfMetric,
    /// Adaptive bias, plain gradient form. Coincides with `AbfMetric` when
    /// `xi = x`.
    AbfPlain,
    /// Bias fixed in time.
    FrozenBias,
}

/// Which 1D marginal equation to advance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalKind {
    /// `d_t psi = d_zz psi` on the unit torus.
    HeatTorus,
    /// `d_t psi = d_z (W' psi + d_z psi)` on an interval, zero flux at the ends.
    DriftLine(Confinement),
}

/// Largest admissible explicit step for grid spacing `h`, diffusion `d` and
/// drift bound `max_drift`.
pub fn admissible_dt(h: f64, d: f64, max_drift: f64) -> f64 {
    h * h / (4.0 * d + 2.0 * max_drift * h)
}

/// Flux through a face with left/right densities `l`, `r`.
#[inline(always)]
fn face_flux(u: f64, l: f64, r: f64, d: f64, h: f64) -> f64 {
    let face = if u.abs() * h <= 2.0 * d {
        0.5 * (l + r)
    } else if u > 0.0 {
        l
    } else {
        r
    };
    u * face - d * (r - l) / h
}

/// Solver state for the 2D equation with `xi = x`, holding derivatives of
/// `V` and `W` at the faces where the fluxes need them.
#[derive(Debug, Clone)]
pub struct Fp2dSolver {
    pub grid: Grid2d,
    pub variant: Fp2dVariant,
    /// `d_x V` on x-face `i` (left face of column `i`), row `j`; `n_x * n_y`.
    dxv_xface: Vec<f64>,
    /// Row extremes of `d_x V` per x-face, for the step bound.
    dxv_xface_range: Vec<(f64, f64)>,
    /// `d_y V` on y-face `j` of column `i`; `n_x * (n_y + 1)`.
    dyv_yface: Vec<f64>,
    max_abs_dyv: f64,
    /// `d_x V` at cell centres.
    dxv_cell: Vec<f64>,
    /// `W'` at x-faces.
    wprime_xface: Vec<f64>,
    /// Current biasing force per column (adaptive) or per x-face (frozen).
    bias_column: Vec<f64>,
    frozen_face: Vec<f64>,
    mass_floor: f64,
    scratch: Vec<f64>,
}

impl Fp2dSolver {
    pub fn new(model: &ModelProblem, grid: Grid2d, variant: Fp2dVariant) -> Result<Self> {
        model.validate()?;
        model.require_unit_beta()?;
        model.require_linear_x()?;
        let (nx, ny) = (grid.x.n, grid.y.n);
        let mut dxv_xface = Vec::with_capacity(nx * ny);
        let mut dxv_cell = Vec::with_capacity(nx * ny);
        let mut dyv_yface = Vec::with_capacity(nx * (ny + 1));
        for i in 0..nx {
            let xf = grid.x.face(i);
            let xc = grid.x.center(i);
            for j in 0..ny {
                let yc = grid.y.center(j);
                dxv_xface.push(model.potential.gradient(Point::new(xf, yc)).x);
                dxv_cell.push(model.local_mean_force(Point::new(xc, yc))?);
            }
            for j in 0..=ny {
                dyv_yface.push(model.potential.gradient(Point::new(xc, grid.y.face(j))).y);
            }
        }
        if dxv_xface.iter().chain(&dyv_yface).any(|v| !v.is_finite()) {
            return Err(AbfError::NonFiniteEvaluation { quantity: "potential gradient on faces", x: f64::NAN, y: f64::NAN });
        }
        let dxv_xface_range = (0..nx)
            .map(|i| {
                let row = &dxv_xface[i * ny..(i + 1) * ny];
                row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .collect();
        let max_abs_dyv = dyv_yface.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wprime_xface = (0..nx).map(|i| model.confinement.derivative(grid.x.face(i))).collect();
        Ok(Self {
            grid,
            variant,
            dxv_xface,
            dxv_xface_range,
            dyv_yface,
            max_abs_dyv,
            dxv_cell,
            wprime_xface,
            bias_column: vec![0.0; nx],
            frozen_face: vec![0.0; nx],
            mass_floor: DEFAULT_SLICE_MASS_FLOOR,
            scratch: vec![0.0; nx * ny],
        })
    }

    /// Fix the bias used by `FrozenBias` from a function of `z`, evaluated on
    /// the x-faces.
    pub fn freeze_with(&mut self, f: impl Fn(f64) -> f64) {
        self.frozen_face = (0..self.grid.x.n).map(|i| f(self.grid.x.face(i))).collect();
    }

    /// Fix the bias from a bin profile, linearly interpolated to the faces.
    pub fn freeze_from_profile(&mut self, profile: &BiasProfile) {
        self.freeze_with(|z| profile.interpolate(z));
    }

    /// Current column bias (adaptive variants).
    pub fn bias_columns(&self) -> &[f64] {
        &self.bias_column
    }

    /// Recompute the per-column conditional mean of `F` from `field`. Columns
    /// with mass under the floor keep their previous value; their count is
    /// returned.
    pub fn update_bias(&mut self, field: &DensityField) -> usize {
        let ny = self.grid.y.n;
        let hy = self.grid.y.h();
        let mut empty = 0;
        for i in 0..self.grid.x.n {
            let col = field.column(i);
            let f = &self.dxv_cell[i * ny..(i + 1) * ny];
            let (mut m, mut acc) = (0.0, 0.0);
            for (v, fv) in col.iter().zip(f) {
                m += v;
                acc += v * fv;
            }
            if m * hy > self.mass_floor {
                self.bias_column[i] = acc / m;
            } else {
                empty += 1;
            }
        }
        empty
    }

    /// Bias at x-face `i`.
    #[inline]
    fn face_bias(&self, i: usize) -> f64 {
        match self.variant {
            Fp2dVariant::FrozenBias => self.frozen_face[i],
            _ => {
                let nx = self.grid.x.n;
                let left = if i == 0 { nx - 1 } else { i - 1 };
                0.5 * (self.bias_column[left] + self.bias_column[i])
            }
        }
    }

    /// Largest `|drift|` component on any face under the current bias.
    pub fn max_drift(&self) -> f64 {
        let mut m = self.max_abs_dyv;
        for i in 0..self.grid.x.n {
            let shift = self.wprime_xface[i] - self.face_bias(i);
            let (lo, hi) = self.dxv_xface_range[i];
            m = m.max((lo + shift).abs()).max((hi + shift).abs());
        }
        m
    }

    /// Step bound under the current bias.
    pub fn admissible_dt(&self) -> f64 {
        admissible_dt(self.grid.x.h().min(self.grid.y.h()), 1.0, self.max_drift())
    }

    /// Step bound valid for every bias the adaptive variants can produce: the
    /// column bias is a convex average of `d_x V` and so bounded by its
    /// largest magnitude.
    pub fn uniform_admissible_dt(&self) -> f64 {
        let bias_bound = match self.variant {
            Fp2dVariant::FrozenBias => self.frozen_face.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            _ => self.dxv_cell.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        let mut m = self.max_abs_dyv;
        for i in 0..self.grid.x.n {
            let (lo, hi) = self.dxv_xface_range[i];
            m = m.max(lo.abs().max(hi.abs()) + self.wprime_xface[i].abs() + bias_bound);
        }
        admissible_dt(self.grid.x.h().min(self.grid.y.h()), 1.0, m)
    }

    /// Advance `field` by `dt`. Adaptive variants first refresh the bias from
    /// `field`. Returns the number of columns that kept a stale bias.
    pub fn step(&mut self, field: &mut DensityField, dt: f64) -> Result<usize> {
        if field.grid != self.grid {
            return Err(AbfError::InvalidArgument("field and solver grids differ".into()));
        }
        let empty = match self.variant {
            Fp2dVariant::FrozenBias => 0,
            _ => self.update_bias(field),
        };
        let limit = self.admissible_dt();
        if !(dt > 0.0 && dt <= limit) {
            return Err(AbfError::CflViolation { dt, admissible: limit });
        }
        let (nx, ny) = (self.grid.x.n, self.grid.y.n);
        let (hx, hy) = (self.grid.x.h(), self.grid.y.h());
        let periodic = self.grid.x.periodic;
        let face_bias: Vec<f64> = (0..nx).map(|i| self.face_bias(i) - self.wprime_xface[i]).collect();
        let mut out = std::mem::take(&mut self.scratch);
        let src = &field.values;
        let this = &*self;
        let (cx, cy) = (dt / hx, dt / hy);
        out.par_chunks_mut(ny).enumerate().for_each(|(i, col_out)| {
            let col = &src[i * ny..(i + 1) * ny];
            let left_i = if i == 0 { nx - 1 } else { i - 1 };
            let right_i = if i + 1 == nx { 0 } else { i + 1 };
            let has_left = periodic || i > 0;
            let has_right = periodic || i + 1 < nx;
            let left = &src[left_i * ny..(left_i + 1) * ny];
            let right = &src[right_i * ny..(right_i + 1) * ny];
            let dxl = &this.dxv_xface[i * ny..(i + 1) * ny];
            let dxr = &this.dxv_xface[right_i * ny..(right_i + 1) * ny];
            let bl = face_bias[i];
            let br = face_bias[right_i];
            let dyv = &this.dyv_yface[i * (ny + 1)..(i + 1) * (ny + 1)];
            for j in 0..ny {
                let p = col[j];
                let fl = if has_left { face_flux(bl - dxl[j], left[j], p, 1.0, hx) } else { 0.0 };
                let fr = if has_right { face_flux(br - dxr[j], p, right[j], 1.0, hx) } else { 0.0 };
                let fb = if j > 0 { face_flux(-dyv[j], col[j - 1], p, 1.0, hy) } else { 0.0 };
                let ft = if j + 1 < ny { face_flux(-dyv[j + 1], p, col[j + 1], 1.0, hy) } else { 0.0 };
                col_out[j] = p - cx * (fr - fl) - cy * (ft - fb);
            }
        });
        if let Some((cell, &value)) = out.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            self.scratch = out;
            return Err(AbfError::NegativeDensity { cell, value });
        }
        self.scratch = std::mem::replace(&mut field.values, out);
        field.time += dt;
        Ok(empty)
    }

    /// Copy the current column bias into a profile with one bin per column.
    pub fn write_profile(&self, profile: &mut BiasProfile, field: &DensityField) -> Result<()> {
        if profile.n_bins() != self.grid.x.n {
            return Err(AbfError::InvalidArgument("profile needs one bin per grid column".into()));
        }
        let values: Vec<f64> = match self.variant {
            Fp2dVariant::FrozenBias => (0..self.grid.x.n).map(|i| profile.interpolate(self.grid.x.center(i))).collect(),
            _ => self.bias_column.clone(),
        };
        profile.set_forces(&values)?;
        let hy = self.grid.y.h();
        for i in 0..self.grid.x.n {
            profile.occupancy[i] = u64::from(field.column(i).iter().sum::<f64>() * hy > self.mass_floor);
        }
        Ok(())
    }
}

/// One step of the 2D equation. The adaptive variants recompute `profile`
/// (one bin per column) from `field` before stepping; `FrozenBias` reads it.
/// Builds a fresh solver each call; use [`Fp2dSolver`] for long runs.
pub fn fp2d_step(field: &DensityField, model: &ModelProblem, profile: &mut BiasProfile, dt: f64, variant: Fp2dVariant) -> Result<DensityField> {
    let mut solver = Fp2dSolver::new(model, field.grid, variant)?;
    if variant == Fp2dVariant::FrozenBias {
        solver.freeze_from_profile(profile);
    }
    let mut next = field.clone();
    solver.step(&mut next, dt)?;
    if variant != Fp2dVariant::FrozenBias {
        solver.write_profile(profile, field)?;
    }
    Ok(next)
}

/// `y`-integrated density per column.
pub fn extract_marginal(field: &DensityField) -> Density1d {
    field.marginal()
}

/// Solver for the 1D marginal equations.
#[derive(Debug, Clone)]
pub struct Marginal1dSolver {
    pub axis: Axis,
    pub kind: MarginalKind,
    /// Drift `-W'` on the interior faces `1..n`.
    drift_face: Vec<f64>,
    scratch: Vec<f64>,
}

impl Marginal1dSolver {
    pub fn new(axis: Axis, kind: MarginalKind) -> Result<Self> {
        let drift_face = match kind {
            MarginalKind::HeatTorus => {
                if !axis.periodic {
                    return Err(AbfError::InvalidArgument("heat_torus needs a periodic axis".into()));
                }
                vec![0.0; axis.n + 1]
            }
            MarginalKind::DriftLine(w) => {
                if axis.periodic {
                    return Err(AbfError::InvalidArgument("drift_line needs a bounded axis".into()));
                }
                (0..=axis.n).map(|i| -w.derivative(axis.face(i))).collect()
            }
        };
        Ok(Self { axis, kind, drift_face, scratch: vec![0.0; axis.n] })
    }

    /// Solver on the model's reaction-coordinate range. The line case takes
    /// the model's confinement.
    pub fn for_model(model: &ModelProblem, n: usize) -> Result<Self> {
        model.require_unit_beta()?;
        let (lo, hi) = model.x_domain.bounds();
        let periodic = model.x_domain.is_periodic();
        let kind = if periodic { MarginalKind::HeatTorus } else { MarginalKind::DriftLine(model.confinement) };
        Self::new(Axis::new(lo, hi, n, periodic), kind)
    }

    pub fn admissible_dt(&self) -> f64 {
        let max = self.drift_face.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        admissible_dt(self.axis.h(), 1.0, max)
    }

    pub fn step(&mut self, field: &mut Density1d, dt: f64) -> Result<()> {
        if field.axis != self.axis {
            return Err(AbfError::InvalidArgument("field and solver axes differ".into()));
        }
        let limit = self.admissible_dt();
        if !(dt > 0.0 && dt <= limit) {
            return Err(AbfError::CflViolation { dt, admissible: limit });
        }
        let n = self.axis.n;
        let h = self.axis.h();
        let v = &field.values;
        let flux = |f: usize| -> f64 {
            // face f sits between cells f - 1 and f
            if self.axis.periodic {
                let l = if f == 0 { n - 1 } else { f - 1 };
                face_flux(self.drift_face[f], v[l], v[f % n], 1.0, h)
            } else if f == 0 || f == n {
                0.0
            } else {
                face_flux(self.drift_face[f], v[f - 1], v[f], 1.0, h)
            }
        };
        let c = dt / h;
        let mut out = std::mem::take(&mut self.scratch);
        let mut left = flux(0);
        for (i, o) in out.iter_mut().enumerate() {
            let right = flux(i + 1);
            *o = v[i] - c * (right - left);
            left = right;
        }
        if let Some((cell, &value)) = out.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            self.scratch = out;
            return Err(AbfError::NegativeDensity { cell, value });
        }
        self.scratch = std::mem::replace(&mut field.values, out);
        field.time += dt;
        Ok(())
    }
}

/// One step of a 1D marginal equation.
pub fn marginal_step(field: &Density1d, kind: MarginalKind, dt: f64) -> Result<Density1d> {
    let mut solver = Marginal1dSolver::new(field.axis, kind)?;
    let mut next = field.clone();
    solver.step(&mut next, dt)?;
    Ok(next)
}

/// Largest step count-aligned `dt` not exceeding `limit` that lands exactly
/// on `t_end`: returns `(dt, steps)`.
pub fn aligned_dt(t_end: f64, limit: f64) -> (f64, usize) {
    let steps = (t_end / limit).ceil().max(1.0) as usize;
    (t_end / steps as f64, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{TestPotential, YDomain};
    use crate::oracle::{compute_equilibrium, compute_free_energy, default_z_grid, YQuadrature};
    use std::f64::consts::PI;

    fn cos_amplitude(d: &Density1d) -> f64 {
        let h = d.axis.h();
        2.0 * d.values.iter().enumerate().map(|(i, v)| v * (2.0 * PI * d.axis.center(i)).cos()).sum::<f64>() * h
    }

    #[test]
    fn heat_mode_decays_at_the_heat_kernel_rate() {
        let axis = Axis::new(0.0, 1.0, 256, true);
        let eps = 0.1;
        let mut d = Density1d::from_fn(axis, |x| 1.0 + eps * (2.0 * PI * x).cos()).unwrap();
        let a0 = cos_amplitude(&d);
        let mut s = Marginal1dSolver::new(axis, MarginalKind::HeatTorus).unwrap();
        let (dt, n) = aligned_dt(0.05, s.admissible_dt());
        for _ in 0..n {
            s.step(&mut d, dt).unwrap();
        }
        let expected = a0 * (-4.0 * PI * PI * 0.05f64).exp();
        assert!((cos_amplitude(&d) / expected - 1.0).abs() < 0.01);
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_is_stationary_on_the_torus() {
        let axis = Axis::new(0.0, 1.0, 64, true);
        let mut d = Density1d::uniform(axis);
        let mut s = Marginal1dSolver::new(axis, MarginalKind::HeatTorus).unwrap();
        let dt = s.admissible_dt();
        for _ in 0..100 {
            s.step(&mut d, dt).unwrap();
        }
        assert!(d.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn ou_mean_decays_exponentially() {
        let alpha = 1.0;
        let axis = Axis::new(-8.0, 8.0, 800, false);
        let kind = MarginalKind::DriftLine(Confinement::Harmonic { alpha, center: 0.0 });
        let mut d = Density1d::from_fn(axis, |z| (-(z - 1.0).powi(2) / 2.0).exp()).unwrap();
        let m0 = d.mean();
        let mut s = Marginal1dSolver::new(axis, kind).unwrap();
        let t = 1.0;
        let (dt, n) = aligned_dt(t, s.admissible_dt());
        for _ in 0..n {
            s.step(&mut d, dt).unwrap();
        }
        let expected = m0 * (-alpha * t).exp();
        assert!((d.mean() / expected - 1.0).abs() < 0.02, "{} vs {expected}", d.mean());
    }

    #[test]
    fn step_bound_is_enforced() {
        let axis = Axis::new(0.0, 1.0, 32, true);
        let d = Density1d::uniform(axis);
        let limit = Marginal1dSolver::new(axis, MarginalKind::HeatTorus).unwrap().admissible_dt();
        match marginal_step(&d, MarginalKind::HeatTorus, 1.5 * limit) {
            Err(AbfError::CflViolation { admissible, .. }) => assert_eq!(admissible, limit),
            other => panic!("expected a step-bound refusal, got {other:?}"),
        }
    }

    #[test]
    fn pure_diffusion_in_2d() {
        let model = ModelProblem::test_family(TestPotential::new(0.0, 0.0, 0.0), 1.0).with_y_domain(YDomain::symmetric(0.5));
        let grid = Grid2d::for_model(&model, 64, 8);
        let eps = 0.1;
        let mut field = DensityField::from_fn(grid, |x, _| 1.0 + eps * (2.0 * PI * x).cos()).unwrap();
        let a0 = cos_amplitude(&field.marginal());
        let mut s = Fp2dSolver::new(&model, grid, Fp2dVariant::FrozenBias).unwrap();
        let (dt, n) = aligned_dt(0.02, s.admissible_dt());
        for _ in 0..n {
            s.step(&mut field, dt).unwrap();
        }
        let ratio = cos_amplitude(&field.marginal()) / a0;
        assert!((ratio / (-4.0 * PI * PI * 0.02f64).exp() - 1.0).abs() < 5e-3, "{ratio}");
    }

    #[test]
    fn mass_is_conserved_over_many_steps() {
        let model = ModelProblem::reference();
        let grid = Grid2d::for_model(&model, 16, 16);
        let mut field = DensityField::from_fn(grid, |x, y| (1.0 + 0.5 * (2.0 * PI * x).sin()) * (-y * y).exp()).unwrap();
        let mut s = Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric).unwrap();
        let dt = 0.5 * s.admissible_dt();
        for _ in 0..10_000 {
            s.step(&mut field, dt).unwrap();
        }
        assert!((field.mass() - 1.0).abs() < 1e-12, "{}", field.mass() - 1.0);
    }

    #[test]
    fn equilibrium_is_nearly_stationary() {
        let model = ModelProblem::reference();
        let grid = Grid2d::for_model(&model, 128, 128);
        let profile = compute_free_energy(&model, &default_z_grid(&model, 256), &YQuadrature::default()).unwrap();
        let eq = compute_equilibrium(&model, &profile, grid).unwrap();
        let mut field = eq.psi_inf.clone();
        let mut s = Fp2dSolver::new(&model, grid, Fp2dVariant::FrozenBias).unwrap();
        s.freeze_with(|z| profile.mean_force_at(z));
        let dt = s.admissible_dt();
        s.step(&mut field, dt).unwrap();
        let change = field.values.iter().zip(&eq.psi_inf.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change < 1e-6, "{change}");
    }

    #[test]
    fn adaptive_bias_matches_column_means() {
        let model = ModelProblem::reference();
        let grid = Grid2d::for_model(&model, 8, 32);
        let field = DensityField::from_fn(grid, |x, y| (1.0 + 0.5 * (2.0 * PI * x).sin()) * (-(y - 0.3).powi(2)).exp()).unwrap();
        let mut profile = BiasProfile::for_model(&model, 8, 0.0);
        let next = fp2d_step(&field, &model, &mut profile, 1e-6, Fp2dVariant::AbfMetric).unwrap();
        for i in 0..8 {
            let m = crate::oracle::column_conditional_mean(&model, &field, i, 1e-30).unwrap();
            assert!((profile.force_values[i] - m).abs() < 1e-12);
        }
        assert!(next.time > 0.0);
    }

    #[test]
    fn refuses_non_unit_beta() {
        let model = ModelProblem::test_family(TestPotential::reference(), 2.0);
        let grid = Grid2d::for_model(&model, 8, 8);
        assert!(Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric).is_err());
        assert!(Fp2dSolver::new(&model.rescaled_to_unit_beta(), grid, Fp2dVariant::AbfMetric).is_ok());
    }
}
