//! Relative entropies, Fisher information, total variation, force error and
//! exponential-rate fits.
//!
//! All reductions run sequentially in index order, so results do not depend
//! on the thread count.

use crate::error::{AbfError, Result};
use crate::grid::{Density1d, DensityField};
use crate::oracle::{EquilibriumDensities, FreeEnergyProfile};

/// `sum p ln(p / q) * measure` with `0 ln 0 = 0`. Returns `+inf` if `p > 0`
/// where `q = 0`.
pub fn relative_entropy(p: &[f64], q: &[f64], measure: f64) -> f64 {
    assert_eq!(p.len(), q.len(), "densities on different grids");
    let mut acc = 0.0;
    for (k, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if !(b > 0.0) {
                log::warn!("relative entropy: support violation at cell {k} (p = {a:e}, q = {b:e})");
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc * measure
}

/// Relative entropy of two 1D densities.
pub fn relative_entropy_1d(p: &Density1d, q: &Density1d) -> f64 {
    relative_entropy(&p.values, &q.values, p.axis.h())
}

/// Relative entropy of two 2D densities.
pub fn relative_entropy_2d(p: &DensityField, q: &DensityField) -> f64 {
    relative_entropy(&p.values, &q.values, p.grid.cell_area())
}

/// `ln(p / q)` per cell, or the first cell where it is undefined.
fn log_ratio(p: &[f64], q: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    p.iter()
        .zip(q)
        .enumerate()
        .map(|(k, (&a, &b))| if a > 0.0 && b > 0.0 { Ok((a / b).ln()) } else { Err(k) })
        .collect()
}

/// Centred difference of `g` at `k` on a line of `n` values, periodic or
/// one-sided at the ends.
#[inline]
fn centred(g: impl Fn(usize) -> f64, k: usize, n: usize, h: f64, periodic: bool) -> f64 {
    if n == 1 {
        return 0.0;
    }
    if periodic {
        let l = if k == 0 { n - 1 } else { k - 1 };
        let r = if k + 1 == n { 0 } else { k + 1 };
        (g(r) - g(l)) / (2.0 * h)
    } else if k == 0 {
        (g(1) - g(0)) / h
    } else if k + 1 == n {
        (g(n - 1) - g(n - 2)) / h
    } else {
        (g(k + 1) - g(k - 1)) / (2.0 * h)
    }
}

/// `sum |d ln(p/q)|^2 p h` on a 1D grid. Needs `p, q > 0` everywhere;
/// otherwise `+inf`.
pub fn fisher_information_1d(p: &Density1d, q: &Density1d) -> f64 {
    let g = match log_ratio(&p.values, &q.values) {
        Ok(g) => g,
        Err(k) => {
            log::warn!("Fisher information: log ratio undefined at cell {k}");
            return f64::INFINITY;
        }
    };
    let (n, h, per) = (p.axis.n, p.axis.h(), p.axis.periodic);
    (0..n).map(|k| centred(|m| g[m], k, n, h, per).powi(2) * p.values[k]).sum::<f64>() * h
}

/// `sum |grad ln(p/q)|^2 p dA` on a 2D grid.
pub fn fisher_information_2d(p: &DensityField, q: &DensityField) -> f64 {
    let g = match log_ratio(&p.values, &q.values) {
        Ok(g) => g,
        Err(k) => {
            log::warn!("Fisher information: log ratio undefined at cell {k}");
            return f64::INFINITY;
        }
    };
    let grid = p.grid;
    let (nx, ny) = (grid.x.n, grid.y.n);
    let mut acc = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let dx = centred(|m| g[grid.index(m, j)], i, nx, grid.x.h(), grid.x.periodic);
            let dy = centred(|m| g[grid.index(i, m)], j, ny, grid.y.h(), false);
            acc += (dx * dx + dy * dy) * p.values[grid.index(i, j)];
        }
    }
    acc * grid.cell_area()
}

/// Fisher information of the conditional of `p` on column `i` relative to the
/// conditional of `q`, using only the derivative along the slice.
pub fn slice_fisher_information(p: &DensityField, q: &DensityField, i: usize) -> f64 {
    let (pc, qc) = (p.column(i), q.column(i));
    let g = match log_ratio(pc, qc) {
        Ok(g) => g,
        Err(k) => {
            log::warn!("slice Fisher information: log ratio undefined at column {i}, row {k}");
            return f64::INFINITY;
        }
    };
    let hy = p.grid.y.h();
    let ny = p.grid.y.n;
    let mass: f64 = pc.iter().sum::<f64>() * hy;
    (0..ny).map(|k| centred(|m| g[m], k, ny, hy, false).powi(2) * pc[k]).sum::<f64>() * hy / mass
}

/// `sum |p - q| h`, the total-variation distance in the `[0, 2]` convention.
pub fn tv_distance(p: &Density1d, q: &Density1d) -> f64 {
    p.l1_distance(q)
}

/// Entropy split of a 2D field relative to the equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyDecomposition {
    pub e_total: f64,
    pub e_macro: f64,
    pub e_micro: f64,
    /// Local entropy per column; `None` for excluded slices.
    pub local: Vec<Option<f64>>,
    pub excluded_slices: Vec<usize>,
    pub excluded_mass: f64,
    /// False when more than 1% of the mass sits in excluded slices.
    pub valid: bool,
}

/// Total, macroscopic and microscopic entropies of `field` relative to
/// `equil.psi_inf`. The total is computed directly from the 2D densities.
pub fn entropy_decomposition(field: &DensityField, equil: &EquilibriumDensities, mass_floor: f64) -> Result<EntropyDecomposition> {
    let q = &equil.psi_inf;
    if field.grid != q.grid {
        return Err(AbfError::InvalidArgument("field and equilibrium grids differ".into()));
    }
    let hx = field.grid.x.h();
    let hy = field.grid.y.h();
    let e_total = relative_entropy_2d(field, q);
    let pm = field.marginal();
    let qm = &equil.psi_xi_inf;
    let e_macro = relative_entropy_1d(&pm, qm);
    let mut local = Vec::with_capacity(field.grid.x.n);
    let mut excluded_slices = Vec::new();
    let mut excluded_mass = 0.0;
    let mut e_micro = 0.0;
    for i in 0..field.grid.x.n {
        let (a, b) = (pm.values[i], qm.values[i]);
        if !(a > mass_floor) || !(b > 0.0) {
            excluded_slices.push(i);
            excluded_mass += a * hx;
            local.push(None);
            continue;
        }
        let pc: Vec<f64> = field.column(i).iter().map(|v| v / a).collect();
        let qc: Vec<f64> = q.column(i).iter().map(|v| v / b).collect();
        let e = relative_entropy(&pc, &qc, hy);
        e_micro += a * e * hx;
        local.push(Some(e));
    }
    if !excluded_slices.is_empty() {
        log::info!("entropy split: {} slices excluded carrying mass {excluded_mass:e}", excluded_slices.len());
    }
    let valid = excluded_mass <= 0.01 * field.mass();
    Ok(EntropyDecomposition { e_total, e_macro, e_micro, local, excluded_slices, excluded_mass, valid })
}

/// `sum (bias_k - A'(z_k))^2 marginal_k h` over the cells of `marginal`,
/// with the oracle read at cell centres by linear interpolation.
pub fn force_error(bias: &[f64], oracle: &FreeEnergyProfile, marginal: &Density1d) -> Result<f64> {
    if bias.len() != marginal.axis.n {
        return Err(AbfError::InvalidArgument("bias and marginal lengths differ".into()));
    }
    let h = marginal.axis.h();
    Ok(bias
        .iter()
        .enumerate()
        .map(|(k, b)| (b - oracle.mean_force_at(marginal.axis.center(k))).powi(2) * marginal.values[k])
        .sum::<f64>()
        * h)
}

/// Result of a log-linear fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Positive for a decaying series.
    pub rate: f64,
    /// Fitted `ln(value)` at `t = 0`.
    pub log_intercept: f64,
    pub r_squared: f64,
    /// Points actually used.
    pub n_points: usize,
    /// The window was cut at a nonpositive value.
    pub shrunk: bool,
}

/// Least-squares slope of `ln(value)` against time over `window` (inclusive
/// time bounds, whole series if `None`). The window ends before the first
/// nonpositive value.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: Option<(f64, f64)>) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(AbfError::InvalidArgument("times and values differ in length".into()));
    }
    let (t0, t1) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut pts = Vec::new();
    let mut shrunk = false;
    for (&t, &v) in times.iter().zip(values) {
        if t < t0 || t > t1 {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            shrunk = true;
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 5 {
        return Err(AbfError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(AbfError::InvalidArgument("window holds a single time".into()));
    }
    let slope = sty / stt;
    let r_squared = if syy > 0.0 { (sty * sty / (stt * syy)).min(1.0) } else { 1.0 };
    Ok(DecayFit { rate: -slope, log_intercept: my - slope * mt, r_squared, n_points: pts.len(), shrunk })
}

/// One output row. Quantities not computed for a run are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub e_total: f64,
    pub e_macro: f64,
    pub e_micro: f64,
    pub fisher_macro: f64,
    pub tv_macro: f64,
    pub force_error_sq: f64,
    pub empty_bins: usize,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,E_total,E_macro,E_micro,fisher_macro,tv_macro,force_error_sq,empty_bins";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.time,
            self.e_total,
            self.e_macro,
            self.e_micro,
            self.fisher_macro,
            self.tv_macro,
            self.force_error_sq,
            self.empty_bins
        )
    }
}

/// Full record for a PDE field: entropies, macroscopic Fisher information and
/// total variation, and the force error of `bias` (one value per column).
pub fn pde_record(field: &DensityField, equil: &EquilibriumDensities, oracle: &FreeEnergyProfile, bias: &[f64], mass_floor: f64) -> Result<(DiagnosticsRecord, bool)> {
    let split = entropy_decomposition(field, equil, mass_floor)?;
    let marginal = field.marginal();
    let record = DiagnosticsRecord {
        time: field.time,
        e_total: split.e_total,
        e_macro: split.e_macro,
        e_micro: split.e_micro,
        fisher_macro: fisher_information_1d(&marginal, &equil.psi_xi_inf),
        tv_macro: tv_distance(&marginal, &equil.psi_xi_inf),
        force_error_sq: force_error(bias, oracle, &marginal)?,
        empty_bins: split.excluded_slices.len(),
    };
    Ok((record, split.valid))
}
