//! Interacting-replica simulation of the adaptive biasing force dynamics.
//!
//! Each step first re-estimates the biasing force from the current positions
//! (binned conditional averages of the local mean force), then moves every
//! replica by one Euler-Maruyama step of the biased dynamics.

use rayon::prelude::*;

use crate::bias::{BiasLookup, BiasProfile};
use crate::error::{AbfError, Result};
use crate::fields::{ModelProblem, Point, XDomain};
use crate::grid::{Axis, Density1d};
use crate::oracle::{slice_integrals, YQuadrature};
use crate::rng::{CounterRng, StreamCursor};

use nalgebra::Vector2;

/// Which form of the biased dynamics to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Drift and noise rescaled by `|grad xi|^-2` and `|grad xi|^-1`, with the
    /// `-beta^-1 ln |grad xi|^-2` correction in the potential.
    #[default]
    Metric,
    /// Plain gradient dynamics in the biased potential.
    Plain,
}

/// Initial distribution of the replicas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitDistribution {
    /// `x` uniform over its range, `y` uniform on `[y_lo, y_hi]`.
    Uniform { y_lo: f64, y_hi: f64 },
    /// I.i.d. draws from the unbiased Gibbs measure `exp(-beta V)`.
    Equilibrium,
    Point { x: f64, y: f64 },
}

/// Source of the Gaussian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Random,
    /// All increments zero; deterministic drift only.
    Zero,
}

/// Replica positions together with the generator that drives them.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub positions: Vec<Point>,
    pub seed: u64,
    pub time: f64,
    pub step_count: u64,
    pub warnings: Vec<String>,
    /// One cursor per particle, positioned at the slot of the next step.
    streams: Vec<StreamCursor>,
}

impl ParticleEnsemble {
    pub fn from_positions(positions: Vec<Point>, seed: u64) -> Self {
        let streams = step_streams(seed, positions.len());
        Self { positions, seed, time: 0.0, step_count: 0, warnings: Vec::new(), streams }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draw `n_particles` replicas. Slot 0 of every particle stream is reserved
/// for initialization.
pub fn init_ensemble(model: &ModelProblem, n_particles: usize, init: InitDistribution, seed: u64) -> Result<ParticleEnsemble> {
    model.validate()?;
    if n_particles == 0 {
        return Err(AbfError::InvalidArgument("need at least one particle".into()));
    }
    let rng = CounterRng::new(seed);
    let (xlo, xhi) = model.x_domain.bounds();
    let mut warnings = Vec::new();
    let positions: Vec<Point> = match init {
        InitDistribution::Uniform { y_lo, y_hi } => {
            if !(y_lo < y_hi && y_lo >= model.y_domain.lo && y_hi <= model.y_domain.hi) {
                return Err(AbfError::InvalidArgument("uniform y range must lie inside the y domain".into()));
            }
            (0..n_particles)
                .into_par_iter()
                .map(|i| {
                    let [u1, u2] = rng.uniform_pair(i as u64, 0);
                    Point::new(model.wrap_x(xlo + u1 * (xhi - xlo)), y_lo + u2 * (y_hi - y_lo))
                })
                .collect()
        }
        InitDistribution::Equilibrium => {
            let sampler = EquilibriumSampler::new(model, EquilibriumTarget::Gibbs)?;
            (0..n_particles)
                .into_par_iter()
                .map(|i| {
                    let [u1, u2] = rng.uniform_pair(i as u64, 0);
                    sampler.sample(u1, u2)
                })
                .collect()
        }
        InitDistribution::Point { x, y } => {
            let inside_x = model.x_domain.is_periodic() || (x >= xlo && x <= xhi);
            if !(inside_x && y >= model.y_domain.lo && y <= model.y_domain.hi) {
                return Err(AbfError::InvalidArgument(format!("point ({x}, {y}) outside the domain")));
            }
            if n_particles > 1 {
                let msg = "point initialization puts all mass in one bin; empty-bin fallback will engage".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
            }
            vec![Point::new(model.wrap_x(x), y); n_particles]
        }
    };
    let streams = step_streams(seed, positions.len());
    Ok(ParticleEnsemble { positions, seed, time: 0.0, step_count: 0, warnings, streams })
}

/// Cursors at slot 1: step `n` (counting from zero) reads slot `n + 1`.
fn step_streams(seed: u64, n: usize) -> Vec<StreamCursor> {
    let rng = CounterRng::new(seed);
    (0..n).map(|i| rng.cursor(i as u64, 1)).collect()
}

/// Which equilibrium an [`EquilibriumSampler`] targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumTarget {
    /// `exp(-beta V)`.
    Gibbs,
    /// `exp(-beta (V - A o xi + W o xi))`, the stationary law of the adaptive
    /// dynamics.
    Biased,
}

/// Inverse-CDF sampler for `xi = x`: the `x` marginal is inverted from a
/// tabulated CDF, then `y` from the conditional slice at the drawn `x`.
#[derive(Debug, Clone)]
pub struct EquilibriumSampler<'a> {
    model: &'a ModelProblem,
    x_nodes: Vec<f64>,
    x_cdf: Vec<f64>,
    y_nodes: usize,
}

impl<'a> EquilibriumSampler<'a> {
    pub fn new(model: &'a ModelProblem, target: EquilibriumTarget) -> Result<Self> {
        model.require_linear_x()?;
        let (lo, hi) = model.x_domain.bounds();
        let n = 4096;
        let quad = YQuadrature::default();
        let x_nodes: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let weights: Vec<f64> = x_nodes
            .par_iter()
            .map(|&x| -> Result<f64> {
                let w = (-model.beta * model.confinement.value(x)).exp();
                Ok(match target {
                    EquilibriumTarget::Gibbs => slice_integrals(model, x, &quad)?.z_sigma * w,
                    EquilibriumTarget::Biased => w,
                })
            })
            .collect::<Result<_>>()?;
        let mut x_cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        x_cdf.push(0.0);
        for k in 0..n {
            acc += 0.5 * (weights[k] + weights[k + 1]);
            x_cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(AbfError::NormalizerUnderflow("x marginal".into()));
        }
        x_cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { model, x_nodes, x_cdf, y_nodes: 1024 })
    }

    /// Map two uniforms to one draw.
    pub fn sample(&self, u1: f64, u2: f64) -> Point {
        let x = invert_cdf(&self.x_nodes, &self.x_cdf, u1);
        let (lo, hi) = (self.model.y_domain.lo, self.model.y_domain.hi);
        let n = self.y_nodes;
        let ys: Vec<f64> = (0..=n).map(|j| lo + (hi - lo) * j as f64 / n as f64).collect();
        let w: Vec<f64> = ys.iter().map(|&y| (-self.model.beta * self.model.potential.value(Point::new(x, y))).exp()).collect();
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for j in 0..n {
            acc += 0.5 * (w[j] + w[j + 1]);
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        let y = invert_cdf(&ys, &cdf, u2);
        Point::new(self.model.wrap_x(x), y)
    }
}

fn invert_cdf(nodes: &[f64], cdf: &[f64], u: f64) -> f64 {
    let k = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(k) => k.min(nodes.len() - 2),
        Err(0) => 0,
        Err(k) => (k - 1).min(nodes.len() - 2),
    };
    let span = cdf[k + 1] - cdf[k];
    let t = if span > 0.0 { ((u - cdf[k]) / span).clamp(0.0, 1.0) } else { 0.5 };
    nodes[k] + t * (nodes[k + 1] - nodes[k])
}

/// Per-bin sample statistics of the local mean force.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStatistics {
    pub counts: Vec<u64>,
    /// Weighted mean of `F`, `None` for empty bins.
    pub means: Vec<Option<f64>>,
    /// Standard error of the mean (unweighted sample variance over `sqrt(n)`).
    pub std_errors: Vec<Option<f64>>,
}

/// Local mean force and `|grad xi|^-1` weight of every particle, with its bin.
fn particle_forces(ensemble: &ParticleEnsemble, model: &ModelProblem, profile: &BiasProfile) -> Result<Vec<(usize, f64, f64)>> {
    ensemble
        .positions
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| {
            let z = model.xi.value(p);
            let b = profile
                .bin_of(z)
                .ok_or_else(|| AbfError::InvalidArgument(format!("particle {idx} has xi = {z} outside the bins")))?;
            let f = model.local_mean_force(p).map_err(|_| AbfError::NonFiniteForce { index: idx })?;
            if !f.is_finite() {
                return Err(AbfError::NonFiniteForce { index: idx });
            }
            let w = if model.xi.is_linear_x() { 1.0 } else { 1.0 / model.gradient_norm(p)? };
            Ok((b, f, w))
        })
        .collect()
}

fn reduce_bins(n_bins: usize, samples: &[(usize, f64, f64)]) -> BinStatistics {
    let mut counts = vec![0u64; n_bins];
    let mut sw = vec![0.0; n_bins];
    let mut swf = vec![0.0; n_bins];
    let mut sf = vec![0.0; n_bins];
    let mut sff = vec![0.0; n_bins];
    // particle order, independent of how the samples were produced
    for &(b, f, w) in samples {
        counts[b] += 1;
        sw[b] += w;
        swf[b] += w * f;
        sf[b] += f;
        sff[b] += f * f;
    }
    let means = (0..n_bins).map(|b| (counts[b] > 0).then(|| swf[b] / sw[b])).collect();
    let std_errors = (0..n_bins)
        .map(|b| {
            let n = counts[b] as f64;
            (counts[b] > 1).then(|| {
                let mean = sf[b] / n;
                let var = ((sff[b] - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
        })
        .collect();
    BinStatistics { counts, means, std_errors }
}

/// Binned conditional averages of `F` over the current ensemble.
pub fn bin_statistics(ensemble: &ParticleEnsemble, model: &ModelProblem, profile: &BiasProfile) -> Result<BinStatistics> {
    let samples = particle_forces(ensemble, model, profile)?;
    Ok(reduce_bins(profile.n_bins(), &samples))
}

/// Re-estimate the biasing force from the ensemble. Empty bins keep their
/// previous value; the number of such bins is returned.
pub fn update_bias(ensemble: &ParticleEnsemble, model: &ModelProblem, profile: &mut BiasProfile, dt: f64) -> Result<usize> {
    let stats = bin_statistics(ensemble, model, profile)?;
    profile.relax_towards(&stats.means, &stats.counts, dt)
}

/// Drift of the chosen scheme at `p` under a frozen profile.
pub fn drift(model: &ModelProblem, profile: &BiasProfile, lookup: BiasLookup, scheme: Scheme, p: Point) -> Result<Vector2<f64>> {
    let z = model.xi.value(p);
    let g = model.xi.gradient(p);
    let bias = profile.force_at(z, lookup);
    let grad = model.potential.gradient(p) + g * (model.confinement.derivative(z) - bias);
    match scheme {
        Scheme::Plain => Ok(-grad),
        Scheme::Metric => {
            if model.xi.is_linear_x() {
                return Ok(-grad);
            }
            let n2 = model.gradient_norm(p)?.powi(2);
            let h = model.xi.hessian(p);
            let metric = (h * g) * (2.0 / (model.beta * n2));
            Ok(-(grad + metric) / n2)
        }
    }
}

/// Potential whose (metric-weighted) gradient is the drift:
/// `V - A_t o xi + W o xi`, plus `-beta^-1 ln |grad xi|^-2` for the metric
/// scheme. Uses the piecewise-constant biasing potential.
pub fn effective_potential(model: &ModelProblem, profile: &BiasProfile, scheme: Scheme, p: Point) -> Result<f64> {
    let z = model.xi.value(p);
    let mut u = model.potential.value(p) - profile.potential_at(z) + model.confinement.value(z);
    if scheme == Scheme::Metric {
        let n2 = model.gradient_norm(p)?.powi(2);
        u += n2.ln() / model.beta;
    }
    Ok(u)
}

#[inline]
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v >= lo && v <= hi {
        return v;
    }
    let w = hi - lo;
    let u = (v - lo).rem_euclid(2.0 * w);
    if u <= w {
        lo + u
    } else {
        hi - (u - w)
    }
}

fn confine(model: &ModelProblem, p: Point) -> Point {
    let x = match model.x_domain {
        XDomain::Torus => model.wrap_x(p.x),
        XDomain::Interval { lo, hi } => reflect(p.x, lo, hi),
    };
    Point::new(x, reflect(p.y, model.y_domain.lo, model.y_domain.hi))
}

#[allow(clippy::too_many_arguments)]
fn advance_positions(
    ensemble: &mut ParticleEnsemble,
    model: &ModelProblem,
    profile: &BiasProfile,
    dt: f64,
    scheme: Scheme,
    lookup: BiasLookup,
    noise: NoiseMode,
    record: Option<&mut Vec<[f64; 2]>>,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(AbfError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let step = ensemble.step_count;
    let amp = (2.0 * dt / model.beta).sqrt();
    let results: Vec<Result<(Point, [f64; 2])>> = ensemble
        .positions
        .par_iter()
        .zip(ensemble.streams.par_iter_mut())
        .enumerate()
        .map(|(i, (&p, stream))| {
            // the slot is consumed either way so later steps stay aligned
            let draw = stream.next_normal_pair();
            let g = match noise {
                NoiseMode::Random => draw,
                NoiseMode::Zero => [0.0, 0.0],
            };
            let b = drift(model, profile, lookup, scheme, p)?;
            let scale = match scheme {
                Scheme::Metric if !model.xi.is_linear_x() => amp / model.gradient_norm(p)?,
                _ => amp,
            };
            let next = p + b * dt + Vector2::new(g[0], g[1]) * scale;
            if !(next.x.is_finite() && next.y.is_finite()) {
                return Err(AbfError::NonFinitePosition { index: i, step });
            }
            Ok((confine(model, next), g))
        })
        .collect();
    let mut increments = Vec::new();
    let want = record.is_some();
    if want {
        increments.reserve(results.len());
    }
    for (slot_pos, r) in ensemble.positions.iter_mut().zip(results) {
        let (p, g) = r?;
        *slot_pos = p;
        if want {
            let s = dt.sqrt();
            increments.push([g[0] * s, g[1] * s]);
        }
    }
    if let Some(out) = record {
        *out = increments;
    }
    ensemble.step_count += 1;
    ensemble.time += dt;
    Ok(())
}

/// One Euler-Maruyama step under a frozen profile.
pub fn step(
    ensemble: &mut ParticleEnsemble,
    model: &ModelProblem,
    profile: &BiasProfile,
    dt: f64,
    scheme: Scheme,
    lookup: BiasLookup,
    noise: NoiseMode,
) -> Result<()> {
    advance_positions(ensemble, model, profile, dt, scheme, lookup, noise, None)
}

/// As [`step`], returning the Brownian increments `B_{n+1} - B_n` used for
/// every particle.
pub fn step_recorded(
    ensemble: &mut ParticleEnsemble,
    model: &ModelProblem,
    profile: &BiasProfile,
    dt: f64,
    scheme: Scheme,
    lookup: BiasLookup,
    noise: NoiseMode,
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::new();
    advance_positions(ensemble, model, profile, dt, scheme, lookup, noise, Some(&mut out))?;
    Ok(out)
}

/// Local mean force recovered from one step of the metric scheme without
/// evaluating `F`:
/// `A'_t(xi_n) - (xi_{n+1} - xi_n - sqrt(2/beta) grad xi/|grad xi|(X_n) . dB) / dt`.
///
/// On the torus the increment of `xi` is taken along the shortest arc.
pub fn ito_force_estimate(
    x_prev: Point,
    x_next: Point,
    model: &ModelProblem,
    profile: &BiasProfile,
    lookup: BiasLookup,
    dt: f64,
    increment: [f64; 2],
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(AbfError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if model.confinement != crate::fields::Confinement::None {
        return Err(AbfError::InvalidArgument("the Ito estimator assumes W = 0".into()));
    }
    let z0 = model.xi.value(x_prev);
    let mut dz = model.xi.value(x_next) - z0;
    if profile.periodic {
        let period = profile.hi() - profile.lo();
        dz -= period * (dz / period).round();
    }
    let g = model.xi.gradient(x_prev);
    let unit = g / model.gradient_norm(x_prev)?;
    let noise = (2.0 / model.beta).sqrt() * (unit.x * increment[0] + unit.y * increment[1]);
    Ok(profile.force_at(z0, lookup) - (dz - noise) / dt)
}

/// Normalized histogram of `xi` over the bins of `profile`.
pub fn empirical_marginal(ensemble: &ParticleEnsemble, model: &ModelProblem, profile: &BiasProfile) -> Density1d {
    let n = profile.n_bins();
    let mut counts = vec![0u64; n];
    let mut total = 0u64;
    for &p in &ensemble.positions {
        if let Some(b) = profile.bin_of(model.xi.value(p)) {
            counts[b] += 1;
            total += 1;
        }
    }
    let axis = Axis::new(profile.lo(), profile.hi(), n, profile.periodic);
    let norm = 1.0 / (total.max(1) as f64 * axis.h());
    Density1d { axis, values: counts.iter().map(|&c| c as f64 * norm).collect(), time: ensemble.time }
}

/// Numerical settings of the adaptive particle loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub lookup: BiasLookup,
    pub noise: NoiseMode,
}

impl SamplerConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self { dt, scheme, lookup: BiasLookup::default(), noise: NoiseMode::default() }
    }
}

/// Outcome of one adaptive step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepReport {
    pub empty_bins: usize,
}

/// Per-bin running sums comparing the Ito estimate of `F` with `F` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoAccumulator {
    pub counts: Vec<u64>,
    pub sum_ito: Vec<f64>,
    pub sumsq_ito: Vec<f64>,
    pub sum_direct: Vec<f64>,
    pub sumsq_direct: Vec<f64>,
}

impl ItoAccumulator {
    pub fn new(n_bins: usize) -> Self {
        Self {
            counts: vec![0; n_bins],
            sum_ito: vec![0.0; n_bins],
            sumsq_ito: vec![0.0; n_bins],
            sum_direct: vec![0.0; n_bins],
            sumsq_direct: vec![0.0; n_bins],
        }
    }

    fn push(&mut self, b: usize, ito: f64, direct: f64) {
        self.counts[b] += 1;
        self.sum_ito[b] += ito;
        self.sumsq_ito[b] += ito * ito;
        self.sum_direct[b] += direct;
        self.sumsq_direct[b] += direct * direct;
    }

    /// Per occupied bin: (mean of Ito estimates, mean of `F`, combined
    /// standard error of the difference).
    pub fn summary(&self) -> Vec<Option<(f64, f64, f64)>> {
        (0..self.counts.len())
            .map(|b| {
                let n = self.counts[b] as f64;
                (self.counts[b] > 1).then(|| {
                    let mi = self.sum_ito[b] / n;
                    let md = self.sum_direct[b] / n;
                    let vi = ((self.sumsq_ito[b] - n * mi * mi) / (n - 1.0)).max(0.0);
                    let vd = ((self.sumsq_direct[b] - n * md * md) / (n - 1.0)).max(0.0);
                    (mi, md, ((vi + vd) / n).sqrt())
                })
            })
            .collect()
    }
}

/// The adaptive loop: update the bias from the current ensemble, then step.
#[derive(Debug, Clone)]
pub struct AbfSampler {
    pub ensemble: ParticleEnsemble,
    pub profile: BiasProfile,
    pub config: SamplerConfig,
}

impl AbfSampler {
    pub fn new(ensemble: ParticleEnsemble, profile: BiasProfile, config: SamplerConfig) -> Self {
        Self { ensemble, profile, config }
    }

    pub fn advance(&mut self, model: &ModelProblem) -> Result<StepReport> {
        let empty_bins = update_bias(&self.ensemble, model, &mut self.profile, self.config.dt)?;
        let c = self.config;
        step(&mut self.ensemble, model, &self.profile, c.dt, c.scheme, c.lookup, c.noise)?;
        Ok(StepReport { empty_bins })
    }

    /// As [`advance`](Self::advance), also feeding the Ito estimator
    /// comparison for every particle.
    pub fn advance_with_ito(&mut self, model: &ModelProblem, acc: &mut ItoAccumulator) -> Result<StepReport> {
        let samples = particle_forces(&self.ensemble, model, &self.profile)?;
        let stats = reduce_bins(self.profile.n_bins(), &samples);
        let empty_bins = self.profile.relax_towards(&stats.means, &stats.counts, self.config.dt)?;
        let prev = self.ensemble.positions.clone();
        let c = self.config;
        let incs = step_recorded(&mut self.ensemble, model, &self.profile, c.dt, c.scheme, c.lookup, c.noise)?;
        for (i, ((&p0, &p1), inc)) in prev.iter().zip(&self.ensemble.positions).zip(&incs).enumerate() {
            let est = ito_force_estimate(p0, p1, model, &self.profile, c.lookup, c.dt, *inc)?;
            let (b, f, _) = samples[i];
            acc.push(b, est, f);
        }
        Ok(StepReport { empty_bins })
    }

    pub fn bin_statistics(&self, model: &ModelProblem) -> Result<BinStatistics> {
        bin_statistics(&self.ensemble, model, &self.profile)
    }

    pub fn marginal(&self, model: &ModelProblem) -> Density1d {
        empirical_marginal(&self.ensemble, model, &self.profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CoordinateField, TestPotential};
    use nalgebra::Matrix2;
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn point_init_is_degenerate_and_flagged() {
        let model = ModelProblem::reference();
        let e = init_ensemble(&model, 4, InitDistribution::Point { x: 0.5, y: 0.0 }, 1).unwrap();
        assert!(e.positions.iter().all(|p| *p == Point::new(0.5, 0.0)));
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn uniform_init_fills_every_bin() {
        let model = ModelProblem::reference();
        let e = init_ensemble(&model, 100_000, InitDistribution::Uniform { y_lo: -1.0, y_hi: 1.0 }, 3).unwrap();
        let profile = BiasProfile::for_model(&model, 32, 0.0);
        let m = empirical_marginal(&e, &model, &profile);
        assert!(m.values.iter().all(|&v| v > 0.0));
        // multinomial deviation bound 3 sqrt(n_bins / n)
        let sup = m.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(sup <= 0.06, "{sup}");
        assert!((m.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let model = ModelProblem::reference();
        let a = init_ensemble(&model, 1000, InitDistribution::Equilibrium, 11).unwrap();
        let b = init_ensemble(&model, 1000, InitDistribution::Equilibrium, 11).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = init_ensemble(&model, 1000, InitDistribution::Equilibrium, 12).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn symmetric_pair_averages_to_zero() {
        // F = d/dx V = 2 pi a y cos(2 pi x) with c = 0: +-1 at y = +-1/(pi) for a = 1/2, x = 0
        let model = ModelProblem::test_family(TestPotential::new(0.0, 0.5, 4.0), 1.0);
        let y = 1.0 / PI;
        let e = ParticleEnsemble::from_positions(vec![Point::new(0.01, y), Point::new(0.01, -y)], 0);
        let mut profile = BiasProfile::for_model(&model, 4, 0.0);
        profile.set_forces(&[9.0; 4]).unwrap();
        let empty = update_bias(&e, &model, &mut profile, 1e-3).unwrap();
        assert!(profile.force_values[0].abs() < 1e-15);
        assert_eq!(profile.occupancy[0], 2);
        assert_eq!(empty, 3);
        assert_eq!(&profile.force_values[1..], &[9.0, 9.0, 9.0]);
    }

    #[test]
    fn single_particle_bin_gets_its_local_force() {
        let model = ModelProblem::reference();
        let e = ParticleEnsemble::from_positions(vec![Point::new(0.25, 0.0)], 0);
        let mut profile = BiasProfile::for_model(&model, 32, 0.0);
        update_bias(&e, &model, &mut profile, 1e-3).unwrap();
        let b = profile.bin_of(0.25).unwrap();
        assert!((profile.force_values[b] + 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn relaxed_update_moves_by_at_most_dt_over_tau() {
        let model = ModelProblem::reference();
        let e = init_ensemble(&model, 2000, InitDistribution::Uniform { y_lo: -1.0, y_hi: 1.0 }, 5).unwrap();
        let (dt, tau) = (1e-3, 50.0);
        let mut profile = BiasProfile::for_model(&model, 8, tau);
        let before = profile.force_values.clone();
        let stats = bin_statistics(&e, &model, &profile).unwrap();
        update_bias(&e, &model, &mut profile, dt).unwrap();
        for (b, prev) in before.iter().enumerate() {
            let m = stats.means[b].unwrap();
            let change = (profile.force_values[b] - prev).abs();
            assert!(change <= dt / tau * (m - prev).abs() + 1e-15);
        }
    }

    #[test]
    fn zero_drift_zero_noise_leaves_positions() {
        let model = ModelProblem::test_family(TestPotential::new(0.0, 0.0, 0.0), 1.0).with_y_domain(crate::fields::YDomain::symmetric(2.0));
        let mut e = init_ensemble(&model, 50, InitDistribution::Uniform { y_lo: -1.0, y_hi: 1.0 }, 2).unwrap();
        let before = e.positions.clone();
        let profile = BiasProfile::for_model(&model, 8, 0.0);
        step(&mut e, &model, &profile, 1e-2, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Zero).unwrap();
        assert_eq!(before, e.positions);
        assert_eq!(e.step_count, 1);
    }

    #[test]
    fn step_noise_is_addressed_by_particle_and_step() {
        let model = ModelProblem::reference();
        let mut e = init_ensemble(&model, 10, InitDistribution::Uniform { y_lo: -1.0, y_hi: 1.0 }, 4).unwrap();
        let profile = BiasProfile::for_model(&model, 8, 0.0);
        let rng = CounterRng::new(4);
        let dt: f64 = 1e-3;
        step(&mut e, &model, &profile, dt, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Zero).unwrap();
        for n in 1..4u64 {
            let inc = step_recorded(&mut e, &model, &profile, dt, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Random).unwrap();
            for (i, d) in inc.iter().enumerate() {
                let g = rng.normal_pair(i as u64, n + 1);
                assert_eq!(*d, [g[0] * dt.sqrt(), g[1] * dt.sqrt()]);
            }
        }
    }

    #[test]
    fn metric_equals_plain_for_linear_coordinate() {
        let model = ModelProblem::reference();
        let e0 = init_ensemble(&model, 500, InitDistribution::Equilibrium, 9).unwrap();
        let mut profile = BiasProfile::for_model(&model, 16, 0.0);
        update_bias(&e0, &model, &mut profile, 1e-3).unwrap();
        let mut a = e0.clone();
        let mut b = e0.clone();
        step(&mut a, &model, &profile, 1e-3, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Random).unwrap();
        step(&mut b, &model, &profile, 1e-3, Scheme::Plain, BiasLookup::PiecewiseConstant, NoiseMode::Random).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn ou_stationary_variance() {
        // V = (k/2) y^2: y is Ornstein-Uhlenbeck with stationary variance 1/(beta k)
        let (k, beta) = (2.0, 1.0);
        let model = ModelProblem::test_family(TestPotential::new(0.0, 0.0, k), beta);
        let mut e = init_ensemble(&model, 20_000, InitDistribution::Point { x: 0.5, y: 0.0 }, 21).unwrap();
        let profile = BiasProfile::for_model(&model, 4, 0.0);
        let dt = 1e-3;
        for _ in 0..3000 {
            step(&mut e, &model, &profile, dt, Scheme::Plain, BiasLookup::PiecewiseConstant, NoiseMode::Random).unwrap();
        }
        let n = e.len() as f64;
        let mean = e.positions.iter().map(|p| p.y).sum::<f64>() / n;
        let var = e.positions.iter().map(|p| (p.y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.0 / (beta * k);
        // Euler-Maruyama stationary variance is target / (1 - k dt / 2)
        let se = target * (2.0 / n).sqrt();
        assert!((var - target).abs() < 3.0 * se + target * k * dt, "{var} vs {target}");
    }

    #[derive(Debug)]
    struct Bent;
    impl CoordinateField for Bent {
        fn value(&self, p: Point) -> f64 {
            p.x + 0.05 * p.y * p.y
        }
        fn gradient(&self, p: Point) -> Vector2<f64> {
            Vector2::new(1.0, 0.1 * p.y)
        }
        fn hessian(&self, _p: Point) -> Matrix2<f64> {
            Matrix2::new(0.0, 0.0, 0.0, 0.1)
        }
    }

    fn drift_fd_check(model: &ModelProblem, scheme: Scheme) {
        let mut profile = BiasProfile::for_model(model, 32, 0.0);
        let forces: Vec<f64> = (0..32).map(|b| (b as f64 * 0.7).sin() * 3.0).collect();
        profile.set_forces(&forces).unwrap();
        let rng = CounterRng::new(99);
        let h = 1e-5;
        let mut checked = 0;
        let mut s = 0u64;
        while checked < 100 {
            let [u1, u2] = rng.uniform_pair(0, s);
            s += 1;
            let p = Point::new(u1, -3.0 + 6.0 * u2);
            // stay clear of bin edges so the piecewise-linear bias is smooth
            let z = model.xi.value(p);
            let frac = ((z - profile.lo()) / profile.width()).rem_euclid(1.0);
            if !(0.01..=0.99).contains(&frac) {
                continue;
            }
            let u = |q: Point| effective_potential(model, &profile, scheme, q).unwrap();
            let grad = Vector2::new(
                (u(p + Vector2::new(h, 0.0)) - u(p - Vector2::new(h, 0.0))) / (2.0 * h),
                (u(p + Vector2::new(0.0, h)) - u(p - Vector2::new(0.0, h))) / (2.0 * h),
            );
            let scale = match scheme {
                Scheme::Metric => 1.0 / model.gradient_norm(p).unwrap().powi(2),
                Scheme::Plain => 1.0,
            };
            let d = drift(model, &profile, BiasLookup::PiecewiseConstant, scheme, p).unwrap();
            assert!((d + grad * scale).norm() < 1e-6, "{d:?} vs {:?}", -grad * scale);
            checked += 1;
        }
    }

    #[test]
    fn drift_matches_effective_potential_gradient() {
        let model = ModelProblem::reference();
        drift_fd_check(&model, Scheme::Metric);
        drift_fd_check(&model, Scheme::Plain);
        let bent = ModelProblem::reference().with_xi(crate::fields::ReactionCoordinate::Custom(Arc::new(Bent)));
        drift_fd_check(&bent, Scheme::Metric);
        drift_fd_check(&bent, Scheme::Plain);
    }

    #[test]
    fn ito_estimate_without_noise_recovers_local_force() {
        let model = ModelProblem::reference();
        let profile = BiasProfile::for_model(&model, 32, 0.0);
        let p0 = Point::new(0.3, 0.4);
        let mut e = ParticleEnsemble::from_positions(vec![p0], 0);
        let dt = 1e-3;
        let inc = step_recorded(&mut e, &model, &profile, dt, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Zero).unwrap();
        let f = model.local_mean_force(p0).unwrap();
        // the increment per unit time is the drift, -F when A'_t = 0
        assert!(((e.positions[0].x - p0.x) / dt + f).abs() < 1e-9);
        let est = ito_force_estimate(p0, e.positions[0], &model, &profile, BiasLookup::PiecewiseConstant, dt, inc[0]).unwrap();
        assert!((est - f).abs() < 1e-9);
        assert!(ito_force_estimate(p0, p0, &model, &profile, BiasLookup::PiecewiseConstant, 0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn ito_estimate_across_the_seam() {
        let model = ModelProblem::reference();
        let profile = BiasProfile::for_model(&model, 32, 0.0);
        let p0 = Point::new(0.999, 0.0);
        let mut e = ParticleEnsemble::from_positions(vec![p0], 4);
        let dt = 1e-2;
        let inc = step_recorded(&mut e, &model, &profile, dt, Scheme::Metric, BiasLookup::PiecewiseConstant, NoiseMode::Random).unwrap();
        let est = ito_force_estimate(p0, e.positions[0], &model, &profile, BiasLookup::PiecewiseConstant, dt, inc[0]).unwrap();
        assert!((est - model.local_mean_force(p0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn histogram_of_a_point_mass() {
        let model = ModelProblem::reference();
        let e = init_ensemble(&model, 10, InitDistribution::Point { x: 0.4, y: 0.0 }, 0).unwrap();
        let profile = BiasProfile::for_model(&model, 8, 0.0);
        let m = empirical_marginal(&e, &model, &profile);
        let b = profile.bin_of(0.4).unwrap();
        assert!((m.values[b] - 8.0).abs() < 1e-12);
        assert_eq!(m.mass(), 1.0);
    }

    #[test]
    fn reflection_folds_into_range() {
        assert!((reflect(1.2, -1.0, 1.0) - 0.8).abs() < 1e-12);
        assert!((reflect(-1.5, -1.0, 1.0) + 0.5).abs() < 1e-12);
        assert_eq!(reflect(0.3, -1.0, 1.0), 0.3);
        assert!((reflect(5.3, -1.0, 1.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn positions_stay_in_domain() {
        let model = ModelProblem::reference();
        let mut sampler = AbfSampler::new(
            init_ensemble(&model, 2000, InitDistribution::Uniform { y_lo: -3.9, y_hi: 3.9 }, 8).unwrap(),
            BiasProfile::for_model(&model, 16, 0.0),
            SamplerConfig::new(5e-3, Scheme::Metric),
        );
        for _ in 0..50 {
            sampler.advance(&model).unwrap();
            for p in &sampler.ensemble.positions {
                assert!(p.x >= 0.0 && p.x < 1.0);
                assert!(p.y >= model.y_domain.lo && p.y <= model.y_domain.hi);
            }
        }
    }
}
