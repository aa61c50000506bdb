//! Shared fixtures for the solver benchmarks.

use abflab::oracle::{compute_equilibrium, compute_free_energy, default_z_grid};
use abflab::particles::init_ensemble;
use abflab::{
    AbfSampler, BiasProfile, DensityField, Fp2dSolver, Fp2dVariant, Grid2d, InitDistribution, ModelProblem, SamplerConfig,
    Scheme, YQuadrature,
};

/// Adaptive 2D solver on an `n x n` grid with the biased equilibrium as
/// state, and its largest admissible step.
pub fn pde_fixture(n: usize) -> (Fp2dSolver, DensityField, f64) {
    let model = ModelProblem::reference();
    let grid = Grid2d::for_model(&model, n, n);
    let oracle = compute_free_energy(&model, &default_z_grid(&model, 4 * n), &YQuadrature::default()).expect("oracle");
    let field = compute_equilibrium(&model, &oracle, grid).expect("equilibrium").psi_inf;
    let solver = Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric).expect("solver");
    let dt = 0.95 * solver.uniform_admissible_dt();
    (solver, field, dt)
}

/// Adaptive particle sampler with `n` replicas drawn from the Gibbs measure.
pub fn particle_fixture(n: usize) -> (ModelProblem, AbfSampler) {
    let model = ModelProblem::reference();
    let ensemble = init_ensemble(&model, n, InitDistribution::Equilibrium, 7).expect("ensemble");
    let profile = BiasProfile::for_model(&model, 32, 0.0);
    let sampler = AbfSampler::new(ensemble, profile, SamplerConfig::new(1e-3, Scheme::Metric));
    (model, sampler)
}
