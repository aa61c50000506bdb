use std::f64::consts::PI;

use abflab::diagnostics::{entropy_decomposition, fit_decay_rate, force_error, pde_record};
use abflab::oracle::{compute_equilibrium, compute_free_energy, default_z_grid, DEFAULT_SLICE_MASS_FLOOR};
use abflab::particles::init_ensemble;
use abflab::pde::aligned_dt;
use abflab::*;

fn oracle(model: &ModelProblem, n: usize) -> FreeEnergyProfile {
    compute_free_energy(model, &default_z_grid(model, n), &YQuadrature::default()).unwrap()
}

#[test]
fn adaptive_pde_relaxes_towards_the_biased_equilibrium() {
    let model = ModelProblem::reference();
    let grid = Grid2d::for_model(&model, 48, 48);
    let profile = oracle(&model, 192);
    let equil = compute_equilibrium(&model, &profile, grid).unwrap();
    let mut field = DensityField::from_fn(grid, |x, y| (1.0 + 0.5 * (2.0 * PI * x).cos()) * (-2.0 * y * y).exp()).unwrap();
    let mut solver = Fp2dSolver::new(&model, grid, Fp2dVariant::AbfMetric).unwrap();
    let (dt, steps) = aligned_dt(0.3, 0.95 * solver.uniform_admissible_dt());
    let mut totals = Vec::new();
    let mut times = Vec::new();
    for s in 0..=steps {
        if s % (steps / 30) == 0 {
            solver.update_bias(&field);
            let (rec, valid) = pde_record(&field, &equil, &profile, solver.bias_columns(), DEFAULT_SLICE_MASS_FLOOR).unwrap();
            assert!(valid);
            totals.push(rec.e_total);
            times.push(rec.time);
        }
        if s < steps {
            solver.step(&mut field, dt).unwrap();
        }
    }
    assert!(totals.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{totals:?}");
    assert!(totals.last().unwrap() < &(0.05 * totals[0]));
    let fit = fit_decay_rate(&times, &totals, None).unwrap();
    assert!(fit.rate > 0.0);
}

#[test]
fn frozen_mean_force_keeps_equilibrium_and_zero_force_error() {
    let model = ModelProblem::reference();
    let grid = Grid2d::for_model(&model, 64, 64);
    let profile = oracle(&model, 256);
    let equil = compute_equilibrium(&model, &profile, grid).unwrap();
    let mut solver = Fp2dSolver::new(&model, grid, Fp2dVariant::FrozenBias).unwrap();
    solver.freeze_with(|z| profile.mean_force_at(z));
    let mut field = equil.psi_inf.clone();
    let dt = 0.9 * solver.admissible_dt();
    for _ in 0..200 {
        solver.step(&mut field, dt).unwrap();
    }
    let split = entropy_decomposition(&field, &equil, DEFAULT_SLICE_MASS_FLOOR).unwrap();
    assert!(split.e_total < 1e-4, "{}", split.e_total);
    let centres: Vec<f64> = (0..grid.x.n).map(|i| profile.mean_force_at(grid.x.center(i))).collect();
    assert_eq!(force_error(&centres, &profile, &field.marginal()).unwrap(), 0.0);
}

#[test]
fn particle_bias_tracks_the_oracle_on_average() {
    let model = ModelProblem::reference();
    let profile = oracle(&model, 256);
    let ensemble = init_ensemble(&model, 20_000, InitDistribution::Equilibrium, 99).unwrap();
    let mut sampler = AbfSampler::new(ensemble, BiasProfile::for_model(&model, 16, 0.0), SamplerConfig::new(1e-3, Scheme::Metric));
    for _ in 0..300 {
        sampler.advance(&model).unwrap();
    }
    let stats = sampler.bin_statistics(&model).unwrap();
    let mut worst: f64 = 0.0;
    for b in 0..16 {
        let (lo, hi) = (sampler.profile.bin_edges[b], sampler.profile.bin_edges[b + 1]);
        let (Some(mean), Some(se)) = (stats.means[b], stats.std_errors[b]) else { panic!("bin {b} empty") };
        worst = worst.max((mean - profile.bin_average_mean_force(lo, hi)).abs() / se);
    }
    assert!(worst < 5.0, "worst deviation {worst} standard errors");
}

#[test]
fn rescaled_model_runs_the_same_physics() {
    let model = ModelProblem::test_family(TestPotential::reference(), 2.0);
    let unit = model.rescaled_to_unit_beta();
    assert_eq!(unit.beta, 1.0);
    let a = oracle(&model, 64);
    let b = oracle(&unit, 64);
    for (x, y) in a.aprime_values.iter().zip(&b.aprime_values) {
        assert!((2.0 * x - y).abs() < 1e-9);
    }
}
