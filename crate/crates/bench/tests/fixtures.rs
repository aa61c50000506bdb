use abflab_bench::{particle_fixture, pde_fixture};

#[test]
fn pde_fixture_steps_within_its_bound() {
    let (mut solver, mut field, dt) = pde_fixture(16);
    let mass = field.mass();
    solver.step(&mut field, dt).unwrap();
    assert!((field.mass() - mass).abs() < 1e-12);
}

#[test]
fn particle_fixture_advances() {
    let (model, mut sampler) = particle_fixture(64);
    sampler.advance(&model).unwrap();
    assert_eq!(sampler.ensemble.step_count, 1);
}
