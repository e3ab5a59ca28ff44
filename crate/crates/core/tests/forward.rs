//! Forward model against independent oracles, plus invariants.

use idsir::control::{ControlField, ControlVariant};
use idsir::grid::SpatialGrid;
use idsir::kernel::{KernelMatrix, KernelSpec};
use idsir::model::{integrate_forward, EpidemicParams, InitialCondition, TimeGrid};
use idsir::scenario::ScenarioSpec;
use proptest::prelude::*;

/// Scalar SIR `z' = βk(1 − z − r)z − γz`, `r' = γz`, by classical RK4.
fn scalar_sir(beta_k: f64, gamma: f64, z0: f64, horizon: f64, dt: f64) -> Vec<(f64, f64)> {
    let f = |z: f64, r: f64| (beta_k * (1.0 - z - r) * z - gamma * z, gamma * z);
    let steps = (horizon / dt).round() as usize;
    let (mut z, mut r) = (z0, 0.0);
    let mut out = vec![(z, r)];
    for _ in 0..steps {
        let (a1, b1) = f(z, r);
        let (a2, b2) = f(z + 0.5 * dt * a1, r + 0.5 * dt * b1);
        let (a3, b3) = f(z + 0.5 * dt * a2, r + 0.5 * dt * b2);
        let (a4, b4) = f(z + dt * a3, r + dt * b3);
        z += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        r += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        out.push((z, r));
    }
    out
}

fn uncontrolled(time: TimeGrid, n: usize) -> ControlField {
    ControlField::constant(ControlVariant::TimeOnly, 0.0, time.n_nodes(), n, None).unwrap()
}

#[test]
fn constant_kernel_matches_scalar_sir() {
    let n = 100;
    let grid = SpatialGrid::uniform(n).unwrap();
    let kernel = KernelMatrix::assemble(KernelSpec::constant(2.0), &grid).unwrap();
    let time = TimeGrid::new(400.0, 0.25).unwrap();
    let ic = InitialCondition::infected_only(vec![2e-5; n]).unwrap();
    let params = EpidemicParams::new(0.1, 0.1).unwrap();
    let state = integrate_forward(&ic, &uncontrolled(time, n), params, &kernel, time).unwrap();

    // reference on a 16x finer step
    let fine = scalar_sir(0.2, 0.1, 2e-5, 400.0, 0.25 / 16.0);
    let mut worst: f64 = 0.0;
    for i in 0..time.n_nodes() {
        let (z, r) = fine[16 * i];
        for j in 0..n {
            worst = worst.max((state.z.get(i, j) - z).abs()).max((state.r.get(i, j) - r).abs());
        }
    }
    assert!(worst < 1e-8, "sup-norm gap {worst:e}");
    // the epidemic actually happened
    assert!(state.r.row(time.n_steps)[0] > 0.7);
}

#[test]
fn full_lockdown_decays_at_recovery_rate() {
    let n = 50;
    let grid = SpatialGrid::uniform(n).unwrap();
    let kernel = KernelMatrix::assemble(KernelSpec::default(), &grid).unwrap();
    let time = TimeGrid::new(100.0, 0.25).unwrap();
    let z0: Vec<f64> = grid.nodes().iter().map(|x| 1e-3 * (1.0 + x)).collect();
    let ic = InitialCondition::infected_only(z0.clone()).unwrap();
    let u = ControlField::constant(ControlVariant::SpaceTime, 1.0, time.n_nodes(), n, None).unwrap();
    let state = integrate_forward(&ic, &u, EpidemicParams::default(), &kernel, time).unwrap();
    for i in 0..time.n_nodes() {
        let decay = (-0.1 * time.time(i)).exp();
        for j in 0..n {
            assert!((state.z.get(i, j) - z0[j] * decay).abs() < 1e-8);
        }
    }
}

#[test]
fn halving_the_step_barely_moves_scenario_a1() {
    let spec = ScenarioSpec::preset("A1").unwrap();
    let coarse = spec.problem().unwrap();
    let fine = ScenarioSpec { dt: 0.125, ..spec }.problem().unwrap();
    let zc = coarse.forward(&coarse.constant_control(0.0).unwrap()).unwrap();
    let zf = fine.forward(&fine.constant_control(0.0).unwrap()).unwrap();
    let last_c = zc.z.row(coarse.time.n_steps);
    let last_f = zf.z.row(fine.time.n_steps);
    let gap = last_c.iter().zip(last_f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "final-time gap {gap:e}");
}

#[test]
fn uncontrolled_objective_of_a1() {
    let p = ScenarioSpec::preset("A1").unwrap().problem().unwrap();
    let (_, j) = p.evaluate(&p.constant_control(0.0).unwrap()).unwrap();
    assert!((j - 132.4).abs() <= 0.05 * 132.4, "J(u = 0) = {j}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_stay_in_the_simplex(
        amp in 1e-6f64..2e-2,
        r_frac in 0.0f64..0.5,
        u_level in 0.0f64..1.0,
        beta in 0.05f64..0.4,
        delta in 5.0f64..80.0,
    ) {
        let n = 24;
        let grid = SpatialGrid::uniform(n).unwrap();
        let kernel = KernelMatrix::assemble(KernelSpec::new(50.0, delta, 0.1).unwrap(), &grid).unwrap();
        let time = TimeGrid::new(60.0, 0.25).unwrap();
        let z0: Vec<f64> = grid.nodes().iter().map(|x| amp * (1.0 + (7.0 * x).sin().abs())).collect();
        let r0: Vec<f64> = z0.iter().map(|z| r_frac * (1.0 - z)).collect();
        let ic = InitialCondition::new(z0, r0).unwrap();
        let u = ControlField::TimeOnly((0..time.n_nodes()).map(|i| u_level * (i % 7) as f64 / 6.0).collect());
        let s = integrate_forward(&ic, &u, EpidemicParams::new(beta, 0.1).unwrap(), &kernel, time).unwrap();
        for i in 0..time.n_nodes() {
            for j in 0..n {
                let (z, r) = (s.z.get(i, j), s.r.get(i, j));
                prop_assert!(z >= -1e-12 && r >= 0.0);
                prop_assert!(z + r <= 1.0 + 1e-12);
                if i > 0 {
                    prop_assert!(r >= s.r.get(i - 1, j) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn integration_is_deterministic(amp in 1e-5f64..1e-2) {
        let grid = SpatialGrid::uniform(16).unwrap();
        let kernel = KernelMatrix::assemble(KernelSpec::default(), &grid).unwrap();
        let time = TimeGrid::new(20.0, 0.5).unwrap();
        let ic = InitialCondition::infected_only(vec![amp; 16]).unwrap();
        let u = uncontrolled(time, 16);
        let a = integrate_forward(&ic, &u, EpidemicParams::default(), &kernel, time).unwrap();
        let b = integrate_forward(&ic, &u, EpidemicParams::default(), &kernel, time).unwrap();
        prop_assert_eq!(a.z.as_slice(), b.z.as_slice());
    }
}
