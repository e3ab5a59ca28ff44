//! Adjoint gradients against central finite differences.

use idsir::control::{BlockLayout, ControlField, ControlVariant};
use idsir::grid::SpatialGrid;
use idsir::kernel::{KernelMatrix, KernelSpec};
use idsir::model::{EpidemicParams, InitialCondition, TimeGrid};
use idsir::optim::{ControlProblem, CostParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;

/// Coarse instance with the paper's cost weights, started so that the
/// state crosses both penalty thresholds.
fn coarse(variant: ControlVariant) -> ControlProblem {
    let n = 20;
    let grid = SpatialGrid::uniform(n).unwrap();
    let time = TimeGrid::new(40.0, 1.0).unwrap();
    let z0 = grid.nodes().iter().map(|&x| if x < 0.5 { 2e-3 } else { 6e-3 }).collect();
    let blocks = (variant == ControlVariant::PiecewiseConstant).then(|| BlockLayout::new(10.0, 1.0, 40, 5, n).unwrap());
    ControlProblem {
        kernel: KernelMatrix::assemble(KernelSpec::default(), &grid).unwrap(),
        params: EpidemicParams::new(0.3, 0.1).unwrap(),
        initial: InitialCondition::infected_only(z0).unwrap(),
        time,
        costs: CostParams {
            eta: 0.02,
            omega: 1.0,
            c1: 1000.0,
            c2: 1.0,
            z_min: 1e-5,
            z_max: 5e-3,
            psi_slope: 1000.0,
        },
        variant,
        blocks,
    }
}

fn check_directions(variant: ControlVariant) {
    let problem = coarse(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut u = problem.constant_control(0.0).unwrap();
    for v in u.dofs_mut() {
        *v = rng.gen_range(0.2..0.8);
    }
    let (_, grad) = problem.gradient(&u).unwrap();
    for k in 0..10 {
        let dir: Vec<f64> = (0..grad.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |sign: f64| -> f64 {
            let mut w: ControlField = u.clone();
            for (x, d) in w.dofs_mut().iter_mut().zip(&dir) {
                *x += sign * FD_STEP * d;
            }
            problem.evaluate(&w).unwrap().1
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * FD_STEP);
        let adj: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let rel = (adj - fd).abs() / fd.abs().max(adj.abs());
        assert!(rel < REL_TOL, "{variant:?} direction {k}: adjoint {adj:e}, finite difference {fd:e}, rel {rel:e}");
    }
}

#[test]
fn time_only_gradient_matches_finite_differences() {
    check_directions(ControlVariant::TimeOnly);
}

#[test]
fn space_time_gradient_matches_finite_differences() {
    check_directions(ControlVariant::SpaceTime);
}

#[test]
fn piecewise_gradient_matches_finite_differences() {
    check_directions(ControlVariant::PiecewiseConstant);
}
