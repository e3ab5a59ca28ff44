//! Backward costate integration.
//!
//! The costates are computed as the exact transpose of the forward RK4
//! step (the same four stages, traversed in reverse with the same `dt`),
//! so the control sensitivities they produce are the true gradient of the
//! discrete objective. Reported costates are per-unit-length densities:
//! the sensitivity propagated back from later nodes plus half a step of the
//! running-cost rate at the node itself. This centring makes `λ(T) = 0`
//! exact and reproduces `λ₁ = T − t` exactly in the linear case.
//!
//! In continuous form the recursion is
//!
//! ```text
//! −λ₁′ = 1 − (c₁η/4) u² ψ′(z_min − z) + (c₂ω/2) ψ′(z − z_max)
//!        − λ₁ (βχ + γ) + β T_kᵀ((1 − u) s λ₁) + γ λ₂
//! −λ₂′ = −β χ λ₁
//! ```
//!
//! with `χ = T_k z` under the control and `s = 1 − z − r`.

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::KernelMatrix;
use crate::model::{EpidemicParams, Rk4, StateField};
use crate::optim::cost::{control_weight, psi_prime, CostParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    pub lambda1: Field,
    pub lambda2: Field,
}

/// Costates plus the control coupling `∂Φ_i/∂u_iᵀ p_{i+1}` of every step.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub adjoint: AdjointField,
    /// Dynamics part of `∂J/∂u(t_i, x_j)`; the terminal row is zero.
    pub coupling: Field,
}

const B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
const A: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

/// Direct `∂J/∂z(t_i, ·)` per unit cell weight, and the running-cost rate.
fn direct_state_gradient(state: &StateField, u: &[f64], i: usize, costs: &CostParams, out: &mut [f64], rate: &mut [f64]) {
    let w = state.time.trapezoid_weight(i);
    let v = control_weight(&state.time, i);
    let s = costs.psi_slope;
    for (((o, r), &z), &uj) in out.iter_mut().zip(rate.iter_mut()).zip(state.z.row(i)).zip(u) {
        let capacity = 1.0 + 0.5 * costs.omega * costs.c2 * psi_prime(z - costs.z_max, s);
        let political = 0.25 * costs.eta * costs.c1 * uj * uj * psi_prime(costs.z_min - z, s);
        *o = w * capacity - v * political;
        *r = capacity - political;
    }
}

pub fn integrate_adjoint_backward(
    state: &StateField,
    control: &ControlField,
    params: EpidemicParams,
    kernel: &KernelMatrix,
    costs: &CostParams,
) -> Result<AdjointSolution> {
    let n = kernel.n();
    let time = state.time;
    control.check_shape(time.n_nodes(), n)?;
    let h = kernel.grid().weight();
    let dt = time.dt;

    let mut lambda1 = Field::zeros(time.n_nodes(), n);
    let mut lambda2 = Field::zeros(time.n_nodes(), n);
    let mut coupling = Field::zeros(time.n_nodes(), n);

    let mut rk = Rk4::new(params, kernel);
    let mut u = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut direct = vec![0.0; n];
    let mut rate = vec![0.0; n];
    let mut pz = vec![0.0; n];
    let mut pr = vec![0.0; n];
    // sensitivity propagated back from later nodes, excluding node-local cost
    let mut carry_z = vec![0.0; n];
    let mut carry_r = vec![0.0; n];
    let mut kbar_z: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut kbar_r: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut ybar_z = vec![0.0; n];
    let mut ybar_r = vec![0.0; n];
    let mut gz = vec![0.0; n];
    let mut gr = vec![0.0; n];
    let mut gu = vec![0.0; n];

    control.fill_row(time.n_steps, &mut u_next);
    for i in (0..time.n_steps).rev() {
        // total sensitivity of J to the state at node i + 1
        direct_state_gradient(state, &u_next, i + 1, costs, &mut direct, &mut rate);
        for j in 0..n {
            pz[j] = h * (direct[j] + carry_z[j]);
            pr[j] = h * carry_r[j];
        }

        control.fill_row(i, &mut u);
        direct_state_gradient(state, &u, i, costs, &mut direct, &mut rate);
        rk.stages(state.z.row(i), state.r.row(i), &u, dt);

        for s in 0..4 {
            for j in 0..n {
                kbar_z[s][j] = B[s] * dt * pz[j];
                kbar_r[s][j] = B[s] * dt * pr[j];
            }
        }
        gz.copy_from_slice(&pz);
        gr.copy_from_slice(&pr);
        gu.fill(0.0);
        for s in (0..4).rev() {
            ybar_z.fill(0.0);
            ybar_r.fill(0.0);
            rk.dynamics.vjp(
                &rk.stage_z[s],
                &rk.stage_r[s],
                &u,
                &kbar_z[s],
                &kbar_r[s],
                &mut ybar_z,
                &mut ybar_r,
                &mut gu,
            );
            for j in 0..n {
                gz[j] += ybar_z[j];
                gr[j] += ybar_r[j];
            }
            if s > 0 {
                let a = A[s] * dt;
                for j in 0..n {
                    kbar_z[s - 1][j] += a * ybar_z[j];
                    kbar_r[s - 1][j] += a * ybar_r[j];
                }
            }
        }

        for j in 0..n {
            carry_z[j] = gz[j] / h;
            carry_r[j] = gr[j] / h;
            let (l1, l2) = (carry_z[j] + 0.5 * dt * rate[j], carry_r[j]);
            if !(l1.is_finite() && l2.is_finite() && gu[j].is_finite()) {
                return Err(Error::Integration {
                    step: i,
                    time: time.time(i),
                    reason: format!("non-finite costate at cell {j}"),
                });
            }
            lambda1.set(i, j, l1);
            lambda2.set(i, j, l2);
            coupling.set(i, j, gu[j]);
        }
        std::mem::swap(&mut u, &mut u_next);
    }

    Ok(AdjointSolution {
        adjoint: AdjointField { lambda1, lambda2 },
        coupling,
    })
}

/// Full pointwise gradient `∂J/∂u(t_i, x_j)` of the discrete objective.
pub fn pointwise_gradient(state: &StateField, control: &ControlField, sol: &AdjointSolution, costs: &CostParams) -> Field {
    let n = state.n_cells();
    let h = 1.0 / n as f64;
    let mut g = sol.coupling.clone();
    let mut u = vec![0.0; n];
    for i in 0..state.time.n_nodes() {
        let v = control_weight(&state.time, i);
        if v == 0.0 {
            continue;
        }
        control.fill_row(i, &mut u);
        let z = state.z.row(i);
        for (j, gij) in g.row_mut(i).iter_mut().enumerate() {
            let denom = 1.0 + 0.5 * costs.c1 * crate::optim::cost::psi(costs.z_min - z[j], costs.psi_slope);
            *gij += v * h * costs.eta * u[j] * denom;
        }
    }
    g
}

/// Chain rule from the pointwise gradient to the parameterisation's
/// degrees of freedom (same layout as [`ControlField::dofs`]).
pub fn reduce_gradient(control: &ControlField, pointwise: &Field) -> Vec<f64> {
    match control {
        ControlField::TimeOnly(_) => pointwise.iter_rows().map(|row| row.iter().sum()).collect(),
        ControlField::SpaceTime(_) => pointwise.as_slice().to_vec(),
        ControlField::PiecewiseConstant(p) => {
            let l = p.layout;
            let mut g = vec![0.0; l.n_time_blocks() * l.n_space_blocks()];
            for (i, row) in pointwise.iter_rows().enumerate() {
                let b = l.time_block_of(i);
                for (j, v) in row.iter().enumerate() {
                    g[b * l.n_space_blocks() + l.space_block_of(j)] += v;
                }
            }
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlVariant;
    use crate::grid::SpatialGrid;
    use crate::kernel::KernelSpec;
    use crate::model::{integrate_forward, InitialCondition, TimeGrid};

    #[test]
    fn terminal_costates_vanish_and_linear_case_is_exact() {
        // no transmission, no recovery, no penalties: λ₁ = T − t
        let g = SpatialGrid::uniform(8).unwrap();
        let k = KernelMatrix::assemble(KernelSpec::constant(0.0), &g).unwrap();
        let t = TimeGrid::new(12.0, 0.5).unwrap();
        let u = ControlField::constant(ControlVariant::SpaceTime, 0.3, t.n_nodes(), 8, None).unwrap();
        let ic = InitialCondition::infected_only(vec![0.01; 8]).unwrap();
        // γ must be positive for the model; take it tiny and compare loosely
        let p = EpidemicParams::new(0.1, 1e-300).unwrap();
        let costs = CostParams {
            eta: 1.0,
            omega: 1.0,
            c1: 0.0,
            c2: 0.0,
            z_min: 1e-5,
            z_max: 5e-3,
            psi_slope: 1000.0,
        };
        let s = integrate_forward(&ic, &u, p, &k, t).unwrap();
        let sol = integrate_adjoint_backward(&s, &u, p, &k, &costs).unwrap();
        assert!(sol.adjoint.lambda1.row(t.n_steps).iter().all(|&v| v == 0.0));
        assert!(sol.adjoint.lambda2.row(t.n_steps).iter().all(|&v| v == 0.0));
        for i in 0..t.n_nodes() {
            for j in 0..8 {
                let expected = 12.0 - t.time(i);
                assert!((sol.adjoint.lambda1.get(i, j) - expected).abs() < 1e-12, "{i} {} {expected}", sol.adjoint.lambda1.get(i, j));
                assert_eq!(sol.adjoint.lambda2.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn zero_state_has_zero_second_costate() {
        let g = SpatialGrid::uniform(10).unwrap();
        let k = KernelMatrix::assemble(KernelSpec::default(), &g).unwrap();
        let t = TimeGrid::new(20.0, 1.0).unwrap();
        let u = ControlField::constant(ControlVariant::TimeOnly, 0.4, t.n_nodes(), 10, None).unwrap();
        let ic = InitialCondition::infected_only(vec![0.0; 10]).unwrap();
        let p = EpidemicParams::default();
        let costs = CostParams {
            eta: 0.02,
            omega: 1.0,
            c1: 1000.0,
            c2: 1.0,
            z_min: 1e-5,
            z_max: 5e-3,
            psi_slope: 1000.0,
        };
        let s = integrate_forward(&ic, &u, p, &k, t).unwrap();
        let sol = integrate_adjoint_backward(&s, &u, p, &k, &costs).unwrap();
        assert!(sol.adjoint.lambda2.as_slice().iter().all(|&v| v == 0.0));
        assert!(sol.adjoint.lambda1.row(0).iter().any(|&v| v != 0.0));
        // with z ≡ 0 the control cannot act on the dynamics
        assert!(sol.coupling.as_slice().iter().all(|&v| v == 0.0));
    }
}
