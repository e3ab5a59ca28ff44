//! Relaxed forward-backward sweep.
//!
//! Each iteration solves the state forward, the costates backward, forms
//! the pointwise minimiser `û` of the Hamiltonian and moves a fraction `σ`
//! of the way towards it. If the relaxed step would increase the objective
//! the step length is halved until it does not, so the recorded objective
//! never increases.

use serde::{Deserialize, Serialize};

use crate::control::{project_piecewise, BlockLayout, ControlField, ControlVariant};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::KernelMatrix;
use crate::model::{integrate_forward, EpidemicParams, InitialCondition, StateField, TimeGrid};
use crate::optim::adjoint::{integrate_adjoint_backward, AdjointField, AdjointSolution};
use crate::optim::cost::{control_weight, cost_functional, psi, CostParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub u_init: f64,
    /// Step halvings tried before the sweep is declared stalled.
    pub max_halvings: usize,
    /// Halve the step until the objective does not increase. Without this
    /// every relaxed step is accepted, as in the plain sweep.
    pub backtracking: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            tol: 1e-4,
            max_iter: 500,
            u_init: 0.5,
            max_halvings: 30,
            backtracking: true,
        }
    }
}

impl SweepConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::config("sweep.sigma", format!("must lie in (0, 1], got {}", self.sigma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("sweep.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("sweep.max_iter", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.u_init) {
            return Err(Error::config("sweep.u_init", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything that defines one optimal-control problem instance.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub kernel: KernelMatrix,
    pub params: EpidemicParams,
    pub initial: InitialCondition,
    pub time: TimeGrid,
    pub costs: CostParams,
    pub variant: ControlVariant,
    /// Required for [`ControlVariant::PiecewiseConstant`].
    pub blocks: Option<BlockLayout>,
}

impl ControlProblem {
    pub fn n_cells(&self) -> usize {
        self.kernel.n()
    }

    pub fn constant_control(&self, value: f64) -> Result<ControlField> {
        ControlField::constant(self.variant, value, self.time.n_nodes(), self.n_cells(), self.blocks)
    }

    pub fn forward(&self, control: &ControlField) -> Result<StateField> {
        integrate_forward(&self.initial, control, self.params, &self.kernel, self.time)
    }

    pub fn objective(&self, state: &StateField, control: &ControlField) -> Result<f64> {
        cost_functional(state, control, &self.costs, self.kernel.grid())
    }

    pub fn evaluate(&self, control: &ControlField) -> Result<(StateField, f64)> {
        let state = self.forward(control)?;
        let j = self.objective(&state, control)?;
        Ok((state, j))
    }

    pub fn adjoint(&self, state: &StateField, control: &ControlField) -> Result<AdjointSolution> {
        integrate_adjoint_backward(state, control, self.params, &self.kernel, &self.costs)
    }

    /// Objective and its gradient with respect to the control's degrees of freedom.
    pub fn gradient(&self, control: &ControlField) -> Result<(f64, Vec<f64>)> {
        let (state, j) = self.evaluate(control)?;
        let sol = self.adjoint(&state, control)?;
        let pointwise = crate::optim::adjoint::pointwise_gradient(&state, control, &sol, &self.costs);
        Ok((j, crate::optim::adjoint::reduce_gradient(control, &pointwise)))
    }
}

fn hamiltonian_weight(z: f64, costs: &CostParams) -> f64 {
    costs.eta * (1.0 + 0.5 * costs.c1 * psi(costs.z_min - z, costs.psi_slope))
}

/// Space-time update `û(t,x) = β λ₁ s ∫ z a dy / (η (1 + (c₁/2) ψ(z_min − z)))`,
/// formed from the exact step couplings and clipped to `[0, 1]`.
pub fn control_update_spacetime(state: &StateField, sol: &AdjointSolution, costs: &CostParams) -> Field {
    let time = state.time;
    let n = state.n_cells();
    let h = 1.0 / n as f64;
    let mut target = Field::zeros(time.n_nodes(), n);
    for i in 0..time.n_nodes() {
        let v = control_weight(&time, i);
        if v == 0.0 {
            continue;
        }
        let z = state.z.row(i);
        let c = sol.coupling.row(i);
        for (j, t) in target.row_mut(i).iter_mut().enumerate() {
            *t = (-c[j] / (v * h * hamiltonian_weight(z[j], costs))).clamp(0.0, 1.0);
        }
    }
    target
}

/// Time-only update: numerator and denominator integrated over space.
pub fn control_update_time(state: &StateField, sol: &AdjointSolution, costs: &CostParams) -> Vec<f64> {
    let time = state.time;
    let n = state.n_cells();
    let h = 1.0 / n as f64;
    (0..time.n_nodes())
        .map(|i| {
            let v = control_weight(&time, i);
            if v == 0.0 {
                return 0.0;
            }
            let numerator: f64 = -sol.coupling.row(i).iter().sum::<f64>();
            let denominator: f64 = state.z.row(i).iter().map(|&z| hamiltonian_weight(z, costs)).sum::<f64>() * h * v;
            (numerator / denominator).clamp(0.0, 1.0)
        })
        .collect()
}

/// Update target in the problem's parameterisation.
pub fn control_update(problem: &ControlProblem, state: &StateField, sol: &AdjointSolution) -> Result<ControlField> {
    Ok(match problem.variant {
        ControlVariant::TimeOnly => ControlField::TimeOnly(control_update_time(state, sol, &problem.costs)),
        ControlVariant::SpaceTime => ControlField::SpaceTime(control_update_spacetime(state, sol, &problem.costs)),
        ControlVariant::PiecewiseConstant => {
            let layout = problem
                .blocks
                .ok_or_else(|| Error::config("blocks", "piecewise control needs a block layout"))?;
            let target = control_update_spacetime(state, sol, &problem.costs);
            ControlField::PiecewiseConstant(project_piecewise(&target, layout)?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatus {
    Converged,
    MaxIterations,
    /// No step length along the update direction decreased the objective.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub control: ControlField,
    pub state: StateField,
    pub adjoint: AdjointField,
    /// Objective after every accepted iterate, starting with the initial guess.
    pub history: Vec<f64>,
    pub status: SweepStatus,
}

impl SweepOutcome {
    pub fn converged(&self) -> bool {
        self.status == SweepStatus::Converged
    }

    pub fn objective(&self) -> f64 {
        *self.history.last().expect("history holds the initial objective")
    }

    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

fn relaxed(current: &ControlField, target: &ControlField, step: f64) -> ControlField {
    let mut next = current.clone();
    for (u, &t) in next.dofs_mut().iter_mut().zip(target.dofs()) {
        *u = (*u + step * (t - *u)).clamp(0.0, 1.0);
    }
    next
}

/// Runs the sweep from the constant initial guess `cfg.u_init`.
pub fn fbs_solve(problem: &ControlProblem, cfg: &SweepConfig) -> Result<SweepOutcome> {
    fbs_solve_from(problem, problem.constant_control(cfg.u_init)?, cfg)
}

pub fn fbs_solve_from(problem: &ControlProblem, initial: ControlField, cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.check()?;
    problem.costs.check()?;
    initial.check_shape(problem.time.n_nodes(), problem.n_cells())?;
    let mut control = initial;
    let (mut state, mut objective) = problem.evaluate(&control)?;
    let mut history = vec![objective];
    let mut status = SweepStatus::MaxIterations;
    let mut sol = problem.adjoint(&state, &control)?;

    for _ in 0..cfg.max_iter {
        let target = control_update(problem, &state, &sol)?;
        let gap = control
            .dofs()
            .iter()
            .zip(target.dofs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if cfg.sigma * gap < cfg.tol {
            status = SweepStatus::Converged;
            break;
        }

        let mut step = cfg.sigma;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let candidate = relaxed(&control, &target, step);
            // an integration failure counts as a rejected step
            if let Ok((s, j)) = problem.evaluate(&candidate) {
                if j <= objective || !cfg.backtracking {
                    accepted = Some((candidate, s, j));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((c, s, j)) = accepted else {
            status = SweepStatus::Stalled;
            break;
        };
        control = c;
        state = s;
        objective = j;
        history.push(j);
        sol = problem.adjoint(&state, &control)?;
    }

    Ok(SweepOutcome {
        control,
        state,
        adjoint: sol.adjoint,
        history,
        status,
    })
}
