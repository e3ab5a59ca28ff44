//! Objective, costates and the forward-backward sweep.

pub mod adjoint;
pub mod cost;
pub mod sweep;

pub use adjoint::{integrate_adjoint_backward, pointwise_gradient, reduce_gradient, AdjointField, AdjointSolution};
pub use cost::{cost_breakdown, cost_functional, psi, psi_prime, CostBreakdown, CostParams};
pub use sweep::{
    control_update, control_update_spacetime, control_update_time, fbs_solve, fbs_solve_from, ControlProblem,
    SweepConfig, SweepOutcome, SweepStatus,
};
