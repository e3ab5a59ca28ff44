use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::field::Field;
use crate::grid::SpatialGrid;
use crate::model::{StateField, TimeGrid};

/// Weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Control cost weight.
    pub eta: f64,
    /// Capacity penalty weight.
    pub omega: f64,
    /// Extra lockdown cost while incidence is below `z_min`.
    pub c1: f64,
    /// Capacity penalty amplitude.
    pub c2: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub psi_slope: f64,
}

impl CostParams {
    pub fn check(&self) -> Result<()> {
        let positive = [("eta", self.eta), ("omega", self.omega), ("psi_slope", self.psi_slope)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("costs.{name}"), format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("costs.{name}"), format!("must be non-negative, got {v}")));
            }
        }
        if !(0.0 < self.z_min && self.z_min < self.z_max && self.z_max < 1.0) {
            return Err(Error::config(
                "costs.z_min",
                format!("need 0 < z_min < z_max < 1 (got {} and {})", self.z_min, self.z_max),
            ));
        }
        Ok(())
    }
}

/// Smooth step `ψ(z) = 1 + tanh(slope·z)`, evaluated as `2 / (1 + e^{−2·slope·z})`
/// so that the far negative tail keeps full relative precision.
pub fn psi(z: f64, slope: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * slope * z).exp())
}

/// `ψ′(z) = slope·sech²(slope·z)`.
pub fn psi_prime(z: f64, slope: f64) -> f64 {
    let c = (slope * z).cosh();
    slope / (c * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `∫∫ z`
    pub infected: f64,
    /// `(η/2) ∫∫ u² (1 + (c1/2) ψ(z_min − z))`
    pub control: f64,
    /// `(ω/2) ∫∫ c2 ψ(z − z_max)`
    pub capacity: f64,
    pub total: f64,
}

/// Time weight of the control term at node `i`. The control is held over
/// `[t_i, t_{i+1})`, so the control term uses the matching left-endpoint
/// rule; the terminal node carries no weight.
pub(crate) fn control_weight(time: &TimeGrid, i: usize) -> f64 {
    if i < time.n_steps {
        time.dt
    } else {
        0.0
    }
}

/// Objective for pointwise fields on a common time grid: midpoint rule in
/// space, trapezoid rule in time for the state terms.
pub fn cost_breakdown(z: &Field, u: &Field, time: TimeGrid, costs: &CostParams, grid: &SpatialGrid) -> Result<CostBreakdown> {
    check_len("state time nodes", time.n_nodes(), z.rows())?;
    check_len("control time nodes", time.n_nodes(), u.rows())?;
    check_len("state cells", grid.n_points(), z.cols())?;
    check_len("control cells", grid.n_points(), u.cols())?;
    let h = grid.weight();
    let s = costs.psi_slope;
    let (mut infected, mut control, mut capacity) = (0.0, 0.0, 0.0);
    for i in 0..time.n_nodes() {
        let w = time.trapezoid_weight(i) * h;
        let v = control_weight(&time, i) * h;
        for (&zj, &uj) in z.row(i).iter().zip(u.row(i)) {
            infected += w * zj;
            capacity += w * psi(zj - costs.z_max, s);
            if v > 0.0 {
                control += v * uj * uj * (1.0 + 0.5 * costs.c1 * psi(costs.z_min - zj, s));
            }
        }
    }
    let control = 0.5 * costs.eta * control;
    let capacity = 0.5 * costs.omega * costs.c2 * capacity;
    Ok(CostBreakdown {
        infected,
        control,
        capacity,
        total: infected + control + capacity,
    })
}

pub fn cost_functional(state: &StateField, control: &ControlField, costs: &CostParams, grid: &SpatialGrid) -> Result<f64> {
    control.check_shape(state.time.n_nodes(), grid.n_points())?;
    let u = control.to_field(grid.n_points());
    Ok(cost_breakdown(&state.z, &u, state.time, costs, grid)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn paper_costs() -> CostParams {
        CostParams {
            eta: 0.02,
            omega: 1.0,
            c1: 1000.0,
            c2: 1.0,
            z_min: 1e-5,
            z_max: 5e-3,
            psi_slope: 1000.0,
        }
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, 1000.0), 1.0);
        assert_eq!(psi_prime(0.0, 1000.0), 1000.0);
        assert!((psi(0.01, 1000.0) - (1.0 + 10f64.tanh())).abs() < 1e-15);
        assert!((psi(0.01, 1000.0) - 2.0).abs() < 1e-8);
        let tail = psi(-0.01, 1000.0);
        assert!((tail - 4.1223e-9).abs() < 1e-12, "{tail:e}");
        assert_eq!(psi_prime(1.0, 1000.0), 0.0);
    }

    #[test]
    fn psi_prime_is_derivative() {
        for &z in &[-3e-3, -1e-4, 0.0, 2e-4, 1.5e-3] {
            let h = 1e-8;
            let fd = (psi(z + h, 1000.0) - psi(z - h, 1000.0)) / (2.0 * h);
            assert!((fd - psi_prime(z, 1000.0)).abs() < 1e-5 * psi_prime(z, 1000.0).max(1.0));
        }
    }

    #[test]
    fn zero_state_and_control_leave_only_capacity_tail() {
        let g = SpatialGrid::uniform(10).unwrap();
        let t = TimeGrid::new(400.0, 0.25).unwrap();
        let z = Field::zeros(t.n_nodes(), 10);
        let u = Field::zeros(t.n_nodes(), 10);
        let c = paper_costs();
        let j = cost_breakdown(&z, &u, t, &c, &g).unwrap();
        assert_eq!(j.infected, 0.0);
        assert_eq!(j.control, 0.0);
        let tail = 0.5 * c.omega * c.c2 * 400.0 * psi(-c.z_max, c.psi_slope);
        assert!((j.capacity - tail).abs() < 1e-12 * tail);
    }

    #[test]
    fn constant_fields_integrate_exactly() {
        let g = SpatialGrid::uniform(10).unwrap();
        let t = TimeGrid::new(10.0, 0.5).unwrap();
        let z = Field::filled(t.n_nodes(), 10, 0.2);
        let u = Field::filled(t.n_nodes(), 10, 0.5);
        let c = CostParams { c1: 0.0, c2: 0.0, ..paper_costs() };
        let j = cost_breakdown(&z, &u, t, &c, &g).unwrap();
        assert!((j.infected - 2.0).abs() < 1e-12);
        assert!((j.control - 0.5 * 0.02 * 0.25 * 10.0).abs() < 1e-14);
        assert_eq!(j.capacity, 0.0);
    }

    #[test]
    fn cost_param_validation() {
        assert!(paper_costs().check().is_ok());
        assert!(CostParams { z_min: 0.01, ..paper_costs() }.check().is_err());
        assert!(CostParams { eta: 0.0, ..paper_costs() }.check().is_err());
        assert!(CostParams { c1: -1.0, ..paper_costs() }.check().is_err());
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let g = SpatialGrid::uniform(10).unwrap();
        let t = TimeGrid::new(10.0, 0.5).unwrap();
        let z = Field::zeros(t.n_nodes() - 1, 10);
        let u = Field::zeros(t.n_nodes(), 10);
        assert!(cost_breakdown(&z, &u, t, &paper_costs(), &g).is_err());
    }
}
