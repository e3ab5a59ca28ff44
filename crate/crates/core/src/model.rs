//! Forward integration of the spatial SIR system
//!
//! ```text
//! ∂z/∂t = β (1 − z − r) ∫ z(t,y) k(|x − y|; u(t,x)) dy − γ z
//! ∂r/∂t = γ z
//! ```
//!
//! with classical RK4 at a fixed step. The control is sampled at the start
//! of each step and held for all four stages.

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::field::Field;
use crate::grid::SpatialGrid;
use crate::kernel::KernelMatrix;

/// Lower bound on `z` before a step is rejected.
pub const NEGATIVITY_TOL: f64 = 1e-10;
/// Allowed excess of `z + r` over one.
pub const CONSERVATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicParams {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        Self { beta: 0.1, gamma: 0.1 }
    }
}

impl EpidemicParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        let p = Self { beta, gamma };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub z0: Vec<f64>,
    pub r0: Vec<f64>,
}

impl InitialCondition {
    pub fn new(z0: Vec<f64>, r0: Vec<f64>) -> Result<Self> {
        check_len("initial recovered profile", z0.len(), r0.len())?;
        for (j, (&z, &r)) in z0.iter().zip(&r0).enumerate() {
            if !(z >= 0.0 && r >= 0.0 && z + r <= 1.0) {
                return Err(Error::domain(format!(
                    "initial condition at cell {j} violates 0 <= z, r and z + r <= 1 (z = {z}, r = {r})"
                )));
            }
        }
        Ok(Self { z0, r0 })
    }

    pub fn infected_only(z0: Vec<f64>) -> Result<Self> {
        let n = z0.len();
        Self::new(z0, vec![0.0; n])
    }

    pub fn n_cells(&self) -> usize {
        self.z0.len()
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(Error::domain(format!(
                "need dt > 0 and T > 0 (got dt = {dt}, T = {horizon})"
            )));
        }
        let ratio = horizon / dt;
        let n_steps = ratio.round() as usize;
        if n_steps == 0 || (ratio - n_steps as f64).abs() > 1e-9 * ratio {
            return Err(Error::domain(format!(
                "horizon T = {horizon} is not a multiple of dt = {dt}"
            )));
        }
        Ok(Self { dt, n_steps })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }

    /// Trapezoid weights in time.
    pub fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Gridded trajectory of infected (`z`) and recovered (`r`) fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub time: TimeGrid,
    pub z: Field,
    pub r: Field,
}

impl StateField {
    pub fn times(&self) -> Vec<f64> {
        self.time.times()
    }

    pub fn n_cells(&self) -> usize {
        self.z.cols()
    }

    pub fn spatial_mean(&self, grid: &SpatialGrid) -> Vec<f64> {
        spatial_mean(&self.z, grid)
    }
}

/// `∫₀¹ field(t_i, x) dx` per time row.
pub fn spatial_mean(field: &Field, grid: &SpatialGrid) -> Vec<f64> {
    field.iter_rows().map(|row| grid.integrate(row)).collect()
}

/// Right-hand side evaluator with reusable scratch space.
pub(crate) struct Dynamics<'a> {
    pub params: EpidemicParams,
    pub kernel: &'a KernelMatrix,
    az: Vec<f64>,
    chi: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    pub fn new(params: EpidemicParams, kernel: &'a KernelMatrix) -> Self {
        let n = kernel.n();
        Self {
            params,
            kernel,
            az: vec![0.0; n],
            chi: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    pub fn eval(&mut self, z: &[f64], r: &[f64], u: &[f64], dz: &mut [f64], dr: &mut [f64]) {
        let EpidemicParams { beta, gamma } = self.params;
        self.kernel.apply_controlled(z, u, &mut self.az, &mut self.chi);
        for j in 0..z.len() {
            let s = 1.0 - z[j] - r[j];
            dz[j] = beta * s * self.chi[j] - gamma * z[j];
            dr[j] = gamma * z[j];
        }
    }

    /// Vector-Jacobian product of the right-hand side at `(z, r, u)`:
    /// accumulates `∂f/∂zᵀ v`, `∂f/∂rᵀ v` and `∂f/∂uᵀ v` into the outputs.
    pub fn vjp(
        &mut self,
        z: &[f64],
        r: &[f64],
        u: &[f64],
        vz: &[f64],
        vr: &[f64],
        gz: &mut [f64],
        gr: &mut [f64],
        gu: &mut [f64],
    ) {
        let EpidemicParams { beta, gamma } = self.params;
        self.kernel.apply_controlled(z, u, &mut self.az, &mut self.chi);
        let w = self.kernel.grid().weight();
        let k0 = self.kernel.spec().k0;
        // q = β s v_z feeds the transpose of the kernel operator
        let mut q_sum = 0.0;
        for j in 0..z.len() {
            let s = 1.0 - z[j] - r[j];
            let q = beta * s * vz[j];
            q_sum += q;
            self.scratch[j] = (1.0 - u[j]) * q;
            gu[j] -= self.az[j] * q;
            gz[j] += -(beta * self.chi[j] + gamma) * vz[j] + gamma * vr[j];
            gr[j] -= beta * self.chi[j] * vz[j];
        }
        let bg = k0 * w * q_sum;
        let mut at = std::mem::take(&mut self.az);
        self.kernel.apply_adjustable_transpose(&self.scratch, &mut at);
        for j in 0..z.len() {
            gz[j] += at[j] + bg;
        }
        self.az = at;
    }
}

/// Pointwise time derivatives of the SIR system.
pub fn rhs(
    z: &[f64],
    r: &[f64],
    u: &[f64],
    params: EpidemicParams,
    kernel: &KernelMatrix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = kernel.n();
    check_len("z", n, z.len())?;
    check_len("r", n, r.len())?;
    check_len("control slice", n, u.len())?;
    if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain("control values must lie in [0,1]"));
    }
    let mut dz = vec![0.0; n];
    let mut dr = vec![0.0; n];
    Dynamics::new(params, kernel).eval(z, r, u, &mut dz, &mut dr);
    Ok((dz, dr))
}

/// Reusable RK4 stepper; keeps the stage derivatives of the last step.
pub(crate) struct Rk4<'a> {
    pub dynamics: Dynamics<'a>,
    pub stage_z: [Vec<f64>; 4],
    pub stage_r: [Vec<f64>; 4],
    pub kz: [Vec<f64>; 4],
    pub kr: [Vec<f64>; 4],
}

impl<'a> Rk4<'a> {
    pub fn new(params: EpidemicParams, kernel: &'a KernelMatrix) -> Self {
        let n = kernel.n();
        let v = || std::array::from_fn(|_| vec![0.0; n]);
        Self {
            dynamics: Dynamics::new(params, kernel),
            stage_z: v(),
            stage_r: v(),
            kz: v(),
            kr: v(),
        }
    }

    /// Computes the four stage inputs and derivatives for one step from `(z, r)`.
    pub fn stages(&mut self, z: &[f64], r: &[f64], u: &[f64], dt: f64) {
        const OFFSET: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                self.stage_z[0].copy_from_slice(z);
                self.stage_r[0].copy_from_slice(r);
            } else {
                let h = OFFSET[s] * dt;
                for j in 0..z.len() {
                    self.stage_z[s][j] = z[j] + h * self.kz[s - 1][j];
                    self.stage_r[s][j] = r[j] + h * self.kr[s - 1][j];
                }
            }
            self.dynamics
                .eval(&self.stage_z[s], &self.stage_r[s], u, &mut self.kz[s], &mut self.kr[s]);
        }
    }

    pub fn step(&mut self, z: &[f64], r: &[f64], u: &[f64], dt: f64, z_out: &mut [f64], r_out: &mut [f64]) {
        self.stages(z, r, u, dt);
        let c = dt / 6.0;
        for j in 0..z.len() {
            z_out[j] = z[j] + c * (self.kz[0][j] + 2.0 * self.kz[1][j] + 2.0 * self.kz[2][j] + self.kz[3][j]);
            r_out[j] = r[j] + c * (self.kr[0][j] + 2.0 * self.kr[1][j] + 2.0 * self.kr[2][j] + self.kr[3][j]);
        }
    }
}

/// Integrates the system over `time` under `control`.
pub fn integrate_forward(
    ic: &InitialCondition,
    control: &ControlField,
    params: EpidemicParams,
    kernel: &KernelMatrix,
    time: TimeGrid,
) -> Result<StateField> {
    params.check()?;
    let n = kernel.n();
    check_len("initial condition", n, ic.n_cells())?;
    control.check_shape(time.n_nodes(), n)?;

    let mut z = Field::zeros(time.n_nodes(), n);
    let mut r = Field::zeros(time.n_nodes(), n);
    z.row_mut(0).copy_from_slice(&ic.z0);
    r.row_mut(0).copy_from_slice(&ic.r0);

    let mut rk = Rk4::new(params, kernel);
    let mut u = vec![0.0; n];
    let mut z_next = vec![0.0; n];
    let mut r_next = vec![0.0; n];
    for i in 0..time.n_steps {
        control.fill_row(i, &mut u);
        rk.step(z.row(i), r.row(i), &u, time.dt, &mut z_next, &mut r_next);
        check_step(i + 1, time.time(i + 1), &z_next, &r_next)?;
        z.row_mut(i + 1).copy_from_slice(&z_next);
        r.row_mut(i + 1).copy_from_slice(&r_next);
    }
    Ok(StateField { time, z, r })
}

fn check_step(step: usize, time: f64, z: &[f64], r: &[f64]) -> Result<()> {
    for (j, (&zj, &rj)) in z.iter().zip(r).enumerate() {
        let reason = if !(zj.is_finite() && rj.is_finite()) {
            Some(format!("non-finite state at cell {j}"))
        } else if zj < -NEGATIVITY_TOL {
            Some(format!("z = {zj:e} < 0 at cell {j}; reduce dt"))
        } else if zj + rj > 1.0 + CONSERVATION_TOL {
            Some(format!("z + r = {} > 1 at cell {j}; reduce dt", zj + rj))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(Error::Integration { step, time, reason });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlVariant;
    use crate::kernel::KernelSpec;

    fn setup(n: usize, spec: KernelSpec) -> (SpatialGrid, KernelMatrix) {
        let g = SpatialGrid::uniform(n).unwrap();
        let k = KernelMatrix::assemble(spec, &g).unwrap();
        (g, k)
    }

    #[test]
    fn disease_free_state_is_stationary() {
        let (_, k) = setup(20, KernelSpec::default());
        let u = vec![0.3; 20];
        let r: Vec<f64> = (0..20).map(|j| j as f64 / 40.0).collect();
        let (dz, dr) = rhs(&[0.0; 20], &r, &u, EpidemicParams::default(), &k).unwrap();
        assert!(dz.iter().chain(&dr).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_kernel_rhs_is_logistic() {
        let (_, k) = setup(20, KernelSpec::constant(2.0));
        let zbar = 0.01;
        let p = EpidemicParams::new(0.1, 0.1).unwrap();
        let (dz, dr) = rhs(&[zbar; 20], &[0.0; 20], &[0.0; 20], p, &k).unwrap();
        let expected = 0.1 * 2.0 * (1.0 - zbar) * zbar - 0.1 * zbar;
        for (a, b) in dz.iter().zip(&dr) {
            assert!((a - expected).abs() < 1e-17);
            assert!((b - 0.1 * zbar).abs() < 1e-17);
        }
    }

    #[test]
    fn no_susceptibles_means_pure_decay() {
        let (_, k) = setup(10, KernelSpec::default());
        let z = vec![0.3; 10];
        let r = vec![0.7; 10];
        let (dz, _) = rhs(&z, &r, &[0.0; 10], EpidemicParams::default(), &k).unwrap();
        for v in dz {
            assert!((v + 0.1 * 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn rhs_dimension_mismatch() {
        let (_, k) = setup(10, KernelSpec::default());
        assert!(rhs(&[0.0; 9], &[0.0; 10], &[0.0; 10], EpidemicParams::default(), &k).is_err());
        assert!(rhs(&[0.0; 10], &[0.0; 10], &[0.0; 3], EpidemicParams::default(), &k).is_err());
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let (_, k) = setup(20, KernelSpec::default());
        let t = TimeGrid::new(50.0, 0.25).unwrap();
        let u = ControlField::constant(ControlVariant::TimeOnly, 0.0, t.n_nodes(), 20, None).unwrap();
        let ic = InitialCondition::infected_only(vec![0.0; 20]).unwrap();
        let s = integrate_forward(&ic, &u, EpidemicParams::default(), &k, t).unwrap();
        assert_eq!(s.z.max(), 0.0);
        assert_eq!(s.r.max(), 0.0);
    }

    #[test]
    fn full_lockdown_gives_exponential_decay() {
        let (_, k) = setup(20, KernelSpec::default());
        let t = TimeGrid::new(40.0, 0.25).unwrap();
        let u = ControlField::constant(ControlVariant::TimeOnly, 1.0, t.n_nodes(), 20, None).unwrap();
        let z0: Vec<f64> = (0..20).map(|j| 1e-3 * (1.0 + j as f64)).collect();
        let ic = InitialCondition::infected_only(z0.clone()).unwrap();
        let s = integrate_forward(&ic, &u, EpidemicParams::default(), &k, t).unwrap();
        for i in 0..t.n_nodes() {
            let decay = (-0.1 * t.time(i)).exp();
            for j in 0..20 {
                assert!((s.z.get(i, j) - z0[j] * decay).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (_, k) = setup(30, KernelSpec::default());
        let t = TimeGrid::new(30.0, 0.5).unwrap();
        let u = ControlField::constant(ControlVariant::SpaceTime, 0.2, t.n_nodes(), 30, None).unwrap();
        let ic = InitialCondition::infected_only(vec![1e-3; 30]).unwrap();
        let a = integrate_forward(&ic, &u, EpidemicParams::default(), &k, t).unwrap();
        let b = integrate_forward(&ic, &u, EpidemicParams::default(), &k, t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_step_is_reported() {
        let (_, k) = setup(10, KernelSpec::constant(2.0));
        let t = TimeGrid::new(400.0, 40.0).unwrap();
        let u = ControlField::constant(ControlVariant::TimeOnly, 0.0, t.n_nodes(), 10, None).unwrap();
        let ic = InitialCondition::infected_only(vec![0.5; 10]).unwrap();
        let p = EpidemicParams::new(1.0, 1.0).unwrap();
        let err = integrate_forward(&ic, &u, p, &k, t).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 1, .. }), "{err}");
    }

    #[test]
    fn spatial_mean_examples() {
        let g = SpatialGrid::uniform(100).unwrap();
        let c = Field::filled(3, 100, 0.25);
        assert!(spatial_mean(&c, &g).iter().all(|&m| (m - 0.25).abs() < 1e-15));
        let mut one = Field::zeros(1, 100);
        one.set(0, 42, 0.7);
        assert!((spatial_mean(&one, &g)[0] - 0.007).abs() < 1e-17);
        let z02: Vec<f64> = g.nodes().iter().map(|&x| if x < 0.9 { 1e-5 } else { 1e-4 }).collect();
        let m = spatial_mean(&Field::from_rows(vec![z02]).unwrap(), &g)[0];
        assert!((m - 1.9e-5).abs() < 1e-18);
    }

    #[test]
    fn time_grid_requires_multiple() {
        assert!(TimeGrid::new(10.0, 0.3).is_err());
        assert_eq!(TimeGrid::new(400.0, 0.25).unwrap().n_steps, 1600);
        assert!(TimeGrid::new(10.0, 0.0).is_err());
    }

    #[test]
    fn initial_condition_validation() {
        assert!(InitialCondition::new(vec![0.6], vec![0.5]).is_err());
        assert!(InitialCondition::new(vec![-0.1], vec![0.0]).is_err());
        assert!(InitialCondition::new(vec![0.1, 0.2], vec![0.0]).is_err());
    }
}
