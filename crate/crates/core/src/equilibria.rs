//! Stationary problems of the kernel model.
//!
//! * SIS equilibrium `z = (1 − z)·χ[z]`, `χ[z] = T_k z` (rates scaled to one),
//!   solved by Picard iteration on `Φ[z] = χ[z] / (1 + χ[z])`.
//! * SIR final size `r = 1 − exp(−(β/γ)·T_k r)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{compute_norms, KernelMatrix, KernelNorms};
use crate::model::EpidemicParams;

/// Values below this count as zero in the positivity dichotomy.
const ZERO_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// `None` picks `(K − 1)/K` when `K > 1`, else `0.5`.
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-12,
            initial_guess: None,
        }
    }
}

impl FixedPointConfig {
    fn check(&self, n: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if let Some(g) = &self.initial_guess {
            crate::error::check_len("initial guess", n, g.len())?;
        }
        Ok(())
    }
}

/// `χ[z] = T_k z` with the uncontrolled kernel.
pub fn chi(z: &[f64], kernel: &KernelMatrix) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    kernel.apply(z, &mut out);
    out
}

/// The SIS fixed-point map `Φ[z] = χ[z] / (1 + χ[z])`.
pub fn sis_map(z: &[f64], kernel: &KernelMatrix) -> Vec<f64> {
    chi(z, kernel).into_iter().map(|c| c / (1.0 + c)).collect()
}

/// A-priori box `[(k₁ − 1)/k₁, (K − 1)/K]` for non-trivial SIS equilibria.
pub fn sis_bounds(norms: &KernelNorms) -> (f64, f64) {
    ((norms.k1 - 1.0) / norms.k1, (norms.max_row - 1.0) / norms.max_row)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SisEquilibrium {
    pub z_star: Vec<f64>,
    pub iterations: usize,
    /// `‖z − Φ[z]‖_∞`.
    pub residual: f64,
    pub converged: bool,
    /// Non-trivial solution inside the a-priori box (vacuous for the zero solution).
    pub bounds_ok: bool,
    /// `z(x) = z(1 − x)` on the grid.
    pub symmetric_ok: bool,
    /// Either identically zero or strictly positive.
    pub dichotomy_ok: bool,
    /// `K / k₁²`; Picard is a contraction on the box when this is below one.
    pub contraction_constant: f64,
}

impl SisEquilibrium {
    pub fn is_trivial(&self) -> bool {
        self.z_star.iter().all(|&z| z < ZERO_TOL)
    }
}

pub fn sis_fixed_point(kernel: &KernelMatrix, cfg: &FixedPointConfig) -> Result<SisEquilibrium> {
    let n = kernel.n();
    cfg.check(n)?;
    let norms = compute_norms(kernel.spec(), kernel.grid())?;
    let mut z = match &cfg.initial_guess {
        Some(g) => g.clone(),
        None if norms.max_row > 1.0 => vec![(norms.max_row - 1.0) / norms.max_row; n],
        None => vec![0.5; n],
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let next = sis_map(&z, kernel);
        let step = sup_diff(&next, &z);
        z = next;
        iterations += 1;
        if step <= cfg.tol {
            converged = true;
            break;
        }
    }
    let residual = sup_diff(&z, &sis_map(&z, kernel));

    let trivial = z.iter().all(|&v| v < ZERO_TOL);
    let (lo, hi) = sis_bounds(&norms);
    let slack = 1e-9;
    let bounds_ok = trivial || z.iter().all(|&v| v >= lo - slack && v <= hi + slack);
    let symmetric_ok = (0..n).all(|i| (z[i] - z[n - 1 - i]).abs() <= SYMMETRY_TOL);
    let dichotomy_ok = trivial || z.iter().all(|&v| v > 0.0);
    Ok(SisEquilibrium {
        z_star: z,
        iterations,
        residual,
        converged,
        bounds_ok,
        symmetric_ok,
        dichotomy_ok,
        contraction_constant: norms.max_row / (norms.k1 * norms.k1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceSolution {
    pub r_inf: Vec<f64>,
    pub s_inf: Vec<f64>,
    /// `‖r − (1 − exp(−(β/γ) T_k r))‖_∞`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Final-size profile `r_∞` of the uncontrolled epidemic.
///
/// When `R₀ ≤ 1` only the zero solution exists and it is returned directly:
/// at criticality Picard iteration converges sublinearly and would not
/// reach the tolerance.
pub fn sir_prevalence(kernel: &KernelMatrix, params: EpidemicParams, cfg: &FixedPointConfig) -> Result<PrevalenceSolution> {
    params.check()?;
    let n = kernel.n();
    cfg.check(n)?;
    let ratio = params.beta / params.gamma;
    let map = |r: &[f64]| -> Vec<f64> { chi(r, kernel).into_iter().map(|c| -(-ratio * c).exp_m1()).collect() };

    let r0_number = ratio * kernel.operator_norm();
    if r0_number <= 1.0 + 1e-12 {
        return Ok(PrevalenceSolution {
            r_inf: vec![0.0; n],
            s_inf: vec![1.0; n],
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut r = cfg.initial_guess.clone().unwrap_or_else(|| vec![0.99; n]);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let next = map(&r);
        let step = sup_diff(&next, &r);
        r = next;
        iterations += 1;
        if step <= cfg.tol {
            converged = true;
            break;
        }
    }
    let residual = sup_diff(&r, &map(&r));
    Ok(PrevalenceSolution {
        s_inf: r.iter().map(|v| 1.0 - v).collect(),
        r_inf: r,
        residual,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "disease-free only")]
    DiseaseFreeOnly,
    #[serde(rename = "supercritical")]
    Supercritical,
}

/// Which fixed-point argument covers the SIS equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExistenceArgument {
    /// Only the zero solution exists.
    TrivialOnly,
    /// `K/k₁² < 1`: unique, Picard converges.
    Contraction,
    /// Existence only (Schauder); Picard convergence not guaranteed.
    Schauder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub k1: f64,
    #[serde(rename = "K")]
    pub max_row: f64,
    pub op_norm: f64,
    pub function_l2: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub contraction_constant: f64,
    pub regime: Regime,
    pub sis_existence: ExistenceArgument,
}

pub fn threshold_report(kernel: &KernelMatrix, params: EpidemicParams) -> Result<ThresholdReport> {
    params.check()?;
    let norms = compute_norms(kernel.spec(), kernel.grid())?;
    let r0 = params.beta / params.gamma * norms.op_norm;
    let contraction_constant = norms.max_row / (norms.k1 * norms.k1);
    let sis_existence = if norms.op_norm <= 1.0 {
        ExistenceArgument::TrivialOnly
    } else if contraction_constant < 1.0 {
        ExistenceArgument::Contraction
    } else {
        ExistenceArgument::Schauder
    };
    Ok(ThresholdReport {
        k1: norms.k1,
        max_row: norms.max_row,
        op_norm: norms.op_norm,
        function_l2: norms.function_l2,
        r0,
        contraction_constant,
        regime: if r0 <= 1.0 + 1e-12 {
            Regime::DiseaseFreeOnly
        } else {
            Regime::Supercritical
        },
        sis_existence,
    })
}
