//! Distance kernel `k(r; u) = (1 − u)·c·e^{−δr} + k0`, its discretisation on a
//! [`SpatialGrid`] and the norms that govern the epidemic threshold.
//!
//! The discrete operator uses product integration: entry `(i, j)` is the
//! exact integral of the kernel over cell `j` as seen from node `x_i`, so a
//! piecewise-constant density is integrated without quadrature error. This
//! keeps row sums equal to the continuous row integrals even when the decay
//! length `1/δ` is comparable to the cell width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::SpatialGrid;

const POWER_ITERATION_TOL: f64 = 1e-12;
const POWER_ITERATION_MAX: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Amplitude of the adjustable part.
    pub c: f64,
    /// Decay rate of the adjustable part.
    pub delta: f64,
    /// Background transmission that the control cannot reduce.
    #[serde(default)]
    pub k0: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            c: 50.0,
            delta: 50.0,
            k0: 0.0,
        }
    }
}

impl KernelSpec {
    pub fn new(c: f64, delta: f64, k0: f64) -> Result<Self> {
        let spec = Self { c, delta, k0 };
        spec.check()?;
        Ok(spec)
    }

    /// Spatially constant kernel `k ≡ value`, handy for closed-form checks.
    pub fn constant(value: f64) -> Self {
        Self {
            c: 0.0,
            delta: 1.0,
            k0: value,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.c.is_finite() && self.k0.is_finite()) {
            return Err(Error::domain("kernel parameters must be finite"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::domain(format!(
                "kernel decay rate must be positive, got {}",
                self.delta
            )));
        }
        if self.k0 < 0.0 {
            return Err(Error::domain(format!(
                "background kernel k0 must be non-negative, got {}",
                self.k0
            )));
        }
        Ok(())
    }

    /// Adjustable part `a(r) = c·e^{−δr}`.
    pub fn adjustable(&self, r: f64) -> f64 {
        self.c * (-self.delta * r).exp()
    }

    /// Kernel value at distance `r` under lockdown intensity `u`.
    pub fn value(&self, r: f64, u: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("distance must be >= 0, got {r}")));
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("control must lie in [0,1], got {u}")));
        }
        Ok((1.0 - u) * self.adjustable(r) + self.k0)
    }

    /// `∫_lo^hi a(|x − y|) dy` in closed form.
    pub fn adjustable_cell_integral(&self, x: f64, lo: f64, hi: f64) -> f64 {
        // antiderivative in y, continuous across y = x
        let d = self.delta;
        let g = |y: f64| {
            if y <= x {
                (-d * (x - y)).exp() / d
            } else {
                (2.0 - (-d * (y - x)).exp()) / d
            }
        };
        self.c * (g(hi) - g(lo))
    }

    /// `∫₀¹ k(|x − y|) dy` for the uncontrolled kernel.
    pub fn row_integral(&self, x: f64) -> f64 {
        self.adjustable_cell_integral(x, 0.0, 1.0) + self.k0
    }

    /// One-sided norm `k1 = ∫₀¹ k(r) dr`.
    pub fn k1(&self) -> f64 {
        self.c * (1.0 - (-self.delta).exp()) / self.delta + self.k0
    }

    /// Largest row integral `K = max_x ∫₀¹ k(|x − y|) dy`.
    ///
    /// The row integral is concave in `x` for `c ≥ 0` (maximal at the
    /// centre) and convex otherwise (maximal at the ends).
    pub fn max_row_integral(&self) -> f64 {
        self.row_integral(0.5).max(self.row_integral(0.0))
    }

    /// Function norm `(∫₀¹ k(r)² dr)^{1/2}`; reported alongside the operator
    /// norm, which is the quantity that sets the threshold.
    pub fn function_l2_norm(&self) -> f64 {
        let d = self.delta;
        let sq = self.c * self.c * (1.0 - (-2.0 * d).exp()) / (2.0 * d)
            + 2.0 * self.c * self.k0 * (1.0 - (-d).exp()) / d
            + self.k0 * self.k0;
        sq.max(0.0).sqrt()
    }
}

/// Product-integration discretisation of the kernel operator.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    spec: KernelSpec,
    grid: SpatialGrid,
    /// `adjustable[i][j] = ∫_{cell j} a(|x_i − y|) dy`
    adjustable: Field,
    /// On a uniform grid the off-diagonal entries are `off·q^{|i−j|−1}`,
    /// so products with the matrix reduce to two geometric running sums.
    diag: f64,
    off: f64,
    q: f64,
}

impl KernelMatrix {
    pub fn assemble(spec: KernelSpec, grid: &SpatialGrid) -> Result<Self> {
        spec.check()?;
        let n = grid.n_points();
        let mut adjustable = Field::zeros(n, n);
        for (i, &x) in grid.nodes().iter().enumerate() {
            let row = adjustable.row_mut(i);
            for (j, entry) in row.iter_mut().enumerate() {
                let (lo, hi) = grid.cell(j);
                *entry = spec.adjustable_cell_integral(x, lo, hi);
            }
        }
        let h = grid.spacing();
        let (diag, off) = if n > 1 {
            (adjustable.get(0, 0), adjustable.get(0, 1))
        } else {
            (adjustable.get(0, 0), 0.0)
        };
        Ok(Self {
            spec,
            grid: grid.clone(),
            adjustable,
            diag,
            off,
            q: (-spec.delta * h).exp(),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n_points()
    }

    pub fn adjustable(&self) -> &Field {
        &self.adjustable
    }

    /// Full uncontrolled matrix `adjustable + k0·w`.
    pub fn values(&self) -> Field {
        let w = self.grid.weight();
        self.adjustable.map(|a| a + self.spec.k0 * w)
    }

    /// `out = A z` (adjustable part only).
    pub fn apply_adjustable(&self, z: &[f64], out: &mut [f64]) {
        let n = z.len();
        let mut left = 0.0;
        for i in 0..n {
            out[i] = self.diag * z[i] + self.off * left;
            left = self.q * left + z[i];
        }
        let mut right = 0.0;
        for i in (0..n).rev() {
            out[i] += self.off * right;
            right = self.q * right + z[i];
        }
    }

    /// `out = Aᵀ v` (adjustable part only; the matrix is symmetric).
    pub fn apply_adjustable_transpose(&self, v: &[f64], out: &mut [f64]) {
        self.apply_adjustable(v, out);
    }

    /// Background contribution `k0·∫z`.
    pub fn background(&self, z: &[f64]) -> f64 {
        self.spec.k0 * self.grid.integrate(z)
    }

    /// `χ(x_i) = (1 − u_i)·(A z)_i + k0·∫z`, the controlled kernel applied to `z`.
    pub fn apply_controlled(&self, z: &[f64], u: &[f64], az: &mut [f64], out: &mut [f64]) {
        self.apply_adjustable(z, az);
        let bg = self.background(z);
        for ((o, a), ui) in out.iter_mut().zip(az.iter()).zip(u) {
            *o = (1.0 - ui) * a + bg;
        }
    }

    /// Uncontrolled operator `(T_k z)(x_i)`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        self.apply_adjustable(z, out);
        let bg = self.background(z);
        out.iter_mut().for_each(|o| *o += bg);
    }

    /// Weight-symmetrised matrix `D^{1/2} K D^{-1/2}` with `K` the discrete
    /// operator; for uniform cells this is the operator matrix itself.
    pub fn symmetrized(&self) -> Field {
        // uniform weights: sqrt(w_i)/sqrt(w_j) = 1
        self.values()
    }

    /// Operator norm on L² by power iteration from the all-ones vector.
    pub fn operator_norm(&self) -> f64 {
        power_iteration(&self.symmetrized())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dominant |eigenvalue| of a symmetric matrix.
pub fn power_iteration(m: &Field) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = dot(m.row(i), &v);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
        if (next - estimate).abs() <= POWER_ITERATION_TOL * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelNorms {
    pub k1: f64,
    #[serde(rename = "K")]
    pub max_row: f64,
    pub op_norm: f64,
    /// `(∫ k²)^{1/2}`, reported for comparison only.
    pub function_l2: f64,
}

pub fn compute_norms(spec: &KernelSpec, grid: &SpatialGrid) -> Result<KernelNorms> {
    let matrix = KernelMatrix::assemble(*spec, grid)?;
    Ok(KernelNorms {
        k1: spec.k1(),
        max_row: spec.max_row_integral(),
        op_norm: matrix.operator_norm(),
        function_l2: spec.function_l2_norm(),
    })
}

/// `R0 = (β/γ)·‖T_k‖`.
pub fn basic_reproduction_number(
    spec: &KernelSpec,
    beta: f64,
    gamma: f64,
    grid: &SpatialGrid,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("recovery rate must be positive, got {gamma}")));
    }
    Ok(beta / gamma * compute_norms(spec, grid)?.op_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the six kernel requirements on the distances realised by `grid`.
pub fn validate_assumptions(spec: &KernelSpec, grid: &SpatialGrid) -> ValidationReport {
    let n = grid.n_points();
    // all pairwise distances on a uniform grid are multiples of the spacing
    let distances: Vec<f64> = (0..n).map(|m| m as f64 * grid.spacing()).collect();
    let values: Vec<f64> = distances
        .iter()
        .map(|&r| spec.adjustable(r) + spec.k0)
        .collect();
    let mut checks = Vec::with_capacity(6);

    let finite = values.iter().all(|v| v.is_finite());
    checks.push(AssumptionCheck {
        name: "continuous",
        passed: finite,
        detail: "exponential family is continuous in r".into(),
    });

    let (r_min, v_min) = distances
        .iter()
        .zip(&values)
        .fold((0.0, f64::INFINITY), |acc, (&r, &v)| if v < acc.1 { (r, v) } else { acc });
    checks.push(AssumptionCheck {
        name: "non-negative",
        passed: v_min >= 0.0,
        detail: format!("min k = {v_min:e} at r = {r_min}"),
    });

    let peak = values[0];
    let tail_ok = values[1..].iter().all(|&v| v > 0.0 && v < peak);
    checks.push(AssumptionCheck {
        name: "k(0) > k(r) > 0",
        passed: tail_ok,
        detail: format!(
            "k(0) = {peak:e}, k(r_max) = {:e}",
            values.last().copied().unwrap_or(peak)
        ),
    });

    let violation = values
        .windows(2)
        .enumerate()
        .find(|(_, w)| w[1] > w[0])
        .map(|(m, w)| format!("k({}) = {:e} < k({}) = {:e}", distances[m], w[0], distances[m + 1], w[1]));
    checks.push(AssumptionCheck {
        name: "monotone decreasing",
        passed: violation.is_none(),
        detail: violation.unwrap_or_else(|| "non-increasing on grid distances".into()),
    });

    let k1 = spec.k1();
    let big_k = spec.max_row_integral();
    checks.push(AssumptionCheck {
        name: "k1 > 0",
        passed: k1 > 0.0,
        detail: format!("k1 = {k1:e}"),
    });
    checks.push(AssumptionCheck {
        name: "k1 < K",
        passed: k1 < big_k,
        detail: format!("k1 = {k1:e}, K = {big_k:e}"),
    });

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper() -> KernelSpec {
        KernelSpec::new(50.0, 50.0, 0.0).unwrap()
    }

    #[test]
    fn kernel_values() {
        let k = paper();
        assert_eq!(k.value(0.0, 0.0).unwrap(), 50.0);
        assert_eq!(k.value(0.37, 1.0).unwrap(), 0.0);
        let v = k.value(0.02, 0.0).unwrap();
        assert!((v - 50.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 18.394).abs() < 1e-3);
    }

    #[test]
    fn kernel_value_domain_errors() {
        let k = paper();
        assert!(k.value(-0.1, 0.0).is_err());
        assert!(k.value(0.1, 1.5).is_err());
        assert!(k.value(0.1, -0.01).is_err());
        assert!(k.value(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::new(1.0, 0.0, 0.0).is_err());
        assert!(KernelSpec::new(1.0, 1.0, -0.5).is_err());
        assert!(KernelSpec::new(f64::INFINITY, 1.0, 0.0).is_err());
    }

    #[test]
    fn paper_kernel_norms() {
        let g = SpatialGrid::uniform(100).unwrap();
        let n = compute_norms(&paper(), &g).unwrap();
        assert!((n.k1 - (1.0 - (-50.0f64).exp())).abs() < 1e-14);
        assert!((n.max_row - 2.0 * (1.0 - (-25.0f64).exp())).abs() < 1e-14);
        assert!(n.k1 <= n.max_row && n.max_row <= 2.0 * n.k1);
        assert!(n.op_norm <= n.max_row);
        assert!((n.op_norm - 2.0).abs() < 0.05, "{}", n.op_norm);
        // function norm is ~5, not the threshold quantity
        assert!((n.function_l2 - 5.0).abs() < 1e-6);
    }

    #[test]
    fn constant_kernel_norms() {
        let g = SpatialGrid::uniform(100).unwrap();
        let n = compute_norms(&KernelSpec::constant(1.0), &g).unwrap();
        assert!((n.k1 - 1.0).abs() < 1e-14);
        assert!((n.max_row - 1.0).abs() < 1e-14);
        assert!((n.op_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reproduction_number() {
        let g = SpatialGrid::uniform(100).unwrap();
        let r0 = basic_reproduction_number(&paper(), 0.1, 0.1, &g).unwrap();
        assert!((r0 - 2.0).abs() < 0.05, "{r0}");
        let c = KernelSpec::constant(1.0);
        assert!((basic_reproduction_number(&c, 0.1, 0.1, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((basic_reproduction_number(&c, 0.2, 0.1, &g).unwrap() - 2.0).abs() < 1e-12);
        assert!(basic_reproduction_number(&c, 0.2, 0.0, &g).is_err());
        assert!(basic_reproduction_number(&c, 0.2, -1.0, &g).is_err());
    }

    #[test]
    fn matrix_rows_match_closed_form_row_integrals() {
        let g = SpatialGrid::uniform(100).unwrap();
        let m = KernelMatrix::assemble(paper(), &g).unwrap();
        let vals = m.values();
        for (i, &x) in g.nodes().iter().enumerate() {
            let row: f64 = vals.row(i).iter().sum();
            assert!((row - paper().row_integral(x)).abs() < 1e-12);
        }
        // symmetric and non-negative
        for i in 0..100 {
            for j in 0..100 {
                assert!((vals.get(i, j) - vals.get(j, i)).abs() < 1e-14);
                assert!(vals.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn fast_product_matches_dense_matrix() {
        for (spec, n) in [(paper(), 100), (KernelSpec::new(3.0, 0.7, 0.2).unwrap(), 17), (paper(), 1)] {
            let g = SpatialGrid::uniform(n).unwrap();
            let m = KernelMatrix::assemble(spec, &g).unwrap();
            let z: Vec<f64> = (0..n).map(|j| ((j * 37 % 11) as f64).sin()).collect();
            let mut fast = vec![0.0; n];
            m.apply_adjustable(&z, &mut fast);
            for i in 0..n {
                let dense = dot(m.adjustable().row(i), &z);
                assert!((fast[i] - dense).abs() < 1e-12 * (1.0 + dense.abs()), "{i}: {} vs {dense}", fast[i]);
            }
        }
    }

    #[test]
    fn validation_reports() {
        let g = SpatialGrid::uniform(100).unwrap();
        let ok = validate_assumptions(&paper(), &g);
        assert!(ok.all_passed(), "{ok:?}");

        let flat = validate_assumptions(&KernelSpec::constant(1.0), &g);
        assert!(!flat.get("k1 < K").unwrap().passed);
        assert!(flat.get("non-negative").unwrap().passed);

        let neg = KernelSpec {
            c: -1.0,
            delta: 1.0,
            k0: 0.0,
        };
        let rep = validate_assumptions(&neg, &g);
        assert!(!rep.get("non-negative").unwrap().passed);
    }

    proptest! {
        #[test]
        fn kernel_is_non_increasing(c in 0.01f64..100.0, delta in 0.1f64..100.0, k0 in 0.0f64..5.0,
                                    r1 in 0.0f64..1.0, r2 in 0.0f64..1.0, u in 0.0f64..=1.0) {
            let k = KernelSpec::new(c, delta, k0).unwrap();
            let (near, far) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(k.value(near, u).unwrap() >= k.value(far, u).unwrap());
            prop_assert!(k.value(far, u).unwrap() >= 0.0);
        }

        #[test]
        fn norm_ordering(c in 0.01f64..100.0, delta in 0.1f64..100.0, k0 in 0.0f64..5.0) {
            let g = SpatialGrid::uniform(40).unwrap();
            let k = KernelSpec::new(c, delta, k0).unwrap();
            let n = compute_norms(&k, &g).unwrap();
            prop_assert!(n.k1 <= n.max_row * (1.0 + 1e-12));
            prop_assert!(n.max_row <= 2.0 * n.k1 * (1.0 + 1e-12));
            prop_assert!(n.op_norm <= n.max_row * (1.0 + 1e-9));
        }
    }
}
