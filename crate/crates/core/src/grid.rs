use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centred grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    spacing: f64,
}

impl SpatialGrid {
    pub fn uniform(n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::domain("grid needs at least one point"));
        }
        let spacing = 1.0 / n_points as f64;
        let nodes = (0..n_points).map(|j| (j as f64 + 0.5) * spacing).collect();
        Ok(Self { nodes, spacing })
    }

    pub fn n_points(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Midpoint quadrature weight of cell `j` (all cells share it).
    pub fn weight(&self) -> f64 {
        self.spacing
    }

    /// Cell `j` as the interval `[lo, hi]`.
    pub fn cell(&self, j: usize) -> (f64, f64) {
        (j as f64 * self.spacing, (j + 1) as f64 * self.spacing)
    }

    /// Quadrature approximation of `∫₀¹ f dx` for values sampled at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        values.iter().sum::<f64>() * self.spacing
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        self.integrate(values)
    }
}
