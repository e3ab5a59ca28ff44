//! Lockdown controls `u ∈ [0, 1]` in the three supported parameterisations.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlVariant {
    TimeOnly,
    SpaceTime,
    PiecewiseConstant,
}

/// Block layout of a piecewise-constant control on the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub steps_per_block: usize,
    pub cells_per_block: usize,
    /// Number of time nodes (`n_steps + 1`).
    pub n_nodes: usize,
    pub n_cells: usize,
}

impl BlockLayout {
    /// Builds the layout from block lengths in days and cells.
    pub fn new(time_block: f64, dt: f64, n_steps: usize, space_block: usize, n_cells: usize) -> Result<Self> {
        let ratio = time_block / dt;
        let steps_per_block = ratio.round() as usize;
        if steps_per_block == 0 || (ratio - steps_per_block as f64).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(
                "blocks.time_block",
                format!("time block {time_block} is not a positive multiple of dt = {dt}"),
            ));
        }
        if n_steps % steps_per_block != 0 {
            return Err(Error::config(
                "blocks.time_block",
                format!("horizon of {n_steps} steps is not divisible into blocks of {steps_per_block} steps"),
            ));
        }
        if space_block == 0 || n_cells % space_block != 0 {
            return Err(Error::config(
                "blocks.space_block",
                format!("{n_cells} cells are not divisible into blocks of {space_block} cells"),
            ));
        }
        Ok(Self {
            steps_per_block,
            cells_per_block: space_block,
            n_nodes: n_steps + 1,
            n_cells,
        })
    }

    pub fn n_time_blocks(&self) -> usize {
        (self.n_nodes - 1) / self.steps_per_block
    }

    pub fn n_space_blocks(&self) -> usize {
        self.n_cells / self.cells_per_block
    }

    /// Time block holding node `i`; the terminal node belongs to the last block.
    pub fn time_block_of(&self, i: usize) -> usize {
        (i / self.steps_per_block).min(self.n_time_blocks() - 1)
    }

    pub fn space_block_of(&self, j: usize) -> usize {
        j / self.cells_per_block
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    pub layout: BlockLayout,
    /// `n_time_blocks × n_space_blocks` block values.
    pub blocks: Field,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlField {
    /// `u(t_i)`, one value per time node.
    TimeOnly(Vec<f64>),
    /// `u(t_i, x_j)` on the full grid.
    SpaceTime(Field),
    PiecewiseConstant(PiecewiseControl),
}

impl ControlField {
    pub fn constant(variant: ControlVariant, value: f64, n_nodes: usize, n_cells: usize, layout: Option<BlockLayout>) -> Result<Self> {
        Ok(match variant {
            ControlVariant::TimeOnly => ControlField::TimeOnly(vec![value; n_nodes]),
            ControlVariant::SpaceTime => ControlField::SpaceTime(Field::filled(n_nodes, n_cells, value)),
            ControlVariant::PiecewiseConstant => {
                let layout = layout.ok_or_else(|| Error::config("blocks", "piecewise control needs a block layout"))?;
                check_len("piecewise control time nodes", layout.n_nodes, n_nodes)?;
                check_len("piecewise control cells", layout.n_cells, n_cells)?;
                ControlField::PiecewiseConstant(PiecewiseControl {
                    blocks: Field::filled(layout.n_time_blocks(), layout.n_space_blocks(), value),
                    layout,
                })
            }
        })
    }

    pub fn variant(&self) -> ControlVariant {
        match self {
            ControlField::TimeOnly(_) => ControlVariant::TimeOnly,
            ControlField::SpaceTime(_) => ControlVariant::SpaceTime,
            ControlField::PiecewiseConstant(_) => ControlVariant::PiecewiseConstant,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            ControlField::TimeOnly(v) => v.len(),
            ControlField::SpaceTime(f) => f.rows(),
            ControlField::PiecewiseConstant(p) => p.layout.n_nodes,
        }
    }

    /// Number of cells the control is defined on, `None` for time-only controls.
    pub fn n_cells(&self) -> Option<usize> {
        match self {
            ControlField::TimeOnly(_) => None,
            ControlField::SpaceTime(f) => Some(f.cols()),
            ControlField::PiecewiseConstant(p) => Some(p.layout.n_cells),
        }
    }

    /// Writes `u(t_i, x_j)` for every cell into `out`.
    pub fn fill_row(&self, i: usize, out: &mut [f64]) {
        match self {
            ControlField::TimeOnly(v) => out.fill(v[i]),
            ControlField::SpaceTime(f) => out.copy_from_slice(f.row(i)),
            ControlField::PiecewiseConstant(p) => {
                let row = p.blocks.row(p.layout.time_block_of(i));
                for (j, o) in out.iter_mut().enumerate() {
                    *o = row[p.layout.space_block_of(j)];
                }
            }
        }
    }

    /// Pointwise evaluation on all nodes and cells.
    pub fn to_field(&self, n_cells: usize) -> Field {
        let mut f = Field::zeros(self.n_nodes(), n_cells);
        for i in 0..self.n_nodes() {
            self.fill_row(i, f.row_mut(i));
        }
        f
    }

    /// Checks shape against a time grid and spatial grid.
    pub fn check_shape(&self, n_nodes: usize, n_cells: usize) -> Result<()> {
        check_len("control time nodes", n_nodes, self.n_nodes())?;
        if let Some(c) = self.n_cells() {
            check_len("control cells", n_cells, c)?;
        }
        Ok(())
    }

    /// Degrees of freedom of the parameterisation, flattened.
    pub fn dofs(&self) -> &[f64] {
        match self {
            ControlField::TimeOnly(v) => v,
            ControlField::SpaceTime(f) => f.as_slice(),
            ControlField::PiecewiseConstant(p) => p.blocks.as_slice(),
        }
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        match self {
            ControlField::TimeOnly(v) => v,
            ControlField::SpaceTime(f) => f.as_mut_slice(),
            ControlField::PiecewiseConstant(p) => p.blocks.as_mut_slice(),
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.dofs().iter().all(|&u| (0.0..=1.0).contains(&u))
    }

    pub fn max_value(&self) -> f64 {
        self.dofs().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at time `t` (sample-and-hold on the node grid with spacing `dt`).
    pub fn value_at(&self, t: f64, dt: f64, cell: usize, out_row: &mut [f64]) -> f64 {
        let i = ((t / dt) + 1e-9).floor() as usize;
        let i = i.min(self.n_nodes() - 1);
        self.fill_row(i, out_row);
        out_row[cell]
    }
}

/// Projects a space-time field onto blocks: each block takes the spatial
/// average of the field at the block's starting time node. Inputs in `[0, 1]`
/// stay in `[0, 1]`; no clipping is applied.
pub fn project_piecewise(field: &Field, layout: BlockLayout) -> Result<PiecewiseControl> {
    check_len("projected field time nodes", layout.n_nodes, field.rows())?;
    check_len("projected field cells", layout.n_cells, field.cols())?;
    let mut blocks = Field::zeros(layout.n_time_blocks(), layout.n_space_blocks());
    for b in 0..layout.n_time_blocks() {
        let row = field.row(b * layout.steps_per_block);
        for (s, chunk) in row.chunks_exact(layout.cells_per_block).enumerate() {
            let avg = chunk.iter().sum::<f64>() / layout.cells_per_block as f64;
            blocks.set(b, s, avg);
        }
    }
    Ok(PiecewiseControl { layout, blocks })
}
