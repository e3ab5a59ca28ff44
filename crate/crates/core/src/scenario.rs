//! Scenario presets A1–D2 and JSON configuration.
//!
//! A JSON config is an object whose fields override a base preset:
//!
//! ```json
//! { "base": "C1", "name": "C1-cheap", "eta": 0.01, "kernel": { "delta": 40 } }
//! ```
//!
//! `base` defaults to `A1`. Nested objects are merged field by field; unknown
//! fields are rejected with their path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{BlockLayout, ControlVariant};
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::kernel::{KernelMatrix, KernelSpec};
use crate::model::{EpidemicParams, InitialCondition, TimeGrid};
use crate::optim::{ControlProblem, CostParams, SweepConfig};

pub const PRESETS: [&str; 8] = ["A1", "A2", "B1", "B2", "C1", "C2", "D1", "D2"];

/// Initial infected profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    /// Homogeneous `2·10⁻⁵`.
    Z01,
    /// `10⁻⁵` for `x < 0.9`, `10⁻⁴` for `x ≥ 0.9`.
    Z02,
    Explicit { z0: Vec<f64>, r0: Option<Vec<f64>> },
}

impl InitialProfile {
    pub fn build(&self, grid: &SpatialGrid) -> Result<InitialCondition> {
        match self {
            InitialProfile::Z01 => InitialCondition::infected_only(vec![2e-5; grid.n_points()]),
            InitialProfile::Z02 => InitialCondition::infected_only(
                grid.nodes().iter().map(|&x| if x < 0.9 { 1e-5 } else { 1e-4 }).collect(),
            ),
            InitialProfile::Explicit { z0, r0 } => {
                let r0 = r0.clone().unwrap_or_else(|| vec![0.0; z0.len()]);
                let ic = InitialCondition::new(z0.clone(), r0)?;
                crate::error::check_len("initial.z0", grid.n_points(), ic.n_cells())?;
                Ok(ic)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Penalties {
    pub c1: f64,
    pub c2: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub psi_slope: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            c1: 1000.0,
            c2: 1.0,
            z_min: 1e-5,
            z_max: 5e-3,
            psi_slope: 1000.0,
        }
    }
}

/// Piecewise block lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blocks {
    pub days: f64,
    pub cells: usize,
}

impl Default for Blocks {
    fn default() -> Self {
        Self { days: 10.0, cells: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmSettings {
    pub agents_per_location: usize,
    pub dt: f64,
    /// Simulation substeps per output step.
    pub substeps: usize,
    pub runs: usize,
    pub base_seed: u64,
}

impl Default for AbmSettings {
    fn default() -> Self {
        Self {
            agents_per_location: 50_000,
            dt: 1.0,
            substeps: 10,
            runs: 10,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub space_dependent_u: bool,
    pub piecewise_u: bool,
    /// Horizon in days.
    #[serde(rename = "T")]
    pub horizon: f64,
    pub initial: InitialProfile,
    pub eta: f64,
    pub omega: f64,
    pub epidemic: EpidemicParams,
    pub kernel: KernelSpec,
    pub penalties: Penalties,
    pub sweep: SweepConfig,
    pub abm: AbmSettings,
    pub blocks: Blocks,
    pub grid_points: usize,
    pub dt: f64,
}

impl ScenarioSpec {
    /// One of the eight paper presets; names are case-insensitive.
    pub fn preset(name: &str) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase();
        if !PRESETS.contains(&upper.as_str()) {
            return Err(Error::UnknownScenario(name.to_string()));
        }
        let (letter, digit) = (upper.as_bytes()[0], upper.as_bytes()[1]);
        let long = digit == b'2';
        Ok(Self {
            name: upper.clone(),
            space_dependent_u: matches!(letter, b'C' | b'D'),
            piecewise_u: letter == b'D',
            horizon: if long { 800.0 } else { 400.0 },
            initial: if letter == b'B' || letter == b'D' {
                InitialProfile::Z02
            } else {
                InitialProfile::Z01
            },
            eta: if long { 0.005 } else { 0.02 },
            omega: if long { 0.2 } else { 1.0 },
            epidemic: EpidemicParams::default(),
            kernel: KernelSpec::default(),
            penalties: Penalties::default(),
            sweep: SweepConfig::default(),
            abm: AbmSettings::default(),
            blocks: Blocks::default(),
            grid_points: 100,
            dt: 0.25,
        })
    }

    /// A preset name, or a path to a JSON config.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_json_str(&text)
        } else {
            Self::preset(name_or_path)
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        let Value::Object(mut map) = overrides else {
            return Err(Error::config("<root>", "scenario config must be a JSON object"));
        };
        let base = match map.remove("base") {
            None => "A1".to_string(),
            Some(Value::String(s)) => s,
            Some(_) => return Err(Error::config("base", "must be a preset name")),
        };
        let preset = Self::preset(&base)?;
        let mut value = serde_json::to_value(&preset)?;
        // a custom config that does not rename itself is not the preset any more
        if !map.contains_key("name") && !map.is_empty() {
            map.insert("name".into(), Value::String(format!("{}-custom", preset.name)));
        }
        merge(&mut value, Value::Object(map));
        let spec: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn variant(&self) -> ControlVariant {
        match (self.space_dependent_u, self.piecewise_u) {
            (_, true) => ControlVariant::PiecewiseConstant,
            (true, false) => ControlVariant::SpaceTime,
            (false, false) => ControlVariant::TimeOnly,
        }
    }

    pub fn costs(&self) -> CostParams {
        CostParams {
            eta: self.eta,
            omega: self.omega,
            c1: self.penalties.c1,
            c2: self.penalties.c2,
            z_min: self.penalties.z_min,
            z_max: self.penalties.z_max,
            psi_slope: self.penalties.psi_slope,
        }
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::uniform(self.grid_points)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.dt)
    }

    /// Desk-scale variant: initial infected ×`scale`, agents per location
    /// ÷`scale`. The scaled profile replaces the preset one, so the
    /// deterministic model and the ABM see the same epidemic.
    pub fn desk_scaled(&self, scale: f64) -> Result<Self> {
        if !(scale >= 1.0 && scale.is_finite()) {
            return Err(Error::config("--scale", format!("must be at least 1, got {scale}")));
        }
        let ic = self.initial.build(&self.grid()?)?;
        let z0: Vec<f64> = ic.z0.iter().map(|z| (z * scale).min(1.0)).collect();
        let r0 = ic.r0.iter().zip(&z0).map(|(r, z)| r.min(1.0 - z)).collect();
        let mut out = self.clone();
        out.initial = InitialProfile::Explicit { z0, r0: Some(r0) };
        out.abm.agents_per_location = ((self.abm.agents_per_location as f64 / scale).round() as usize).max(1);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.piecewise_u && !self.space_dependent_u {
            return Err(Error::config("piecewise_u", "piecewise controls are space dependent"));
        }
        self.epidemic.check()?;
        self.kernel.check()?;
        self.costs().check()?;
        self.sweep.check()?;
        if self.abm.runs == 0 || self.abm.agents_per_location == 0 || self.abm.substeps == 0 || !(self.abm.dt > 0.0) {
            return Err(Error::config("abm", "runs, agents_per_location and dt must be positive"));
        }
        self.problem().map(|_| ())
    }

    /// Assembles the discretised optimal-control problem.
    pub fn problem(&self) -> Result<ControlProblem> {
        let grid = self.grid()?;
        let time = self.time_grid()?;
        let blocks = if self.piecewise_u {
            Some(BlockLayout::new(self.blocks.days, self.dt, time.n_steps, self.blocks.cells, grid.n_points())?)
        } else {
            None
        };
        Ok(ControlProblem {
            kernel: KernelMatrix::assemble(self.kernel, &grid)?,
            params: self.epidemic,
            initial: self.initial.build(&grid)?,
            time,
            costs: self.costs(),
            variant: self.variant(),
            blocks,
        })
    }
}

fn merge(target: &mut Value, patch: Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (t, p) => *t = p,
    }
}
