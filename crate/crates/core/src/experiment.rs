//! Scenario orchestration and the on-disk output bundle.
//!
//! A full run writes, relative to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `scenario.json` | resolved scenario |
//! | `z.csv`, `r.csv` | state under the optimised control |
//! | `z_u0.csv` | infected density without control |
//! | `control.csv` | optimised control (`t,u` for time-only controls) |
//! | `control_blocks.csv` | block values of a piecewise control |
//! | `adjoint1.csv`, `adjoint2.csv` | costates |
//! | `iterations.csv` | `iter,J` sweep log |
//! | `abm/`, `abm_u0/` | ABM ensembles under `u*` and `u ≡ 0` |
//! | `compare.json` | objective values and ABM comparison |
//! | `norms.json` | kernel diagnostics |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abm::{compare, run_ensemble, AbmConfig, AbmControl, EnsembleResult};
use crate::control::ControlField;
use crate::equilibria::{sir_prevalence, sis_fixed_point, threshold_report, FixedPointConfig, PrevalenceSolution, SisEquilibrium, ThresholdReport};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::{validate_assumptions, KernelMatrix, ValidationReport};
use crate::model::{InitialCondition, StateField, TimeGrid};
use crate::optim::{cost_breakdown, fbs_solve, ControlProblem, CostBreakdown, SweepOutcome, SweepStatus};
use crate::par::{self, Execution};
use crate::scenario::ScenarioSpec;

/// Command-line style overrides applied on top of a scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Desk mode, see [`ScenarioSpec::desk_scaled`].
    pub scale: Option<f64>,
    pub dt: Option<f64>,
    pub grid_points: Option<usize>,
    pub runs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ScenarioSpec) -> Result<()> {
        if let Some(seed) = self.seed {
            spec.abm.base_seed = seed;
        }
        if let Some(dt) = self.dt {
            spec.dt = dt;
        }
        if let Some(n) = self.grid_points {
            spec.grid_points = n;
        }
        if let Some(runs) = self.runs {
            spec.abm.runs = runs;
        }
        if let Some(scale) = self.scale {
            *spec = spec.desk_scaled(scale)?;
        }
        spec.validate()
    }
}

/// ABM configuration and initial data for a scenario.
pub fn abm_setup(spec: &ScenarioSpec) -> Result<(AbmConfig, InitialCondition)> {
    let grid = spec.grid()?;
    let cfg = AbmConfig {
        n_locations: grid.n_points(),
        agents_per_location: spec.abm.agents_per_location as u64,
        beta: spec.epidemic.beta,
        gamma: spec.epidemic.gamma,
        kernel: spec.kernel,
        dt: spec.abm.dt,
        substeps: spec.abm.substeps,
        horizon: spec.horizon,
        seed: spec.abm.base_seed,
    };
    Ok((cfg, spec.initial.build(&grid)?))
}

/// Result of optimising one scenario.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub problem: ControlProblem,
    pub uncontrolled: StateField,
    pub j_uncontrolled: f64,
    pub sweep: SweepOutcome,
}

impl Optimized {
    pub fn j_optimal(&self) -> f64 {
        self.sweep.objective()
    }
}

pub fn optimize(spec: &ScenarioSpec) -> Result<Optimized> {
    let inner = || -> Result<Optimized> {
        let problem = spec.problem()?;
        let (uncontrolled, j_uncontrolled) = problem.evaluate(&problem.constant_control(0.0)?)?;
        let sweep = fbs_solve(&problem, &spec.sweep)?;
        Ok(Optimized {
            problem,
            uncontrolled,
            j_uncontrolled,
            sweep,
        })
    };
    inner().map_err(|e| e.in_scenario(&spec.name))
}

/// Objective of an ABM ensemble mean under the control it was run with.
pub fn abm_objective(ensemble: &EnsembleResult, control: &AbmControl, spec: &ScenarioSpec) -> Result<CostBreakdown> {
    let time = ensemble.time();
    cost_breakdown(&ensemble.mean_z, &control.at_output(time), time, &spec.costs(), &spec.grid()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbmSummary {
    pub agents_per_location: u64,
    pub runs: usize,
    pub base_seed: u64,
    #[serde(rename = "J_abm")]
    pub j_abm: f64,
    #[serde(rename = "J_abm_u0")]
    pub j_abm_uncontrolled: f64,
    pub mean_infectious_period: f64,
    pub recoveries_sampled: u64,
    pub sup_norm: f64,
    pub l2_norm: f64,
    /// Largest spatial-mean gap over the deterministic peak.
    pub mean_gap_relative_to_peak: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    #[serde(rename = "J_u0")]
    pub j_uncontrolled: f64,
    #[serde(rename = "J_sir")]
    pub j_sir: f64,
    pub breakdown: CostBreakdown,
    pub status: SweepStatus,
    pub iterations: usize,
    pub max_z: f64,
    pub max_u: f64,
    pub abm: Option<AbmSummary>,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.status == SweepStatus::Converged
    }

    /// One line in the layout of the objective table.
    pub fn table_row(&self) -> String {
        let abm = self.abm.as_ref().map_or("-".to_string(), |a| format!("{:.1}", a.j_abm));
        format!(
            "{:<4} J(u=0) = {:>7.1}   J(u*)_sir = {:>6.1}   J(u*)_abm = {:>6}   [{:?}, {} iterations]",
            self.scenario, self.j_uncontrolled, self.j_sir, abm, self.status, self.iterations
        )
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_iterations(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("iter,J\n");
    for (k, j) in history.iter().enumerate() {
        let _ = writeln!(out, "{k},{j}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn control_columns(control: &ControlField, n_cells: usize) -> Field {
    match control {
        ControlField::TimeOnly(v) => Field::from_vec(v.len(), 1, v.clone()).expect("column shape"),
        _ => control.to_field(n_cells),
    }
}

/// Writes the deterministic part of a bundle.
pub fn write_optimized(dir: &Path, spec: &ScenarioSpec, opt: &Optimized) -> Result<()> {
    create_dir(dir)?;
    let times = opt.problem.time.times();
    let n = opt.problem.n_cells();
    write_json(&dir.join("scenario.json"), spec)?;
    opt.sweep.state.z.write_csv(&dir.join("z.csv"), &times, "x_")?;
    opt.sweep.state.r.write_csv(&dir.join("r.csv"), &times, "x_")?;
    opt.uncontrolled.z.write_csv(&dir.join("z_u0.csv"), &times, "x_")?;
    control_columns(&opt.sweep.control, n).write_csv(&dir.join("control.csv"), &times, "x_")?;
    if let ControlField::PiecewiseConstant(p) = &opt.sweep.control {
        let starts: Vec<f64> = (0..p.layout.n_time_blocks())
            .map(|b| opt.problem.time.time(b * p.layout.steps_per_block))
            .collect();
        p.blocks.write_csv(&dir.join("control_blocks.csv"), &starts, "block_")?;
    }
    opt.sweep.adjoint.lambda1.write_csv(&dir.join("adjoint1.csv"), &times, "x_")?;
    opt.sweep.adjoint.lambda2.write_csv(&dir.join("adjoint2.csv"), &times, "x_")?;
    write_iterations(&dir.join("iterations.csv"), &opt.sweep.history)?;
    write_json(&dir.join("norms.json"), &diagnostics(spec)?)
}

fn write_ensemble(dir: &Path, ens: &EnsembleResult) -> Result<()> {
    create_dir(dir)?;
    let times = ens.time().times();
    for run in &ens.runs {
        run.z_density.write_csv(&dir.join(format!("run_{}.csv", run.seed)), &times, "x_")?;
        run.r_density.write_csv(&dir.join(format!("run_{}_r.csv", run.seed)), &times, "x_")?;
    }
    ens.mean_z.write_csv(&dir.join("mean.csv"), &times, "x_")?;
    ens.mean_r.write_csv(&dir.join("mean_r.csv"), &times, "x_")
}

/// ABM ensembles under `u*` and `u ≡ 0` plus their comparison with the
/// deterministic model.
pub struct AbmValidation {
    pub controlled: EnsembleResult,
    pub uncontrolled: EnsembleResult,
    pub control: AbmControl,
    pub summary: AbmSummary,
}

pub fn validate_with_abm(spec: &ScenarioSpec, opt: &Optimized, exec: Execution) -> Result<AbmValidation> {
    let (cfg, ic) = abm_setup(spec)?;
    let abm_time = cfg.time()?;
    let control = AbmControl::sample(&opt.sweep.control, opt.problem.time, &cfg)?;
    let zero = AbmControl::none(&cfg)?;
    let controlled = run_ensemble(&cfg, &ic, &control, spec.abm.runs, spec.abm.base_seed, exec)?;
    let uncontrolled = run_ensemble(&cfg, &ic, &zero, spec.abm.runs, spec.abm.base_seed, exec)?;
    let grid = spec.grid()?;
    let cmp = compare(&controlled.mean_z, abm_time, &opt.sweep.state, &grid)?;
    let (period, sampled) = controlled.infectious_period();
    let summary = AbmSummary {
        agents_per_location: cfg.agents_per_location,
        runs: spec.abm.runs,
        base_seed: spec.abm.base_seed,
        j_abm: abm_objective(&controlled, &control, spec)?.total,
        j_abm_uncontrolled: abm_objective(&uncontrolled, &zero, spec)?.total,
        mean_infectious_period: period,
        recoveries_sampled: sampled,
        sup_norm: cmp.sup_norm,
        l2_norm: cmp.l2_norm,
        mean_gap_relative_to_peak: cmp.mean_gap_relative_to_peak(),
    };
    Ok(AbmValidation {
        controlled,
        uncontrolled,
        control,
        summary,
    })
}

pub fn summarize(opt: &Optimized, abm: Option<AbmSummary>) -> Result<RunSummary> {
    let grid = opt.problem.kernel.grid();
    let u = opt.sweep.control.to_field(grid.n_points());
    Ok(RunSummary {
        scenario: String::new(),
        j_uncontrolled: opt.j_uncontrolled,
        j_sir: opt.j_optimal(),
        breakdown: cost_breakdown(&opt.sweep.state.z, &u, opt.problem.time, &opt.problem.costs, grid)?,
        status: opt.sweep.status,
        iterations: opt.sweep.iterations(),
        max_z: opt.sweep.state.z.max(),
        max_u: opt.sweep.control.max_value(),
        abm,
    })
}

/// Optimises, validates against the ABM (unless `with_abm` is false) and
/// writes the complete bundle to `out`.
pub fn run_scenario(spec: &ScenarioSpec, out: &Path, with_abm: bool, exec: Execution) -> Result<RunSummary> {
    let inner = || -> Result<RunSummary> {
        let opt = optimize(spec)?;
        write_optimized(out, spec, &opt)?;
        let abm = if with_abm {
            let v = validate_with_abm(spec, &opt, exec)?;
            write_ensemble(&out.join("abm"), &v.controlled)?;
            write_ensemble(&out.join("abm_u0"), &v.uncontrolled)?;
            Some(v.summary)
        } else {
            None
        };
        let mut summary = summarize(&opt, abm)?;
        summary.scenario = spec.name.clone();
        write_json(&out.join("compare.json"), &summary)?;
        Ok(summary)
    };
    inner().map_err(|e| match e {
        e @ Error::Scenario { .. } => e,
        e => e.in_scenario(&spec.name),
    })
}

/// Objective values recomputed from the CSV files of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Recomputed {
    #[serde(rename = "J_u0")]
    pub j_uncontrolled: f64,
    #[serde(rename = "J_sir")]
    pub j_sir: f64,
    #[serde(rename = "J_abm")]
    pub j_abm: Option<f64>,
}

fn time_grid_from(times: &[f64], path: &Path) -> Result<TimeGrid> {
    if times.len() < 2 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "need at least two time rows".into(),
        });
    }
    Ok(TimeGrid {
        dt: times[1] - times[0],
        n_steps: times.len() - 1,
    })
}

fn broadcast(u: Field, n: usize) -> Field {
    if u.cols() == 1 && n != 1 {
        let mut full = Field::zeros(u.rows(), n);
        for i in 0..u.rows() {
            full.row_mut(i).fill(u.get(i, 0));
        }
        full
    } else {
        u
    }
}

pub fn recompute_from_bundle(dir: &Path) -> Result<Recomputed> {
    let spec_path = dir.join("scenario.json");
    let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: ScenarioSpec = serde_json::from_str(&text)?;
    let grid = spec.grid()?;
    let costs = spec.costs();
    let n = grid.n_points();

    let (times, z) = Field::read_csv(&dir.join("z.csv"))?;
    let time = time_grid_from(&times, &dir.join("z.csv"))?;
    let (_, u) = Field::read_csv(&dir.join("control.csv"))?;
    let u = broadcast(u, n);
    let j_sir = cost_breakdown(&z, &u, time, &costs, &grid)?.total;
    let (_, z0) = Field::read_csv(&dir.join("z_u0.csv"))?;
    let j_uncontrolled = cost_breakdown(&z0, &Field::zeros(time.n_nodes(), n), time, &costs, &grid)?.total;

    let mean = dir.join("abm").join("mean.csv");
    let j_abm = if mean.exists() {
        let (abm_times, mz) = Field::read_csv(&mean)?;
        let abm_time = time_grid_from(&abm_times, &mean)?;
        let mut ua = Field::zeros(abm_time.n_nodes(), n);
        for i in 0..abm_time.n_nodes() {
            let k = ((abm_time.time(i) / time.dt) + 1e-9).floor() as usize;
            ua.row_mut(i).copy_from_slice(u.row(k.min(time.n_steps)));
        }
        Some(cost_breakdown(&mz, &ua, abm_time, &costs, &grid)?.total)
    } else {
        None
    };
    Ok(Recomputed {
        j_uncontrolled,
        j_sir,
        j_abm,
    })
}

/// Reads `compare.json` of a bundle.
pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("compare.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub scenario: String,
    #[serde(flatten)]
    pub threshold: ThresholdReport,
    pub assumptions: ValidationReport,
}

pub fn diagnostics(spec: &ScenarioSpec) -> Result<Diagnostics> {
    let grid = spec.grid()?;
    let kernel = KernelMatrix::assemble(spec.kernel, &grid)?;
    Ok(Diagnostics {
        scenario: spec.name.clone(),
        threshold: threshold_report(&kernel, spec.epidemic)?,
        assumptions: validate_assumptions(&spec.kernel, &grid),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub threshold: ThresholdReport,
    pub sis: SisEquilibrium,
    pub prevalence: PrevalenceSolution,
}

pub fn equilibria(spec: &ScenarioSpec, cfg: &FixedPointConfig) -> Result<EquilibriumReport> {
    let grid = spec.grid()?;
    let kernel = KernelMatrix::assemble(spec.kernel, &grid)?;
    Ok(EquilibriumReport {
        threshold: threshold_report(&kernel, spec.epidemic)?,
        sis: sis_fixed_point(&kernel, cfg)?,
        prevalence: sir_prevalence(&kernel, spec.epidemic, cfg)?,
    })
}

pub fn write_equilibria(dir: &Path, spec: &ScenarioSpec, report: &EquilibriumReport) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("equilibria.json"), report)?;
    let grid = spec.grid()?;
    let mut out = String::from("x,z_star,r_inf\n");
    for (j, x) in grid.nodes().iter().enumerate() {
        let _ = writeln!(out, "{x},{},{}", report.sis.z_star[j], report.prevalence.r_inf[j]);
    }
    let path = dir.join("profiles.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Uncontrolled objective of several scenarios at once.
pub fn uncontrolled_batch(specs: &[ScenarioSpec], exec: Execution) -> Result<Vec<f64>> {
    par::try_map(exec, specs.iter().collect(), |spec| {
        let problem = spec.problem()?;
        Ok(problem.evaluate(&problem.constant_control(0.0)?)?.1)
    })
}

/// Output directory for a scenario below `root`.
pub fn scenario_dir(root: &Path, spec: &ScenarioSpec) -> PathBuf {
    root.join(&spec.name)
}
