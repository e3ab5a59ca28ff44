//! Stochastic agent-based counterpart of the kernel model.
//!
//! Each of the `n_locations` locations hosts a fixed number of single-agent
//! households that all share the location's street context. Time advances in
//! substeps of length `h = dt / substeps`; densities are reported every `dt`.
//! A susceptible agent at `x_i` is infected during a substep with
//! probability `1 − exp(−F_i·h)`, where
//!
//! ```text
//! F_i = β·[(1 − u(t, x_i))·Σ_j A_ij·I_j/N_j + k0·Σ_j w_j·I_j/N_j]
//! ```
//!
//! uses the same discretised kernel as the deterministic model. Every
//! infected agent draws an exponential infectious period with mean `1/γ`
//! and recovers at the first step boundary after the period ends; agents
//! infected during a step are placed uniformly within it. The state at the
//! step boundaries is thus an exact observation of a continuous-time
//! recovery process.
//!
//! Agents within a location are exchangeable, so the population is stored as
//! counts: susceptible and recovered totals plus a calendar of pending
//! recoveries. Infections per location and step are a binomial draw, which
//! has the same law as independent per-agent trials.
//!
//! Infections only become infectious at the end of their substep, which
//! delays the stochastic epidemic by `O(h)` relative to the deterministic
//! model; the substeps keep that lag small at a daily output resolution.
//!
//! Randomness: every (location, substep) pair gets its own ChaCha8 stream
//! derived from the seed, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{check_len, Error, Result};
use crate::field::Field;
use crate::grid::SpatialGrid;
use crate::kernel::{KernelMatrix, KernelSpec};
use crate::model::{spatial_mean, InitialCondition, StateField, TimeGrid};
use crate::par::{self, Execution};

/// Stream id used for initialisation draws.
const INIT_STEP: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmConfig {
    pub n_locations: usize,
    pub agents_per_location: u64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel: KernelSpec,
    /// Output step in days.
    pub dt: f64,
    /// Simulation substeps per output step.
    pub substeps: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
}

impl AbmConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_locations == 0 || self.agents_per_location == 0 {
            return Err(Error::config("abm", "need at least one location and one agent per location"));
        }
        if !(self.beta > 0.0 && self.gamma > 0.0) {
            return Err(Error::config("abm", "rates must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::config("abm.substeps", "must be positive"));
        }
        self.kernel.check()?;
        self.time().map(|_| ())
    }

    /// Output time grid.
    pub fn time(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.dt)
    }

    /// Internal simulation grid.
    pub fn sim_time(&self) -> Result<TimeGrid> {
        let out = self.time()?;
        Ok(TimeGrid {
            dt: self.dt / self.substeps as f64,
            n_steps: out.n_steps * self.substeps,
        })
    }
}

/// Control values seen by the agents: one row per simulation substep node.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmControl(pub Field);

impl AbmControl {
    pub fn none(cfg: &AbmConfig) -> Result<Self> {
        Ok(Self(Field::zeros(cfg.sim_time()?.n_nodes(), cfg.n_locations)))
    }

    /// Samples a control defined on `control_time`, holding each value over
    /// its control step exactly as the deterministic model does.
    pub fn sample(control: &ControlField, control_time: TimeGrid, cfg: &AbmConfig) -> Result<Self> {
        control.check_shape(control_time.n_nodes(), cfg.n_locations)?;
        let sim = cfg.sim_time()?;
        if (sim.horizon() - control_time.horizon()).abs() > 1e-9 * control_time.horizon().max(1.0) {
            return Err(Error::config(
                "abm.T",
                format!("ABM horizon {} differs from the control horizon {}", sim.horizon(), control_time.horizon()),
            ));
        }
        let mut out = Field::zeros(sim.n_nodes(), cfg.n_locations);
        for k in 0..sim.n_nodes() {
            let i = ((sim.time(k) / control_time.dt) + 1e-9).floor() as usize;
            control.fill_row(i.min(control_time.n_steps), out.row_mut(k));
        }
        Ok(Self(out))
    }

    /// Rows at the nodes of the output grid `time`.
    pub fn at_output(&self, time: TimeGrid) -> Field {
        let stride = (self.0.rows() - 1) / time.n_steps.max(1);
        let mut out = Field::zeros(time.n_nodes(), self.0.cols());
        for i in 0..time.n_nodes() {
            out.row_mut(i).copy_from_slice(self.0.row(i * stride));
        }
        out
    }
}

/// Counts of one location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub susceptible: u64,
    pub infected: u64,
    pub recovered: u64,
    /// `pending[m]` agents recover at substep `m`; the last slot collects
    /// recoveries past the horizon.
    pending: Vec<u64>,
}

/// Population state plus infectious-period bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub locations: Vec<Location>,
    pub step: usize,
    period_sum: f64,
    period_count: u64,
}

impl Population {
    pub fn infected_fraction(&self, n_agents: u64) -> Vec<f64> {
        self.locations.iter().map(|l| l.infected as f64 / n_agents as f64).collect()
    }

    pub fn recovered_fraction(&self, n_agents: u64) -> Vec<f64> {
        self.locations.iter().map(|l| l.recovered as f64 / n_agents as f64).collect()
    }

    /// Mean drawn infectious period in days and the number of agents it covers.
    pub fn infectious_period(&self) -> (f64, u64) {
        (self.period_sum / self.period_count.max(1) as f64, self.period_count)
    }
}

fn stream(seed: u64, location: usize, step: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((location as u64) << 32) | step as u64);
    rng
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
    }
}

/// Schedules recoveries for `count` agents. Each draws an exponential
/// period `D` starting at `origin + offset·dt` and recovers at the first
/// step boundary after that, i.e. at step `origin + ⌈offset + D/dt⌉`.
/// Initial infections start exactly at `t₀` (`offset = 0`); infections during
/// a step get a uniform offset within it.
fn schedule(loc: &mut Location, rng: &mut ChaCha8Rng, count: u64, origin: usize, within_step: bool, cfg: &AbmConfig, sum: &mut f64) {
    let exp = Exp::new(cfg.gamma).expect("positive rate");
    let h = cfg.dt / cfg.substeps as f64;
    let last = loc.pending.len() - 1;
    for _ in 0..count {
        let d = exp.sample(rng);
        let offset = if within_step { rng.gen::<f64>() } else { 0.0 };
        *sum += d;
        let steps = (offset + d / h).ceil() as usize;
        loc.pending[(origin + steps).min(last)] += 1;
    }
}

/// Expected number of initially infected agents over all locations.
pub fn expected_initial_infected(cfg: &AbmConfig, ic: &InitialCondition) -> f64 {
    cfg.agents_per_location as f64 * ic.z0.iter().sum::<f64>()
}

/// Draws the initial population: each agent is independently infected with
/// probability `z0(x)`, recovered with probability `r0(x)`, else susceptible.
pub fn init_population(cfg: &AbmConfig, ic: &InitialCondition) -> Result<Population> {
    cfg.check()?;
    check_len("ABM initial condition", cfg.n_locations, ic.n_cells())?;
    let n_steps = cfg.sim_time()?.n_steps;
    let mut period_sum = 0.0;
    let mut period_count = 0;
    let mut locations = Vec::with_capacity(cfg.n_locations);
    for j in 0..cfg.n_locations {
        let mut rng = stream(cfg.seed, j, INIT_STEP);
        let n = cfg.agents_per_location;
        let infected = binomial(&mut rng, n, ic.z0[j]);
        let rest = 1.0 - ic.z0[j];
        let p_rec = if rest > 0.0 { (ic.r0[j] / rest).min(1.0) } else { 0.0 };
        let recovered = binomial(&mut rng, n - infected, p_rec);
        let mut loc = Location {
            susceptible: n - infected - recovered,
            infected,
            recovered,
            pending: vec![0; n_steps + 2],
        };
        schedule(&mut loc, &mut rng, infected, 0, false, cfg, &mut period_sum);
        period_count += infected;
        locations.push(loc);
    }
    Ok(Population {
        locations,
        step: 0,
        period_sum,
        period_count,
    })
}

/// Advances the population by one substep.
///
/// Infection forces use the pre-step infected fractions; agents infected
/// during the substep become infectious at its end.
pub fn step(pop: &mut Population, kernel: &KernelMatrix, u: &[f64], cfg: &AbmConfig) {
    let n = cfg.n_locations;
    let frac = pop.infected_fraction(cfg.agents_per_location);
    let mut az = vec![0.0; n];
    let mut force = vec![0.0; n];
    kernel.apply_controlled(&frac, u, &mut az, &mut force);

    let next = pop.step + 1;
    let mut period_sum = 0.0;
    let mut period_count = 0;
    for (j, loc) in pop.locations.iter_mut().enumerate() {
        let mut rng = stream(cfg.seed, j, pop.step as u32);
        let p = -(-cfg.beta * force[j] * cfg.dt / cfg.substeps as f64).exp_m1();
        let new = binomial(&mut rng, loc.susceptible, p);
        let recovering = std::mem::take(&mut loc.pending[next]);
        loc.susceptible -= new;
        loc.infected -= recovering;
        loc.recovered += recovering;
        schedule(loc, &mut rng, new, pop.step, true, cfg, &mut period_sum);
        period_count += new;
        // infected and recovered within the same step
        let immediate = std::mem::take(&mut loc.pending[next]);
        loc.infected += new - immediate;
        loc.recovered += immediate;
    }
    pop.period_sum += period_sum;
    pop.period_count += period_count;
    pop.step = next;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmRun {
    pub seed: u64,
    pub time: TimeGrid,
    pub z_density: Field,
    pub r_density: Field,
    /// Mean drawn infectious period (days) and the number of agents it covers.
    pub infectious_period: (f64, u64),
}

pub fn run(cfg: &AbmConfig, ic: &InitialCondition, control: &AbmControl) -> Result<AbmRun> {
    let time = cfg.time()?;
    check_len("ABM control rows", cfg.sim_time()?.n_nodes(), control.0.rows())?;
    check_len("ABM control columns", cfg.n_locations, control.0.cols())?;
    let grid = SpatialGrid::uniform(cfg.n_locations)?;
    let kernel = KernelMatrix::assemble(cfg.kernel, &grid)?;
    let mut pop = init_population(cfg, ic)?;
    let n_agents = cfg.agents_per_location;
    let mut z = Field::zeros(time.n_nodes(), cfg.n_locations);
    let mut r = Field::zeros(time.n_nodes(), cfg.n_locations);
    z.row_mut(0).copy_from_slice(&pop.infected_fraction(n_agents));
    r.row_mut(0).copy_from_slice(&pop.recovered_fraction(n_agents));
    for i in 0..time.n_steps {
        for _ in 0..cfg.substeps {
            let row = control.0.row(pop.step);
            step(&mut pop, &kernel, row, cfg);
        }
        z.row_mut(i + 1).copy_from_slice(&pop.infected_fraction(n_agents));
        r.row_mut(i + 1).copy_from_slice(&pop.recovered_fraction(n_agents));
    }
    Ok(AbmRun {
        seed: cfg.seed,
        time,
        z_density: z,
        r_density: r,
        infectious_period: pop.infectious_period(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub runs: Vec<AbmRun>,
    pub mean_z: Field,
    pub mean_r: Field,
}

impl EnsembleResult {
    pub fn time(&self) -> TimeGrid {
        self.runs[0].time
    }

    /// Infectious period pooled over all runs.
    pub fn infectious_period(&self) -> (f64, u64) {
        let count: u64 = self.runs.iter().map(|r| r.infectious_period.1).sum();
        let sum: f64 = self.runs.iter().map(|r| r.infectious_period.0 * r.infectious_period.1 as f64).sum();
        (sum / count.max(1) as f64, count)
    }
}

fn mean_field<'a>(fields: impl Iterator<Item = &'a Field>, rows: usize, cols: usize, n: usize) -> Field {
    let mut sum = Field::zeros(rows, cols);
    for f in fields {
        for (s, v) in sum.as_mut_slice().iter_mut().zip(f.as_slice()) {
            *s += v;
        }
    }
    sum.map(|s| s / n as f64)
}

/// Runs seeds `base_seed, …, base_seed + n_runs − 1` and averages them.
pub fn run_ensemble(
    cfg: &AbmConfig,
    ic: &InitialCondition,
    control: &AbmControl,
    n_runs: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<EnsembleResult> {
    if n_runs == 0 {
        return Err(Error::config("abm.runs", "need at least one run"));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let runs = par::try_map(exec, seeds, |seed| run(&AbmConfig { seed, ..*cfg }, ic, control))?;
    let (rows, cols) = (runs[0].z_density.rows(), runs[0].z_density.cols());
    Ok(EnsembleResult {
        mean_z: mean_field(runs.iter().map(|r| &r.z_density), rows, cols, n_runs),
        mean_r: mean_field(runs.iter().map(|r| &r.r_density), rows, cols, n_runs),
        runs,
    })
}

/// Deterministic-minus-stochastic comparison on the ABM time nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub difference: Field,
    pub sup_norm: f64,
    /// Space-time `L²` norm of the difference.
    pub l2_norm: f64,
    pub deterministic_mean: Vec<f64>,
    pub abm_mean: Vec<f64>,
}

impl Comparison {
    /// Largest gap between the spatial-mean curves relative to the
    /// deterministic peak.
    pub fn mean_gap_relative_to_peak(&self) -> f64 {
        let peak = self.deterministic_mean.iter().cloned().fold(0.0, f64::max);
        let gap = self
            .deterministic_mean
            .iter()
            .zip(&self.abm_mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gap / peak
    }
}

/// Subsamples `det` onto the times of `abm` (a field on `abm_time`) and
/// compares them.
pub fn compare(abm: &Field, abm_time: TimeGrid, det: &StateField, grid: &SpatialGrid) -> Result<Comparison> {
    check_len("compared locations", det.n_cells(), abm.cols())?;
    check_len("compared time nodes", abm_time.n_nodes(), abm.rows())?;
    let ratio = abm_time.dt / det.time.dt;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 || stride * abm_time.n_steps != det.time.n_steps {
        return Err(Error::config("abm.dt", "ABM time grid does not subsample the deterministic grid"));
    }
    let mut det_sub = Field::zeros(abm.rows(), abm.cols());
    for i in 0..abm.rows() {
        det_sub.row_mut(i).copy_from_slice(det.z.row(i * stride));
    }
    let mut difference = det_sub.clone();
    for (d, a) in difference.as_mut_slice().iter_mut().zip(abm.as_slice()) {
        *d -= a;
    }
    let w = grid.weight();
    let l2 = difference
        .iter_rows()
        .enumerate()
        .map(|(i, row)| abm_time.trapezoid_weight(i) * w * row.iter().map(|d| d * d).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    Ok(Comparison {
        times: abm_time.times(),
        sup_norm: difference.as_slice().iter().map(|d| d.abs()).fold(0.0, f64::max),
        l2_norm: l2,
        deterministic_mean: spatial_mean(&det_sub, grid),
        abm_mean: spatial_mean(abm, grid),
        difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_locations: usize, agents: u64, horizon: f64) -> AbmConfig {
        AbmConfig {
            n_locations,
            agents_per_location: agents,
            beta: 0.1,
            gamma: 0.1,
            kernel: KernelSpec::default(),
            dt: 1.0,
            substeps: 1,
            horizon,
            seed: 7,
        }
    }

    #[test]
    fn initial_population_extremes() {
        let c = cfg(5, 100, 10.0);
        let pop = init_population(&c, &InitialCondition::infected_only(vec![0.0; 5]).unwrap()).unwrap();
        assert!(pop.locations.iter().all(|l| l.susceptible == 100 && l.infected == 0));
        let pop = init_population(&c, &InitialCondition::new(vec![1.0; 5], vec![0.0; 5]).unwrap()).unwrap();
        assert!(pop.locations.iter().all(|l| l.susceptible == 0 && l.infected == 100));
    }

    #[test]
    fn no_infected_means_no_infections() {
        let c = cfg(10, 1000, 30.0);
        let ic = InitialCondition::infected_only(vec![0.0; 10]).unwrap();
        let out = run(&c, &ic, &AbmControl::none(&c).unwrap()).unwrap();
        assert_eq!(out.z_density.max(), 0.0);
        assert_eq!(out.r_density.max(), 0.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let c = cfg(20, 2000, 40.0);
        let ic = InitialCondition::infected_only(vec![0.01; 20]).unwrap();
        let a = run(&c, &ic, &AbmControl::none(&c).unwrap()).unwrap();
        let b = run(&c, &ic, &AbmControl::none(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = run(&AbmConfig { seed: 8, ..c }, &ic, &AbmControl::none(&c).unwrap()).unwrap();
        assert_ne!(a.z_density, other.z_density);
    }

    #[test]
    fn ensemble_mean_is_exact_and_mode_independent() {
        let c = cfg(10, 500, 20.0);
        let ic = InitialCondition::infected_only(vec![0.02; 10]).unwrap();
        let u = AbmControl::none(&c).unwrap();
        let seq = run_ensemble(&c, &ic, &u, 4, 3, Execution::Sequential).unwrap();
        let par = run_ensemble(&c, &ic, &u, 4, 3, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let manual = (seq.runs.iter().map(|r| r.z_density.get(10, 4)).sum::<f64>()) / 4.0;
        assert_eq!(seq.mean_z.get(10, 4), manual);
        assert_eq!(seq.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4, 5, 6]);
    }

    #[test]
    fn comparing_with_itself_is_zero() {
        let g = SpatialGrid::uniform(4).unwrap();
        let time = TimeGrid::new(4.0, 1.0).unwrap();
        let z = Field::from_vec(5, 4, (0..20).map(|k| k as f64 * 1e-3).collect()).unwrap();
        let det = StateField {
            time,
            z: z.clone(),
            r: Field::zeros(5, 4),
        };
        let c = compare(&z, time, &det, &g).unwrap();
        assert_eq!(c.sup_norm, 0.0);
        assert_eq!(c.l2_norm, 0.0);
        assert_eq!(c.deterministic_mean, c.abm_mean);
    }

    #[test]
    fn control_sampling_holds_each_value_over_its_step() {
        let fine = TimeGrid::new(10.0, 0.25).unwrap();
        let u = ControlField::TimeOnly((0..fine.n_nodes()).map(|i| i as f64 / 40.0).collect());
        let c = AbmConfig { substeps: 10, ..cfg(3, 10, 10.0) };
        let s = AbmControl::sample(&u, fine, &c).unwrap();
        assert_eq!(s.0.rows(), 101);
        // substep 2 starts at t = 0.2, inside the first control step
        assert_eq!(s.0.row(2), &[0.0; 3]);
        // substep 3 starts at t = 0.3, inside the second
        assert_eq!(s.0.row(3), &[0.025; 3]);
        assert_eq!(s.at_output(c.time().unwrap()).row(2), &[0.2; 3]);
        let short = AbmConfig { horizon: 9.0, ..c };
        assert!(AbmControl::sample(&u, fine, &short).is_err());
    }
}
