use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idsir::abm::{expected_initial_infected, run_ensemble, AbmControl};
use idsir::equilibria::FixedPointConfig;
use idsir::experiment::{self, Overrides};
use idsir::par::Execution;
use idsir::scenario::{ScenarioSpec, PRESETS};
use idsir::{ControlField, Error, Field, Result};

fn warn_sparse_seeding(spec: &ScenarioSpec) -> Result<()> {
    let (cfg, ic) = experiment::abm_setup(spec)?;
    let expected = expected_initial_infected(&cfg, &ic);
    if expected < 1.0 {
        eprintln!("warning: {}: only {expected:.2} initially infected agents expected", spec.name);
    }
    Ok(())
}

#[derive(Parser)]
#[command(name = "idsir", version, about = "Spatial SIR epidemics with optimal lockdown control")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base seed of the ABM ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ABM desk mode: initial infected ×SCALE, agents per location ÷SCALE.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Time step of the deterministic model in days.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Number of spatial grid points.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Number of ABM runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Run independent work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimise, validate against the ABM and write the full bundle.
    Run {
        /// Preset names (A1…D2, or `all`) or JSON config files.
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Skip the ABM ensembles.
        #[arg(long)]
        no_abm: bool,
    },
    /// Optimise only.
    Optimize { scenario: String },
    /// Integrate the model under a constant control or a control CSV.
    Forward {
        scenario: String,
        #[arg(long, default_value_t = 0.0, conflicts_with = "control")]
        u: f64,
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Run the ABM ensemble under `u ≡ 0` or a control CSV.
    Abm {
        scenario: String,
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// SIS equilibrium, final size and threshold report.
    Equilibria { scenario: String },
    /// Kernel norms, R0 and assumption checks.
    Diagnostics { scenario: String },
    /// Recompute the objective values of a bundle from its CSV files.
    Compare { bundle: PathBuf },
}

enum Outcome {
    Done,
    NotConverged,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            scale: self.scale,
            dt: self.dt,
            grid_points: self.grid,
            runs: self.runs,
        }
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    fn load(&self, name: &str) -> Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::load(name)?;
        self.overrides().apply(&mut spec)?;
        Ok(spec)
    }
}

fn read_control(path: &Path, spec: &ScenarioSpec) -> Result<ControlField> {
    let (_, u) = Field::read_csv(path)?;
    let n = spec.grid_points;
    let field = if u.cols() == 1 {
        let mut full = Field::zeros(u.rows(), n);
        for i in 0..u.rows() {
            full.row_mut(i).fill(u.get(i, 0));
        }
        full
    } else {
        u
    };
    let control = ControlField::SpaceTime(field);
    control.check_shape(spec.time_grid()?.n_nodes(), n)?;
    if !control.in_bounds() {
        return Err(Error::Config {
            path: path.display().to_string(),
            message: "control values must lie in [0, 1]".into(),
        });
    }
    Ok(control)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Run { scenarios, no_abm } => {
            let names: Vec<String> = if scenarios.iter().any(|s| s.eq_ignore_ascii_case("all")) {
                PRESETS.iter().map(|s| s.to_string()).collect()
            } else {
                scenarios.clone()
            };
            let mut all_converged = true;
            for name in names {
                let spec = g.load(&name)?;
                let dir = experiment::scenario_dir(&g.out, &spec);
                if !no_abm {
                    warn_sparse_seeding(&spec)?;
                }
                let summary = experiment::run_scenario(&spec, &dir, !no_abm, g.exec())?;
                println!("{}", summary.table_row());
                all_converged &= summary.converged();
            }
            Ok(if all_converged { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Optimize { scenario } => {
            let spec = g.load(scenario)?;
            let dir = experiment::scenario_dir(&g.out, &spec);
            let summary = experiment::run_scenario(&spec, &dir, false, g.exec())?;
            println!("{}", summary.table_row());
            Ok(if summary.converged() { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Forward { scenario, u, control } => {
            let spec = g.load(scenario)?;
            let problem = spec.problem()?;
            let control = match control {
                Some(path) => read_control(path, &spec)?,
                None => ControlField::constant(idsir::ControlVariant::SpaceTime, *u, problem.time.n_nodes(), problem.n_cells(), None)?,
            };
            let (state, j) = problem.evaluate(&control)?;
            let dir = experiment::scenario_dir(&g.out, &spec);
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let times = problem.time.times();
            state.z.write_csv(&dir.join("z.csv"), &times, "x_")?;
            state.r.write_csv(&dir.join("r.csv"), &times, "x_")?;
            println!("{}: J = {j:.6}, max z = {:.4e}", spec.name, state.z.max());
            Ok(Outcome::Done)
        }
        Command::Abm { scenario, control } => {
            let spec = g.load(scenario)?;
            warn_sparse_seeding(&spec)?;
            let (cfg, ic) = experiment::abm_setup(&spec)?;
            let abm_time = cfg.time()?;
            let u = match control {
                Some(path) => AbmControl::sample(&read_control(path, &spec)?, spec.time_grid()?, &cfg)?,
                None => AbmControl::none(&cfg)?,
            };
            let ens = run_ensemble(&cfg, &ic, &u, spec.abm.runs, spec.abm.base_seed, g.exec())?;
            let dir = experiment::scenario_dir(&g.out, &spec).join("abm");
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let times = abm_time.times();
            for run in &ens.runs {
                run.z_density.write_csv(&dir.join(format!("run_{}.csv", run.seed)), &times, "x_")?;
            }
            ens.mean_z.write_csv(&dir.join("mean.csv"), &times, "x_")?;
            let j = experiment::abm_objective(&ens, &u, &spec)?.total;
            let (period, n) = ens.infectious_period();
            println!("{}: J_abm = {j:.3}, mean infectious period = {period:.3} days over {n} agents", spec.name);
            Ok(Outcome::Done)
        }
        Command::Equilibria { scenario } => {
            let spec = g.load(scenario)?;
            let report = experiment::equilibria(&spec, &FixedPointConfig::default())?;
            experiment::write_equilibria(&experiment::scenario_dir(&g.out, &spec), &spec, &report)?;
            println!("{}", serde_json::to_string_pretty(&report.threshold)?);
            let converged = report.sis.converged && report.prevalence.converged;
            Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Diagnostics { scenario } => {
            let spec = g.load(scenario)?;
            let diag = experiment::diagnostics(&spec)?;
            let dir = experiment::scenario_dir(&g.out, &spec);
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let text = serde_json::to_string_pretty(&diag)?;
            std::fs::write(dir.join("norms.json"), format!("{text}\n")).map_err(|e| Error::Io { path: dir.join("norms.json"), source: e })?;
            println!("{text}");
            Ok(Outcome::Done)
        }
        Command::Compare { bundle } => {
            let stored = experiment::read_summary(bundle)?;
            let again = experiment::recompute_from_bundle(bundle)?;
            let mut ok = true;
            let mut line = |label: &str, a: f64, b: f64| {
                let diff = (a - b).abs();
                ok &= diff <= 1e-10;
                println!("{label:<10} stored {a:.12}  recomputed {b:.12}  |diff| {diff:.1e}");
            };
            line("J(u=0)", stored.j_uncontrolled, again.j_uncontrolled);
            line("J(u*)_sir", stored.j_sir, again.j_sir);
            if let (Some(a), Some(b)) = (stored.abm.as_ref().map(|a| a.j_abm), again.j_abm) {
                line("J(u*)_abm", a, b);
            }
            if ok {
                Ok(Outcome::Done)
            } else {
                Err(Error::Csv { path: bundle.clone(), message: "stored and recomputed objectives differ".into() })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: did not converge within the iteration limit");
            ExitCode::from(2)
        }
        Err(e) => {
            // error messages already include their causes
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
