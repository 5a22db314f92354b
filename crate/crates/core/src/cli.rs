//! The `direct-pf` command line.
//!
//! Settings are resolved in the order command-line flag, then (for the seed)
//! the `FILTER_SEED` environment variable, then the `--config` file, then the
//! built-in default. Exit codes: 0 on success, 1 on usage or configuration
//! errors, 2 on numerical failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::csvio::{self, Cell, Table};
use crate::error::{Error, Result};
use crate::estimation::{
    default_ratio_grid, estimate_sigma_ratio, estimate_sigma_ratio_loglinear, sigma_scan,
    ScanOptions, DEFAULT_WINDOW,
};
use crate::experiments::{
    discrepancy_study, intrinsic_uncertainty, robustness_study, ExperimentConfig, Perturbation,
    TableOneOptions,
};
use crate::filter::{run_filter, FilterSettings, ForwardConfig, ResamplePolicy};
use crate::model::{generate_truth, ModelParams};
use crate::seeding::SeedStream;
use crate::selftest;

pub const SEED_ENV: &str = "FILTER_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "direct-pf",
    version,
    about = "Direct-sampling particle filter and ship-tracking experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of independent runs
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Particles per filter
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    /// Number of time steps
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Variance of the displacement increments
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Variance of the azimuth noise
    #[arg(long = "obs-var", global = true)]
    pub obs_var: Option<f64>,
    /// Resampling policy: every, ratio:L, subsets:k or never
    #[arg(long, global = true)]
    pub resample: Option<String>,
    /// Enable one-step backward smoothing
    #[arg(long, global = true)]
    pub smoothing: bool,
    /// Output file (default: standard output)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a truth trajectory and its observations
    Simulate,
    /// Run the filter on one simulated record
    Filter {
        /// Also write the final ensemble to this file
        #[arg(long)]
        particles_out: Option<PathBuf>,
    },
    /// Spread of paths compatible with one observation record
    Table1 {
        /// Number of accepted candidate paths
        #[arg(long)]
        accepted: Option<usize>,
    },
    /// Filter error statistics over many runs
    Table2,
    /// Mean discriminant against the assumed-variance ratio
    Table3 {
        /// Displacements per discriminant
        #[arg(long)]
        window: Option<usize>,
        /// Average over all particles instead of following particle 0
        #[arg(long)]
        all_particles: bool,
    },
    /// Reconstructions under perturbed initial data and jittered variance
    Fig1 {
        #[arg(long, default_value_t = 0.1)]
        perturb_x0: f64,
        #[arg(long, default_value_t = 0.4)]
        perturb_y0: f64,
        /// Relative sd of the assumed variance
        #[arg(long, default_value_t = 0.4)]
        jitter: f64,
    },
    /// Locate the variance at which the mean discriminant crosses one
    EstimateSigma {
        /// Use an existing table3 file instead of running a scan
        #[arg(long)]
        scan: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        /// How the crossing is located
        #[arg(long, value_enum, default_value_t = CrossingMethod::Interpolate)]
        method: CrossingMethod,
    },
    /// Run the randomized invariant checks
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CrossingMethod {
    /// Linear interpolation between the rows bracketing one
    Interpolate,
    /// Weighted line through all rows against the log ratio
    Loglinear,
}

/// Everything a subcommand needs after merging flags, environment and file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub runs: Option<usize>,
    pub particles: Option<usize>,
    pub model: ModelParams,
    pub policy: ResamplePolicy,
    pub smoothing: bool,
    pub workers: Option<usize>,
    pub forward: ForwardConfig,
    pub accepted: Option<usize>,
    pub window: Option<usize>,
}

pub fn resolve(g: &GlobalArgs, env_seed: Option<&str>) -> Result<Resolved> {
    let file = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let env_seed = env_seed
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}='{s}' is not a u64")))
        })
        .transpose()?;
    let seed = g.seed.or(env_seed).or(file.get("seed")?).unwrap_or(0);

    let d = ModelParams::default();
    let model = ModelParams {
        sigma: g.sigma.or(file.get("sigma")?).unwrap_or(d.sigma),
        s: g.obs_var.or(file.get("obs_var")?).unwrap_or(d.s),
        x0: file.get("x0")?.unwrap_or(d.x0),
        y0: file.get("y0")?.unwrap_or(d.y0),
        dx1: file.get("dx1")?.unwrap_or(d.dx1),
        dy1: file.get("dy1")?.unwrap_or(d.dy1),
        n_steps: g.steps.or(file.get("steps")?).unwrap_or(d.n_steps),
    };
    model.validate()?;

    let policy = match g.resample.as_deref().or(file.raw("resample")) {
        Some(s) => s.parse()?,
        None => ResamplePolicy::EveryStep,
    };
    let fd = ForwardConfig::default();
    let forward = ForwardConfig {
        tol: file.get("tol")?.unwrap_or(fd.tol),
        max_iter: file.get("max_iter")?.unwrap_or(fd.max_iter),
        relaxation: file.get("relaxation")?.unwrap_or(fd.relaxation),
        warm_start: false,
    };
    forward.validate()?;

    Ok(Resolved {
        seed,
        runs: g.runs.or(file.get("runs")?),
        particles: g.particles.or(file.get("particles")?),
        model,
        policy,
        smoothing: g.smoothing || file.flag("smoothing")?.unwrap_or(false),
        workers: g.workers.or(file.get("workers")?),
        forward,
        accepted: file.get("accepted")?,
        window: file.get("window")?,
    })
}

impl Resolved {
    fn experiment(&self, default_runs: usize, default_particles: usize) -> ExperimentConfig {
        ExperimentConfig {
            runs: self.runs.unwrap_or(default_runs),
            particles: self.particles.unwrap_or(default_particles),
            smoothing: self.smoothing,
            policy: self.policy,
            master_seed: self.seed,
            model: self.model,
            forward: self.forward,
        }
    }
}

fn emit(table: &Table, out: Option<&Path>, stdout: &mut (dyn Write + Send)) -> Result<()> {
    match out {
        Some(path) => table.write(std::fs::File::create(path)?),
        None => table.write(stdout),
    }
}

fn execute(
    cmd: &Command,
    g: &GlobalArgs,
    r: &Resolved,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<()> {
    let out = g.out.as_deref();
    let seed = SeedStream::new(r.seed);
    match cmd {
        Command::Simulate => {
            let truth = generate_truth(&r.model, &seed)?;
            emit(&csvio::truth_table(&truth), out, stdout)
        }
        Command::Filter { particles_out } => {
            let truth = generate_truth(&r.model, &seed)?;
            let cfg = r.experiment(1, 100);
            cfg.validate()?;
            let settings = FilterSettings {
                parallel_particles: true,
                ..cfg.filter_settings()
            };
            let result = run_filter(&truth.observations, &r.model, &settings, &seed)?;
            if let Some(path) = particles_out {
                csvio::particles_table(&result.particles).write(std::fs::File::create(path)?)?;
            }
            emit(&csvio::filter_table(&result.estimates, &truth), out, stdout)
        }
        Command::Table1 { accepted } => {
            let cfg = r.experiment(1, 1);
            let target = accepted
                .or(r.accepted)
                .unwrap_or(TableOneOptions::default().accepted_target);
            let opts = TableOneOptions {
                accepted_target: target,
                ..TableOneOptions::default()
            };
            let t1 = intrinsic_uncertainty(&cfg, &opts)?;
            writeln!(
                stderr,
                "accepted {} of {} proposals",
                t1.accepted, t1.proposals
            )?;
            emit(&csvio::table1_table(&t1), out, stdout)
        }
        Command::Table2 => {
            let stats = discrepancy_study(&r.experiment(2000, 100))?;
            if stats.failures > 0 {
                writeln!(stderr, "{} runs failed and were excluded", stats.failures)?;
            }
            emit(&csvio::table2_table(&stats), out, stdout)
        }
        Command::Table3 {
            window,
            all_particles,
        } => {
            let rows = scan(r, *window, *all_particles, 200)?;
            emit(&csvio::table3_table(&rows), out, stdout)
        }
        Command::Fig1 {
            perturb_x0,
            perturb_y0,
            jitter,
        } => {
            let pert = Perturbation {
                x0: *perturb_x0,
                y0: *perturb_y0,
                sigma_jitter_eps: *jitter,
            };
            let res = robustness_study(&r.experiment(1, 100), &pert)?;
            writeln!(
                stderr,
                "non-positive variance draws discarded: {}",
                res.total_redraws()
            )?;
            emit(&csvio::fig1_table(&res), out, stdout)
        }
        Command::EstimateSigma {
            scan: path,
            window,
            method,
        } => {
            let rows = match path {
                Some(p) => csvio::scan_rows(&Table::read(csvio::TABLE3, std::fs::File::open(p)?)?)?,
                None => scan(r, *window, false, 2000)?,
            };
            let ratio = match method {
                CrossingMethod::Interpolate => estimate_sigma_ratio(&rows)?,
                CrossingMethod::Loglinear => estimate_sigma_ratio_loglinear(&rows)?,
            };
            let mut t = Table::new(csvio::SIGMA_ESTIMATE);
            t.push(vec![Cell::Float(ratio), Cell::Float(ratio * r.model.sigma)]);
            emit(&t, out, stdout)
        }
        Command::Selftest => {
            let mut ok = true;
            for c in selftest::run_all(&seed)? {
                writeln!(
                    stdout,
                    "{} {}: {}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.detail
                )?;
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(Error::SelfTest("see the check list above".into()))
            }
        }
    }
}

fn scan(
    r: &Resolved,
    window: Option<usize>,
    all: bool,
    default_runs: usize,
) -> Result<Vec<crate::estimation::SigmaScanRow>> {
    let cfg = r.experiment(default_runs, 30);
    cfg.validate()?;
    let opts = ScanOptions {
        window: window.or(r.window).unwrap_or(DEFAULT_WINDOW),
        settings: cfg.filter_settings(),
        average_all_particles: all,
    };
    sigma_scan(
        &default_ratio_grid(),
        cfg.runs,
        &r.model,
        &SeedStream::new(r.seed),
        &opts,
    )
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(
    args: I,
    env_seed: Option<&str>,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let result = resolve(&cli.global, env_seed).and_then(|r| {
        let job = |out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)| {
            execute(&cli.command, &cli.global, &r, out, err)
        };
        match r.workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))?
                .install(|| job(stdout, stderr)),
            None => job(stdout, stderr),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
