//! Monte Carlo studies on the ship test bed.
//!
//! Each study is a pure function of its configuration and master seed. Runs
//! are mapped in parallel on the current rayon pool and aggregated in run
//! order, so results do not depend on the number of workers.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::check_failure_budget;
use crate::filter::{run_filter, Estimate, FilterSettings, ForwardConfig, ResamplePolicy};
use crate::model::{
    azimuth, generate_truth, generate_truth_from, linearize, wrap_angle, ModelParams, ShipState,
    Truth,
};
use crate::seeding::{Domain, SeedStream};

/// Positions at the checkpoints of one accepted path.
type Positions = Vec<(f64, f64)>;

/// Steps at which the tables report.
pub const CHECKPOINTS: [usize; 4] = [40, 80, 120, 160];

/// Checkpoints that fit into `steps`, or the final step alone if none do.
pub fn checkpoints_for(steps: usize) -> Vec<usize> {
    let cps: Vec<usize> = CHECKPOINTS
        .iter()
        .copied()
        .filter(|c| *c <= steps)
        .collect();
    if cps.is_empty() {
        vec![steps]
    } else {
        cps
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub particles: usize,
    pub smoothing: bool,
    pub policy: ResamplePolicy,
    pub master_seed: u64,
    /// Model constants; `model.n_steps` is the number of steps.
    pub model: ModelParams,
    pub forward: ForwardConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 2000,
            particles: 100,
            smoothing: false,
            policy: ResamplePolicy::EveryStep,
            master_seed: 0,
            model: ModelParams::default(),
            forward: ForwardConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be at least 1".into()));
        }
        self.model.validate()?;
        self.forward.validate()?;
        self.policy.validate(self.particles)
    }

    pub fn filter_settings(&self) -> FilterSettings {
        FilterSettings {
            particles: self.particles,
            policy: self.policy,
            forward: self.forward,
            smoothing: self.smoothing,
            ..FilterSettings::default()
        }
    }

    pub fn seed(&self) -> SeedStream {
        SeedStream::new(self.master_seed)
    }
}

/// Sample summary at one checkpoint. Spreads are `None` for a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointStats {
    pub step: usize,
    pub mean_err_x: f64,
    /// Population standard deviation of the per-run errors.
    pub sd_err_x: Option<f64>,
    pub se_err_x: Option<f64>,
    pub mean_err_y: f64,
    pub sd_err_y: Option<f64>,
    pub se_err_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub checkpoints: Vec<CheckpointStats>,
    /// Runs that completed.
    pub runs: usize,
    pub particles: usize,
    pub failures: usize,
}

impl RunStats {
    pub fn at(&self, step: usize) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.step == step)
    }
}

/// Mean, population sd and standard error of the mean.
fn summarize(values: &[f64]) -> (f64, Option<f64>, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None, None);
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, Some(sd), Some(sd / n.sqrt()))
}

/// Collects `f(run)` over all runs in run order, dropping numerical failures
/// within the 1% budget.
fn map_runs<T: Send>(
    runs: usize,
    f: impl Fn(u64) -> Result<T> + Send + Sync,
) -> Result<(Vec<T>, usize)> {
    let results: Vec<Result<T>> = (0..runs as u64).into_par_iter().map(f).collect();
    let mut ok = Vec::with_capacity(runs);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) if e.is_numerical() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    check_failure_budget(failures, runs)?;
    Ok((ok, failures))
}

/// Estimate minus truth at the given checkpoints.
fn errors_at(estimates: &[Estimate], truth: &Truth, checkpoints: &[usize]) -> Vec<(f64, f64)> {
    checkpoints
        .iter()
        .map(|&c| {
            let (e, t) = (&estimates[c - 1], &truth.trajectory[c - 1]);
            (e.x - t.x, e.y - t.y)
        })
        .collect()
}

/// Filter error statistics over independent (truth, filter) pairs.
pub fn discrepancy_study(cfg: &ExperimentConfig) -> Result<RunStats> {
    cfg.validate()?;
    let checkpoints = checkpoints_for(cfg.model.n_steps);
    let settings = cfg.filter_settings();
    let (errors, failures) = map_runs(cfg.runs, |run| {
        let seed = cfg.seed().for_run(run);
        let truth = generate_truth(&cfg.model, &seed)?;
        let out = run_filter(&truth.observations, &cfg.model, &settings, &seed)?;
        Ok(errors_at(&out.estimates, &truth, &checkpoints))
    })?;
    if errors.is_empty() {
        return Err(Error::FailureBudget {
            failed: failures,
            runs: cfg.runs,
        });
    }
    let stats = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let ex: Vec<f64> = errors.iter().map(|e| e[k].0).collect();
            let ey: Vec<f64> = errors.iter().map(|e| e[k].1).collect();
            let (mean_err_x, sd_err_x, se_err_x) = summarize(&ex);
            let (mean_err_y, sd_err_y, se_err_y) = summarize(&ey);
            CheckpointStats {
                step,
                mean_err_x,
                sd_err_x,
                se_err_x,
                mean_err_y,
                sd_err_y,
                se_err_y,
            }
        })
        .collect();
    Ok(RunStats {
        checkpoints: stats,
        runs: errors.len(),
        particles: cfg.particles,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOneRow {
    pub step: usize,
    pub sd_x: f64,
    pub sd_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableOne {
    pub rows: Vec<TableOneRow>,
    pub accepted: usize,
    pub proposals: usize,
    /// Index of the reference trajectory within the reference stream.
    pub reference_index: u64,
}

/// Candidate budget and batching for [`intrinsic_uncertainty`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOneOptions {
    pub accepted_target: usize,
    pub max_proposals: usize,
    pub batch: usize,
}

impl Default for TableOneOptions {
    fn default() -> Self {
        Self {
            accepted_target: 1000,
            max_proposals: 1_000_000,
            batch: 4096,
        }
    }
}

/// Maximum-likelihood estimate of the observation variance of a path.
fn residual_variance(path: &[ShipState], truth: &Truth) -> Result<f64> {
    let mut sum = 0.0;
    for (st, ob) in path.iter().zip(&truth.observations) {
        let r = wrap_angle(azimuth(st.x, st.y)? - ob.b);
        sum += r * r;
    }
    Ok(sum / path.len() as f64)
}

fn in_band(s_hat: f64, p: &ModelParams) -> bool {
    (s_hat - p.s).abs() <= p.s * (2.0 / p.n_steps as f64).sqrt()
}

/// A path that keeps the reference's motion noise along the observation
/// gradient (taken on the reference path) and redraws the orthogonal part.
fn candidate_path(
    reference: &Truth,
    p: &ModelParams,
    seed: &SeedStream,
    index: u64,
) -> Result<Vec<ShipState>> {
    let mut rng = seed.rng(Domain::Candidate, 0, index);
    let sd = p.sigma.sqrt();
    let mut state = p.initial_state();
    let mut path = Vec::with_capacity(p.n_steps);
    for (xi, at) in reference.motion_noise.iter().zip(&reference.trajectory) {
        let lin = linearize(at.x, at.y)?;
        let (ux, uy) = (lin.f_x / lin.r, lin.f_y / lin.r);
        let along = xi[0] * ux + xi[1] * uy;
        let z: f64 = rng.sample(StandardNormal);
        let (nx, ny) = (along * ux - z * uy, along * uy + z * ux);
        let d = crate::model::Displacement {
            dx: state.dx + sd * nx,
            dy: state.dy + sd * ny,
        };
        state = state.advanced(d);
        path.push(state);
    }
    Ok(path)
}

/// Spread of paths that explain one observation record about as well as the
/// true path does.
///
/// The reference is the first truth drawn from the reference stream whose
/// own residual variance lies in the acceptance band `|s_hat - s| <= s
/// sqrt(2/n)`. Candidates are proposed in parallel batches and accepted in
/// index order until `accepted_target` have passed the same band.
pub fn intrinsic_uncertainty(cfg: &ExperimentConfig, opts: &TableOneOptions) -> Result<TableOne> {
    cfg.model.validate()?;
    if opts.accepted_target == 0 || opts.batch == 0 {
        return Err(Error::InvalidConfig(
            "accepted target and batch must be positive".into(),
        ));
    }
    let p = &cfg.model;
    let seed = cfg.seed();

    let mut reference_index = 0u64;
    let reference = loop {
        let truth = generate_truth_from(
            p,
            &mut seed.rng(Domain::TableOneReference, 0, reference_index),
        )?;
        if in_band(residual_variance(&truth.trajectory, &truth)?, p) {
            break truth;
        }
        reference_index += 1;
        if reference_index as usize >= opts.max_proposals {
            return Err(Error::InfeasibleBand {
                accepted: 0,
                proposals: opts.max_proposals,
            });
        }
    };

    let checkpoints = checkpoints_for(p.n_steps);
    let mut accepted: Vec<Vec<(f64, f64)>> = Vec::with_capacity(opts.accepted_target);
    let mut proposals = 0usize;
    while accepted.len() < opts.accepted_target {
        if proposals >= opts.max_proposals {
            return Err(Error::InfeasibleBand {
                accepted: accepted.len(),
                proposals,
            });
        }
        let batch = opts.batch.min(opts.max_proposals - proposals);
        let results: Vec<Result<Option<Positions>>> = (proposals..proposals + batch)
            .into_par_iter()
            .map(|i| {
                let path = candidate_path(&reference, p, &seed, i as u64)?;
                if !in_band(residual_variance(&path, &reference)?, p) {
                    return Ok(None);
                }
                Ok(Some(
                    checkpoints
                        .iter()
                        .map(|&c| {
                            let (a, b) = (&path[c - 1], &reference.trajectory[c - 1]);
                            (a.x - b.x, a.y - b.y)
                        })
                        .collect(),
                ))
            })
            .collect();
        for r in results {
            proposals += 1;
            if let Some(diffs) = r? {
                accepted.push(diffs);
                if accepted.len() == opts.accepted_target {
                    break;
                }
            }
        }
    }

    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let sd = |pick: fn(&(f64, f64)) -> f64| {
                sample_sd(&accepted.iter().map(|a| pick(&a[k])).collect::<Vec<_>>())
            };
            TableOneRow {
                step,
                sd_x: sd(|d| d.0),
                sd_y: sd(|d| d.1),
            }
        })
        .collect();
    Ok(TableOne {
        rows,
        accepted: accepted.len(),
        proposals,
        reference_index,
    })
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub x0: f64,
    pub y0: f64,
    /// Relative sd of the per-run assumed variance.
    pub sigma_jitter_eps: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            x0: 0.1,
            y0: 0.4,
            sigma_jitter_eps: 0.4,
        }
    }
}

/// Truth and the three reconstructions of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRun {
    pub truth: Vec<(f64, f64)>,
    pub baseline: Vec<(f64, f64)>,
    pub perturbed: Vec<(f64, f64)>,
    pub jittered: Vec<(f64, f64)>,
    pub jittered_sigma: f64,
    /// Non-positive variance draws that were discarded.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessOutput {
    pub runs: Vec<RobustnessRun>,
    pub failures: usize,
}

impl RobustnessOutput {
    pub fn total_redraws(&self) -> usize {
        self.runs.iter().map(|r| r.redraws).sum()
    }
}

/// Variance drawn from `N(sigma, (eps sigma)^2)`, redrawn while non-positive.
pub fn jittered_sigma<R: Rng + ?Sized>(sigma: f64, eps: f64, rng: &mut R) -> (f64, usize) {
    if eps == 0.0 {
        return (sigma, 0);
    }
    let mut redraws = 0;
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let s = sigma * (1.0 + eps * z);
        if s > 0.0 {
            return (s, redraws);
        }
        redraws += 1;
    }
}

/// Reconstructions under a wrong initial position and under a wrong variance.
///
/// All three filters of a run share the run's streams, so with zero
/// perturbation the perturbed series equals the baseline bit for bit.
pub fn robustness_study(cfg: &ExperimentConfig, pert: &Perturbation) -> Result<RobustnessOutput> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&pert.sigma_jitter_eps) {
        return Err(Error::InvalidConfig(format!(
            "sigma jitter must lie in [0, 1), got {}",
            pert.sigma_jitter_eps
        )));
    }
    let settings = cfg.filter_settings();
    let p = cfg.model;
    let positions = |est: &[Estimate]| est.iter().map(|e| (e.x, e.y)).collect::<Vec<_>>();
    let (runs, failures) = map_runs(cfg.runs, |run| {
        let seed = cfg.seed().for_run(run);
        let truth = generate_truth(&p, &seed)?;
        let baseline = run_filter(&truth.observations, &p, &settings, &seed)?;
        let shifted = ModelParams {
            x0: p.x0 + pert.x0,
            y0: p.y0 + pert.y0,
            ..p
        };
        let perturbed = run_filter(&truth.observations, &shifted, &settings, &seed)?;
        let (sigma, redraws) = jittered_sigma(
            p.sigma,
            pert.sigma_jitter_eps,
            &mut seed.rng(Domain::SigmaJitter, 0, 0),
        );
        let jittered = run_filter(
            &truth.observations,
            &ModelParams { sigma, ..p },
            &settings,
            &seed,
        )?;
        Ok(RobustnessRun {
            truth: truth.trajectory.iter().map(|s| (s.x, s.y)).collect(),
            baseline: positions(&baseline.estimates),
            perturbed: positions(&perturbed.estimates),
            jittered: positions(&jittered.estimates),
            jittered_sigma: sigma,
            redraws,
        })
    })?;
    Ok(RobustnessOutput { runs, failures })
}
