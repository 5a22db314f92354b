//! The direct-sampling filter.
//!
//! Each particle is moved by solving for the displacement whose probability
//! under the new posterior equals the probability of a pair of unit-normal
//! reference draws. The observation is linearized at the current iterate;
//! in the rotated frame `(eta, eta_plus)`, whose first axis is the gradient
//! direction of the observation, the posterior factors into a merged law for
//! `eta` and the untouched motion law for `eta_plus`. The reference draws are
//! mapped through those two laws and rotated back. The merge phase becomes
//! the particle's resampling weight `exp(-phase)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian1D;
use crate::model::{
    Azimuth, Displacement, ModelParams, ObsLinearization, Observation, ObservationModel, ShipState,
};
use crate::seeding::{Domain, SeedStream};
use crate::smoother::{self, SmoothingInput};

/// A pair of unit-normal reference draws, held fixed while one step iterates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefPair {
    pub xi_x: f64,
    pub xi_y: f64,
}

impl RefPair {
    pub fn new(xi_x: f64, xi_y: f64) -> Self {
        Self { xi_x, xi_y }
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            xi_x: rng.sample(StandardNormal),
            xi_y: rng.sample(StandardNormal),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.xi_x * self.xi_x + self.xi_y * self.xi_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardConfig {
    /// Max-norm change of the displacement that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation in `(0, 1]`, halved (down to 1/16) when the residual grows.
    pub relaxation: f64,
    /// Start from the previous displacement instead of zero.
    pub warm_start: bool,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            relaxation: 1.0,
            warm_start: false,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0)
            || self.max_iter == 0
            || !(self.relaxation > 0.0 && self.relaxation <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "bad iteration config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardResult {
    pub new_disp: Displacement,
    pub new_state: ShipState,
    pub phase: f64,
    /// Updates needed to reach the fixed point; the confirming pass is not counted.
    pub iterations_used: usize,
    /// Displacement at which the observation was linearized on the final pass.
    pub expansion: Displacement,
}

/// Orthonormal frame whose first axis is the observation gradient direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedFrame {
    pub ux: f64,
    pub uy: f64,
}

impl RotatedFrame {
    pub fn from_gradient(lin: &ObsLinearization) -> Self {
        Self {
            ux: lin.f_x / lin.r,
            uy: lin.f_y / lin.r,
        }
    }

    /// Component along the gradient.
    #[inline]
    pub fn along(&self, d: Displacement) -> f64 {
        self.ux * d.dx + self.uy * d.dy
    }

    /// Component orthogonal to the gradient.
    #[inline]
    pub fn across(&self, d: Displacement) -> f64 {
        -self.uy * d.dx + self.ux * d.dy
    }

    /// Inverse of `(along, across)`.
    #[inline]
    pub fn to_plane(&self, eta: f64, eta_plus: f64) -> Displacement {
        Displacement {
            dx: self.ux * eta - self.uy * eta_plus,
            dy: self.uy * eta + self.ux * eta_plus,
        }
    }

    /// Rows of the rotation matrix.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.ux, self.uy], [-self.uy, self.ux]]
    }
}

pub(crate) struct FixedPoint {
    pub value: Displacement,
    pub phase: f64,
    pub iterations_used: usize,
    pub expansion: Displacement,
}

const MIN_RELAXATION: f64 = 1.0 / 16.0;

/// Iterates `map` from `start` until consecutive outputs agree to `cfg.tol`.
pub(crate) fn iterate_displacement(
    start: Displacement,
    cfg: &ForwardConfig,
    mut map: impl FnMut(Displacement) -> Result<(Displacement, f64)>,
) -> Result<FixedPoint> {
    let mut d = start;
    let mut omega = cfg.relaxation;
    let mut last = f64::INFINITY;
    for iteration in 1..=cfg.max_iter {
        let (proposal, phase) = map(d)?;
        let residual = proposal.max_abs_diff(&d);
        if !residual.is_finite() {
            return Err(Error::Convergence {
                iterations: iteration,
                residual,
            });
        }
        if residual < cfg.tol {
            return Ok(FixedPoint {
                value: proposal,
                phase,
                iterations_used: iteration - 1,
                expansion: d,
            });
        }
        if residual > last {
            omega = (omega * 0.5).max(MIN_RELAXATION);
        }
        last = residual;
        d = Displacement {
            dx: d.dx + omega * (proposal.dx - d.dx),
            dy: d.dy + omega * (proposal.dy - d.dy),
        };
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        residual: last,
    })
}

pub(crate) fn check_variances(p: &ModelParams) -> Result<()> {
    if p.sigma > 0.0 && p.s == 0.0 {
        return Err(Error::InvalidConfig(
            "noise-free observations with a random motion model are not supported".into(),
        ));
    }
    Ok(())
}

/// One pass of the forward map at the iterate `d`.
fn forward_map<M: ObservationModel + ?Sized>(
    model: &M,
    state: &ShipState,
    b_next: f64,
    p: &ModelParams,
    refs: RefPair,
    d: Displacement,
) -> Result<(Displacement, f64)> {
    let lin = model.linearize(state.x + d.dx, state.y + d.dy)?;
    let frame = RotatedFrame::from_gradient(&lin);
    let residual = model.residual(lin.f, b_next);
    let prev = state.displacement();

    let observed = Gaussian1D::new(frame.along(d) - residual / lin.r, p.s / (lin.r * lin.r))?;
    let motion = Gaussian1D::new(frame.along(prev), p.sigma)?;
    let merged = observed.merge(&motion);
    let eta = merged.merged.sample_from(refs.xi_x);
    let eta_plus = Gaussian1D::new(frame.across(prev), p.sigma)?.sample_from(refs.xi_y);
    Ok((frame.to_plane(eta, eta_plus), merged.phase))
}

/// Forward step with the azimuth observation.
pub fn forward_step(
    state: &ShipState,
    b_next: f64,
    p: &ModelParams,
    refs: RefPair,
    cfg: &ForwardConfig,
) -> Result<ForwardResult> {
    forward_step_with(&Azimuth, state, b_next, p, refs, cfg)
}

/// Forward step for an arbitrary scalar observation of position.
pub fn forward_step_with<M: ObservationModel + ?Sized>(
    model: &M,
    state: &ShipState,
    b_next: f64,
    p: &ModelParams,
    refs: RefPair,
    cfg: &ForwardConfig,
) -> Result<ForwardResult> {
    check_variances(p)?;
    let prev = state.displacement();
    if p.sigma == 0.0 {
        // the motion is deterministic; the observation cannot move it
        return Ok(ForwardResult {
            new_disp: prev,
            new_state: state.advanced(prev),
            phase: 0.0,
            iterations_used: 0,
            expansion: prev,
        });
    }
    let start = if cfg.warm_start {
        prev
    } else {
        Displacement::ZERO
    };
    let fp = iterate_displacement(start, cfg, |d| {
        forward_map(model, state, b_next, p, refs, d)
    })?;
    Ok(ForwardResult {
        new_disp: fp.value,
        new_state: state.advanced(fp.value),
        phase: fp.phase,
        iterations_used: fp.iterations_used,
        expansion: fp.expansion,
    })
}

/// Absolute gap between the two sides of the forward-step density identity,
/// in log space:
///
/// ```text
/// -|d - d_prev|^2/(2 sigma) - (f_lin(d) - b)^2/(2 s) + phase  =  -(xi_x^2 + xi_y^2)/2
/// ```
///
/// with `f_lin` the observation linearized at the final expansion point.
pub fn forward_identity_gap<M: ObservationModel + ?Sized>(
    model: &M,
    state: &ShipState,
    b_next: f64,
    p: &ModelParams,
    refs: RefPair,
    result: &ForwardResult,
) -> Result<f64> {
    let e = result.expansion;
    let d = result.new_disp;
    let lin = model.linearize(state.x + e.dx, state.y + e.dy)?;
    let innovation =
        model.residual(lin.f, b_next) + lin.f_x * (d.dx - e.dx) + lin.f_y * (d.dy - e.dy);
    let (mx, my) = (d.dx - state.dx, d.dy - state.dy);
    let lhs = -(mx * mx + my * my) / (2.0 * p.sigma) - innovation * innovation / (2.0 * p.s)
        + result.phase;
    Ok((lhs + 0.5 * refs.norm_sq()).abs())
}

/// A particle and the phase it has accrued since it was last resampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub state: ShipState,
    pub phase_accum: f64,
    /// States one and two steps back, used by the smoother.
    pub trail: [Option<ShipState>; 2],
}

impl Particle {
    pub fn new(state: ShipState) -> Self {
        Self {
            state,
            phase_accum: 0.0,
            trail: [None, None],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ResamplePolicy {
    #[default]
    EveryStep,
    /// Resample when the largest accumulated weight exceeds `L` times the smallest.
    RatioThreshold(f64),
    /// Resample independently inside contiguous blocks of this size.
    Subsets(usize),
    Never,
}

impl ResamplePolicy {
    pub fn validate(&self, particles: usize) -> Result<()> {
        match *self {
            ResamplePolicy::RatioThreshold(l) if !(l > 1.0) => Err(Error::InvalidConfig(format!(
                "ratio threshold must exceed 1, got {l}"
            ))),
            ResamplePolicy::Subsets(k) if k < 2 => Err(Error::InvalidConfig(format!(
                "subset size must be at least 2, got {k}"
            ))),
            ResamplePolicy::Subsets(k) if k > particles => Err(Error::InvalidConfig(format!(
                "subset size {k} exceeds the number of particles {particles}"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for ResamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown resampling policy '{s}'"));
        match s {
            "every" => Ok(ResamplePolicy::EveryStep),
            "never" => Ok(ResamplePolicy::Never),
            _ => {
                let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
                match kind {
                    "ratio" => arg
                        .parse()
                        .map(ResamplePolicy::RatioThreshold)
                        .map_err(|_| bad()),
                    "subsets" => arg.parse().map(ResamplePolicy::Subsets).map_err(|_| bad()),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl std::fmt::Display for ResamplePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResamplePolicy::EveryStep => write!(f, "every"),
            ResamplePolicy::RatioThreshold(l) => write!(f, "ratio:{l}"),
            ResamplePolicy::Subsets(k) => write!(f, "subsets:{k}"),
            ResamplePolicy::Never => write!(f, "never"),
        }
    }
}

/// Relative weights `exp(-(phase - min phase))`. `+inf` phases get weight zero.
pub fn relative_weights(phases: &[f64]) -> Result<Vec<f64>> {
    if phases.is_empty() {
        return Err(Error::InvalidInput(
            "cannot weight an empty ensemble".into(),
        ));
    }
    if phases.iter().any(|p| p.is_nan() || *p == f64::NEG_INFINITY) {
        return Err(Error::InvalidInput("phases must be finite or +inf".into()));
    }
    let min = phases.iter().copied().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::InvalidInput("every particle has zero weight".into()));
    }
    Ok(phases.iter().map(|p| (-(p - min)).exp()).collect())
}

/// CDF inversion: for each draw `theta`, the index `i` with
/// `Z^-1 sum_{j<i} w_j < theta <= Z^-1 sum_{j<=i} w_j`.
pub fn resample_indices(phases: &[f64], draws: &[f64]) -> Result<Vec<usize>> {
    let weights = relative_weights(phases)?;
    let mut cdf = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for w in &weights {
        total += w;
        cdf.push(total);
    }
    let last_positive = weights
        .iter()
        .rposition(|w| *w > 0.0)
        .expect("minimum phase has weight 1");
    draws
        .iter()
        .map(|&theta| {
            if !(0.0..1.0).contains(&theta) {
                return Err(Error::InvalidInput(format!(
                    "uniform draw {theta} outside [0, 1)"
                )));
            }
            let target = theta * total;
            let mut i = cdf.partition_point(|c| *c < target);
            while i <= last_positive && weights[i] == 0.0 {
                i += 1;
            }
            Ok(i.min(last_positive))
        })
        .collect()
}

/// Multinomial resampling by the phase weights. Selected particles are copied
/// and every phase is reset to zero.
pub fn resample(particles: &[Particle], draws: &[f64]) -> Result<Vec<Particle>> {
    if particles.is_empty() {
        return Err(Error::InvalidInput(
            "cannot resample an empty ensemble".into(),
        ));
    }
    if draws.len() != particles.len() {
        return Err(Error::InvalidInput(format!(
            "{} uniform draws for {} particles",
            draws.len(),
            particles.len()
        )));
    }
    let phases: Vec<f64> = particles.iter().map(|p| p.phase_accum).collect();
    Ok(resample_indices(&phases, draws)?
        .into_iter()
        .map(|i| reset(particles[i]))
        .collect())
}

fn reset(mut p: Particle) -> Particle {
    p.phase_accum = 0.0;
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    pub particles: Vec<Particle>,
    /// `ancestors[k]` is the old slot new slot `k` was copied from; `None` if
    /// nothing was resampled.
    pub ancestors: Option<Vec<usize>>,
}

/// Applies `policy`, drawing uniforms from `rng` only when resampling happens.
pub fn maybe_resample<R: Rng + ?Sized>(
    particles: &[Particle],
    policy: &ResamplePolicy,
    rng: &mut R,
) -> Result<ResampleOutcome> {
    if particles.is_empty() {
        return Err(Error::InvalidInput(
            "cannot resample an empty ensemble".into(),
        ));
    }
    policy.validate(particles.len())?;
    let phases: Vec<f64> = particles.iter().map(|p| p.phase_accum).collect();
    let full = |rng: &mut R| -> Result<ResampleOutcome> {
        let draws: Vec<f64> = (0..particles.len()).map(|_| rng.random::<f64>()).collect();
        let ancestors = resample_indices(&phases, &draws)?;
        Ok(ResampleOutcome {
            particles: ancestors.iter().map(|&i| reset(particles[i])).collect(),
            ancestors: Some(ancestors),
        })
    };
    match *policy {
        ResamplePolicy::Never => Ok(ResampleOutcome {
            particles: particles.to_vec(),
            ancestors: None,
        }),
        ResamplePolicy::EveryStep => full(rng),
        ResamplePolicy::RatioThreshold(l) => {
            let max = phases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = phases.iter().copied().fold(f64::INFINITY, f64::min);
            if max - min > l.ln() {
                full(rng)
            } else {
                Ok(ResampleOutcome {
                    particles: particles.to_vec(),
                    ancestors: None,
                })
            }
        }
        ResamplePolicy::Subsets(k) => {
            let mut ancestors = Vec::with_capacity(particles.len());
            for (b, block) in phases.chunks(k).enumerate() {
                let draws: Vec<f64> = (0..block.len()).map(|_| rng.random::<f64>()).collect();
                ancestors.extend(
                    resample_indices(block, &draws)?
                        .into_iter()
                        .map(|i| b * k + i),
                );
            }
            Ok(ResampleOutcome {
                particles: ancestors.iter().map(|&i| reset(particles[i])).collect(),
                ancestors: Some(ancestors),
            })
        }
    }
}

/// Filter driver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub particles: usize,
    pub policy: ResamplePolicy,
    pub forward: ForwardConfig,
    /// One-step-lag backward smoothing.
    pub smoothing: bool,
    /// Keep per-step displacements and ancestors so particle histories can be rebuilt.
    pub record_lineage: bool,
    /// Evaluate the forward-step density identity on every converged step.
    pub check_identity: bool,
    /// Run the per-particle steps on the rayon pool.
    pub parallel_particles: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            particles: 100,
            policy: ResamplePolicy::EveryStep,
            forward: ForwardConfig::default(),
            smoothing: false,
            record_lineage: false,
            check_identity: false,
            parallel_particles: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub step: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Iterations used by each particle (the larger of the forward and smoothing passes).
    pub iterations: Vec<usize>,
    /// Forward-step identity gap of each particle; empty unless requested.
    pub identity_gaps: Vec<f64>,
    pub resampled: bool,
}

impl StepDiagnostics {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn max_identity_gap(&self) -> Option<f64> {
        self.identity_gaps.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LineageStep {
    displacements: Vec<Displacement>,
    corrected_previous: Option<Vec<Displacement>>,
    ancestors: Option<Vec<usize>>,
}

/// Per-step displacements and resampling ancestry of one filter run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lineage {
    steps: Vec<LineageStep>,
}

impl Lineage {
    /// Displacement history (steps `1..=T`) of the particle in final slot `slot`,
    /// following its ancestors back through every resampling and using
    /// smoothed values where the smoother replaced them.
    pub fn history(&self, slot: usize) -> Vec<Displacement> {
        let t = self.steps.len();
        let mut out: Vec<Option<Displacement>> = vec![None; t];
        let mut slot = slot;
        for n in (0..t).rev() {
            let rec = &self.steps[n];
            if let Some(anc) = &rec.ancestors {
                slot = anc[slot];
            }
            if out[n].is_none() {
                out[n] = Some(rec.displacements[slot]);
            }
            if let (Some(cp), true) = (&rec.corrected_previous, n > 0) {
                out[n - 1] = Some(cp[slot]);
            }
        }
        out.into_iter()
            .map(|d| d.expect("every step visited"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub estimates: Vec<Estimate>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Final ensemble.
    pub particles: Vec<Particle>,
    pub lineage: Option<Lineage>,
}

struct StepOutcome {
    particle: Particle,
    iterations: usize,
    gap: Option<f64>,
    corrected_previous: Option<Displacement>,
}

fn advance_particle(
    particle: &Particle,
    index: usize,
    step: usize,
    obs: &[Observation],
    p: &ModelParams,
    settings: &FilterSettings,
    seed: &SeedStream,
) -> Result<StepOutcome> {
    let b_next = obs[step - 1].b;
    let refs = RefPair::draw(&mut seed.rng(Domain::Reference, step as u64, index as u64));
    let fwd = forward_step(&particle.state, b_next, p, refs, &settings.forward)?;
    let mut iterations = fwd.iterations_used;
    let gap = if settings.check_identity && p.sigma > 0.0 {
        Some(forward_identity_gap(
            &Azimuth,
            &particle.state,
            b_next,
            p,
            refs,
            &fwd,
        )?)
    } else {
        None
    };
    let mut next = Particle {
        state: fwd.new_state,
        phase_accum: particle.phase_accum + fwd.phase,
        trail: [Some(particle.state), particle.trail[0]],
    };
    let mut corrected_previous = None;

    if settings.smoothing {
        if let [Some(mid), Some(before)] = next.trail {
            let input = SmoothingInput {
                history: [before, mid, next.state],
                b_mid: obs[step - 2].b,
                b_next,
                refs_backward: RefPair::draw(&mut seed.rng(
                    Domain::SmoothBackward,
                    step as u64,
                    index as u64,
                )),
                refs_forward: RefPair::draw(&mut seed.rng(
                    Domain::SmoothForward,
                    step as u64,
                    index as u64,
                )),
            };
            let sm = smoother::apply_smoothing(&input, p, &settings.forward)?;
            iterations = iterations.max(sm.iterations_used);
            next.state = sm.next;
            next.trail[0] = Some(sm.corrected_mid);
            next.phase_accum = particle.phase_accum + sm.backward_phase + sm.forward_phase;
            corrected_previous = Some(sm.corrected_mid.displacement());
        }
    }
    Ok(StepOutcome {
        particle: next,
        iterations,
        gap,
        corrected_previous,
    })
}

/// Weighted mean position, weights `exp(-(phase - min phase))`.
fn ensemble_mean(particles: &[Particle]) -> Result<(f64, f64)> {
    let phases: Vec<f64> = particles.iter().map(|p| p.phase_accum).collect();
    let w = relative_weights(&phases)?;
    let total: f64 = w.iter().sum();
    let x = particles
        .iter()
        .zip(&w)
        .map(|(p, w)| w * p.state.x)
        .sum::<f64>()
        / total;
    let y = particles
        .iter()
        .zip(&w)
        .map(|(p, w)| w * p.state.y)
        .sum::<f64>()
        / total;
    Ok((x, y))
}

/// Runs the filter over an observation record.
///
/// All particles start at the model's initial state. Reference draws for
/// particle `i` at step `n` come from the `(Reference, run, n, i)` stream and
/// resampling uniforms from `(Resample, run, n, 0)`, so the output depends
/// only on the inputs and the seed.
pub fn run_filter(
    obs: &[Observation],
    p: &ModelParams,
    settings: &FilterSettings,
    seed: &SeedStream,
) -> Result<FilterOutput> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    if settings.particles == 0 {
        return Err(Error::InvalidConfig(
            "at least one particle is required".into(),
        ));
    }
    p.validate()?;
    check_variances(p)?;
    settings.forward.validate()?;
    settings.policy.validate(settings.particles)?;

    let mut particles = vec![Particle::new(p.initial_state()); settings.particles];
    let mut estimates = Vec::with_capacity(obs.len());
    let mut diagnostics = Vec::with_capacity(obs.len());
    let mut lineage = settings.record_lineage.then(Lineage::default);

    for step in 1..=obs.len() {
        let advance = |(i, particle): (usize, &Particle)| {
            advance_particle(particle, i, step, obs, p, settings, seed).map_err(|e| Error::AtStep {
                step,
                particle: i,
                source: Box::new(e),
            })
        };
        let outcomes: Vec<StepOutcome> = if settings.parallel_particles {
            particles
                .par_iter()
                .enumerate()
                .map(advance)
                .collect::<Result<_>>()?
        } else {
            particles
                .iter()
                .enumerate()
                .map(advance)
                .collect::<Result<_>>()?
        };

        let iterations = outcomes.iter().map(|o| o.iterations).collect();
        let identity_gaps = outcomes.iter().filter_map(|o| o.gap).collect();
        let moved: Vec<Particle> = outcomes.iter().map(|o| o.particle).collect();

        let mut rng = seed.rng(Domain::Resample, step as u64, 0);
        let outcome = maybe_resample(&moved, &settings.policy, &mut rng)?;

        if let Some(lin) = lineage.as_mut() {
            lin.steps.push(LineageStep {
                displacements: moved.iter().map(|q| q.state.displacement()).collect(),
                corrected_previous: outcomes
                    .iter()
                    .map(|o| o.corrected_previous)
                    .collect::<Option<Vec<_>>>(),
                ancestors: outcome.ancestors.clone(),
            });
        }

        particles = outcome.particles;
        let (x, y) = ensemble_mean(&particles)?;
        estimates.push(Estimate { step, x, y });
        diagnostics.push(StepDiagnostics {
            step,
            iterations,
            identity_gaps,
            resampled: outcome.ancestors.is_some(),
        });
    }

    Ok(FilterOutput {
        estimates,
        diagnostics,
        particles,
        lineage,
    })
}
