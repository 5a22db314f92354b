//! One-step-lag backward smoothing.
//!
//! Given the state at time `n-1`, the total displacement `d_tot` from time
//! `n-1` to `n+1` and the observation at time `n`, the time-`n` position is
//! re-interpolated. The sampled variable is the doubled first leg
//! `d_new ~ N(2 d_prev, 4 sigma)`, so the time-`n` displacement is `d_new / 2`.
//! Its law is conditioned on the time-`n` observation (linearized at the
//! midpoint) and then on the endpoint leg `N(d_tot, sigma)`, all in the frame
//! rotated onto the observation gradient.

use crate::error::Result;
use crate::filter::{self, ForwardConfig, RefPair, RotatedFrame};
use crate::gaussian::Gaussian1D;
use crate::model::{Azimuth, Displacement, ModelParams, ObservationModel, ShipState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardInput {
    /// State at time `n-1`, including the displacement that produced it.
    pub state_prev: ShipState,
    /// Displacement from time `n-1` to `n+1`, held fixed.
    pub d_tot: Displacement,
    /// Observation at time `n`.
    pub b_mid: f64,
    pub refs: RefPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardResult {
    /// Doubled first leg; the time-`n` displacement is `d_new / 2`.
    pub d_new: Displacement,
    /// Observation merge phase plus the two endpoint merge phases.
    pub phase: f64,
    pub iterations_used: usize,
    /// Value of `d_new` at which the observation was linearized on the final pass.
    pub expansion: Displacement,
}

impl BackwardResult {
    pub fn time_n_displacement(&self) -> Displacement {
        Displacement {
            dx: 0.5 * self.d_new.dx,
            dy: 0.5 * self.d_new.dy,
        }
    }
}

fn backward_map<M: ObservationModel + ?Sized>(
    model: &M,
    input: &BackwardInput,
    p: &ModelParams,
    d: Displacement,
) -> Result<(Displacement, f64)> {
    let st = &input.state_prev;
    let lin = model.linearize(st.x + 0.5 * d.dx, st.y + 0.5 * d.dy)?;
    let frame = RotatedFrame::from_gradient(&lin);
    let residual = model.residual(lin.f, input.b_mid);
    let prev = st.displacement();
    let first_leg = Displacement {
        dx: 2.0 * prev.dx,
        dy: 2.0 * prev.dy,
    };

    let observed = Gaussian1D::new(
        frame.along(d) - 2.0 * residual / lin.r,
        4.0 * p.s / (lin.r * lin.r),
    )?;
    let prior = Gaussian1D::new(frame.along(first_leg), 4.0 * p.sigma)?;
    let conditioned = observed.merge(&prior);
    let along = conditioned
        .merged
        .merge(&Gaussian1D::new(frame.along(input.d_tot), p.sigma)?);
    let across = prior_across(&frame, first_leg, p)?
        .merge(&Gaussian1D::new(frame.across(input.d_tot), p.sigma)?);

    let sample = frame.to_plane(
        along.merged.sample_from(input.refs.xi_x),
        across.merged.sample_from(input.refs.xi_y),
    );
    Ok((sample, conditioned.phase + along.phase + across.phase))
}

fn prior_across(
    frame: &RotatedFrame,
    first_leg: Displacement,
    p: &ModelParams,
) -> Result<Gaussian1D> {
    Gaussian1D::new(frame.across(first_leg), 4.0 * p.sigma)
}

/// Backward step with the azimuth observation.
pub fn backward_step(
    input: &BackwardInput,
    p: &ModelParams,
    cfg: &ForwardConfig,
) -> Result<BackwardResult> {
    backward_step_with(&Azimuth, input, p, cfg)
}

pub fn backward_step_with<M: ObservationModel + ?Sized>(
    model: &M,
    input: &BackwardInput,
    p: &ModelParams,
    cfg: &ForwardConfig,
) -> Result<BackwardResult> {
    filter::check_variances(p)?;
    let prev = input.state_prev.displacement();
    let doubled = Displacement {
        dx: 2.0 * prev.dx,
        dy: 2.0 * prev.dy,
    };
    if p.sigma == 0.0 {
        return Ok(BackwardResult {
            d_new: doubled,
            phase: 0.0,
            iterations_used: 0,
            expansion: doubled,
        });
    }
    let start = if cfg.warm_start {
        doubled
    } else {
        Displacement::ZERO
    };
    let fp = filter::iterate_displacement(start, cfg, |d| backward_map(model, input, p, d))?;
    Ok(BackwardResult {
        d_new: fp.value,
        phase: fp.phase,
        iterations_used: fp.iterations_used,
        expansion: fp.expansion,
    })
}

/// Absolute gap, in log space, of the three-factor identity
///
/// ```text
/// -|d - 2 d_prev|^2/(8 sigma) - (f_lin(d/2) - b)^2/(2 s) - |d - d_tot|^2/(2 sigma) + phase
///     = -(xi_x^2 + xi_y^2)/2
/// ```
///
/// with the observation linearized at the final expansion midpoint.
pub fn backward_identity_gap<M: ObservationModel + ?Sized>(
    model: &M,
    input: &BackwardInput,
    p: &ModelParams,
    result: &BackwardResult,
) -> Result<f64> {
    let st = &input.state_prev;
    let (e, d) = (result.expansion, result.d_new);
    let lin = model.linearize(st.x + 0.5 * e.dx, st.y + 0.5 * e.dy)?;
    let innovation = model.residual(lin.f, input.b_mid)
        + 0.5 * (lin.f_x * (d.dx - e.dx) + lin.f_y * (d.dy - e.dy));
    let (px, py) = (d.dx - 2.0 * st.dx, d.dy - 2.0 * st.dy);
    let (tx, ty) = (d.dx - input.d_tot.dx, d.dy - input.d_tot.dy);
    let lhs = -(px * px + py * py) / (8.0 * p.sigma)
        - innovation * innovation / (2.0 * p.s)
        - (tx * tx + ty * ty) / (2.0 * p.sigma)
        + result.phase;
    Ok((lhs + 0.5 * input.refs.norm_sq()).abs())
}

/// The last three states of a particle plus the draws for one smoothing pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingInput {
    /// States at times `n-1`, `n`, `n+1`.
    pub history: [ShipState; 3],
    /// Observations at times `n` and `n+1`.
    pub b_mid: f64,
    pub b_next: f64,
    pub refs_backward: RefPair,
    pub refs_forward: RefPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingResult {
    pub corrected_mid: ShipState,
    pub next: ShipState,
    pub backward_phase: f64,
    /// Phase of the re-run forward step.
    pub forward_phase: f64,
    pub iterations_used: usize,
}

/// Re-interpolates the time-`n` state and re-runs the forward step to `n+1`
/// from the corrected state. Resampling is left to the caller.
pub fn apply_smoothing(
    input: &SmoothingInput,
    p: &ModelParams,
    cfg: &ForwardConfig,
) -> Result<SmoothingResult> {
    let [before, mid, next] = input.history;
    let d_tot = Displacement {
        dx: next.x - before.x,
        dy: next.y - before.y,
    };
    let back = backward_step(
        &BackwardInput {
            state_prev: before,
            d_tot,
            b_mid: input.b_mid,
            refs: input.refs_backward,
        },
        p,
        cfg,
    )?;
    let corrected_mid = if p.sigma == 0.0 {
        mid
    } else {
        before.advanced(back.time_n_displacement())
    };
    let fwd = filter::forward_step(&corrected_mid, input.b_next, p, input.refs_forward, cfg)?;
    let next = if p.sigma == 0.0 { next } else { fwd.new_state };
    Ok(SmoothingResult {
        corrected_mid,
        next,
        backward_phase: back.phase,
        forward_phase: fwd.phase,
        iterations_used: back.iterations_used.max(fwd.iterations_used),
    })
}
