//! Chainless sampling of a scalar diffusion conditioned on both endpoints.
//!
//! The path `dx = f(x,t) dt + sqrt(sigma) dw` is discretized on `N = 2^levels`
//! steps with the balanced implicit scheme, which makes each increment
//! `x[n+1] - x[n]` Gaussian with mean `a[n]` and variance `var[n]` once `f`
//! and `f'` are frozen. Given those, the interior of the path is sampled by
//! recursive midpoint interpolation: each midpoint is the product of the law
//! reached forward from the left end of its span and the law reached backward
//! from the right end. When `f` depends on `x` the frozen coefficients are
//! refreshed from the latest path and the interpolation is repeated with the
//! same reference draws until the path stops moving.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian1D;

/// A scalar function of `(x, t)`.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct BridgeSpec {
    pub drift: ScalarFn,
    /// `d drift / dx`.
    pub drift_slope: ScalarFn,
    pub noise_scale: f64,
    pub horizon: f64,
    pub levels: u32,
    pub x_start: f64,
    pub x_end: f64,
}

impl fmt::Debug for BridgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeSpec")
            .field("noise_scale", &self.noise_scale)
            .field("horizon", &self.horizon)
            .field("levels", &self.levels)
            .field("x_start", &self.x_start)
            .field("x_end", &self.x_end)
            .finish_non_exhaustive()
    }
}

impl BridgeSpec {
    pub fn new(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        drift_slope: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        noise_scale: f64,
        horizon: f64,
        levels: u32,
        x_start: f64,
        x_end: f64,
    ) -> Result<Self> {
        let spec = Self {
            drift: Arc::new(drift),
            drift_slope: Arc::new(drift_slope),
            noise_scale,
            horizon,
            levels,
            x_start,
            x_end,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Driftless (Brownian) bridge.
    pub fn brownian(
        noise_scale: f64,
        horizon: f64,
        levels: u32,
        x_start: f64,
        x_end: f64,
    ) -> Result<Self> {
        Self::new(
            |_, _| 0.0,
            |_, _| 0.0,
            noise_scale,
            horizon,
            levels,
            x_start,
            x_end,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 30 {
            return Err(Error::InvalidInput(format!(
                "levels must be in 1..=30, got {}",
                self.levels
            )));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::InvalidInput(
                "noise scale must be finite and positive".into(),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidInput(
                "horizon must be finite and positive".into(),
            ));
        }
        if !(self.x_start.is_finite() && self.x_end.is_finite()) {
            return Err(Error::InvalidInput(
                "bridge endpoints must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        1usize << self.levels
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Straight line from `x_start` to `x_end`, endpoints included.
    pub fn straight_line(&self) -> Vec<f64> {
        let n = self.steps();
        (0..=n)
            .map(|k| {
                let w = k as f64 / n as f64;
                self.x_start + w * (self.x_end - self.x_start)
            })
            .collect()
    }
}

/// Frozen per-step increment laws.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParams {
    pub a: Vec<f64>,
    pub var: Vec<f64>,
}

impl StepParams {
    pub fn total_drift(&self) -> f64 {
        self.a.iter().sum()
    }

    pub fn total_variance(&self) -> f64 {
        self.var.iter().sum()
    }
}

const SINGULAR_FACTOR: f64 = 1e-8;

/// Balanced implicit coefficients along `path` (length `N + 1`, endpoints included).
pub fn step_params(path: &[f64], spec: &BridgeSpec) -> Result<StepParams> {
    let n = spec.steps();
    if path.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "path has {} points, expected {}",
            path.len(),
            n + 1
        )));
    }
    let delta = spec.delta();
    let mut a = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for (step, &x) in path[..n].iter().enumerate() {
        let t = step as f64 * delta;
        let factor = 1.0 - delta * (spec.drift_slope)(x, t);
        if !(factor.abs() > SINGULAR_FACTOR) {
            return Err(Error::SingularScheme { step, factor });
        }
        a.push(delta * (spec.drift)(x, t) / factor);
        var.push(spec.noise_scale * delta / (factor * factor));
    }
    Ok(StepParams { a, var })
}

/// Recursive midpoint sampling of the interior `x[1..N]` for frozen increment laws.
///
/// Reference draws are consumed breadth-first: `xi[0]` for the midpoint,
/// `xi[1], xi[2]` for the quarter points, and so on left to right.
pub fn subdivide_sample(spec: &BridgeSpec, p: &StepParams, xi: &[f64]) -> Result<Vec<f64>> {
    let n = spec.steps();
    if xi.len() != n - 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} reference draws, got {}",
            n - 1,
            xi.len()
        )));
    }
    if p.a.len() != n || p.var.len() != n {
        return Err(Error::InvalidInput(
            "step parameters do not match the mesh".into(),
        ));
    }
    let mut cum_a = vec![0.0; n + 1];
    let mut cum_v = vec![0.0; n + 1];
    for k in 0..n {
        cum_a[k + 1] = cum_a[k] + p.a[k];
        cum_v[k + 1] = cum_v[k] + p.var[k];
    }

    let mut path = vec![0.0; n + 1];
    path[0] = spec.x_start;
    path[n] = spec.x_end;
    for level in 0..spec.levels {
        let span = n >> level;
        let half = span / 2;
        let nodes = 1usize << level;
        for j in 0..nodes {
            let (l, r) = (j * span, (j + 1) * span);
            let m = l + half;
            let forward = Gaussian1D::new(path[l] + (cum_a[m] - cum_a[l]), cum_v[m] - cum_v[l])?;
            let backward = Gaussian1D::new(path[r] - (cum_a[r] - cum_a[m]), cum_v[r] - cum_v[m])?;
            let merged = forward.merge(&backward).merged;
            path[m] = merged.sample_from(xi[nodes - 1 + j]);
        }
    }
    Ok(path[1..n].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    /// Max-norm change of the interior values that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial under-relaxation factor in `(0, 1]`; halved (down to 1/16)
    /// whenever the residual grows.
    pub relaxation: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            relaxation: 1.0,
        }
    }
}

const MIN_RELAXATION: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    /// Interior values `x[1..N]`.
    pub values: Vec<f64>,
    /// `(X - x_start - sum a)^2 / (2 sum var)` at the converged path.
    pub endpoint_phase: f64,
    /// Updates needed to reach the fixed point; the confirming pass is not counted.
    pub iterations_used: usize,
    /// Max-norm change produced by each pass.
    pub residuals: Vec<f64>,
}

impl PathSample {
    /// The full path with endpoints.
    pub fn full_path(&self, spec: &BridgeSpec) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.values.len() + 2);
        p.push(spec.x_start);
        p.extend_from_slice(&self.values);
        p.push(spec.x_end);
        p
    }
}

/// Fixed-point iteration of [`subdivide_sample`] with the draws `xi` held fixed.
pub fn bridge_iterate(spec: &BridgeSpec, xi: &[f64], cfg: &IterationConfig) -> Result<PathSample> {
    spec.validate()?;
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 || !(cfg.relaxation > 0.0 && cfg.relaxation <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bad iteration config {cfg:?}"
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("reference draws must be finite".into()));
    }
    let n = spec.steps();
    let mut path = spec.straight_line();
    let mut omega = cfg.relaxation;
    let mut residuals = Vec::new();
    let mut last = f64::INFINITY;

    for iteration in 1..=cfg.max_iter {
        let params = step_params(&path, spec)?;
        let proposal = subdivide_sample(spec, &params, xi)?;
        let residual = proposal
            .iter()
            .zip(&path[1..n])
            .fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()));
        residuals.push(residual);

        if residual < cfg.tol {
            path[1..n].copy_from_slice(&proposal);
            let converged = step_params(&path, spec)?;
            let gap = spec.x_end - spec.x_start - converged.total_drift();
            return Ok(PathSample {
                values: proposal,
                endpoint_phase: gap * gap / (2.0 * converged.total_variance()),
                iterations_used: iteration - 1,
                residuals,
            });
        }
        if residual > last {
            omega = (omega * 0.5).max(MIN_RELAXATION);
        }
        last = residual;
        for (x, p) in path[1..n].iter_mut().zip(&proposal) {
            *x += omega * (p - *x);
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        residual: last,
    })
}

/// Relative gap of the quadratic-form identity
///
/// ```text
/// sum (x[n+1] - x[n] - a[n])^2 / var[n] = sum xi^2 + (X - x_start - sum a)^2 / sum var
/// ```
///
/// with the coefficients frozen at the sampled path.
pub fn quadratic_form_gap(spec: &BridgeSpec, sample: &PathSample, xi: &[f64]) -> Result<f64> {
    let path = sample.full_path(spec);
    let p = step_params(&path, spec)?;
    let lhs: f64 = path
        .windows(2)
        .zip(p.a.iter().zip(&p.var))
        .map(|(w, (a, v))| (w[1] - w[0] - a).powi(2) / v)
        .sum();
    let gap = spec.x_end - spec.x_start - p.total_drift();
    let rhs =
        xi[..spec.steps() - 1].iter().map(|x| x * x).sum::<f64>() + gap * gap / p.total_variance();
    Ok((lhs - rhs).abs() / rhs.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_params_examples() {
        let spec = BridgeSpec::brownian(1.0, 1.0, 2, 0.0, 0.0).unwrap();
        let p = step_params(&[0.0; 5], &spec).unwrap();
        assert_eq!(p.a, vec![0.0; 4]);
        assert_eq!(p.var, vec![0.25; 4]);

        let c = 0.7;
        let spec = BridgeSpec::new(move |_, _| c, |_, _| 0.0, 2.0, 1.0, 3, 0.0, 1.0).unwrap();
        let p = step_params(&spec.straight_line(), &spec).unwrap();
        for k in 0..8 {
            assert!((p.a[k] - c / 8.0).abs() < 1e-15);
            assert!((p.var[k] - 2.0 / 8.0).abs() < 1e-15);
        }

        let spec = BridgeSpec::new(|x, _| -x, |_, _| -1.0, 1.0, 1.0, 1, 0.0, 0.0).unwrap();
        let p = step_params(&[0.0, 1.0, 0.0], &spec).unwrap();
        let d = 0.5;
        assert_eq!(p.a[0], 0.0);
        assert!((p.a[1] + d / (1.0 + d)).abs() < 1e-15);
        for v in &p.var {
            assert!((v - d / ((1.0 + d) * (1.0 + d))).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_scheme_is_reported() {
        // delta = 1/2, f' = 2 makes 1 - delta f' vanish
        let spec = BridgeSpec::new(|x, _| 2.0 * x, |_, _| 2.0, 1.0, 1.0, 1, 0.0, 1.0).unwrap();
        assert!(matches!(
            step_params(&[0.0, 0.5, 1.0], &spec),
            Err(Error::SingularScheme { step: 0, .. })
        ));
    }

    #[test]
    fn subdivide_examples() {
        let spec = BridgeSpec::brownian(1.0, 1.0, 1, 0.0, 0.0).unwrap();
        let p = step_params(&spec.straight_line(), &spec).unwrap();
        assert_eq!(subdivide_sample(&spec, &p, &[0.0]).unwrap(), vec![0.0]);

        let (c, sigma, x_end) = (0.3, 2.0, 1.5);
        let spec = BridgeSpec::new(move |_, _| c, |_, _| 0.0, sigma, 1.0, 1, 0.0, x_end).unwrap();
        let p = step_params(&spec.straight_line(), &spec).unwrap();
        let mid = subdivide_sample(&spec, &p, &[1.0]).unwrap();
        assert!((mid[0] - (x_end / 2.0 + sigma.sqrt() / 2.0)).abs() < 1e-14);

        let spec = BridgeSpec::brownian(1.0, 1.0, 2, 0.0, 2.0).unwrap();
        let p = step_params(&spec.straight_line(), &spec).unwrap();
        let v = subdivide_sample(&spec, &p, &[0.0; 3]).unwrap();
        assert_eq!(v, vec![0.5, 1.0, 1.5]);

        assert!(subdivide_sample(&spec, &p, &[0.0; 2]).is_err());
    }

    #[test]
    fn draws_are_consumed_breadth_first() {
        let spec = BridgeSpec::brownian(1.0, 1.0, 2, 0.0, 0.0).unwrap();
        let p = step_params(&spec.straight_line(), &spec).unwrap();
        // moving only the midpoint draw moves every node
        let v = subdivide_sample(&spec, &p, &[1.0, 0.0, 0.0]).unwrap();
        assert!(v.iter().all(|x| *x > 0.0));
        // the second draw belongs to the left quarter point
        let v = subdivide_sample(&spec, &p, &[0.0, 1.0, 0.0]).unwrap();
        assert!(v[0] > 0.0 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn time_only_drift_converges_after_one_update() {
        let spec =
            BridgeSpec::new(|_, t| (3.0 * t).sin(), |_, _| 0.0, 1.0, 1.0, 4, 0.0, 1.0).unwrap();
        let xi: Vec<f64> = (0..15).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let s = bridge_iterate(&spec, &xi, &IterationConfig::default()).unwrap();
        assert_eq!(s.iterations_used, 1);
    }

    #[test]
    fn brownian_endpoint_phase() {
        let x_end = 1.7;
        let spec = BridgeSpec::brownian(1.0, 1.0, 3, 0.0, x_end).unwrap();
        let s = bridge_iterate(&spec, &[0.3; 7], &IterationConfig::default()).unwrap();
        assert!((s.endpoint_phase - x_end * x_end / 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_is_reported() {
        let spec = BridgeSpec::new(
            |x, _| -3.0 * x.powi(3),
            |x, _| -9.0 * x * x,
            1.0,
            1.0,
            3,
            0.0,
            4.0,
        )
        .unwrap();
        let cfg = IterationConfig {
            max_iter: 2,
            ..IterationConfig::default()
        };
        assert!(matches!(
            bridge_iterate(&spec, &[1.0; 7], &cfg),
            Err(Error::Convergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn bad_levels_rejected() {
        assert!(BridgeSpec::brownian(1.0, 1.0, 0, 0.0, 0.0).is_err());
        assert!(BridgeSpec::brownian(0.0, 1.0, 2, 0.0, 0.0).is_err());
    }
}
