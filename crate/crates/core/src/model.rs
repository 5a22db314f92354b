//! The ship test bed: a planar random walk whose displacement itself
//! performs a random walk, observed through noisy azimuths from the origin.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeding::{Domain, SeedStream};

/// Model constants. `sigma` is the variance of each displacement increment,
/// `s` the variance of the azimuth noise (radians squared).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub sigma: f64,
    pub s: f64,
    pub x0: f64,
    pub y0: f64,
    pub dx1: f64,
    pub dy1: f64,
    pub n_steps: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            sigma: 1.0e-6,
            s: 25.0e-6,
            x0: 0.01,
            y0: 20.0,
            dx1: 0.002,
            dy1: -0.06,
            n_steps: 160,
        }
    }
}

impl ModelParams {
    /// Zero variances are accepted: they describe the noiseless degenerate
    /// model used in tests.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma, self.s, self.x0, self.y0, self.dx1, self.dy1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig(
                "model parameters must be finite".into(),
            ));
        }
        if self.sigma < 0.0 || self.s < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "variances must be non-negative (sigma = {}, s = {})",
                self.sigma, self.s
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        if self.x0 == 0.0 && self.y0 == 0.0 {
            return Err(Error::DegeneratePosition { x: 0.0, y: 0.0 });
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ShipState {
        ShipState {
            x: self.x0,
            y: self.y0,
            dx: self.dx1,
            dy: self.dy1,
        }
    }
}

/// Position plus the most recent displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShipState {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

impl ShipState {
    /// Advances the position by `d` and records `d` as the latest displacement.
    #[inline]
    pub fn advanced(&self, d: Displacement) -> ShipState {
        ShipState {
            x: self.x + d.dx,
            y: self.y + d.dy,
            dx: d.dx,
            dy: d.dy,
        }
    }

    #[inline]
    pub fn displacement(&self) -> Displacement {
        Displacement {
            dx: self.dx,
            dy: self.dy,
        }
    }
}

/// A planar displacement `(dX, dY)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    #[inline]
    pub fn max_abs_diff(&self, other: &Displacement) -> f64 {
        (self.dx - other.dx).abs().max((self.dy - other.dy).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub b: f64,
    pub step: usize,
}

/// First-order expansion of an observation function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsLinearization {
    pub f: f64,
    pub f_x: f64,
    pub f_y: f64,
    /// Gradient norm `sqrt(f_x^2 + f_y^2)`.
    pub r: f64,
}

/// A scalar observation function of position.
///
/// The filter only ever needs the value and gradient at a point, plus a way
/// to form residuals (the azimuth wraps around the circle).
pub trait ObservationModel: Sync {
    fn linearize(&self, x: f64, y: f64) -> Result<ObsLinearization>;

    fn residual(&self, predicted: f64, observed: f64) -> f64 {
        predicted - observed
    }
}

/// Azimuth of the ship as seen from the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct Azimuth;

impl ObservationModel for Azimuth {
    fn linearize(&self, x: f64, y: f64) -> Result<ObsLinearization> {
        linearize(x, y)
    }

    fn residual(&self, predicted: f64, observed: f64) -> f64 {
        wrap_angle(predicted - observed)
    }
}

/// Reduces an angle difference to `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// `arctan(y/x)` continued across `x = 0` (the two-argument arctangent).
pub fn azimuth(x: f64, y: f64) -> Result<f64> {
    if x == 0.0 && y == 0.0 || !x.is_finite() || !y.is_finite() {
        return Err(Error::DegeneratePosition { x, y });
    }
    Ok(y.atan2(x))
}

pub fn linearize(x: f64, y: f64) -> Result<ObsLinearization> {
    let f = azimuth(x, y)?;
    let rho2 = x * x + y * y;
    Ok(ObsLinearization {
        f,
        f_x: -y / rho2,
        f_y: x / rho2,
        r: 1.0 / rho2.sqrt(),
    })
}

/// One step of the truth dynamics driven by a pair of unit-normal draws.
pub fn truth_step(state: &ShipState, noise: [f64; 2], p: &ModelParams) -> Result<ShipState> {
    let sd = p.sigma.sqrt();
    let d = Displacement {
        dx: state.dx + sd * noise[0],
        dy: state.dy + sd * noise[1],
    };
    let next = state.advanced(d);
    if next.x == 0.0 && next.y == 0.0 {
        return Err(Error::DegeneratePosition {
            x: next.x,
            y: next.y,
        });
    }
    Ok(next)
}

pub fn observe(state: &ShipState, step: usize, noise: f64, p: &ModelParams) -> Result<Observation> {
    Ok(Observation {
        b: azimuth(state.x, state.y)? + p.s.sqrt() * noise,
        step,
    })
}

/// A synthetic trajectory with its observation record.
///
/// `trajectory[k]` and `observations[k]` belong to step `k + 1`;
/// `motion_noise[k]` holds the unit-normal pair that produced `trajectory[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub trajectory: Vec<ShipState>,
    pub observations: Vec<Observation>,
    pub motion_noise: Vec<[f64; 2]>,
}

/// Runs the ship for `p.n_steps` steps from the initial state. The draws
/// come from the run's `Truth` stream in the order motion x, motion y,
/// observation, step by step.
pub fn generate_truth(p: &ModelParams, seed: &SeedStream) -> Result<Truth> {
    generate_truth_from(p, &mut seed.rng(Domain::Truth, 0, 0))
}

/// [`generate_truth`] with an explicit generator.
pub fn generate_truth_from<R: Rng + ?Sized>(p: &ModelParams, rng: &mut R) -> Result<Truth> {
    p.validate()?;
    let mut trajectory = Vec::with_capacity(p.n_steps);
    let mut observations = Vec::with_capacity(p.n_steps);
    let mut motion_noise = Vec::with_capacity(p.n_steps);
    let mut state = p.initial_state();
    for step in 1..=p.n_steps {
        let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let obs_noise: f64 = rng.sample(StandardNormal);
        state = truth_step(&state, noise, p)?;
        observations.push(observe(&state, step, obs_noise, p)?);
        trajectory.push(state);
        motion_noise.push(noise);
    }
    Ok(Truth {
        trajectory,
        observations,
        motion_noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truth_step_examples() {
        let p = ModelParams::default();
        let s0 = p.initial_state();
        let s1 = truth_step(&s0, [0.0, 0.0], &p).unwrap();
        assert_eq!(s1.x, s0.x + s0.dx);
        assert_eq!(s1.dx, s0.dx);

        let s1 = truth_step(&s0, [1.0, 0.0], &p).unwrap();
        assert!((s1.dx - 0.003).abs() < 1e-15);
        assert!((s1.x - 0.013).abs() < 1e-15);

        let s2 = truth_step(&truth_step(&s0, [0.0, 0.0], &p).unwrap(), [0.0, 0.0], &p).unwrap();
        assert!((s2.x - (p.x0 + 2.0 * p.dx1)).abs() < 1e-15);
    }

    #[test]
    fn truth_step_rejects_origin() {
        let p = ModelParams::default();
        let s = ShipState {
            x: 1.0,
            y: 1.0,
            dx: -1.0,
            dy: -1.0,
        };
        assert!(matches!(
            truth_step(&s, [0.0, 0.0], &p),
            Err(Error::DegeneratePosition { .. })
        ));
    }

    #[test]
    fn azimuth_examples() {
        assert!((azimuth(1.0, 1.0).unwrap() - PI / 4.0).abs() < 1e-15);
        assert!((azimuth(3.0, 4.0).unwrap() - (4.0f64 / 3.0).atan()).abs() < 1e-15);
        assert!((azimuth(3.0, 4.0).unwrap() - 0.927_295_218_001_612_2).abs() < 1e-15);
        assert!((azimuth(0.01, 20.0).unwrap() - 2000.0f64.atan()).abs() < 1e-15);
        assert!((azimuth(0.01, 20.0).unwrap() - 1.570_296_326_836_563_3).abs() < 1e-12);
        assert!(azimuth(0.0, 0.0).is_err());
        // continuous through the y axis
        let left = azimuth(-1e-9, 10.0).unwrap();
        let right = azimuth(1e-9, 10.0).unwrap();
        assert!((left - right).abs() < 1e-9);
    }

    #[test]
    fn linearize_examples() {
        let l = linearize(3.0, 4.0).unwrap();
        assert!((l.f_x + 0.16).abs() < 1e-15);
        assert!((l.f_y - 0.12).abs() < 1e-15);
        assert!((l.r - 0.2).abs() < 1e-15);
        let h = 1e-6;
        let fd_x = (azimuth(3.0 + h, 4.0).unwrap() - azimuth(3.0 - h, 4.0).unwrap()) / (2.0 * h);
        let fd_y = (azimuth(3.0, 4.0 + h).unwrap() - azimuth(3.0, 4.0 - h).unwrap()) / (2.0 * h);
        assert!((fd_x - l.f_x).abs() < 1e-8);
        assert!((fd_y - l.f_y).abs() < 1e-8);

        let l = linearize(1.0, 0.0).unwrap();
        assert_eq!(l.f_x, 0.0);
        assert_eq!(l.f_y, 1.0);

        let l = linearize(0.01, 20.0).unwrap();
        assert!((l.f_x + 20.0 / 400.0001).abs() < 1e-16);
        assert!((l.f_y - 0.01 / 400.0001).abs() < 1e-18);
        assert!((l.r - 1.0 / 400.0001f64.sqrt()).abs() < 1e-16);
        assert!(linearize(0.0, 0.0).is_err());
    }

    #[test]
    fn observe_examples() {
        let p = ModelParams::default();
        let s = p.initial_state();
        let base = 2000.0f64.atan();
        assert_eq!(observe(&s, 1, 0.0, &p).unwrap().b, base);
        assert!((observe(&s, 1, 1.0, &p).unwrap().b - (base + 0.005)).abs() < 1e-15);
        assert!((observe(&s, 1, -2.0, &p).unwrap().b - (base - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_truth_is_a_straight_line() {
        let p = ModelParams {
            sigma: 0.0,
            s: 0.0,
            ..ModelParams::default()
        };
        let t = generate_truth(&p, &SeedStream::new(9)).unwrap();
        assert_eq!(t.trajectory.len(), 160);
        for (k, (st, ob)) in t.trajectory.iter().zip(&t.observations).enumerate() {
            let n = (k + 1) as f64;
            assert!((st.x - (p.x0 + n * p.dx1)).abs() < 1e-12);
            assert!((st.y - (p.y0 + n * p.dy1)).abs() < 1e-12);
            assert_eq!(ob.b, azimuth(st.x, st.y).unwrap());
            assert_eq!(ob.step, k + 1);
        }
    }

    #[test]
    fn truth_is_deterministic_in_seed() {
        let p = ModelParams::default();
        let a = generate_truth(&p, &SeedStream::new(5).for_run(2)).unwrap();
        let b = generate_truth(&p, &SeedStream::new(5).for_run(2)).unwrap();
        assert_eq!(a, b);
        let c = generate_truth(&p, &SeedStream::new(5).for_run(3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(0.5), 0.5);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(theta in 0.05f64..3.09, rho in 0.5f64..50.0) {
            let (x, y) = (rho * theta.cos(), rho * theta.sin());
            let l = linearize(x, y).unwrap();
            let h = 1e-6 * rho;
            let fd_x = (azimuth(x + h, y).unwrap() - azimuth(x - h, y).unwrap()) / (2.0 * h);
            let fd_y = (azimuth(x, y + h).unwrap() - azimuth(x, y - h).unwrap()) / (2.0 * h);
            prop_assert!((fd_x - l.f_x).abs() <= 1e-6 * l.r);
            prop_assert!((fd_y - l.f_y).abs() <= 1e-6 * l.r);
            prop_assert!((l.f_x * x + l.f_y * y).abs() <= 1e-12 * l.r * rho);
            prop_assert!((l.r - l.f_x.hypot(l.f_y)).abs() <= 1e-12 * l.r);
        }

        #[test]
        fn gradient_is_homogeneous_of_degree_minus_one(
            x in 0.1f64..5.0, y in 0.1f64..30.0, dx in -0.1f64..0.1, dy in -0.1f64..0.1, lambda in 0.1f64..10.0
        ) {
            let l1 = linearize(x, y).unwrap();
            let l2 = linearize(lambda * x, lambda * y).unwrap();
            let proj1 = l1.f_x * dx + l1.f_y * dy;
            let proj2 = l2.f_x * lambda * dx + l2.f_y * lambda * dy;
            prop_assert!((proj2 - proj1).abs() <= 1e-12 * (l1.r * (dx.abs() + dy.abs()) + 1e-300));
        }
    }
}
