//! Randomized invariant checks that can run from the command line.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bridge::{bridge_iterate, quadratic_form_gap, BridgeSpec, IterationConfig};
use crate::error::Result;
use crate::gaussian::Gaussian1D;
use crate::seeding::{Domain, SeedStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Worst log-space error of the product identity over `trials` random merges
/// evaluated at 100 points each.
pub fn gaussian_product_check(seed: &SeedStream, trials: usize) -> Result<f64> {
    let mut rng = seed.rng(Domain::SelfTest, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = Gaussian1D::new(rng.random_range(-10.0..10.0), rng.random_range(0.1..10.0))?;
        let b = Gaussian1D::new(rng.random_range(-10.0..10.0), rng.random_range(0.1..10.0))?;
        let m = a.merge(&b);
        for _ in 0..100 {
            let x = rng.random_range(-20.0..20.0);
            let lhs = a.log_density_unnormalized(x) + b.log_density_unnormalized(x);
            let rhs = m.merged.log_density_unnormalized(x) - m.phase;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// The three drifts used by the bridge checks: zero, linear restoring, sine.
pub fn test_drifts(end: f64) -> Result<Vec<(&'static str, BridgeSpec)>> {
    Ok(vec![
        ("zero", BridgeSpec::brownian(1.0, 1.0, 4, 0.0, end)?),
        (
            "linear",
            BridgeSpec::new(|x, _| -x, |_, _| -1.0, 1.0, 1.0, 4, 0.0, end)?,
        ),
        (
            "sine",
            BridgeSpec::new(|x, _| x.sin(), |x, _| x.cos(), 1.0, 1.0, 4, 0.0, end)?,
        ),
    ])
}

/// Worst relative gap of the bridge quadratic-form identity over `draws`
/// reference vectors per drift.
pub fn bridge_identity_check(seed: &SeedStream, draws: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for (k, (_, spec)) in test_drifts(1.0)?.into_iter().enumerate() {
        for i in 0..draws {
            let mut rng = seed.rng(Domain::SelfTest, 1 + k as u64, i as u64);
            let xi: Vec<f64> = (0..spec.steps() - 1)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let sample = bridge_iterate(&spec, &xi, &IterationConfig::default())?;
            worst = worst.max(quadratic_form_gap(&spec, &sample, &xi)?);
        }
    }
    Ok(worst)
}

pub fn run_all(seed: &SeedStream) -> Result<Vec<Check>> {
    let g = gaussian_product_check(seed, 10_000)?;
    let b = bridge_identity_check(seed, 100)?;
    Ok(vec![
        Check {
            name: "gaussian product identity",
            passed: g < 1e-10,
            detail: format!("max error {g:.3e}"),
        },
        Check {
            name: "bridge quadratic-form identity",
            passed: b < 1e-8,
            detail: format!("max error {b:.3e}"),
        },
    ])
}
