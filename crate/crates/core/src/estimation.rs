//! Estimating the motion variance from filter output.
//!
//! If the filter assumes the right `sigma`, the increments of a particle's
//! displacement sequence are uncorrelated and the discriminant
//!
//! ```text
//! D = ((sum u)^2 + (sum v)^2) / (sum u^2 + sum v^2)
//! ```
//!
//! built from the increments `u`, `v` averages to one. Assuming too small a
//! variance makes consecutive increments positively correlated (`D > 1`),
//! too large a variance the opposite.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{run_filter, FilterSettings};
use crate::model::{generate_truth, ModelParams};
use crate::seeding::SeedStream;

/// Window length used by the scan.
pub const DEFAULT_WINDOW: usize = 40;

/// Displacement sequences of one particle, seed displacement excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminantInput {
    pub dx_seq: Vec<f64>,
    pub dy_seq: Vec<f64>,
    /// Number of displacements used; `j - 1` increments enter the sums.
    pub j: usize,
}

/// Discriminant of the first `j` displacements of a sequence.
pub fn discriminant_d(input: &DiscriminantInput) -> Result<f64> {
    let j = input.j;
    if j < 3 || input.dx_seq.len() < j || input.dy_seq.len() < j {
        return Err(Error::InvalidInput(format!(
            "window {j} needs at least 3 and at most {} displacements",
            input.dx_seq.len().min(input.dy_seq.len())
        )));
    }
    let diffs = |s: &[f64]| s[..j].windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
    discriminant_from_increments(&diffs(&input.dx_seq), &diffs(&input.dy_seq))
}

/// Discriminant from the increments directly.
pub fn discriminant_from_increments(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::InvalidInput(
            "increment sequences must be non-empty and of equal length".into(),
        ));
    }
    let (su, sv): (f64, f64) = (u.iter().sum(), v.iter().sum());
    let squares: f64 = u.iter().chain(v).map(|x| x * x).sum();
    if !(squares > 0.0) {
        return Err(Error::UndefinedDiscriminant);
    }
    let d = (su * su + sv * sv) / squares;
    let terms = u.len() as f64;
    assert!(
        (0.0..=terms * (1.0 + 1e-12)).contains(&d),
        "discriminant {d} outside [0, {terms}]"
    );
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaScanRow {
    /// Assumed variance over true variance.
    pub ratio: f64,
    pub mean_d: f64,
    pub se_d: f64,
    /// Successful runs.
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub window: usize,
    pub settings: FilterSettings,
    /// Average `D` over every particle of the final ensemble instead of
    /// taking the history of particle 0.
    pub average_all_particles: bool,
}

impl ScanOptions {
    pub fn new(particles: usize) -> Self {
        Self {
            window: DEFAULT_WINDOW,
            settings: FilterSettings {
                particles,
                ..FilterSettings::default()
            },
            average_all_particles: false,
        }
    }
}

/// Ratios `0.5, 0.6, ..., 1.5, 2.0`.
pub fn default_ratio_grid() -> Vec<f64> {
    (5..=15)
        .map(|i| i as f64 / 10.0)
        .chain(std::iter::once(2.0))
        .collect()
}

/// Mean and standard error of a sample. The standard error is zero for a
/// single value.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fails if more than 1% of runs failed.
pub fn check_failure_budget(failed: usize, runs: usize) -> Result<()> {
    if failed * 100 > runs {
        return Err(Error::FailureBudget { failed, runs });
    }
    Ok(())
}

fn run_discriminant(
    ratio: f64,
    run: u64,
    p: &ModelParams,
    seed: &SeedStream,
    opts: &ScanOptions,
) -> Result<f64> {
    let seed = seed.for_run(run);
    let truth_params = ModelParams {
        n_steps: opts.window,
        ..*p
    };
    let truth = generate_truth(&truth_params, &seed)?;
    let assumed = ModelParams {
        sigma: p.sigma * ratio,
        ..truth_params
    };
    let settings = FilterSettings {
        record_lineage: true,
        ..opts.settings
    };
    let out = run_filter(&truth.observations, &assumed, &settings, &seed)?;
    let lineage = out.lineage.expect("lineage requested");
    let slots = if opts.average_all_particles {
        settings.particles
    } else {
        1
    };
    let mut total = 0.0;
    for slot in 0..slots {
        let h = lineage.history(slot);
        total += discriminant_d(&DiscriminantInput {
            dx_seq: h.iter().map(|d| d.dx).collect(),
            dy_seq: h.iter().map(|d| d.dy).collect(),
            j: opts.window,
        })?;
    }
    Ok(total / slots as f64)
}

/// Mean discriminant per assumed-variance ratio.
///
/// Run `r` uses the same truth and the same filter streams for every ratio,
/// so differences between rows are not blurred by independent noise.
pub fn sigma_scan(
    ratios: &[f64],
    runs: usize,
    p: &ModelParams,
    seed: &SeedStream,
    opts: &ScanOptions,
) -> Result<Vec<SigmaScanRow>> {
    if runs == 0 {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidConfig(format!("ratio {r} must be positive")));
    }
    if opts.window < 3 {
        return Err(Error::InvalidConfig("window must be at least 3".into()));
    }
    p.validate()?;
    ratios
        .iter()
        .map(|&ratio| {
            let results: Vec<Result<f64>> = (0..runs as u64)
                .into_par_iter()
                .map(|run| run_discriminant(ratio, run, p, seed, opts))
                .collect();
            let mut values = Vec::with_capacity(runs);
            let mut failures = 0;
            for r in results {
                match r {
                    Ok(d) => values.push(d),
                    Err(e) if e.is_numerical() => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            check_failure_budget(failures, runs)?;
            let (mean_d, se_d) = mean_and_se(&values);
            Ok(SigmaScanRow {
                ratio,
                mean_d,
                se_d,
                runs: values.len(),
                failures,
            })
        })
        .collect()
}

/// Pool-adjacent-violators fit of a non-increasing sequence (equal weights).
pub fn isotonic_non_increasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count), merged while a later block exceeds an earlier one
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s2 / c2 as f64 > s1 / c1 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s1 + s2, c1 + c2);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Ratio at which the mean discriminant crosses one.
///
/// Rows are sorted by ratio and the means smoothed to a non-increasing
/// sequence, which leaves monotone scans untouched and turns a noisy scan
/// with several crossings into one with a single crossing. The result is
/// the linear interpolation between the bracketing rows.
pub fn estimate_sigma_ratio(scan: &[SigmaScanRow]) -> Result<f64> {
    let mut rows: Vec<(f64, f64)> = scan.iter().map(|r| (r.ratio, r.mean_d)).collect();
    if rows.iter().any(|(r, d)| !r.is_finite() || !d.is_finite()) {
        return Err(Error::InvalidInput("scan rows must be finite".into()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fitted = isotonic_non_increasing(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    for i in 0..rows.len() {
        if fitted[i] == 1.0 {
            return Ok(rows[i].0);
        }
        if i + 1 < rows.len() && fitted[i] > 1.0 && fitted[i + 1] <= 1.0 {
            let t = (fitted[i] - 1.0) / (fitted[i] - fitted[i + 1]);
            return Ok(rows[i].0 + t * (rows[i + 1].0 - rows[i].0));
        }
    }
    Err(Error::NoBracket)
}

/// Ratio at which a weighted least-squares line of `mean_d` against
/// `ln(ratio)` (weights `1 / se_d^2`) reaches one.
///
/// Uses every row instead of the two bracketing ones, so it is steadier
/// when the scan is noisy.
pub fn estimate_sigma_ratio_loglinear(scan: &[SigmaScanRow]) -> Result<f64> {
    if scan.len() < 2 {
        return Err(Error::NoBracket);
    }
    if scan
        .iter()
        .any(|r| !(r.ratio > 0.0) || !r.mean_d.is_finite() || !(r.se_d > 0.0))
    {
        return Err(Error::InvalidInput(
            "log-linear fit needs positive ratios and standard errors".into(),
        ));
    }
    let w: Vec<f64> = scan.iter().map(|r| 1.0 / (r.se_d * r.se_d)).collect();
    let x: Vec<f64> = scan.iter().map(|r| r.ratio.ln()).collect();
    let total: f64 = w.iter().sum();
    let mx = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / total;
    let my = w.iter().zip(scan).map(|(w, r)| w * r.mean_d).sum::<f64>() / total;
    let sxy: f64 = (0..scan.len())
        .map(|i| w[i] * (x[i] - mx) * (scan[i].mean_d - my))
        .sum();
    let sxx: f64 = (0..scan.len()).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::NoBracket);
    }
    Ok((mx + (1.0 - my) / slope).exp())
}

/// Estimated variance: the crossing ratio times the base variance the scan used.
pub fn estimate_sigma(scan: &[SigmaScanRow], base_sigma: f64) -> Result<f64> {
    Ok(estimate_sigma_ratio(scan)? * base_sigma)
}
