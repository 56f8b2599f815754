//! Evaluation metrics for the prediction competition: MAE, RMSE, Gaussian
//! CRPS, interval score, empirical coverage, and the interval-to-standard-
//! error conversion used when a method reports intervals only.
//!
//! Aggregations use pairwise summation so scores are bit-reproducible no
//! matter how the per-point work was scheduled.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// 97.5% standard-normal quantile, full precision; used to form 95% intervals.
pub const Z_975: f64 = 1.959963984540054;

/// The same quantile fixed to seven significant digits, as used in the
/// interval-to-standard-error rule.
pub const Z_975_SCORING: f64 = 1.9599640;

/// One row of the competition score table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub interval_score: f64,
    pub coverage: f64,
    pub run_time_min: f64,
    pub cores_used: usize,
}

/// Pairwise (cascade) summation; deterministic and accurate for long sums.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    let abs: Vec<f64> = truth.iter().zip(pred).map(|(y, p)| (y - p).abs()).collect();
    Ok(pairwise_sum(&abs) / abs.len() as f64)
}

/// Root mean squared error.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    let sq: Vec<f64> = truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).collect();
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Continuous ranked probability score of a Gaussian predictive distribution,
/// in closed form. Degenerates to the absolute error at `sigma = 0`.
pub fn crps_gaussian(y: f64, mu: f64, sigma: f64) -> f64 {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return (y - mu).abs();
    }
    let z = (y - mu) / sigma;
    sigma
        * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z)
            - 1.0 / std::f64::consts::PI.sqrt())
}

/// Interval score of a central (1 - alpha) interval `[l, u]`.
pub fn interval_score(l: f64, u: f64, y: f64, alpha: f64) -> Result<f64> {
    if l > u {
        return Err(Error::InvalidInterval { lower: l, upper: u });
    }
    let mut s = u - l;
    if y < l {
        s += 2.0 / alpha * (l - y);
    } else if y > u {
        s += 2.0 / alpha * (y - u);
    }
    Ok(s)
}

/// Fraction of intervals containing the truth, endpoints inclusive.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(lower.len(), upper.len())?;
    check_lengths(lower.len(), truth.len())?;
    let hits: Vec<f64> = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(y, (l, u))| if l <= y && y <= u { 1.0 } else { 0.0 })
        .collect();
    Ok(pairwise_sum(&hits) / hits.len() as f64)
}

/// Standard error recovered from a 95% interval: `(u - l) / (2 * 1.9599640)`.
pub fn se_from_interval(l: f64, u: f64) -> f64 {
    debug_assert!(u >= l);
    (u - l) / (2.0 * Z_975_SCORING)
}

/// Score a full prediction set against the sequestered truth.
pub fn score_predictions(
    method: &str,
    truth: &[f64],
    means: &[f64],
    ses: &[f64],
    lowers: &[f64],
    uppers: &[f64],
    run_time_min: f64,
    cores_used: usize,
) -> Result<ScoreReport> {
    check_lengths(truth.len(), means.len())?;
    check_lengths(truth.len(), ses.len())?;
    let crps_each: Vec<f64> = truth
        .iter()
        .zip(means.iter().zip(ses))
        .map(|(&y, (&m, &s))| crps_gaussian(y, m, s))
        .collect();
    let int_each: Vec<f64> = truth
        .iter()
        .zip(lowers.iter().zip(uppers))
        .map(|(&y, (&l, &u))| interval_score(l, u, y, 0.05))
        .collect::<Result<_>>()?;
    Ok(ScoreReport {
        method: method.to_string(),
        mae: mae(truth, means)?,
        rmse: rmse(truth, means)?,
        crps: pairwise_sum(&crps_each) / crps_each.len() as f64,
        interval_score: pairwise_sum(&int_each) / int_each.len() as f64,
        coverage: coverage(lowers, uppers, truth)?,
        run_time_min,
        cores_used,
    })
}
