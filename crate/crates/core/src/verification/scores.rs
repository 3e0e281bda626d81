use rand::{Rng, RngCore};

use super::{EmpiricalEnsemble, ProbForecast, Sampleable, VerifyError};
use crate::distributions::seeded_rng;
use crate::numeric::{fsum, sample_sd};

pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_THRESHOLDS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

/// `Σ_i (2i − K − 1)·x_(i)` over sorted values, i.e. `½ΣΣ|x_i − x_j|`.
fn gini_sum(sorted: &[f64]) -> f64 {
    let k = sorted.len() as f64;
    fsum(sorted.iter().enumerate().map(|(i, &v)| (2.0 * (i as f64 + 1.0) - k - 1.0) * v))
}

/// Exact CRPS of an ensemble: `mean|X_i − x| − (1/2K²)ΣΣ|X_i − X_j|`.
pub fn crps_ensemble(ensemble: &EmpiricalEnsemble, x: f64) -> f64 {
    let m = ensemble.members();
    let k = m.len() as f64;
    let first = fsum(m.iter().map(|v| (v - x).abs())) / k;
    (first - gini_sum(m) / (k * k)).max(0.0)
}

/// Monte Carlo CRPS estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCrps {
    pub value: f64,
    pub std_error: f64,
}

/// Unbiased Monte Carlo CRPS from `n` draws: the mean of `|X_i − x|` minus
/// half the U-statistic of `|X_i − X_j|`. The standard error comes from the
/// per-draw influence terms `|X_i − x| − mean_j|X_i − X_j|`.
pub fn crps_monte_carlo<F: Sampleable + ?Sized>(forecast: &F, x: f64, n: usize, seed: u64) -> Result<McCrps, VerifyError> {
    if n < 2 {
        return Err(VerifyError::InvalidParameter { name: "mc_samples", value: n as f64 });
    }
    let mut rng = seeded_rng(seed);
    let mut draws: Vec<f64> = (0..n).map(|_| forecast.draw_one(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let nf = n as f64;
    let first = fsum(draws.iter().map(|v| (v - x).abs())) / nf;
    let pair_mean = 2.0 * gini_sum(&draws) / (nf * (nf - 1.0));
    let value = first - 0.5 * pair_mean;

    // mean_j |X_(i) − X_j| from prefix sums of the sorted draws.
    let total = fsum(draws.iter().copied());
    let mut prefix = 0.0;
    let influence: Vec<f64> = draws
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let below = i as f64 * v - prefix;
            let above = (total - prefix - v) - (nf - i as f64 - 1.0) * v;
            prefix += v;
            (v - x).abs() - (below + above) / (nf - 1.0)
        })
        .collect();
    Ok(McCrps { value, std_error: sample_sd(&influence) / nf.sqrt() })
}

/// CRPS: exact for ensembles, Monte Carlo with `mc_samples` draws otherwise.
pub fn crps(forecast: &ProbForecast, x: f64, mc_samples: usize, seed: u64) -> Result<f64, VerifyError> {
    if !x.is_finite() {
        return Err(VerifyError::InvalidParameter { name: "observation", value: x });
    }
    match forecast {
        ProbForecast::Ensemble(e) => Ok(crps_ensemble(e, x)),
        other => Ok(crps_monte_carlo(other, x, mc_samples, seed)?.value.max(0.0)),
    }
}

/// Logarithmic score; only defined for forecasts with a density.
pub fn logs(forecast: &ProbForecast, x: f64) -> Result<f64, VerifyError> {
    match forecast {
        ProbForecast::Mixture(m) => Ok(m.log_score(x)),
        ProbForecast::Bma(b) => Ok(b.log_score(x)),
        ProbForecast::Ensemble(_) => Err(VerifyError::UnsupportedScore { score: "LogS", forecast: "empirical ensemble" }),
    }
}

/// Brier score for the event `X ≤ y`.
pub fn brier(forecast: &ProbForecast, x: f64, y: f64) -> f64 {
    let event = if x <= y { 1.0 } else { 0.0 };
    (forecast.cdf(y) - event).powi(2)
}

pub fn skill_score(mean_score: f64, mean_score_ref: f64) -> Result<f64, VerifyError> {
    if !(mean_score_ref > 0.0) {
        return Err(VerifyError::UndefinedSkill(mean_score_ref));
    }
    Ok(1.0 - mean_score / mean_score_ref)
}

/// Nominal coverage `(K − 1)/(K + 1)` of a `K`-member ensemble's range.
pub fn nominal_level(k: usize) -> f64 {
    (k as f64 - 1.0) / (k as f64 + 1.0)
}

/// Central prediction interval between the `α/2` and `1 − α/2` quantiles;
/// ensembles use order-statistic (type-6) quantiles.
pub fn central_interval(forecast: &ProbForecast, level: f64) -> Result<(f64, f64), VerifyError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(VerifyError::InvalidParameter { name: "level", value: level });
    }
    let alpha = 1.0 - level;
    if let ProbForecast::Ensemble(e) = forecast {
        return Ok((e.order_quantile(alpha / 2.0), e.order_quantile(1.0 - alpha / 2.0)));
    }
    Ok((forecast.quantile(alpha / 2.0)?, forecast.quantile(1.0 - alpha / 2.0)?))
}

/// Percentage of observations inside their interval and the mean width.
pub fn coverage_and_width(intervals: &[(f64, f64)], observations: &[f64]) -> Result<(f64, f64), VerifyError> {
    if intervals.len() != observations.len() {
        return Err(VerifyError::LengthMismatch { left: intervals.len(), right: observations.len() });
    }
    if intervals.is_empty() {
        return Err(VerifyError::Empty);
    }
    let n = intervals.len() as f64;
    let inside = intervals.iter().zip(observations).filter(|((lo, hi), x)| lo <= *x && *x <= hi).count();
    let width = fsum(intervals.iter().map(|(lo, hi)| hi - lo)) / n;
    Ok((100.0 * inside as f64 / n, width))
}

/// Probability integral transform, randomized uniformly over any jump of
/// the cdf at `x`.
pub fn pit<R: RngCore + ?Sized>(forecast: &ProbForecast, x: f64, rng: &mut R) -> f64 {
    let hi = forecast.cdf(x);
    let lo = forecast.cdf_left(x);
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        hi
    }
}

/// Counts of values in `bins` equal-width bins on `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

/// Rank of `x` among the members in `1..=K+1`, ties broken at random.
pub fn verification_rank<R: RngCore + ?Sized>(ensemble: &EmpiricalEnsemble, x: f64, rng: &mut R) -> usize {
    let m = ensemble.members();
    let below = m.partition_point(|&v| v < x);
    let ties = m.partition_point(|&v| v <= x) - below;
    below + 1 + if ties > 0 { rng.random_range(0..=ties) } else { 0 }
}

pub fn rmse(forecasts: &[f64], observations: &[f64]) -> Result<f64, VerifyError> {
    check_pairs(forecasts, observations)?;
    Ok((fsum(forecasts.iter().zip(observations).map(|(f, x)| (f - x).powi(2))) / forecasts.len() as f64).sqrt())
}

pub fn mae(forecasts: &[f64], observations: &[f64]) -> Result<f64, VerifyError> {
    check_pairs(forecasts, observations)?;
    Ok(fsum(forecasts.iter().zip(observations).map(|(f, x)| (f - x).abs())) / forecasts.len() as f64)
}

/// `(RMSE, MAE)` of one point-forecast series.
pub fn point_errors(forecasts: &[f64], observations: &[f64]) -> Result<(f64, f64), VerifyError> {
    Ok((rmse(forecasts, observations)?, mae(forecasts, observations)?))
}

fn check_pairs(a: &[f64], b: &[f64]) -> Result<(), VerifyError> {
    if a.len() != b.len() {
        return Err(VerifyError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(VerifyError::Empty);
    }
    Ok(())
}
