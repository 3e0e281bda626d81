use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::distributions::seeded_rng;
use crate::numeric::{fsum, quantile_sorted};

pub const DEFAULT_REPLICATES: usize = 2000;
const MIN_SERIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// Mean block length; `None` uses `ceil(n^(1/3))`.
    pub mean_block_len: Option<f64>,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { replicates: DEFAULT_REPLICATES, mean_block_len: None, seed: 0, level: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
}

pub fn default_block_length(n: usize) -> f64 {
    (n as f64).cbrt().ceil()
}

/// Block layouts of every replicate. Circular blocks `(start, len)` with
/// geometric lengths; several series resampled with one resampler share
/// the same blocks.
#[derive(Debug, Clone)]
pub struct BlockResampler {
    n: usize,
    replicates: Vec<Vec<(usize, usize)>>,
    level: f64,
}

impl BlockResampler {
    pub fn new(n: usize, options: &BootstrapOptions) -> Result<Self, VerifyError> {
        if n < MIN_SERIES {
            return Err(VerifyError::TooShort { have: n, need: MIN_SERIES });
        }
        let mean_len = options.mean_block_len.unwrap_or_else(|| default_block_length(n));
        if !(mean_len >= 1.0 && mean_len.is_finite()) {
            return Err(VerifyError::InvalidParameter { name: "mean_block_len", value: mean_len });
        }
        if options.replicates == 0 {
            return Err(VerifyError::InvalidParameter { name: "replicates", value: 0.0 });
        }
        if !(options.level > 0.0 && options.level < 1.0) {
            return Err(VerifyError::InvalidParameter { name: "level", value: options.level });
        }
        let geometric = Geometric::new(1.0 / mean_len)
            .map_err(|_| VerifyError::InvalidParameter { name: "mean_block_len", value: mean_len })?;
        let mut rng = seeded_rng(options.seed);
        let replicates = (0..options.replicates)
            .map(|_| {
                let mut blocks = Vec::new();
                let mut filled = 0;
                while filled < n {
                    let start = rng.random_range(0..n);
                    let len = (1 + geometric.sample(&mut rng) as usize).min(n - filled);
                    blocks.push((start, len));
                    filled += len;
                }
                blocks
            })
            .collect();
        Ok(Self { n, replicates, level: options.level })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Replicate sums of `series` via circular prefix sums.
    fn replicate_sums(&self, series: &[f64]) -> Result<Vec<f64>, VerifyError> {
        if series.len() != self.n {
            return Err(VerifyError::LengthMismatch { left: series.len(), right: self.n });
        }
        let mut prefix = Vec::with_capacity(2 * self.n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &v in series.iter().chain(series) {
            // Kahan summation keeps block sums accurate.
            let y = v - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
            prefix.push(acc);
        }
        Ok(self
            .replicates
            .iter()
            .map(|blocks| fsum(blocks.iter().map(|&(s, l)| prefix[s + l] - prefix[s])))
            .collect())
    }

    fn percentile(&self, mut stats: Vec<f64>) -> ConfidenceInterval {
        stats.sort_by(f64::total_cmp);
        let tail = (1.0 - self.level) / 2.0;
        ConfidenceInterval { lo: quantile_sorted(&stats, tail), hi: quantile_sorted(&stats, 1.0 - tail) }
    }

    /// Percentile interval of the mean.
    pub fn mean_ci(&self, series: &[f64]) -> Result<ConfidenceInterval, VerifyError> {
        let n = self.n as f64;
        Ok(self.percentile(self.replicate_sums(series)?.into_iter().map(|s| s / n).collect()))
    }

    /// Percentile interval of `1 − mean(scores)/mean(reference)`, with both
    /// series resampled on the same blocks.
    pub fn skill_ci(&self, scores: &[f64], reference: &[f64]) -> Result<ConfidenceInterval, VerifyError> {
        let a = self.replicate_sums(scores)?;
        let b = self.replicate_sums(reference)?;
        Ok(self.percentile(a.iter().zip(&b).map(|(x, y)| 1.0 - x / y).collect()))
    }
}

/// Stationary-bootstrap percentile interval for the mean of a time-ordered
/// series.
pub fn stationary_bootstrap(series: &[f64], options: &BootstrapOptions) -> Result<ConfidenceInterval, VerifyError> {
    BlockResampler::new(series.len(), options)?.mean_ci(series)
}

/// Stationary-bootstrap interval for a skill score.
pub fn stationary_bootstrap_skill(
    scores: &[f64],
    reference: &[f64],
    options: &BootstrapOptions,
) -> Result<ConfidenceInterval, VerifyError> {
    if scores.len() != reference.len() {
        return Err(VerifyError::LengthMismatch { left: scores.len(), right: reference.len() });
    }
    BlockResampler::new(scores.len(), options)?.skill_ci(scores, reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_zero_width() {
        let series = vec![0.37; 200];
        let ci = stationary_bootstrap(&series, &BootstrapOptions::default()).unwrap();
        assert!((ci.hi - ci.lo).abs() < 1e-12);
        assert!((ci.lo - 0.37).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let s = vec![1.0; 20];
        let bad = BootstrapOptions { mean_block_len: Some(0.5), ..Default::default() };
        assert!(matches!(stationary_bootstrap(&s, &bad), Err(VerifyError::InvalidParameter { .. })));
        assert!(matches!(stationary_bootstrap(&s[..9], &Default::default()), Err(VerifyError::TooShort { .. })));
    }

    #[test]
    fn blocks_cover_series_length() {
        let r = BlockResampler::new(50, &BootstrapOptions { replicates: 100, mean_block_len: Some(4.0), ..Default::default() }).unwrap();
        assert!(r.replicates.iter().all(|b| b.iter().map(|x| x.1).sum::<usize>() == 50));
        let mean_len = r.replicates.iter().flatten().filter(|b| b.0 < 50).map(|b| b.1 as f64).sum::<f64>()
            / r.replicates.iter().map(Vec::len).sum::<usize>() as f64;
        // Truncation at the series end shortens the mean slightly.
        assert!(mean_len > 3.3 && mean_len < 4.3, "{mean_len}");
    }

    #[test]
    fn identical_series_give_zero_skill() {
        let s: Vec<f64> = (0..40).map(|i| 1.0 + (i % 7) as f64).collect();
        let ci = stationary_bootstrap_skill(&s, &s, &BootstrapOptions::default()).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.0, 0.0));
    }
}
