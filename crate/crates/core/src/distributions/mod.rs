//! Probability laws used by the predictive models: gamma, zero-truncated
//! normal, their right-censored versions, and the beta law on `[0, x_max]`.

mod beta;
mod censored;
mod gamma;
pub mod special;
mod truncnormal;

pub use beta::{beta_from_moments, BetaOnRange};
pub use censored::CensoredLaw;
pub use gamma::GammaLaw;
pub use truncnormal::TruncNormalLaw;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Absolute tolerance (km) of quantile bisection.
pub const QUANTILE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("value {value} outside of {domain}")]
    Domain { value: f64, domain: &'static str },
    #[error("no beta law on [0, {x_max}] has mean {mean} and sd {sd}")]
    InfeasibleMoments { mean: f64, sd: f64, x_max: f64 },
}

/// Value of a mixed discrete/continuous law at a point: a density below the
/// censoring bound, or the probability of the atom at the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixedDensity {
    Continuous(f64),
    Atom(f64),
}

impl MixedDensity {
    pub fn value(self) -> f64 {
        match self {
            Self::Continuous(v) | Self::Atom(v) => v,
        }
    }

    pub fn is_atom(self) -> bool {
        matches!(self, Self::Atom(_))
    }
}

/// A univariate law on `[0, ∞)`.
pub trait Law {
    fn pdf(&self, x: f64) -> f64;

    fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    fn cdf(&self, x: f64) -> f64;

    /// Survival function `1 − cdf(x)`.
    fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// A point expected to lie far in the upper tail; the quantile search
    /// starts its bracket here.
    fn upper_hint(&self) -> f64;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    fn quantile(&self, p: f64) -> Result<f64, DistError> {
        check_probability(p)?;
        let mut hi = self.upper_hint().max(1.0);
        while self.cdf(hi) < p {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(DistError::Domain { value: p, domain: "reachable quantile levels" });
            }
        }
        Ok(bisect(|x| self.cdf(x), p, 0.0, hi))
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64>
    where
        Self: Sized,
    {
        let mut rng = seeded_rng(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

/// The crate-wide reproducible generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn check_probability(p: f64) -> Result<(), DistError> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DistError::Domain { value: p, domain: "(0, 1)" })
    }
}

/// Smallest `x` in `[lo, hi]` with `cdf(x) ≥ p`, to within [`QUANTILE_TOL`].
pub(crate) fn bisect(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
