use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::{DistError, Law};

/// Gamma law with shape `shape` and scale `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLaw {
    shape: f64,
    scale: f64,
}

impl GammaLaw {
    pub fn new(shape: f64, scale: f64) -> Result<Self, DistError> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(DistError::InvalidParameter { name: "shape", value: shape });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DistError::InvalidParameter { name: "scale", value: scale });
        }
        Ok(Self { shape, scale })
    }

    /// Gamma law with the given mean and variance (`κ = m²/v`, `θ = v/m`).
    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self, DistError> {
        Self::new(mean * mean / variance, variance / mean)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    /// `E[min(X, bound)]`.
    pub fn censored_mean(&self, bound: f64) -> f64 {
        let partial = Self { shape: self.shape + 1.0, scale: self.scale };
        self.mean() * partial.cdf(bound) + bound * self.sf(bound)
    }
}

impl Law for GammaLaw {
    fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return match self.shape.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => 1.0 / self.scale,
                _ => 0.0,
            };
        }
        self.ln_pdf(x).exp()
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return self.pdf(0.0).ln();
        }
        (self.shape - 1.0) * x.ln() - x / self.scale - ln_gamma(self.shape) - self.shape * self.scale.ln()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x == f64::INFINITY {
            1.0
        } else {
            gamma_lr(self.shape, x / self.scale)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else if x == f64::INFINITY {
            0.0
        } else {
            gamma_ur(self.shape, x / self.scale)
        }
    }

    fn upper_hint(&self) -> f64 {
        self.mean() + 10.0 * self.shape.sqrt() * self.scale
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters were validated in `new`.
        Gamma::new(self.shape, self.scale).expect("validated gamma parameters").sample(rng)
    }
}
