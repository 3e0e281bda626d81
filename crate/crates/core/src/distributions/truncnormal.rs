use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::special::{ln_norm_cdf, norm_cdf, norm_pdf, LN_SQRT_2PI};
use super::{DistError, Law};

/// Normal law with location `loc` and scale `scale`, left truncated at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalLaw {
    loc: f64,
    scale: f64,
    /// `ln(1 − Φ(−μ/σ)) = ln Φ(μ/σ)`.
    ln_norm: f64,
}

impl TruncNormalLaw {
    pub fn new(loc: f64, scale: f64) -> Result<Self, DistError> {
        if !loc.is_finite() {
            return Err(DistError::InvalidParameter { name: "loc", value: loc });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DistError::InvalidParameter { name: "scale", value: scale });
        }
        Ok(Self { loc, scale, ln_norm: ln_norm_cdf(loc / scale) })
    }

    pub fn loc(&self) -> f64 {
        self.loc
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Mass retained after truncation, `1 − Φ(−μ/σ)`.
    pub fn normalizer(&self) -> f64 {
        self.ln_norm.exp()
    }

    /// `E[min(X, bound)]` for `bound ≥ 0`.
    pub fn censored_mean(&self, bound: f64) -> f64 {
        let a = -self.loc / self.scale;
        let b = (bound - self.loc) / self.scale;
        let z = self.normalizer();
        let body = self.loc * (norm_cdf(b) - norm_cdf(a)) + self.scale * (norm_pdf(a) - norm_pdf(b));
        body / z + bound * self.sf(bound)
    }
}

impl Law for TruncNormalLaw {
    fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.ln_pdf(x).exp()
        }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.loc) / self.scale;
        -0.5 * z * z - LN_SQRT_2PI - self.scale.ln() - self.ln_norm
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        if self.loc >= 0.0 {
            let lower = norm_cdf(-self.loc / self.scale);
            let upper = norm_cdf((x - self.loc) / self.scale);
            ((upper - lower) / self.normalizer()).clamp(0.0, 1.0)
        } else {
            1.0 - self.sf(x)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x == f64::INFINITY {
            return 0.0;
        }
        (ln_norm_cdf((self.loc - x) / self.scale) - self.ln_norm).exp().min(1.0)
    }

    fn upper_hint(&self) -> f64 {
        self.loc.max(0.0) + 10.0 * self.scale
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lower = -self.loc / self.scale;
        let z = if lower < 0.3 {
            loop {
                let z: f64 = rng.sample(StandardNormal);
                if z >= lower {
                    break z;
                }
            }
        } else {
            // Exponential proposal for the standardized tail beyond `lower`.
            let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
            let exp = Exp::new(rate).expect("positive rate");
            loop {
                let z = lower + exp.sample(rng);
                let accept = (-0.5 * (z - rate) * (z - rate)).exp();
                if rng.random::<f64>() <= accept {
                    break z;
                }
            }
        };
        (self.loc + self.scale * z).max(0.0)
    }
}
