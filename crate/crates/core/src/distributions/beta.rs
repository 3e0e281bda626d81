use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::beta::{beta_reg, ln_beta};

use super::{DistError, Law};

/// Beta law rescaled to the interval `[0, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOnRange {
    alpha: f64,
    beta: f64,
    x_max: f64,
    ln_beta: f64,
}

impl BetaOnRange {
    pub fn new(alpha: f64, beta: f64, x_max: f64) -> Result<Self, DistError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DistError::InvalidParameter { name: "alpha", value: alpha });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(DistError::InvalidParameter { name: "beta", value: beta });
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(DistError::InvalidParameter { name: "x_max", value: x_max });
        }
        Ok(Self { alpha, beta, x_max, ln_beta: ln_beta(alpha, beta) })
    }

    /// Beta law with the given mean and standard deviation on `[0, x_max]`.
    ///
    /// With `r = mean/x_max` and `v = (sd/x_max)²` the shapes are
    /// `α = r(r(1−r)/v − 1)` and `β = (1−r)(r(1−r)/v − 1)`.
    pub fn from_moments(mean: f64, sd: f64, x_max: f64) -> Result<Self, DistError> {
        let infeasible = DistError::InfeasibleMoments { mean, sd, x_max };
        if !(mean > 0.0 && mean < x_max && sd > 0.0) {
            return Err(infeasible);
        }
        let r = mean / x_max;
        let v = (sd / x_max).powi(2);
        let spread = r * (1.0 - r) / v - 1.0;
        if !(spread > 0.0) {
            return Err(infeasible);
        }
        Self::new(r * spread, (1.0 - r) * spread, x_max).map_err(|_| infeasible)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn mean(&self) -> f64 {
        self.x_max * self.alpha / (self.alpha + self.beta)
    }

    pub fn sd(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.x_max * (self.alpha * self.beta).sqrt() / (s * (s + 1.0).sqrt())
    }
}

/// Free-function form of [`BetaOnRange::from_moments`].
pub fn beta_from_moments(mean: f64, sd: f64, x_max: f64) -> Result<BetaOnRange, DistError> {
    BetaOnRange::from_moments(mean, sd, x_max)
}

impl Law for BetaOnRange {
    fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 || x > self.x_max {
            return 0.0;
        }
        self.ln_pdf(x).exp()
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 || x > self.x_max {
            return f64::NEG_INFINITY;
        }
        let u = x / self.x_max;
        let left = if self.alpha == 1.0 { 0.0 } else { (self.alpha - 1.0) * u.ln() };
        let right = if self.beta == 1.0 { 0.0 } else { (self.beta - 1.0) * (1.0 - u).ln() };
        left + right - self.ln_beta - self.x_max.ln()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= self.x_max {
            1.0
        } else {
            beta_reg(self.alpha, self.beta, x / self.x_max)
        }
    }

    fn upper_hint(&self) -> f64 {
        self.x_max
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let unit = Beta::new(self.alpha, self.beta).expect("validated beta parameters").sample(rng);
        unit * self.x_max
    }
}
