use rand::Rng;

use super::{DistError, Law, MixedDensity};

/// A law on `[0, ∞)` right-censored at `x_max`: the mass beyond `x_max`
/// collapses into an atom at `x_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredLaw<L> {
    base: L,
    x_max: f64,
}

impl<L: Law> CensoredLaw<L> {
    pub fn new(base: L, x_max: f64) -> Result<Self, DistError> {
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(DistError::InvalidParameter { name: "x_max", value: x_max });
        }
        Ok(Self { base, x_max })
    }

    pub fn base(&self) -> &L {
        &self.base
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Probability of the atom at `x_max`, `1 − F_base(x_max)`.
    pub fn point_mass(&self) -> f64 {
        self.base.sf(self.x_max)
    }

    /// Base density below `x_max`, the atom probability at `x_max`.
    pub fn density(&self, x: f64) -> Result<MixedDensity, DistError> {
        if !(0.0..=self.x_max).contains(&x) {
            return Err(DistError::Domain { value: x, domain: "[0, x_max]" });
        }
        if x == self.x_max {
            Ok(MixedDensity::Atom(self.point_mass()))
        } else {
            Ok(MixedDensity::Continuous(self.base.pdf(x)))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.x_max {
            1.0
        } else {
            self.base.cdf(x)
        }
    }

    /// Left limit `F(x⁻)`; differs from [`Self::cdf`] only at `x_max`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x > self.x_max {
            1.0
        } else {
            self.base.cdf(x)
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        super::check_probability(p)?;
        if p >= self.base.cdf(self.x_max) {
            return Ok(self.x_max);
        }
        Ok(super::bisect(|x| self.base.cdf(x), p, 0.0, self.x_max))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.base.draw(rng).min(self.x_max)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = super::seeded_rng(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}
