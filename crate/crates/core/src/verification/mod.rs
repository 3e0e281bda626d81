//! Forecast verification: proper scores, calibration diagnostics, point
//! errors and stationary-bootstrap confidence intervals.

mod bootstrap;
mod report;
mod scores;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::bma_model::BmaPredictive;
use crate::distributions::DistError;
use crate::mixture_model::MixturePredictive;
use crate::numeric::{mean, quantile_sorted};

pub use bootstrap::{
    default_block_length, stationary_bootstrap, stationary_bootstrap_skill, BlockResampler, BootstrapOptions,
    ConfidenceInterval, DEFAULT_REPLICATES,
};
pub use report::{
    build_report, case_seed, score_series, CaseKey, LeadReport, MethodForecasts, MethodSummary, OverallSummary,
    ReportConfig, ScoreSeries, Stat, ThresholdStat, VerificationReport,
};
pub use scores::{
    brier, central_interval, coverage_and_width, crps, crps_ensemble, crps_monte_carlo, histogram, logs, mae,
    nominal_level, pit, point_errors, rmse, skill_score, verification_rank, McCrps, DEFAULT_MC_SAMPLES,
    DEFAULT_THRESHOLDS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("{score} is not defined for {forecast}")]
    UnsupportedScore { score: &'static str, forecast: &'static str },
    #[error("skill score undefined for reference score {0}")]
    UndefinedSkill(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("empty series")]
    Empty,
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("series of length {have} is shorter than {need}")]
    TooShort { have: usize, need: usize },
    #[error("lead {lead_h} h: method {method} is scored on a different case set")]
    CaseSetMismatch { lead_h: u32, method: String },
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("no observation for {0}")]
    MissingObservation(String),
}

/// A raw or climatological ensemble, kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalEnsemble {
    sorted: Vec<f64>,
}

impl EmpiricalEnsemble {
    pub fn new(mut members: Vec<f64>) -> Result<Self, VerifyError> {
        if members.is_empty() {
            return Err(VerifyError::EmptyEnsemble);
        }
        if let Some(&bad) = members.iter().find(|v| !v.is_finite()) {
            return Err(VerifyError::InvalidParameter { name: "member", value: bad });
        }
        members.sort_by(f64::total_cmp);
        Ok(Self { sorted: members })
    }

    pub fn members(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of members at or below `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&m| m <= x) as f64 / self.len() as f64
    }

    /// Fraction of members strictly below `x`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&m| m < x) as f64 / self.len() as f64
    }

    /// Type-7 sample quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    /// Type-6 quantile: the `j`-th order statistic sits at `j/(K+1)`, so
    /// the nominal `(K−1)/(K+1)` interval is the ensemble range.
    pub fn order_quantile(&self, p: f64) -> f64 {
        let k = self.sorted.len();
        let h = (k + 1) as f64 * p.clamp(0.0, 1.0);
        if h <= 1.0 {
            return self.sorted[0];
        }
        if h >= k as f64 {
            return self.sorted[k - 1];
        }
        let j = h.floor() as usize;
        self.sorted[j - 1] + (h - j as f64) * (self.sorted[j] - self.sorted[j - 1])
    }

    pub fn mean(&self) -> f64 {
        mean(&self.sorted)
    }
}

/// Anything that can be sampled for Monte Carlo scoring.
pub trait Sampleable {
    fn draw_one(&self, rng: &mut dyn RngCore) -> f64;
}

impl Sampleable for MixturePredictive {
    fn draw_one(&self, rng: &mut dyn RngCore) -> f64 {
        self.draw(rng)
    }
}

impl Sampleable for BmaPredictive {
    fn draw_one(&self, rng: &mut dyn RngCore) -> f64 {
        self.draw(rng)
    }
}

impl Sampleable for EmpiricalEnsemble {
    fn draw_one(&self, rng: &mut dyn RngCore) -> f64 {
        self.sorted[rng.random_range(0..self.sorted.len())]
    }
}

/// A forecast in any of the verified forms.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbForecast {
    Mixture(MixturePredictive),
    Bma(BmaPredictive),
    Ensemble(EmpiricalEnsemble),
}

impl ProbForecast {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Mixture(_) => "mixture predictive",
            Self::Bma(_) => "BMA predictive",
            Self::Ensemble(_) => "empirical ensemble",
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Mixture(m) => m.cdf(x),
            Self::Bma(b) => b.cdf(x),
            Self::Ensemble(e) => e.cdf(x),
        }
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Self::Mixture(m) => m.cdf_left(x),
            Self::Bma(b) => b.cdf_left(x),
            Self::Ensemble(e) => e.cdf_left(x),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, VerifyError> {
        Ok(match self {
            Self::Mixture(m) => m.quantile(p)?,
            Self::Bma(b) => b.quantile(p)?,
            Self::Ensemble(e) => e.quantile(p),
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Mixture(m) => m.mean(),
            Self::Bma(b) => b.mean(),
            Self::Ensemble(e) => e.mean(),
        }
    }

    pub fn median(&self) -> Result<f64, VerifyError> {
        self.quantile(0.5)
    }

    pub fn ensemble(&self) -> Option<&EmpiricalEnsemble> {
        match self {
            Self::Ensemble(e) => Some(e),
            _ => None,
        }
    }
}

impl Sampleable for ProbForecast {
    fn draw_one(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            Self::Mixture(m) => m.draw(rng),
            Self::Bma(b) => b.draw(rng),
            Self::Ensemble(e) => e.draw_one(rng),
        }
    }
}
