//! Censored gamma / censored zero-truncated normal mixture predictive
//! distribution for visibility, with its ensemble link functions and
//! estimation by minimizing the mean logarithmic score.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{ensemble_stats, EnsembleStats, ForecastCase};
use crate::distributions::{self, CensoredLaw, DistError, GammaLaw, Law, MixedDensity, TruncNormalLaw};
use crate::numeric::{fsum, mean, population_sd, quantile_sorted};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Log-densities are floored at `ln(1e-12)`.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Observations below one reporting increment (10 m) are raised to it.
pub const MIN_OBS: f64 = 0.01;
/// Link values at or below these bounds make a case infeasible.
pub const MIN_MEAN: f64 = 1e-6;
pub const MIN_VARIANCE: f64 = 1e-8;
pub const MIN_SCALE: f64 = 1e-6;
/// Fits refuse training sets smaller than this.
pub const MIN_TRAINING_CASES: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("infeasible link: mean {mean}, variance {variance}, scale {scale}")]
    InfeasibleLink { mean: f64, variance: f64, scale: f64 },
    #[error("{0} forecast required by the model is missing")]
    MissingMember(&'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has {have} usable cases, at least {need} required")]
    InsufficientData { have: usize, need: usize },
    #[error("every starting point is infeasible (objectives {objectives:?})")]
    NoFeasibleStart { objectives: Vec<f64> },
}

/// Annual base functions `sin(2πd/365)` and `cos(2πd/365)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonalBasis {
    pub b1: f64,
    pub b2: f64,
}

impl SeasonalBasis {
    /// The divisor stays 365 in leap years.
    pub fn new(day_of_year: u32) -> Result<Self, MixtureError> {
        if !(1..=366).contains(&day_of_year) {
            return Err(DistError::Domain { value: f64::from(day_of_year), domain: "day of year 1..=366" }.into());
        }
        let phase = 2.0 * std::f64::consts::PI * f64::from(day_of_year) / 365.0;
        Ok(Self { b1: phase.sin(), b2: phase.cos() })
    }
}

/// Link coefficients. Member coefficients `a1..a3`, `alpha1..alpha3`, `b1`
/// and `beta1` enter squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub gamma_w: f64,
    pub a: [f64; 6],
    pub b: [f64; 2],
    pub alpha: [f64; 6],
    pub beta: [f64; 2],
    pub has_hres: bool,
    pub has_ctrl: bool,
}

impl MixtureParams {
    /// All coefficients zero.
    pub fn zeros(has_hres: bool, has_ctrl: bool) -> Self {
        Self { gamma_w: 0.0, a: [0.0; 6], b: [0.0; 2], alpha: [0.0; 6], beta: [0.0; 2], has_hres, has_ctrl }
    }

    /// Number of coefficients the fit estimates.
    pub fn free_count(&self) -> usize {
        17 - 2 * (usize::from(!self.has_hres) + usize::from(!self.has_ctrl))
    }

    fn member_slots(&self) -> [bool; 6] {
        [true, self.has_hres, self.has_ctrl, true, true, true]
    }

    /// Packs the free coefficients into a vector.
    pub fn to_free(&self) -> Vec<f64> {
        let slots = self.member_slots();
        let mut v = vec![self.gamma_w];
        v.extend(self.a.iter().zip(slots).filter(|(_, s)| *s).map(|(x, _)| *x));
        v.extend_from_slice(&self.b);
        v.extend(self.alpha.iter().zip(slots).filter(|(_, s)| *s).map(|(x, _)| *x));
        v.extend_from_slice(&self.beta);
        v
    }

    /// Inverse of [`Self::to_free`]; coefficients of absent members are 0.
    pub fn from_free(free: &[f64], has_hres: bool, has_ctrl: bool) -> Self {
        let mut p = Self::zeros(has_hres, has_ctrl);
        assert_eq!(free.len(), p.free_count(), "free vector length");
        let slots = p.member_slots();
        let mut it = free.iter().copied();
        p.gamma_w = it.next().unwrap();
        for (a, s) in p.a.iter_mut().zip(slots) {
            if s {
                *a = it.next().unwrap();
            }
        }
        p.b = [it.next().unwrap(), it.next().unwrap()];
        for (al, s) in p.alpha.iter_mut().zip(slots) {
            if s {
                *al = it.next().unwrap();
            }
        }
        p.beta = [it.next().unwrap(), it.next().unwrap()];
        p
    }

    /// Starting point derived from the training observations: both
    /// components centred on the observed mean, each member weight 1.
    pub fn cold_start(cases: &[MixtureCase], has_hres: bool, has_ctrl: bool) -> Self {
        let obs: Vec<f64> = cases.iter().filter_map(|c| c.obs).collect();
        let m = mean(&obs);
        let sd = population_sd(&obs).max(MIN_OBS);
        let mut p = Self::zeros(has_hres, has_ctrl);
        p.a[0] = m;
        p.a[3] = 1.0;
        p.b = [sd * sd, 1.0];
        p.alpha[0] = m;
        p.alpha[3] = 1.0;
        p.beta = [sd, 1.0];
        p
    }

    /// Starting points that split the observations at their median, the
    /// gamma component taking the lower half and the truncated normal the
    /// upper half; one with a flat weight link, one increasing in the
    /// ensemble mean. Depends on the data only through its empirical
    /// distribution, so replicating the training set leaves it unchanged.
    pub fn split_starts(cases: &[MixtureCase], has_hres: bool, has_ctrl: bool) -> Vec<Self> {
        let mut obs: Vec<f64> = cases.iter().filter_map(|c| c.obs).collect();
        obs.sort_by(f64::total_cmp);
        if obs.is_empty() {
            return Vec::new();
        }
        let median = quantile_sorted(&obs, 0.5);
        let (low, high) = obs.split_at(obs.partition_point(|&v| v < median));
        if low.len() < 2 || high.len() < 2 {
            return Vec::new();
        }
        let low_mean = mean(low).max(MIN_OBS);
        let low_sd = population_sd(low).max(MIN_OBS);
        let high_sd = population_sd(high).max(MIN_OBS);
        let mut p = Self::zeros(has_hres, has_ctrl);
        p.a[0] = low_mean;
        p.a[3] = 0.5;
        p.b = [low_sd * low_sd, 0.5];
        p.alpha[0] = mean(high);
        p.alpha[3] = 0.5;
        p.beta = [high_sd, 0.5];
        let mut rising = p;
        rising.gamma_w = 0.1;
        vec![p, rising]
    }
}

/// On-disk form of fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParamsFile {
    pub gamma_w: f64,
    pub a: [f64; 6],
    pub b: [f64; 2],
    pub alpha: [f64; 6],
    pub beta: [f64; 2],
    pub x_max: f64,
    pub has_hres: bool,
    pub has_ctrl: bool,
}

impl MixtureParamsFile {
    pub fn new(p: &MixtureParams, x_max: f64) -> Self {
        Self {
            gamma_w: p.gamma_w,
            a: p.a,
            b: p.b,
            alpha: p.alpha,
            beta: p.beta,
            x_max,
            has_hres: p.has_hres,
            has_ctrl: p.has_ctrl,
        }
    }

    pub fn params(&self) -> MixtureParams {
        MixtureParams {
            gamma_w: self.gamma_w,
            a: self.a,
            b: self.b,
            alpha: self.alpha,
            beta: self.beta,
            has_hres: self.has_hres,
            has_ctrl: self.has_ctrl,
        }
    }
}

/// The per-case predictors of the mixture model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureCase {
    pub stats: EnsembleStats,
    pub basis: SeasonalBasis,
    pub f_hres: Option<f64>,
    pub f_ctrl: Option<f64>,
    pub obs: Option<f64>,
}

impl MixtureCase {
    pub fn new(stats: EnsembleStats, f_hres: Option<f64>, f_ctrl: Option<f64>, obs: Option<f64>) -> Result<Self, MixtureError> {
        Ok(Self { basis: SeasonalBasis::new(stats.day_of_year)?, stats, f_hres, f_ctrl, obs })
    }

    /// `None` when the ensemble forecast is missing.
    pub fn from_forecast(case: &ForecastCase) -> Option<Self> {
        let stats = ensemble_stats(case).ok()?;
        Self::new(stats, case.f_hres, case.f_ctrl, case.obs).ok()
    }

    /// Whether the case carries every member the model uses.
    pub fn has_members(&self, has_hres: bool, has_ctrl: bool) -> bool {
        (!has_hres || self.f_hres.is_some()) && (!has_ctrl || self.f_ctrl.is_some())
    }
}

/// Predictive mixture `(1−ω)·g^c + ω·h^c` for one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixturePredictive {
    pub omega: f64,
    pub gamma_part: CensoredLaw<GammaLaw>,
    pub tnorm_part: CensoredLaw<TruncNormalLaw>,
    pub x_max: f64,
}

/// Evaluates the link functions for one case.
pub fn link(
    params: &MixtureParams,
    stats: &EnsembleStats,
    f_hres: Option<f64>,
    f_ctrl: Option<f64>,
    x_max: f64,
) -> Result<MixturePredictive, MixtureError> {
    let basis = SeasonalBasis::new(stats.day_of_year)?;
    link_with_basis(params, stats, basis, f_hres, f_ctrl, x_max)
}

fn link_with_basis(
    p: &MixtureParams,
    stats: &EnsembleStats,
    basis: SeasonalBasis,
    f_hres: Option<f64>,
    f_ctrl: Option<f64>,
    x_max: f64,
) -> Result<MixturePredictive, MixtureError> {
    let hres = if p.has_hres { f_hres.ok_or(MixtureError::MissingMember("HRES"))? } else { 0.0 };
    let ctrl = if p.has_ctrl { f_ctrl.ok_or(MixtureError::MissingMember("CTRL"))? } else { 0.0 };
    let f_mean = stats.mean_ens;
    let s = stats.sd_ens;
    let linear = |c: &[f64; 6]| {
        c[0] + c[1] * c[1] * hres + c[2] * c[2] * ctrl + c[3] * c[3] * f_mean + c[4] * basis.b1 + c[5] * basis.b2
    };

    let omega = 1.0 / (1.0 + (-p.gamma_w * f_mean).exp());
    let mean = linear(&p.a);
    let variance = p.b[0] + p.b[1] * p.b[1] * s * s;
    let loc = linear(&p.alpha);
    let scale = p.beta[0] + p.beta[1] * p.beta[1] * s;
    if !(mean > MIN_MEAN && variance > MIN_VARIANCE && scale > MIN_SCALE) {
        return Err(MixtureError::InfeasibleLink { mean, variance, scale });
    }
    Ok(MixturePredictive {
        omega,
        gamma_part: CensoredLaw::new(GammaLaw::from_mean_variance(mean, variance)?, x_max)?,
        tnorm_part: CensoredLaw::new(TruncNormalLaw::new(loc, scale)?, x_max)?,
        x_max,
    })
}

impl MixtureCase {
    pub fn predictive(&self, params: &MixtureParams, x_max: f64) -> Result<MixturePredictive, MixtureError> {
        link_with_basis(params, &self.stats, self.basis, self.f_hres, self.f_ctrl, x_max)
    }
}

impl MixturePredictive {
    /// Builds a predictive directly from component parameters.
    pub fn from_components(omega: f64, gamma: GammaLaw, tnorm: TruncNormalLaw, x_max: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(DistError::InvalidParameter { name: "omega", value: omega });
        }
        Ok(Self {
            omega,
            gamma_part: CensoredLaw::new(gamma, x_max)?,
            tnorm_part: CensoredLaw::new(tnorm, x_max)?,
            x_max,
        })
    }

    /// Mixed density: continuous below `x_max`, combined atom at `x_max`.
    pub fn density(&self, x: f64) -> Result<MixedDensity, DistError> {
        let g = self.gamma_part.density(x)?;
        let h = self.tnorm_part.density(x)?;
        let v = (1.0 - self.omega) * g.value() + self.omega * h.value();
        Ok(if g.is_atom() { MixedDensity::Atom(v) } else { MixedDensity::Continuous(v) })
    }

    /// Total probability of the atom at `x_max`.
    pub fn point_mass(&self) -> f64 {
        (1.0 - self.omega) * self.gamma_part.point_mass() + self.omega * self.tnorm_part.point_mass()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.x_max {
            1.0
        } else {
            (1.0 - self.omega) * self.gamma_part.cdf(x) + self.omega * self.tnorm_part.cdf(x)
        }
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        if x > self.x_max {
            1.0
        } else {
            (1.0 - self.omega) * self.gamma_part.cdf_left(x) + self.omega * self.tnorm_part.cdf_left(x)
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        distributions::check_probability(p)?;
        if p >= self.cdf_left(self.x_max) {
            return Ok(self.x_max);
        }
        Ok(distributions::bisect(|x| self.cdf(x), p, 0.0, self.x_max))
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.omega) * self.gamma_part.base().censored_mean(self.x_max)
            + self.omega * self.tnorm_part.base().censored_mean(self.x_max)
    }

    /// One draw: pick a component, then draw from it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.omega {
            self.tnorm_part.draw(rng)
        } else {
            self.gamma_part.draw(rng)
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = distributions::seeded_rng(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// Logarithmic score of an observation: `−ln` of the density (or of
    /// the atom probability at `x_max`), floored at [`DENSITY_FLOOR`].
    /// Observations are first clamped into `[MIN_OBS, x_max]`.
    pub fn log_score(&self, obs: f64) -> f64 {
        let value = if obs >= self.x_max {
            self.point_mass()
        } else {
            let x = obs.max(MIN_OBS);
            (1.0 - self.omega) * self.gamma_part.base().pdf(x) + self.omega * self.tnorm_part.base().pdf(x)
        };
        -value.max(DENSITY_FLOOR).ln()
    }
}

/// Mean logarithmic score of `params` over a training set; `+∞` if any case
/// is infeasible.
pub fn logs_objective(params: &MixtureParams, cases: &[MixtureCase], x_max: f64) -> Result<f64, MixtureError> {
    if cases.is_empty() {
        return Err(MixtureError::EmptyTrainingSet);
    }
    if cases.iter().any(|c| c.obs.is_none()) {
        return Err(MixtureError::MissingMember("observation"));
    }
    Ok(objective_unchecked(params, cases, x_max))
}

const CHUNK: usize = 256;

fn objective_unchecked(params: &MixtureParams, cases: &[MixtureCase], x_max: f64) -> f64 {
    let score = |c: &MixtureCase| match c.predictive(params, x_max) {
        Ok(pred) => pred.log_score(c.obs.unwrap_or(f64::NAN)),
        Err(_) => f64::INFINITY,
    };
    let terms: Vec<f64> = if cases.len() > CHUNK {
        cases.par_iter().with_min_len(CHUNK).map(score).collect()
    } else {
        cases.iter().map(score).collect()
    };
    fsum(terms) / cases.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureFitOptions {
    pub optimizer: NelderMeadOptions,
    pub min_cases: usize,
    /// Additional optimizer runs started from the previous result.
    pub restarts: usize,
}

impl Default for MixtureFitOptions {
    fn default() -> Self {
        Self { optimizer: NelderMeadOptions::default(), min_cases: MIN_TRAINING_CASES, restarts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub params: MixtureParams,
    pub objective: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Estimates the link coefficients by minimizing the mean logarithmic score.
///
/// Cases without an observation, or missing a member the model uses, are
/// skipped. With a warm start, the better of it and the cold start seeds a
/// single simplex run; without one, every data-driven start is optimized and
/// the lowest objective wins.
pub fn fit(
    cases: &[MixtureCase],
    x_max: f64,
    has_hres: bool,
    has_ctrl: bool,
    warm_start: Option<&MixtureParams>,
    options: &MixtureFitOptions,
) -> Result<MixtureFit, MixtureError> {
    let usable: Vec<MixtureCase> =
        cases.iter().filter(|c| c.obs.is_some() && c.has_members(has_hres, has_ctrl)).copied().collect();
    if usable.is_empty() {
        return Err(MixtureError::EmptyTrainingSet);
    }
    if usable.len() < options.min_cases {
        return Err(MixtureError::InsufficientData { have: usable.len(), need: options.min_cases });
    }

    let objective = |free: &[f64]| objective_unchecked(&MixtureParams::from_free(free, has_hres, has_ctrl), &usable, x_max);
    let run_chain = |start: &MixtureParams, value: f64| {
        let mut x = start.to_free();
        let mut value = value;
        let mut evals = 0;
        let mut converged = false;
        for _ in 0..=options.restarts {
            let m = nelder_mead(objective, &x, &options.optimizer);
            evals += m.evals;
            converged = m.converged;
            if m.value <= value {
                x = m.x;
                value = m.value;
            }
        }
        MixtureFit { params: MixtureParams::from_free(&x, has_hres, has_ctrl), objective: value, evals, converged }
    };

    let cold = MixtureParams::cold_start(&usable, has_hres, has_ctrl);
    if let Some(w) = warm_start {
        // Rolling refits: continue from the better of the previous fit and
        // the cold start.
        let warm = MixtureParams::from_free(&w.to_free_for(has_hres, has_ctrl), has_hres, has_ctrl);
        let candidates = [warm, cold];
        let objectives: Vec<f64> = candidates.iter().map(|p| objective_unchecked(p, &usable, x_max)).collect();
        let (i, &v) = objectives.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("two candidates");
        if !v.is_finite() {
            return Err(MixtureError::NoFeasibleStart { objectives });
        }
        return Ok(run_chain(&candidates[i], v));
    }

    // Fresh fits: optimize from every feasible start and keep the best.
    let mut candidates = vec![cold];
    candidates.extend(MixtureParams::split_starts(&usable, has_hres, has_ctrl));
    let objectives: Vec<f64> = candidates.iter().map(|p| objective_unchecked(p, &usable, x_max)).collect();
    let mut best: Option<MixtureFit> = None;
    let mut evals = 0;
    for (start, &v) in candidates.iter().zip(&objectives) {
        if !v.is_finite() {
            continue;
        }
        let run = run_chain(start, v);
        evals += run.evals;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.ok_or(MixtureError::NoFeasibleStart { objectives })?;
    best.evals = evals;
    Ok(best)
}

impl MixtureParams {
    /// Free vector under possibly different member flags than `self`
    /// carries; coefficients of members the target lacks are dropped.
    fn to_free_for(&self, has_hres: bool, has_ctrl: bool) -> Vec<f64> {
        let mut p = *self;
        if !has_hres {
            p.a[1] = 0.0;
            p.alpha[1] = 0.0;
        }
        if !has_ctrl {
            p.a[2] = 0.0;
            p.alpha[2] = 0.0;
        }
        p.has_hres = has_hres;
        p.has_ctrl = has_ctrl;
        p.to_free()
    }
}
