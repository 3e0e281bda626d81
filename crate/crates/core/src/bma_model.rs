//! Bayesian model averaging reference model: each member contributes a
//! point mass at `x_max` (logistic in `√f`) and a beta law on `[0, x_max]`
//! whose mean and sd are linear in `√f`. Weights and the shared sd
//! coefficients are estimated by EM; the 50 exchangeable members share one
//! parameter set.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{ForecastCase, ENS_SIZE};
use crate::distributions::{self, BetaOnRange, DistError, Law, MixedDensity};
use crate::mixture_model::{DENSITY_FLOOR, MIN_OBS};
use crate::numeric::{fsum, mean, sample_sd};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Bound on `|π0 + π1·√f|` over the training range.
pub const LOGIT_CLIP: f64 = 15.0;
/// Beta means are kept this far from the ends of `[0, x_max]`.
pub const MEAN_MARGIN: f64 = 0.5;
/// Floor for the beta sd link (km).
pub const MIN_SD: f64 = 0.1;
/// Fraction of the largest feasible beta sd that the sd link may reach.
pub const SD_FEASIBLE_FRACTION: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BmaError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("regression needs at least {need} pairs, got {have}")]
    TooFewPairs { have: usize, need: usize },
    #[error("no usable training cases")]
    EmptyTrainingSet,
    #[error("no sub-fit for member group {0:?}")]
    MissingSubfit(MemberGroup),
    #[error("log-likelihood is not finite at initialization")]
    NonFiniteLikelihood,
    #[error("case has no forecast members")]
    NoMembers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MemberGroup {
    Hres,
    Ctrl,
    Ens,
}

impl MemberGroup {
    /// Members per group sharing one parameter set.
    pub fn multiplicity(self) -> usize {
        match self {
            Self::Hres | Self::Ctrl => 1,
            Self::Ens => ENS_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmaGroupParams {
    pub pi0: f64,
    pub pi1: f64,
    pub rho0: f64,
    pub rho1: f64,
    /// Weight of one member of the group.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaParams {
    pub groups: BTreeMap<MemberGroup, BmaGroupParams>,
    pub c0: f64,
    pub c1: f64,
    pub x_max: f64,
}

impl BmaParams {
    /// Sum of member weights, ENS counted once per member.
    pub fn effective_weight_sum(&self) -> f64 {
        fsum(self.groups.iter().map(|(g, p)| p.weight * g.multiplicity() as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitFit {
    pub pi0: f64,
    pub pi1: f64,
    /// Standard errors from the inverse observed information (NaN when the
    /// fit is degenerate or separated).
    pub se0: f64,
    pub se1: f64,
    pub separated: bool,
    pub iterations: usize,
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logistic regression of `is_max` on `√f` by damped Newton iterations.
pub fn fit_logit(pairs: &[(f64, bool)]) -> Result<LogitFit, BmaError> {
    if pairs.is_empty() {
        return Err(BmaError::TooFewPairs { have: 0, need: 1 });
    }
    let n = pairs.len() as f64;
    let xs: Vec<(f64, f64)> = pairs.iter().map(|&(f, y)| (f.max(0.0).sqrt(), if y { 1.0 } else { 0.0 })).collect();
    let positives = pairs.iter().filter(|p| p.1).count() as f64;
    let s_min = xs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let s_max = xs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);

    let degenerate = || LogitFit {
        pi0: logit((positives + 1.0) / (n + 2.0)),
        pi1: 0.0,
        se0: f64::NAN,
        se1: f64::NAN,
        separated: false,
        iterations: 0,
    };
    if positives == 0.0 || positives == n || s_max - s_min <= 0.0 {
        return Ok(degenerate());
    }

    let max_pos = xs.iter().filter(|p| p.1 == 1.0).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_pos = xs.iter().filter(|p| p.1 == 1.0).map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_neg = xs.iter().filter(|p| p.1 == 0.0).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_neg = xs.iter().filter(|p| p.1 == 0.0).map(|p| p.0).fold(f64::INFINITY, f64::min);
    if max_neg < min_pos || max_pos < min_neg {
        // Complete separation: the likelihood has no maximizer. Use the
        // limiting direction, scaled to the clip bound.
        let (cut, sign) = if max_neg < min_pos { (0.5 * (max_neg + min_pos), 1.0) } else { (0.5 * (max_pos + min_neg), -1.0) };
        let pi1 = sign * LOGIT_CLIP / (cut - s_min).abs().max((s_max - cut).abs());
        return Ok(LogitFit { pi0: -pi1 * cut, pi1, se0: f64::NAN, se1: f64::NAN, separated: true, iterations: 0 });
    }

    let loglik = |b0: f64, b1: f64| {
        fsum(xs.iter().map(|&(s, y)| {
            let eta = b0 + b1 * s;
            // y·η − ln(1 + e^η), computed stably.
            y * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
        }))
    };
    let (mut b0, mut b1) = (logit(positives / n), 0.0);
    let mut ll = loglik(b0, b1);
    let mut iterations = 0;
    let mut info = [0.0; 3];
    for it in 1..=100 {
        iterations = it;
        let mut g = [0.0; 2];
        info = [0.0; 3];
        let terms: Vec<[f64; 5]> = xs
            .iter()
            .map(|&(s, y)| {
                let p = logistic(b0 + b1 * s);
                let w = p * (1.0 - p);
                [y - p, (y - p) * s, w, w * s, w * s * s]
            })
            .collect();
        for k in 0..2 {
            g[k] = fsum(terms.iter().map(|t| t[k]));
        }
        for k in 0..3 {
            info[k] = fsum(terms.iter().map(|t| t[k + 2]));
        }
        if (g[0] * g[0] + g[1] * g[1]).sqrt() < 1e-8 {
            break;
        }
        let det = info[0] * info[2] - info[1] * info[1];
        if !(det > 0.0) {
            break;
        }
        let d0 = (info[2] * g[0] - info[1] * g[1]) / det;
        let d1 = (info[0] * g[1] - info[1] * g[0]) / det;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = loglik(b0 + t * d0, b1 + t * d1);
            if cand >= ll {
                b0 += t * d0;
                b1 += t * d1;
                ll = cand;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let det = info[0] * info[2] - info[1] * info[1];
    let (se0, se1) = if det > 0.0 { ((info[2] / det).sqrt(), (info[0] / det).sqrt()) } else { (f64::NAN, f64::NAN) };

    let reach = (b0 + b1 * s_min).abs().max((b0 + b1 * s_max).abs());
    let (b0, b1) = if reach > LOGIT_CLIP { (b0 * LOGIT_CLIP / reach, b1 * LOGIT_CLIP / reach) } else { (b0, b1) };
    Ok(LogitFit { pi0: b0, pi1: b1, se0, se1, separated: false, iterations })
}

/// Least squares of the observation on `√f`. A constant predictor yields a
/// zero slope and the mean observation as intercept.
pub fn fit_beta_mean(pairs: &[(f64, f64)]) -> Result<(f64, f64), BmaError> {
    if pairs.is_empty() {
        return Err(BmaError::TooFewPairs { have: 0, need: 1 });
    }
    let s: Vec<f64> = pairs.iter().map(|p| p.0.max(0.0).sqrt()).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let s_mean = mean(&s);
    let y_mean = mean(&y);
    let sxx = fsum(s.iter().map(|v| (v - s_mean).powi(2)));
    if sxx <= 0.0 {
        return Ok((y_mean, 0.0));
    }
    let sxy = fsum(s.iter().zip(&y).map(|(a, b)| (a - s_mean) * (b - y_mean)));
    let slope = sxy / sxx;
    Ok((y_mean - slope * s_mean, slope))
}

/// One member's predictive component: atom probability and beta part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmaComponent {
    pub weight: f64,
    pub point_mass: f64,
    pub beta: BetaOnRange,
}

/// Beta mean and sd for a member value after the feasibility clamps.
fn beta_moments(g: &BmaGroupParams, c0: f64, c1: f64, root_f: f64, x_max: f64) -> (f64, f64) {
    let m = (g.rho0 + g.rho1 * root_f).clamp(MEAN_MARGIN, x_max - MEAN_MARGIN);
    let bound = (m * (x_max - m)).sqrt();
    let sd = (c0 + c1 * root_f).max(MIN_SD).min(SD_FEASIBLE_FRACTION * bound);
    (m, sd)
}

/// Component law of a single member forecast `f`.
pub fn component(g: &BmaGroupParams, c0: f64, c1: f64, f: f64, x_max: f64) -> Result<BmaComponent, BmaError> {
    let root_f = f.max(0.0).sqrt();
    let (m, sd) = beta_moments(g, c0, c1, root_f, x_max);
    Ok(BmaComponent {
        weight: g.weight,
        point_mass: logistic(g.pi0 + g.pi1 * root_f),
        beta: BetaOnRange::from_moments(m, sd, x_max)?,
    })
}

/// Mixed density of one member's component at `x`.
pub fn component_pdf(g: &BmaGroupParams, c0: f64, c1: f64, f: f64, x: f64, x_max: f64) -> Result<MixedDensity, BmaError> {
    if !(0.0..=x_max).contains(&x) {
        return Err(DistError::Domain { value: x, domain: "[0, x_max]" }.into());
    }
    let comp = component(g, c0, c1, f, x_max)?;
    Ok(comp.density(x))
}

impl BmaComponent {
    fn density(&self, x: f64) -> MixedDensity {
        if x >= self.beta.x_max() {
            MixedDensity::Atom(self.point_mass)
        } else {
            MixedDensity::Continuous((1.0 - self.point_mass) * self.beta.pdf(x))
        }
    }
}

/// Member forecasts of one case; the exchangeable members are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct BmaCase {
    pub hres: Option<f64>,
    pub ctrl: Option<f64>,
    pub ens: Option<Vec<f64>>,
    pub obs: Option<f64>,
}

impl BmaCase {
    pub fn new(hres: Option<f64>, ctrl: Option<f64>, ens: Option<Vec<f64>>, obs: Option<f64>) -> Self {
        let ens = ens.map(|mut e| {
            e.sort_by(f64::total_cmp);
            e
        });
        Self { hres, ctrl, ens, obs }
    }

    pub fn from_forecast(case: &ForecastCase) -> Self {
        Self::new(case.f_hres, case.f_ctrl, case.f_ens.clone(), case.obs)
    }

    /// Member values of `group` in this case (empty when missing).
    pub fn members(&self, group: MemberGroup) -> &[f64] {
        match group {
            MemberGroup::Hres => self.hres.as_slice(),
            MemberGroup::Ctrl => self.ctrl.as_slice(),
            MemberGroup::Ens => self.ens.as_deref().unwrap_or(&[]),
        }
    }

    fn is_complete(&self, groups: &[MemberGroup]) -> bool {
        groups.iter().all(|&g| self.members(g).len() == g.multiplicity())
    }
}

/// Logistic and mean regressions for one member group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSubfit {
    pub pi0: f64,
    pub pi1: f64,
    pub rho0: f64,
    pub rho1: f64,
}

/// Sub-fits of every member group, pooling all exchangeable members.
pub fn fit_subfits(
    cases: &[BmaCase],
    groups: &[MemberGroup],
    x_max: f64,
) -> Result<BTreeMap<MemberGroup, GroupSubfit>, BmaError> {
    let mut out = BTreeMap::new();
    for &g in groups {
        let mut logit_pairs = Vec::new();
        let mut mean_pairs = Vec::new();
        for case in cases {
            let Some(obs) = case.obs else { continue };
            for &f in case.members(g) {
                logit_pairs.push((f, obs >= x_max));
                if obs < x_max {
                    mean_pairs.push((f, obs));
                }
            }
        }
        let lf = fit_logit(&logit_pairs)?;
        let (rho0, rho1) = if mean_pairs.is_empty() {
            // Every observation at the bound: centre the beta part.
            (0.5 * x_max, 0.0)
        } else {
            fit_beta_mean(&mean_pairs)?
        };
        out.insert(g, GroupSubfit { pi0: lf.pi0, pi1: lf.pi1, rho0, rho1 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmaEmOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub simplex: NelderMeadOptions,
}

impl Default for BmaEmOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iter: 500,
            simplex: NelderMeadOptions { rel_tol: 1e-8, abs_tol: 1e-12, max_evals: 2_000, step: 0.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmaFit {
    pub params: BmaParams,
    /// Observed-data log-likelihood at initialization and after every
    /// iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

/// Per-slot quantities that do not depend on `(c0, c1)`.
struct Slot {
    group_idx: usize,
    root_f: f64,
    point_mass: f64,
    mean: f64,
    /// `0.95·√(mean·(x_max − mean))`.
    sd_cap: f64,
}

struct EmCase {
    at_max: bool,
    /// `ln(y/x_max)` and `ln(1 − y/x_max)` of the observation.
    ln_u: f64,
    ln_1mu: f64,
    slots: Vec<Slot>,
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Log beta density of the continuous part for one slot.
fn slot_ln_beta(slot: &Slot, c0: f64, c1: f64, case: &EmCase, ln_x_max: f64, x_max: f64) -> f64 {
    let sd = (c0 + c1 * slot.root_f).max(MIN_SD).min(slot.sd_cap);
    let r = slot.mean / x_max;
    let v = (sd / x_max).powi(2);
    let spread = r * (1.0 - r) / v - 1.0;
    if !(spread > 0.0) {
        return f64::NEG_INFINITY;
    }
    let (a, b) = (r * spread, (1.0 - r) * spread);
    (a - 1.0) * case.ln_u + (b - 1.0) * case.ln_1mu - ln_beta_fn(a, b) - ln_x_max
}

/// `ln w_k + ln h_k(y)` for every slot of a case.
fn case_log_terms(case: &EmCase, weights: &[f64], c0: f64, c1: f64, x_max: f64) -> Vec<f64> {
    let ln_x_max = x_max.ln();
    case.slots
        .iter()
        .map(|s| {
            let lh = if case.at_max {
                s.point_mass.ln()
            } else {
                (1.0 - s.point_mass).ln() + slot_ln_beta(s, c0, c1, case, ln_x_max, x_max)
            };
            weights[s.group_idx].ln() + lh
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + fsum(v.iter().map(|x| (x - m).exp())).ln()
}

/// Observed-data log-likelihood and per-case log terms `ln w_k + ln h_k`.
fn log_terms(cases: &[EmCase], weights: &[f64], c0: f64, c1: f64, x_max: f64) -> (f64, Vec<Vec<f64>>) {
    let terms: Vec<Vec<f64>> = cases.iter().map(|c| case_log_terms(c, weights, c0, c1, x_max)).collect();
    let ll = fsum(terms.iter().map(|t| log_sum_exp(t)));
    (ll, terms)
}

/// EM estimation of member weights and the shared sd coefficients, given
/// the logistic and mean sub-fits.
pub fn fit_em(
    cases: &[BmaCase],
    subfits: &BTreeMap<MemberGroup, GroupSubfit>,
    x_max: f64,
    options: &BmaEmOptions,
) -> Result<BmaFit, BmaError> {
    let groups: Vec<MemberGroup> = subfits.keys().copied().collect();
    let usable: Vec<&BmaCase> = cases.iter().filter(|c| c.obs.is_some() && c.is_complete(&groups)).collect();
    if usable.is_empty() || groups.is_empty() {
        return Err(BmaError::EmptyTrainingSet);
    }
    let em_cases: Vec<EmCase> = usable
        .iter()
        .map(|c| {
            let obs = c.obs.expect("filtered");
            let at_max = obs >= x_max;
            let slots = groups
                .iter()
                .enumerate()
                .flat_map(|(gi, &g)| {
                    let sf = subfits[&g];
                    c.members(g).iter().map(move |&f| {
                        let root_f = f.max(0.0).sqrt();
                        let mean = (sf.rho0 + sf.rho1 * root_f).clamp(MEAN_MARGIN, x_max - MEAN_MARGIN);
                        Slot {
                            group_idx: gi,
                            root_f,
                            point_mass: logistic(sf.pi0 + sf.pi1 * root_f),
                            mean,
                            sd_cap: SD_FEASIBLE_FRACTION * (mean * (x_max - mean)).sqrt(),
                        }
                    })
                })
                .collect();
            let u = obs.max(MIN_OBS) / x_max;
            EmCase { at_max, ln_u: u.ln(), ln_1mu: (-u).ln_1p(), slots }
        })
        .collect();

    let slot_count: usize = groups.iter().map(|g| g.multiplicity()).sum();
    let mut weights = vec![1.0 / slot_count as f64; groups.len()];
    let below: Vec<f64> = usable.iter().filter_map(|c| c.obs).filter(|&o| o < x_max).collect();
    let mut c0 = if below.len() >= 2 { sample_sd(&below) } else { 0.25 * x_max };
    let mut c1 = 0.0;

    let (mut ll, mut terms) = log_terms(&em_cases, &weights, c0, c1, x_max);
    if !ll.is_finite() {
        let all: Vec<f64> = usable.iter().filter_map(|c| c.obs).collect();
        c0 = sample_sd(&all) / 2.0;
        c1 = 0.0;
        (ll, terms) = log_terms(&em_cases, &weights, c0, c1, x_max);
        if !ll.is_finite() {
            return Err(BmaError::NonFiniteLikelihood);
        }
    }

    let mut trace = vec![ll];
    let mut converged = false;
    let mut step = options.simplex.step;
    let n = em_cases.len() as f64;
    for _ in 0..options.max_iter {
        // E-step: responsibilities.
        let resp: Vec<Vec<f64>> = terms
            .iter()
            .map(|t| {
                let lse = log_sum_exp(t);
                t.iter().map(|v| (v - lse).exp()).collect()
            })
            .collect();

        // M-step, weights: mean responsibility, tied within each group.
        for (gi, g) in groups.iter().enumerate() {
            let total = fsum(em_cases.iter().zip(&resp).flat_map(|(c, r)| {
                c.slots.iter().zip(r).filter(move |(s, _)| s.group_idx == gi).map(|(_, z)| *z)
            }));
            weights[gi] = total / (n * g.multiplicity() as f64);
        }
        let norm = fsum(groups.iter().zip(&weights).map(|(g, w)| w * g.multiplicity() as f64));
        weights.iter_mut().for_each(|w| *w /= norm);

        // M-step, sd coefficients: maximize the expected complete-data
        // log-likelihood of the continuous observations.
        let ln_x_max = x_max.ln();
        let expected = |c: &[f64]| -> f64 {
            let q = fsum(em_cases.iter().zip(&resp).filter(|(case, _)| !case.at_max).flat_map(|(case, r)| {
                case.slots.iter().zip(r).map(move |(s, z)| {
                    if *z == 0.0 {
                        0.0
                    } else {
                        z * slot_ln_beta(s, c[0], c[1], case, ln_x_max, x_max)
                    }
                })
            }));
            -q
        };
        // Later iterations move (c0, c1) little, so the simplex shrinks with
        // the previous step.
        let simplex = NelderMeadOptions { step: step.clamp(1e-4, options.simplex.step), ..options.simplex };
        let m = nelder_mead(expected, &[c0, c1], &simplex);
        let moved = ((m.x[0] - c0).abs() / c0.abs().max(1.0)).max((m.x[1] - c1).abs() / c1.abs().max(1.0));
        step = 10.0 * moved;
        c0 = m.x[0];
        c1 = m.x[1];

        let prev = ll;
        (ll, terms) = log_terms(&em_cases, &weights, c0, c1, x_max);
        trace.push(ll);
        if ((ll - prev) / prev.abs().max(1e-300)).abs() < options.rel_tol {
            converged = true;
            break;
        }
    }

    let params = BmaParams {
        groups: groups
            .iter()
            .zip(&weights)
            .map(|(&g, &w)| {
                let sf = subfits[&g];
                (g, BmaGroupParams { pi0: sf.pi0, pi1: sf.pi1, rho0: sf.rho0, rho1: sf.rho1, weight: w })
            })
            .collect(),
        c0,
        c1,
        x_max,
    };
    Ok(BmaFit { params, loglik_trace: trace, converged })
}

/// Sub-fits followed by EM on the same training set.
pub fn fit_bma(
    cases: &[BmaCase],
    x_max: f64,
    has_hres: bool,
    has_ctrl: bool,
    options: &BmaEmOptions,
) -> Result<BmaFit, BmaError> {
    let mut groups = Vec::new();
    if has_hres {
        groups.push(MemberGroup::Hres);
    }
    if has_ctrl {
        groups.push(MemberGroup::Ctrl);
    }
    groups.push(MemberGroup::Ens);
    let complete: Vec<BmaCase> = cases.iter().filter(|c| c.obs.is_some() && c.is_complete(&groups)).cloned().collect();
    if complete.is_empty() {
        return Err(BmaError::EmptyTrainingSet);
    }
    let subfits = fit_subfits(&complete, &groups, x_max)?;
    fit_em(&complete, &subfits, x_max, options)
}

/// Mixture of per-member components with renormalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BmaPredictive {
    pub components: Vec<BmaComponent>,
    pub x_max: f64,
}

/// Predictive distribution for one case; missing members get zero weight.
pub fn bma_predict(params: &BmaParams, case: &BmaCase) -> Result<BmaPredictive, BmaError> {
    let mut components = Vec::new();
    for (&g, gp) in &params.groups {
        for &f in case.members(g) {
            components.push(component(gp, params.c0, params.c1, f, params.x_max)?);
        }
    }
    let total = fsum(components.iter().map(|c| c.weight));
    if components.is_empty() || !(total > 0.0) {
        return Err(BmaError::NoMembers);
    }
    components.iter_mut().for_each(|c| c.weight /= total);
    Ok(BmaPredictive { components, x_max: params.x_max })
}

impl BmaPredictive {
    pub fn point_mass(&self) -> f64 {
        fsum(self.components.iter().map(|c| c.weight * c.point_mass))
    }

    pub fn density(&self, x: f64) -> Result<MixedDensity, DistError> {
        if !(0.0..=self.x_max).contains(&x) {
            return Err(DistError::Domain { value: x, domain: "[0, x_max]" });
        }
        let v = fsum(self.components.iter().map(|c| c.weight * c.density(x).value()));
        Ok(if x == self.x_max { MixedDensity::Atom(v) } else { MixedDensity::Continuous(v) })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.x_max {
            1.0
        } else {
            self.cdf_left(x)
        }
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        if x > self.x_max {
            return 1.0;
        }
        fsum(self.components.iter().map(|c| c.weight * (1.0 - c.point_mass) * c.beta.cdf(x)))
    }

    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        distributions::check_probability(p)?;
        if p >= self.cdf_left(self.x_max) {
            return Ok(self.x_max);
        }
        Ok(distributions::bisect(|x| self.cdf(x), p, 0.0, self.x_max))
    }

    pub fn mean(&self) -> f64 {
        fsum(self.components.iter().map(|c| c.weight * ((1.0 - c.point_mass) * c.beta.mean() + c.point_mass * self.x_max)))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u = rng.random::<f64>();
        let mut chosen = self.components.last().expect("nonempty");
        for c in &self.components {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        if rng.random::<f64>() < chosen.point_mass {
            self.x_max
        } else {
            chosen.beta.draw(rng)
        }
    }

    pub fn log_score(&self, obs: f64) -> f64 {
        let x = if obs >= self.x_max { self.x_max } else { obs.max(MIN_OBS) };
        let v = fsum(self.components.iter().map(|c| c.weight * c.density(x).value()));
        -v.max(DENSITY_FLOOR).ln()
    }
}
