//! Shared test oracles and synthetic-data generators.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use viscal::data_io::{valid_time, Dataset, EnsembleStats, ForecastCase, StationId};
use viscal::distributions::seeded_rng;
use viscal::bma_model::{bma_predict, BmaCase, BmaGroupParams, BmaParams, MemberGroup};
use viscal::mixture_model::{MixtureCase, MixtureParams, MixturePredictive};

pub const X_MAX: f64 = 75.0;

/// Generator coefficients used by the parameter-recovery checks.
pub fn generator_params() -> MixtureParams {
    MixtureParams {
        gamma_w: 0.3,
        a: [1.0, 0.0, 0.0, 0.5, 0.5, -0.3],
        b: [1.0, 0.6],
        alpha: [20.0, 0.0, 0.0, 0.4, 2.0, -1.0],
        beta: [2.0, 0.5],
        has_hres: false,
        has_ctrl: false,
    }
}

/// Cases with random ensemble statistics and observations drawn from the
/// predictive implied by `params`.
pub fn synthetic_mixture_cases(n: usize, seed: u64, params: &MixtureParams) -> Vec<MixtureCase> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let stats = EnsembleStats {
                mean_ens: rng.random_range(0.0..30.0),
                sd_ens: rng.random_range(0.5..8.0),
                day_of_year: rng.random_range(1..=365),
            };
            let f_hres = params.has_hres.then(|| rng.random_range(0.0..40.0));
            let f_ctrl = params.has_ctrl.then(|| rng.random_range(0.0..40.0));
            let mut case = MixtureCase::new(stats, f_hres, f_ctrl, None).unwrap();
            let pred = case.predictive(params, X_MAX).expect("generator link feasible");
            case.obs = Some(pred.draw(&mut rng));
            case
        })
        .collect()
}

/// Random coefficients and forecast case whose links are feasible.
pub fn random_feasible(rng: &mut rand_chacha::ChaCha8Rng) -> (MixtureParams, MixtureCase, MixturePredictive) {
    loop {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let params = MixtureParams {
            gamma_w: u(-0.3, 0.3),
            a: [u(0.5, 10.0), u(-1.0, 1.0), u(-1.0, 1.0), u(0.3, 1.2), u(-2.0, 2.0), u(-2.0, 2.0)],
            b: [u(0.5, 20.0), u(0.2, 1.5)],
            alpha: [u(0.5, 20.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-3.0, 3.0), u(-3.0, 3.0)],
            beta: [u(0.3, 5.0), u(0.0, 1.0)],
            has_hres: true,
            has_ctrl: true,
        };
        let stats = EnsembleStats { mean_ens: u(0.0, 60.0), sd_ens: u(0.1, 15.0), day_of_year: rng.random_range(1..=366) };
        let case = MixtureCase::new(stats, Some(rng.random_range(0.0..75.0)), Some(rng.random_range(0.0..75.0)), None).unwrap();
        if let Ok(pred) = case.predictive(&params, X_MAX) {
            return (params, case, pred);
        }
    }
}

/// `∫_0^{x_max} density + point mass` of a mixture predictive.
pub fn total_mass(pred: &MixturePredictive) -> f64 {
    let f = |x: f64| pred.density(x).map(|d| d.value()).unwrap_or(f64::NAN);
    // Splitting at quantiles keeps narrow peaks inside short panels; the
    // breakpoints only steer the quadrature.
    let breaks: Vec<f64> =
        [1e-4, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99].iter().filter_map(|&p| pred.quantile(p).ok()).collect();
    integrate_split(f, 0.0, X_MAX, &breaks) + pred.point_mass()
}

/// Tanh-sinh quadrature on `[a, b]`; robust to integrable endpoint
/// singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let h = 1.0 / 64.0;
    let mut total = 0.0;
    let kmax = (6.0 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = 0.5 * std::f64::consts::PI * t.sinh();
        let x = u.tanh();
        let w = 0.5 * std::f64::consts::PI * t.cosh() / u.cosh().powi(2);
        if w < 1e-300 {
            continue;
        }
        // Distance to the nearer endpoint, computed without cancellation.
        let gap = half / (u.abs().exp() * u.abs().cosh());
        let xx = if x < 0.0 { a + gap } else { b - gap };
        if xx <= a || xx >= b {
            continue;
        }
        let v = f(if k == 0 { mid } else { xx });
        if v.is_finite() {
            total += w * v;
        }
    }
    total * h * half
}

/// Integral over `[a, b]` split at the given interior breakpoints.
pub fn integrate_split(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2).map(|w| tanh_sinh(f, w[0], w[1])).sum()
}

/// Kolmogorov–Smirnov distance between a sample and U(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// BMA coefficients used to simulate training sets.
pub fn bma_generator_params() -> BmaParams {
    let gp = |pi0, rho0, w| BmaGroupParams { pi0, pi1: 0.25, rho0, rho1: 3.0, weight: w };
    BmaParams {
        groups: [
            (MemberGroup::Hres, gp(-3.0, 2.0, 0.2)),
            (MemberGroup::Ctrl, gp(-2.5, 1.0, 0.1)),
            (MemberGroup::Ens, gp(-2.8, 1.5, 0.7 / 50.0)),
        ]
        .into_iter()
        .collect(),
        c0: 2.0,
        c1: 1.0,
        x_max: X_MAX,
    }
}

/// Cases whose members scatter around a latent visibility and whose
/// observation is drawn from the BMA predictive of `params`.
pub fn synthetic_bma_cases(n: usize, seed: u64, params: &BmaParams) -> Vec<BmaCase> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let latent: f64 = rng.random_range(1.0..45.0);
            let member = |rng: &mut rand_chacha::ChaCha8Rng| (latent * rng.random_range(0.6..1.4)).min(X_MAX);
            let hres = Some(member(&mut rng));
            let ctrl = Some(member(&mut rng));
            let ens: Vec<f64> = (0..50).map(|_| member(&mut rng)).collect();
            let mut case = BmaCase::new(hres, ctrl, Some(ens), None);
            let pred = bma_predict(params, &case).expect("members present");
            case.obs = Some(pred.draw(&mut rng));
            case
        })
        .collect()
}

/// Layout of a synthetic multi-station dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub stations: usize,
    pub start: NaiveDate,
    pub days: u32,
    pub leads: Vec<u32>,
    pub seed: u64,
    pub has_hres: bool,
    pub has_ctrl: bool,
    /// Multiplicative forecast bias of station `i` (cycled).
    pub biases: Vec<f64>,
}

impl SynthSpec {
    pub fn new(stations: usize, days: u32, seed: u64) -> Self {
        Self {
            stations,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            days,
            leads: vec![24],
            seed,
            has_hres: true,
            has_ctrl: true,
            biases: vec![1.0],
        }
    }
}

pub fn station_name(i: usize) -> StationId {
    StationId::new(format!("S{i:02}")).unwrap()
}

/// Stations whose observations follow a fog/clear climate and whose members
/// scatter around a biased copy of the truth. Observations agree across
/// lead times sharing a valid time.
pub fn synthetic_dataset(spec: &SynthSpec) -> Dataset {
    let mut rng = seeded_rng(spec.seed);
    let mut truth: BTreeMap<(usize, NaiveDateTime), f64> = BTreeMap::new();
    let mut cases = Vec::new();
    for s in 0..spec.stations {
        let bias = spec.biases[s % spec.biases.len()];
        let foggy = 0.1 + 0.1 * (s % 3) as f64;
        for day in 0..spec.days {
            let init = spec.start + chrono::Days::new(u64::from(day));
            for &lead in &spec.leads {
                let vt = valid_time(init, lead);
                let obs = *truth.entry((s, vt)).or_insert_with(|| {
                    if rng.random::<f64>() < foggy {
                        rng.random_range(0.05..3.0)
                    } else {
                        (rng.random_range(4.0f64..90.0)).min(X_MAX)
                    }
                });
                let spread = 0.25 + f64::from(lead) / 480.0;
                let noise = Normal::new(0.0, spread).unwrap();
                let member = |rng: &mut rand_chacha::ChaCha8Rng| (obs * bias * noise.sample(rng).exp()).clamp(0.0, X_MAX);
                let f_hres = spec.has_hres.then(|| member(&mut rng));
                let f_ctrl = spec.has_ctrl.then(|| member(&mut rng));
                let ens: Vec<f64> = (0..50).map(|_| member(&mut rng)).collect();
                cases.push(ForecastCase {
                    station: station_name(s),
                    init_date: init,
                    lead_time_h: lead,
                    f_hres,
                    f_ctrl,
                    f_ens: Some(ens),
                    obs: Some(obs),
                    x_max: X_MAX,
                });
            }
        }
    }
    Dataset::new(cases, X_MAX, spec.has_hres, spec.has_ctrl).unwrap()
}
