use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::{BlockResampler, BootstrapOptions};
use super::scores::{
    brier, central_interval, coverage_and_width, crps, histogram, logs, mae, nominal_level, pit, rmse, skill_score,
    verification_rank, DEFAULT_MC_SAMPLES, DEFAULT_THRESHOLDS,
};
use super::{ProbForecast, VerifyError};
use crate::data_io::{Dataset, StationId};
use crate::distributions::seeded_rng;
use crate::numeric::mean;

/// One verified case; ordered by valid time, then station.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseKey {
    pub valid_time: NaiveDateTime,
    pub station: StationId,
    pub lead_h: u32,
}

#[derive(Debug, Clone)]
pub struct MethodForecasts {
    pub name: String,
    pub forecasts: Vec<(CaseKey, ProbForecast)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub thresholds: Vec<f64>,
    pub mc_samples: usize,
    pub bootstrap: BootstrapOptions,
    /// Central-interval level; `None` uses `(K−1)/(K+1)` of the baseline
    /// ensemble size.
    pub interval_level: Option<f64>,
    pub pit_bins: usize,
    pub seed: u64,
    /// Method used as skill-score reference.
    pub reference: String,
    /// Method whose mean CRPS is the 100% mark.
    pub baseline: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mc_samples: DEFAULT_MC_SAMPLES,
            bootstrap: BootstrapOptions::default(),
            interval_level: None,
            pit_bins: 20,
            seed: 0,
            reference: "climatology".into(),
            baseline: "raw".into(),
        }
    }
}

/// Per-case seed mixing the run seed with station and valid time (FNV-1a).
pub fn case_seed(station: &StationId, valid_time: NaiveDateTime, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let text = format!("{station}|{}", valid_time.format("%Y-%m-%dT%H:%M"));
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl Stat {
    fn point(value: f64) -> Self {
        Self { value, ci_lo: None, ci_hi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    pub threshold: f64,
    pub brier: Stat,
    pub skill: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub crps: Stat,
    pub logs: Option<Stat>,
    pub crpss: Option<Stat>,
    /// Mean CRPS as a percentage of the baseline's.
    pub crps_pct_of_baseline: Option<f64>,
    pub brier: Vec<ThresholdStat>,
    pub coverage_pct: f64,
    pub mean_width: f64,
    pub rmse: f64,
    pub mae: f64,
    pub pit_histogram: Option<Vec<u64>>,
    pub rank_histogram: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadReport {
    pub lead_h: u32,
    pub cases: usize,
    pub interval_level: f64,
    pub methods: BTreeMap<String, MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    pub cases: usize,
    pub mean_crps: f64,
    pub crps_pct_of_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub reference: String,
    pub baseline: String,
    pub leads: Vec<LeadReport>,
    pub overall: BTreeMap<String, OverallSummary>,
}

/// Per-case scores of one method at one lead time, in case order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub crps: Vec<f64>,
    pub logs: Option<Vec<f64>>,
    /// One series per threshold.
    pub brier: Vec<Vec<f64>>,
    pub pit: Vec<f64>,
    pub ranks: Option<Vec<usize>>,
    pub intervals: Vec<(f64, f64)>,
    pub means: Vec<f64>,
    pub medians: Vec<f64>,
}

struct CaseScores {
    crps: f64,
    logs: Option<f64>,
    brier: Vec<f64>,
    pit: f64,
    rank: Option<usize>,
    interval: (f64, f64),
    mean: f64,
    median: f64,
}

fn score_case(
    key: &CaseKey,
    f: &ProbForecast,
    x: f64,
    level: f64,
    config: &ReportConfig,
) -> Result<CaseScores, VerifyError> {
    let seed = case_seed(&key.station, key.valid_time, config.seed);
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let logs = match f {
        ProbForecast::Ensemble(_) => None,
        other => Some(logs(other, x)?),
    };
    Ok(CaseScores {
        crps: crps(f, x, config.mc_samples, seed)?,
        logs,
        brier: config.thresholds.iter().map(|&y| brier(f, x, y)).collect(),
        pit: pit(f, x, &mut rng),
        rank: f.ensemble().map(|e| verification_rank(e, x, &mut rng)),
        interval: central_interval(f, level)?,
        mean: f.mean(),
        median: f.median()?,
    })
}

/// Scores every case of one method; parallel over cases, ordered output.
pub fn score_series(
    cases: &[(&CaseKey, &ProbForecast)],
    observations: &[f64],
    level: f64,
    config: &ReportConfig,
) -> Result<ScoreSeries, VerifyError> {
    if cases.len() != observations.len() {
        return Err(VerifyError::LengthMismatch { left: cases.len(), right: observations.len() });
    }
    let scored: Vec<CaseScores> = cases
        .par_iter()
        .zip(observations.par_iter())
        .map(|((k, f), &x)| score_case(k, f, x, level, config))
        .collect::<Result<_, _>>()?;
    let logs: Option<Vec<f64>> = scored.iter().map(|s| s.logs).collect();
    let ranks: Option<Vec<usize>> = scored.iter().map(|s| s.rank).collect();
    Ok(ScoreSeries {
        crps: scored.iter().map(|s| s.crps).collect(),
        logs,
        brier: (0..config.thresholds.len()).map(|j| scored.iter().map(|s| s.brier[j]).collect()).collect(),
        pit: scored.iter().map(|s| s.pit).collect(),
        ranks,
        intervals: scored.iter().map(|s| s.interval).collect(),
        means: scored.iter().map(|s| s.mean).collect(),
        medians: scored.iter().map(|s| s.median).collect(),
    })
}

fn with_ci(series: &[f64], resampler: Option<&BlockResampler>) -> Result<Stat, VerifyError> {
    let value = mean(series);
    Ok(match resampler {
        Some(r) => {
            let ci = r.mean_ci(series)?;
            Stat { value, ci_lo: Some(ci.lo), ci_hi: Some(ci.hi) }
        }
        None => Stat::point(value),
    })
}

fn skill_with_ci(series: &[f64], reference: &[f64], resampler: Option<&BlockResampler>) -> Result<Option<Stat>, VerifyError> {
    let Ok(value) = skill_score(mean(series), mean(reference)) else {
        return Ok(None);
    };
    Ok(Some(match resampler {
        Some(r) => {
            let ci = r.skill_ci(series, reference)?;
            Stat { value, ci_lo: Some(ci.lo), ci_hi: Some(ci.hi) }
        }
        None => Stat::point(value),
    }))
}

/// Scores all methods on identical case sets per lead time.
pub fn build_report(
    dataset: &Dataset,
    methods: &[MethodForecasts],
    config: &ReportConfig,
) -> Result<VerificationReport, VerifyError> {
    for name in [&config.reference, &config.baseline] {
        if !methods.iter().any(|m| &m.name == name) {
            return Err(VerifyError::UnknownMethod(name.clone()));
        }
    }
    let mut by_lead: BTreeMap<u32, BTreeMap<&str, BTreeMap<&CaseKey, &ProbForecast>>> = BTreeMap::new();
    for m in methods {
        for (k, f) in &m.forecasts {
            by_lead.entry(k.lead_h).or_default().entry(m.name.as_str()).or_default().insert(k, f);
        }
    }

    let mut leads = Vec::new();
    let mut overall_crps: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (&lead_h, per_method) in &by_lead {
        let reference_keys: BTreeSet<&CaseKey> = per_method
            .get(config.baseline.as_str())
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default();
        for m in methods {
            let keys: BTreeSet<&CaseKey> =
                per_method.get(m.name.as_str()).map(|c| c.keys().copied().collect()).unwrap_or_default();
            if keys != reference_keys {
                return Err(VerifyError::CaseSetMismatch { lead_h, method: m.name.clone() });
            }
        }
        let keys: Vec<&CaseKey> = reference_keys.into_iter().collect();
        let obs: Vec<f64> = keys
            .iter()
            .map(|k| {
                dataset
                    .observation_at(&k.station, k.valid_time)
                    .ok_or_else(|| VerifyError::MissingObservation(format!("{} {}", k.station, k.valid_time)))
            })
            .collect::<Result<_, _>>()?;

        let level = match config.interval_level {
            Some(l) => l,
            None => {
                let baseline = &per_method[config.baseline.as_str()];
                let k = baseline
                    .values()
                    .find_map(|f| f.ensemble().map(|e| e.len()))
                    .ok_or(VerifyError::InvalidParameter { name: "interval_level", value: f64::NAN })?;
                nominal_level(k)
            }
        };

        let mut series = BTreeMap::new();
        for m in methods {
            let cases: Vec<(&CaseKey, &ProbForecast)> =
                keys.iter().map(|k| (*k, per_method[m.name.as_str()][*k])).collect();
            series.insert(m.name.clone(), (score_series(&cases, &obs, level, config)?, cases));
        }

        let resampler = if keys.len() >= 10 {
            let opts = BootstrapOptions { seed: config.bootstrap.seed ^ u64::from(lead_h), ..config.bootstrap };
            Some(BlockResampler::new(keys.len(), &opts)?)
        } else {
            None
        };
        let r = resampler.as_ref();
        let reference = &series[&config.reference].0;
        let baseline_crps = mean(&series[&config.baseline].0.crps);

        let mut summaries = BTreeMap::new();
        for m in methods {
            let (s, cases) = &series[&m.name];
            overall_crps.entry(m.name.clone()).or_default().extend_from_slice(&s.crps);
            let brier_stats = config
                .thresholds
                .iter()
                .enumerate()
                .map(|(j, &threshold)| {
                    Ok(ThresholdStat {
                        threshold,
                        brier: with_ci(&s.brier[j], r)?,
                        skill: skill_with_ci(&s.brier[j], &reference.brier[j], r)?,
                    })
                })
                .collect::<Result<Vec<_>, VerifyError>>()?;
            let (coverage_pct, mean_width) = coverage_and_width(&s.intervals, &obs)?;
            let uniform_size = cases
                .first()
                .and_then(|(_, f)| f.ensemble().map(|e| e.len()))
                .filter(|&k| cases.iter().all(|(_, f)| f.ensemble().is_some_and(|e| e.len() == k)));
            let rank_histogram = match (&s.ranks, uniform_size) {
                (Some(ranks), Some(k)) => {
                    let mut h = vec![0u64; k + 1];
                    ranks.iter().for_each(|&rk| h[rk - 1] += 1);
                    Some(h)
                }
                _ => None,
            };
            let parametric = cases.iter().all(|(_, f)| f.ensemble().is_none());
            summaries.insert(
                m.name.clone(),
                MethodSummary {
                    crps: with_ci(&s.crps, r)?,
                    logs: s.logs.as_ref().map(|l| with_ci(l, r)).transpose()?,
                    crpss: skill_with_ci(&s.crps, &reference.crps, r)?,
                    crps_pct_of_baseline: (baseline_crps > 0.0).then(|| 100.0 * mean(&s.crps) / baseline_crps),
                    brier: brier_stats,
                    coverage_pct,
                    mean_width,
                    rmse: rmse(&s.means, &obs)?,
                    mae: mae(&s.medians, &obs)?,
                    pit_histogram: parametric.then(|| histogram(&s.pit, config.pit_bins)),
                    rank_histogram,
                },
            );
        }
        leads.push(LeadReport { lead_h, cases: keys.len(), interval_level: level, methods: summaries });
    }

    let baseline_all = overall_crps.get(&config.baseline).map(|v| mean(v)).unwrap_or(f64::NAN);
    let overall = overall_crps
        .into_iter()
        .map(|(name, v)| {
            let m = mean(&v);
            let pct = (baseline_all > 0.0).then(|| 100.0 * m / baseline_all);
            (name, OverallSummary { cases: v.len(), mean_crps: m, crps_pct_of_baseline: pct })
        })
        .collect();
    Ok(VerificationReport { reference: config.reference.clone(), baseline: config.baseline.clone(), leads, overall })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl VerificationReport {
    /// Flat rows `lead_h,method,metric,value,ci_lo,ci_hi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lead_h,method,metric,value,ci_lo,ci_hi")?;
        let mut row = |lead: &str, method: &str, metric: &str, s: Stat| {
            writeln!(out, "{lead},{method},{metric},{},{},{}", s.value, fmt_opt(s.ci_lo), fmt_opt(s.ci_hi))
        };
        for l in &self.leads {
            let lead = l.lead_h.to_string();
            for (name, m) in &l.methods {
                row(&lead, name, "crps", m.crps)?;
                if let Some(s) = m.logs {
                    row(&lead, name, "logs", s)?;
                }
                if let Some(s) = m.crpss {
                    row(&lead, name, "crpss", s)?;
                }
                if let Some(p) = m.crps_pct_of_baseline {
                    row(&lead, name, "crps_pct", Stat::point(p))?;
                }
                for t in &m.brier {
                    row(&lead, name, &format!("bs_{}", t.threshold), t.brier)?;
                    if let Some(s) = t.skill {
                        row(&lead, name, &format!("bss_{}", t.threshold), s)?;
                    }
                }
                row(&lead, name, "coverage_pct", Stat::point(m.coverage_pct))?;
                row(&lead, name, "width", Stat::point(m.mean_width))?;
                row(&lead, name, "rmse", Stat::point(m.rmse))?;
                row(&lead, name, "mae", Stat::point(m.mae))?;
                for (i, c) in m.pit_histogram.iter().flatten().enumerate() {
                    row(&lead, name, &format!("pit_bin_{}", i + 1), Stat::point(*c as f64))?;
                }
                for (i, c) in m.rank_histogram.iter().flatten().enumerate() {
                    row(&lead, name, &format!("rank_{}", i + 1), Stat::point(*c as f64))?;
                }
            }
        }
        for (name, o) in &self.overall {
            row("all", name, "crps", Stat::point(o.mean_crps))?;
            if let Some(p) = o.crps_pct_of_baseline {
                row("all", name, "crps_pct", Stat::point(p))?;
            }
        }
        Ok(())
    }
}
