//! Batch driver: fits models over rolling windows, writes parameter files,
//! produces predictions, cluster audits and verification reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bma_model::{self, BmaCase, BmaEmOptions, BmaError, BmaParams};
use crate::climatology::climatology_forecast;
use crate::data_io::{load_dataset, DataError, Dataset, ForecastCase, StationId, ENS_SIZE};
use crate::mixture_model::{self, MixtureCase, MixtureError, MixtureFitOptions, MixtureParams, MixtureParamsFile};
use crate::training::{
    assemble, cluster_for_day, lead_days, write_assignments, ClusterAssignment, CompositionMode, DateInterval, FitUnit,
    TrainingError, TrainingPlan,
};
use crate::verification::{
    build_report, CaseKey, EmpiricalEnsemble, MethodForecasts, ProbForecast, ReportConfig, VerificationReport,
    VerifyError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Bma(#[from] BmaError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training case valid on {case} leaks into verification day {day}")]
    Leakage { case: NaiveDate, day: NaiveDate },
    #[error("no verification days: window needs data before {0}")]
    NoVerificationDays(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mixture,
    Bma,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mixture => "mixture",
            Self::Bma => "bma",
        }
    }

    pub fn default_window(self) -> u32 {
        match self {
            Self::Mixture => 350,
            Self::Bma => 25,
        }
    }
}

/// A fitted method to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub model: ModelKind,
    pub mode: CompositionMode,
}

impl MethodSpec {
    pub fn name(&self) -> String {
        format!("{}_{}", self.model.name(), self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub x_max: f64,
    pub model: ModelKind,
    pub mode: CompositionMode,
    /// Training window; `None` uses the model default (350 or 25 days).
    pub window_days: Option<u32>,
    pub feature_quantile_count: usize,
    /// Lead times to process; `None` means all in the data.
    pub leads: Option<Vec<u32>>,
    /// First and last verification valid dates; defaults span every day
    /// with a complete training window.
    pub verify_from: Option<NaiveDate>,
    pub verify_to: Option<NaiveDate>,
    pub min_cases: usize,
    /// Climatology size; `None` matches the raw ensemble size.
    pub climatology_size: Option<usize>,
    pub climatology_pooled: bool,
    /// Methods scored by `verify`; `None` scores `model`/`mode` only.
    pub verify_methods: Option<Vec<MethodSpec>>,
    pub report: ReportConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data.csv"),
            x_max: 75.0,
            model: ModelKind::Mixture,
            mode: CompositionMode::Regional,
            window_days: None,
            feature_quantile_count: crate::training::DEFAULT_FEATURE_QUANTILES,
            leads: None,
            verify_from: None,
            verify_to: None,
            min_cases: mixture_model::MIN_TRAINING_CASES,
            climatology_size: None,
            climatology_pooled: false,
            verify_methods: None,
            report: ReportConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.into(), source })
    }

    pub fn window_for(&self, model: ModelKind) -> u32 {
        self.window_days.unwrap_or_else(|| model.default_window())
    }

    pub fn plan_for(&self, spec: MethodSpec) -> TrainingPlan {
        TrainingPlan {
            window_days: self.window_for(spec.model),
            mode: spec.mode,
            feature_quantile_count: self.feature_quantile_count,
        }
    }

    pub fn primary_method(&self) -> MethodSpec {
        MethodSpec { model: self.model, mode: self.mode }
    }

    pub fn methods_to_verify(&self) -> Vec<MethodSpec> {
        self.verify_methods.clone().unwrap_or_else(|| vec![self.primary_method()])
    }

    pub fn params_dir(&self) -> PathBuf {
        self.out_dir.join("params")
    }

    fn validate(&self, dataset: &Dataset) -> Result<(), PipelineError> {
        if !(self.x_max > 0.0) {
            return Err(PipelineError::Config(format!("x_max must be positive, got {}", self.x_max)));
        }
        for spec in self.methods_to_verify().into_iter().chain([self.primary_method()]) {
            self.plan_for(spec).validate(dataset.stations().len())?;
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.into(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json { path: path.into(), source })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.into(), source })
}

pub fn load_data(config: &RunConfig) -> Result<Dataset, PipelineError> {
    let ds = load_dataset(&config.data, config.x_max)?;
    config.validate(&ds)?;
    Ok(ds)
}

fn leads(config: &RunConfig, dataset: &Dataset) -> Vec<u32> {
    let all = dataset.lead_times();
    match &config.leads {
        Some(wanted) => all.into_iter().filter(|l| wanted.contains(l)).collect(),
        None => all,
    }
}

/// Verification days for one lead time and window length.
pub fn verification_days(
    config: &RunConfig,
    dataset: &Dataset,
    lead_h: u32,
    window_days: u32,
) -> Result<Vec<NaiveDate>, PipelineError> {
    let Some((first, last)) = dataset.valid_date_range() else {
        return Ok(Vec::new());
    };
    let earliest = first + Days::new(lead_days(lead_h) + u64::from(window_days) - 1);
    let from = config.verify_from.unwrap_or(earliest).max(first);
    let to = config.verify_to.unwrap_or(last).min(last);
    if config.verify_from.is_none() && earliest > last {
        return Err(PipelineError::NoVerificationDays(earliest));
    }
    Ok(DateInterval { start: from, end: to }.days().collect())
}

/// Parameters of either model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedParams {
    Mixture(MixtureParamsFile),
    Bma(BmaParams),
}

/// Contents of one parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub mode: CompositionMode,
    pub lead_h: u32,
    /// Verification valid date the parameters are used for.
    pub date: NaiveDate,
    pub unit: FitUnit,
    pub stations: Vec<StationId>,
    pub window: DateInterval,
    pub training_cases: usize,
    /// The regional fit stands in for an undersized or failed unit.
    pub fallback: bool,
    pub objective: f64,
    pub converged: bool,
    pub params: FittedParams,
}

fn unit_suffix(unit: &FitUnit) -> Option<String> {
    match unit {
        FitUnit::Regional => None,
        FitUnit::Station(s) => Some(s.to_string()),
        FitUnit::Cluster(c) => Some(format!("c{c}")),
    }
}

/// `{model}_{mode}_{lead}_{date}[_{unit}].json`
pub fn param_file_name(spec: MethodSpec, lead_h: u32, date: NaiveDate, unit: &FitUnit) -> String {
    let base = format!("{}_{}_{}_{}", spec.model.name(), spec.mode, lead_h, date);
    match unit_suffix(unit) {
        Some(u) => format!("{base}_{u}.json"),
        None => format!("{base}.json"),
    }
}

struct UnitFit {
    params: FittedParams,
    objective: f64,
    converged: bool,
}

enum WarmStart {
    None,
    Mixture(MixtureParams),
}

fn fit_unit(
    model: ModelKind,
    cases: &[&ForecastCase],
    dataset: &Dataset,
    warm: &WarmStart,
    min_cases: usize,
) -> Result<UnitFit, PipelineError> {
    let x_max = dataset.x_max();
    match model {
        ModelKind::Mixture => {
            let mc: Vec<MixtureCase> = cases.iter().filter_map(|c| MixtureCase::from_forecast(c)).collect();
            let warm = match warm {
                WarmStart::Mixture(p) => Some(p),
                WarmStart::None => None,
            };
            let opts = MixtureFitOptions { min_cases, ..Default::default() };
            let fit = mixture_model::fit(&mc, x_max, dataset.has_hres(), dataset.has_ctrl(), warm, &opts)?;
            Ok(UnitFit {
                params: FittedParams::Mixture(MixtureParamsFile::new(&fit.params, x_max)),
                objective: fit.objective,
                converged: fit.converged,
            })
        }
        ModelKind::Bma => {
            let bc: Vec<BmaCase> = cases.iter().map(|c| BmaCase::from_forecast(c)).collect();
            if bc.len() < min_cases {
                return Err(MixtureError::InsufficientData { have: bc.len(), need: min_cases }.into());
            }
            let fit = bma_model::fit_bma(&bc, x_max, dataset.has_hres(), dataset.has_ctrl(), &BmaEmOptions::default())?;
            Ok(UnitFit {
                objective: -fit.loglik_trace.last().copied().unwrap_or(f64::NAN),
                params: FittedParams::Bma(fit.params),
                converged: fit.converged,
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub files: Vec<PathBuf>,
    /// `(lead_h, date, reason)` for days without parameters.
    pub gaps: Vec<(u32, NaiveDate, String)>,
}

/// Fits one lead time across all verification days.
fn fit_lead(config: &RunConfig, dataset: &Dataset, spec: MethodSpec, lead_h: u32) -> Result<FitSummary, PipelineError> {
    let plan = config.plan_for(spec);
    let dir = config.params_dir();
    let mut summary = FitSummary::default();
    let mut previous_assignment: Option<ClusterAssignment> = None;
    let mut warm: BTreeMap<FitUnit, MixtureParams> = BTreeMap::new();
    for day in verification_days(config, dataset, lead_h, plan.window_days)? {
        let assignment = cluster_for_day(dataset, day, lead_h, &plan, config.seed, previous_assignment.as_ref())?;
        if assignment.is_some() {
            previous_assignment.clone_from(&assignment);
        }
        let asm = assemble(dataset, day, lead_h, &plan, assignment.as_ref(), config.min_cases)?;
        if let Some(c) = asm.units.values().flatten().find(|c| c.valid_date() >= day) {
            return Err(PipelineError::Leakage { case: c.valid_date(), day });
        }
        let regional_needed = asm.units.contains_key(&FitUnit::Regional) || !asm.undersized.is_empty();
        let mut fits: BTreeMap<FitUnit, (UnitFit, usize, bool)> = BTreeMap::new();
        let fit_one = |unit: &FitUnit, cases: &[&ForecastCase], warm: &mut BTreeMap<FitUnit, MixtureParams>| {
            let start = warm.get(unit).copied().map_or(WarmStart::None, WarmStart::Mixture);
            let result = fit_unit(spec.model, cases, dataset, &start, config.min_cases);
            if let Ok(UnitFit { params: FittedParams::Mixture(p), .. }) = &result {
                warm.insert(unit.clone(), p.params());
            }
            result
        };
        let regional = if regional_needed {
            let all: Vec<&ForecastCase> = asm.units.values().flatten().copied().collect();
            match fit_one(&FitUnit::Regional, &all, &mut warm) {
                Ok(f) => Some((f, all.len())),
                Err(e) => {
                    log::warn!("lead {lead_h} h, {day}: regional fit failed: {e}");
                    None
                }
            }
        } else {
            None
        };
        for (unit, cases) in &asm.units {
            if *unit == FitUnit::Regional {
                continue;
            }
            let own = if asm.undersized.contains(unit) {
                log::info!("lead {lead_h} h, {day}: {unit} has {} cases, using regional fit", cases.len());
                None
            } else {
                match fit_one(unit, cases, &mut warm) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        log::warn!("lead {lead_h} h, {day}: {unit} fit failed ({e}), using regional fit");
                        None
                    }
                }
            };
            match (own, &regional) {
                (Some(f), _) => {
                    fits.insert(unit.clone(), (f, cases.len(), false));
                }
                (None, Some((r, n))) => {
                    let copy = UnitFit { params: r.params.clone(), objective: r.objective, converged: r.converged };
                    fits.insert(unit.clone(), (copy, *n, true));
                }
                (None, None) => summary.gaps.push((lead_h, day, format!("no fit for {unit}"))),
            }
        }
        if let (true, Some((r, n))) = (asm.units.contains_key(&FitUnit::Regional), regional) {
            fits.insert(FitUnit::Regional, (r, n, false));
        } else if asm.units.contains_key(&FitUnit::Regional) {
            summary.gaps.push((lead_h, day, "regional fit failed".into()));
        }
        for (unit, (fit, n, fallback)) in fits {
            let stations: Vec<StationId> =
                asm.station_unit.iter().filter(|(_, u)| **u == unit).map(|(s, _)| s.clone()).collect();
            let file = ParamFile {
                mode: spec.mode,
                lead_h,
                date: day,
                unit: unit.clone(),
                stations,
                window: asm.window,
                training_cases: n,
                fallback,
                objective: fit.objective,
                converged: fit.converged,
                params: fit.params,
            };
            let path = dir.join(param_file_name(spec, lead_h, day, &unit));
            write_json(&path, &file)?;
            summary.files.push(path);
        }
    }
    Ok(summary)
}

/// Fits the configured model for every lead time and verification day.
pub fn cmd_fit(config: &RunConfig) -> Result<FitSummary, PipelineError> {
    let dataset = load_data(config)?;
    fs::create_dir_all(config.params_dir()).map_err(io_err(&config.params_dir()))?;
    let spec = config.primary_method();
    let parts: Vec<FitSummary> = leads(config, &dataset)
        .par_iter()
        .map(|&lead| fit_lead(config, &dataset, spec, lead))
        .collect::<Result<_, _>>()?;
    let mut out = FitSummary::default();
    for p in parts {
        out.files.extend(p.files);
        out.gaps.extend(p.gaps);
    }
    for (lead, day, reason) in &out.gaps {
        log::warn!("gap: lead {lead} h, {day}: {reason}");
    }
    Ok(out)
}

/// Parameter files of one (method, lead, day), indexed by station.
fn load_day_params(
    config: &RunConfig,
    spec: MethodSpec,
    lead_h: u32,
    day: NaiveDate,
    stations: &[StationId],
) -> Result<BTreeMap<StationId, FittedParams>, PipelineError> {
    let dir = config.params_dir();
    let mut out = BTreeMap::new();
    let regional = dir.join(param_file_name(spec, lead_h, day, &FitUnit::Regional));
    if regional.exists() {
        let file: ParamFile = read_json(&regional)?;
        for s in stations {
            out.insert(s.clone(), file.params.clone());
        }
    }
    match spec.mode {
        CompositionMode::Regional => {}
        CompositionMode::Local => {
            for s in stations {
                let path = dir.join(param_file_name(spec, lead_h, day, &FitUnit::Station(s.clone())));
                if path.exists() {
                    let file: ParamFile = read_json(&path)?;
                    out.insert(s.clone(), file.params);
                }
            }
        }
        CompositionMode::SemiLocal { k } => {
            for c in 0..k {
                let path = dir.join(param_file_name(spec, lead_h, day, &FitUnit::Cluster(c)));
                if path.exists() {
                    let file: ParamFile = read_json(&path)?;
                    for s in file.stations {
                        out.insert(s, file.params.clone());
                    }
                }
            }
        }
    }
    Ok(out)
}

fn predictive_for(params: &FittedParams, case: &ForecastCase) -> Option<ProbForecast> {
    match params {
        FittedParams::Mixture(file) => {
            let mc = MixtureCase::from_forecast(case)?;
            mc.predictive(&file.params(), file.x_max).ok().map(ProbForecast::Mixture)
        }
        FittedParams::Bma(p) => bma_model::bma_predict(p, &BmaCase::from_forecast(case)).ok().map(ProbForecast::Bma),
    }
}

/// Gap in the verification case set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gap {
    pub lead_h: u32,
    pub date: NaiveDate,
    pub station: StationId,
    pub method: String,
    pub reason: String,
}

struct DayForecasts {
    forecasts: BTreeMap<String, Vec<(CaseKey, ProbForecast)>>,
    gaps: Vec<Gap>,
}

/// All methods' forecasts for one lead; cases any method cannot forecast
/// are dropped for every method and listed as gaps.
fn collect_forecasts(
    config: &RunConfig,
    dataset: &Dataset,
    lead_h: u32,
    with_reference: bool,
) -> Result<DayForecasts, PipelineError> {
    let methods = config.methods_to_verify();
    let window = methods.iter().map(|m| config.window_for(m.model)).max().unwrap_or(config.window_for(config.model));
    let raw_size = ENS_SIZE + usize::from(dataset.has_hres()) + usize::from(dataset.has_ctrl());
    let clim_size = config.climatology_size.unwrap_or(raw_size);
    let mut out = DayForecasts { forecasts: BTreeMap::new(), gaps: Vec::new() };
    for day in verification_days(config, dataset, lead_h, window)? {
        let mut cases: Vec<&ForecastCase> =
            dataset.cases_valid_on(lead_h, day).filter(|c| c.obs.is_some() && c.f_ens.is_some()).collect();
        cases.sort_by(|a, b| a.station.cmp(&b.station));
        let stations: Vec<StationId> = cases.iter().map(|c| c.station.clone()).collect();
        let params: Vec<BTreeMap<StationId, FittedParams>> = methods
            .iter()
            .map(|&m| load_day_params(config, m, lead_h, day, &stations))
            .collect::<Result<_, _>>()?;
        'case: for case in cases {
            let key = CaseKey { valid_time: case.valid_time(), station: case.station.clone(), lead_h };
            let mut row = Vec::new();
            for (spec, p) in methods.iter().zip(&params) {
                let reason = match p.get(&case.station) {
                    None => "missing parameter file",
                    Some(fp) => match predictive_for(fp, case) {
                        Some(f) => {
                            row.push((spec.name(), f));
                            continue;
                        }
                        None => "predictive undefined",
                    },
                };
                out.gaps.push(Gap { lead_h, date: day, station: case.station.clone(), method: spec.name(), reason: reason.into() });
                continue 'case;
            }
            if with_reference {
                let raw = EmpiricalEnsemble::new(case.members())?;
                let clim = climatology_forecast(dataset, &case.station, case.init_date, lead_h, clim_size, config.climatology_pooled);
                if clim.members.is_empty() {
                    out.gaps.push(Gap {
                        lead_h,
                        date: day,
                        station: case.station.clone(),
                        method: "climatology".into(),
                        reason: "no past observations".into(),
                    });
                    continue;
                }
                row.push(("raw".into(), ProbForecast::Ensemble(raw)));
                row.push(("climatology".into(), ProbForecast::Ensemble(EmpiricalEnsemble::new(clim.members)?)));
            }
            for (name, f) in row {
                out.forecasts.entry(name).or_default().push((key.clone(), f));
            }
        }
    }
    Ok(out)
}

/// Writes predictive summaries of the configured method.
pub fn cmd_predict(config: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dataset = load_data(config)?;
    let spec = config.primary_method();
    let single = RunConfig { verify_methods: Some(vec![spec]), ..config.clone() };
    let level = config.report.interval_level.unwrap_or(crate::verification::nominal_level(
        ENS_SIZE + usize::from(dataset.has_hres()) + usize::from(dataset.has_ctrl()),
    ));
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let path = config.out_dir.join(format!("predictions_{}.csv", spec.name()));
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<Vec<Gap>> {
        writeln!(w, "station,valid_time,lead_h,mean,median,lo,hi,p_xmax,obs")?;
        let mut gaps = Vec::new();
        for lead in leads(&single, &dataset) {
            let day = collect_forecasts(&single, &dataset, lead, false).map_err(std::io::Error::other)?;
            gaps.extend(day.gaps);
            for (key, f) in day.forecasts.get(&spec.name()).into_iter().flatten() {
                let (lo, hi) = crate::verification::central_interval(f, level).map_err(std::io::Error::other)?;
                let median = f.median().map_err(std::io::Error::other)?;
                let p_max = 1.0 - f.cdf_left(config.x_max);
                let obs = dataset.observation_at(&key.station, key.valid_time).map_or(String::new(), |o| o.to_string());
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    key.station,
                    key.valid_time.format("%Y-%m-%dT%H:%M"),
                    key.lead_h,
                    f.mean(),
                    median,
                    lo,
                    hi,
                    p_max,
                    obs
                )?;
            }
        }
        w.flush()?;
        Ok(gaps)
    };
    let gaps = write().map_err(io_err(&path))?;
    for g in &gaps {
        log::warn!("gap: lead {} h, {}, {}: {} ({})", g.lead_h, g.date, g.station, g.method, g.reason);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub report: VerificationReport,
    pub gaps: Vec<Gap>,
    pub notices: Vec<String>,
}

/// Scores the fitted methods, the raw ensemble and climatology on paired
/// case sets; writes `report.json` and `report.csv`.
pub fn cmd_verify(config: &RunConfig) -> Result<VerifyOutput, PipelineError> {
    let dataset = load_data(config)?;
    let mut all: BTreeMap<String, Vec<(CaseKey, ProbForecast)>> = BTreeMap::new();
    let mut gaps = Vec::new();
    for lead in leads(config, &dataset) {
        let day = collect_forecasts(config, &dataset, lead, true)?;
        gaps.extend(day.gaps);
        for (name, f) in day.forecasts {
            all.entry(name).or_default().extend(f);
        }
    }
    let mut notices = Vec::new();
    for g in &gaps {
        log::warn!("gap: lead {} h, {}, {}: {} ({})", g.lead_h, g.date, g.station, g.method, g.reason);
    }
    if !gaps.is_empty() {
        notices.push(format!("{} cases excluded from every method because of gaps", gaps.len()));
    }
    notices.push("LogS is not defined for raw and climatological ensembles".into());
    let methods: Vec<MethodForecasts> = all.into_iter().map(|(name, forecasts)| MethodForecasts { name, forecasts }).collect();
    if methods.is_empty() {
        return Err(PipelineError::Config("no verifiable cases".into()));
    }
    let mut report_config = config.report.clone();
    report_config.seed ^= config.seed;
    let report = build_report(&dataset, &methods, &report_config)?;
    let out = VerifyOutput { report, gaps, notices };
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    write_json(&config.out_dir.join("report.json"), &out)?;
    let csv_path = config.out_dir.join("report.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut w = BufWriter::new(file);
    out.report.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&csv_path))?;
    Ok(out)
}

/// Writes the daily cluster assignments of every lead to
/// `clusters_{lead}.csv`.
pub fn cmd_cluster(config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let dataset = load_data(config)?;
    let CompositionMode::SemiLocal { .. } = config.mode else {
        return Err(PipelineError::Config("cluster needs mode semi_local".into()));
    };
    let plan = config.plan_for(config.primary_method());
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let mut paths = Vec::new();
    for lead in leads(config, &dataset) {
        let mut assignments = Vec::new();
        let mut previous: Option<ClusterAssignment> = None;
        for day in verification_days(config, &dataset, lead, plan.window_days)? {
            match cluster_for_day(&dataset, day, lead, &plan, config.seed, previous.as_ref())? {
                Some(a) => {
                    previous = Some(a.clone());
                    assignments.push(a);
                }
                None => log::info!("lead {lead} h, {day}: too little data to cluster, regional fallback"),
            }
        }
        let path = config.out_dir.join(format!("clusters_{lead}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        write_assignments(&mut w, &assignments)?;
        w.flush().map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
