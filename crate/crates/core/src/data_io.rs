//! Forecast/observation archive: CSV schema, loading, pairing and per-case
//! ensemble statistics.
//!
//! The CSV header is
//! `station,init_date,lead_h,obs,f_hres,f_ctrl,f_ens_01,...,f_ens_50`.
//! The `f_hres` and `f_ctrl` columns are dropped entirely for datasets that
//! lack those members. Empty cells are missing values.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of exchangeable ensemble members.
pub const ENS_SIZE: usize = 50;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("duplicate case ({station}, {init_date}, {lead_h} h)")]
    DuplicateKey { station: StationId, init_date: NaiveDate, lead_h: u32 },
    #[error("case ({station}, {init_date}, {lead_h} h) has no ensemble forecast")]
    MissingForecast { station: StationId, init_date: NaiveDate, lead_h: u32 },
    #[error("station identifier must be non-empty")]
    EmptyStation,
    #[error("case x_max {found} differs from dataset x_max {expected}")]
    XMaxMismatch { expected: f64, found: f64 },
}

/// SYNOP station identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(String);

impl StationId {
    pub fn new(id: impl Into<String>) -> Result<Self, DataError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(DataError::EmptyStation);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One (station, initialization, lead time) record.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub station: StationId,
    pub init_date: NaiveDate,
    pub lead_time_h: u32,
    pub f_hres: Option<f64>,
    pub f_ctrl: Option<f64>,
    /// The 50 exchangeable members, or `None` for a missing forecast.
    pub f_ens: Option<Vec<f64>>,
    pub obs: Option<f64>,
    pub x_max: f64,
}

impl ForecastCase {
    pub fn valid_time(&self) -> NaiveDateTime {
        valid_time(self.init_date, self.lead_time_h)
    }

    pub fn valid_date(&self) -> NaiveDate {
        self.valid_time().date()
    }

    /// Every available raw member (HRES, CTRL, then ENS).
    pub fn members(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(ENS_SIZE + 2);
        out.extend(self.f_hres);
        out.extend(self.f_ctrl);
        if let Some(ens) = &self.f_ens {
            out.extend_from_slice(ens);
        }
        out
    }
}

/// Summary of the 50 exchangeable members for one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean_ens: f64,
    pub sd_ens: f64,
    /// Day of year (1..=366) of the forecast valid time.
    pub day_of_year: u32,
}

/// Initialization at 0000 UTC plus the lead time.
pub fn valid_time(init_date: NaiveDate, lead_time_h: u32) -> NaiveDateTime {
    init_date.and_time(NaiveTime::MIN) + Duration::hours(i64::from(lead_time_h))
}

/// Mean and sample standard deviation (divisor `n − 1`) of the exchangeable
/// members, with the valid-time day of year.
pub fn ensemble_stats(case: &ForecastCase) -> Result<EnsembleStats, DataError> {
    let ens = case.f_ens.as_ref().ok_or_else(|| DataError::MissingForecast {
        station: case.station.clone(),
        init_date: case.init_date,
        lead_h: case.lead_time_h,
    })?;
    let (mean_ens, sd_ens) = mean_sd(ens);
    Ok(EnsembleStats { mean_ens, sd_ens, day_of_year: case.valid_time().ordinal() })
}

/// Mean and sample sd, summed in sorted order so the result does not depend
/// on member order.
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// An immutable collection of forecast cases sharing one censoring bound.
#[derive(Debug, Clone)]
pub struct Dataset {
    cases: Vec<ForecastCase>,
    x_max: f64,
    stations: Vec<StationId>,
    has_hres: bool,
    has_ctrl: bool,
    clamped: usize,
    by_lead_date: HashMap<(u32, NaiveDate), Vec<usize>>,
    observations: BTreeMap<StationId, BTreeMap<NaiveDateTime, f64>>,
}

impl Dataset {
    /// Builds a dataset, checking key uniqueness and the shared `x_max`.
    pub fn new(cases: Vec<ForecastCase>, x_max: f64, has_hres: bool, has_ctrl: bool) -> Result<Self, DataError> {
        let mut keys = HashSet::with_capacity(cases.len());
        let mut stations = BTreeSet::new();
        let mut by_lead_date: HashMap<(u32, NaiveDate), Vec<usize>> = HashMap::new();
        let mut observations: BTreeMap<StationId, BTreeMap<NaiveDateTime, f64>> = BTreeMap::new();
        for (i, case) in cases.iter().enumerate() {
            if case.x_max != x_max {
                return Err(DataError::XMaxMismatch { expected: x_max, found: case.x_max });
            }
            if !keys.insert((case.station.clone(), case.init_date, case.lead_time_h)) {
                return Err(DataError::DuplicateKey {
                    station: case.station.clone(),
                    init_date: case.init_date,
                    lead_h: case.lead_time_h,
                });
            }
            stations.insert(case.station.clone());
            by_lead_date.entry((case.lead_time_h, case.valid_date())).or_default().push(i);
            if let Some(obs) = case.obs {
                observations.entry(case.station.clone()).or_default().entry(case.valid_time()).or_insert(obs);
            }
        }
        Ok(Self {
            cases,
            x_max,
            stations: stations.into_iter().collect(),
            has_hres,
            has_ctrl,
            clamped: 0,
            by_lead_date,
            observations,
        })
    }

    pub fn cases(&self) -> &[ForecastCase] {
        &self.cases
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Stations in sorted order.
    pub fn stations(&self) -> &[StationId] {
        &self.stations
    }

    pub fn has_hres(&self) -> bool {
        self.has_hres
    }

    pub fn has_ctrl(&self) -> bool {
        self.has_ctrl
    }

    /// Number of values clamped down to `x_max` while loading.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Cases whose ensemble forecast is wholly missing.
    pub fn missing_forecast_count(&self) -> usize {
        self.cases.iter().filter(|c| c.f_ens.is_none()).count()
    }

    pub fn lead_times(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.cases.iter().map(|c| c.lead_time_h).collect();
        set.into_iter().collect()
    }

    /// Range of valid dates present, if any.
    pub fn valid_date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let mut dates = self.cases.iter().map(ForecastCase::valid_date);
        let first = dates.next()?;
        Some(dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    /// Cases with the given lead time whose valid date is `date`, in file order.
    pub fn cases_valid_on(&self, lead_h: u32, date: NaiveDate) -> impl Iterator<Item = &ForecastCase> {
        self.by_lead_date
            .get(&(lead_h, date))
            .into_iter()
            .flatten()
            .map(move |&i| &self.cases[i])
    }

    /// The observation at a station and valid time, from any lead time.
    pub fn observation_at(&self, station: &StationId, time: NaiveDateTime) -> Option<f64> {
        self.observations.get(station)?.get(&time).copied()
    }

    /// Observations of a station with valid time in `[from, to]`, oldest first.
    pub fn observations_between(
        &self,
        station: &StationId,
        from: NaiveDateTime,
        to: NaiveDateTime,
    ) -> impl DoubleEndedIterator<Item = (NaiveDateTime, f64)> + '_ {
        self.observations
            .get(station)
            .filter(|_| from <= to)
            .into_iter()
            .flat_map(move |m| m.range(from..=to).map(|(t, v)| (*t, *v)))
    }
}

struct Columns {
    station: usize,
    init_date: usize,
    lead_h: usize,
    obs: usize,
    f_hres: Option<usize>,
    f_ctrl: Option<usize>,
    f_ens: Vec<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, DataError> {
        let mut positions = HashMap::new();
        for (i, name) in header.iter().enumerate() {
            if positions.insert(name.trim().to_string(), i).is_some() {
                return Err(DataError::Header(format!("duplicate column {name}")));
            }
        }
        let ens_names: Vec<String> = (1..=ENS_SIZE).map(|k| format!("f_ens_{k:02}")).collect();
        let known: HashSet<&str> = ["station", "init_date", "lead_h", "obs", "f_hres", "f_ctrl"]
            .into_iter()
            .chain(ens_names.iter().map(String::as_str))
            .collect();
        if let Some(unknown) = positions.keys().find(|k| !known.contains(k.as_str())) {
            return Err(DataError::Header(format!("unknown column {unknown}")));
        }
        let require = |name: &str| {
            positions.get(name).copied().ok_or_else(|| DataError::Header(format!("missing column {name}")))
        };
        Ok(Self {
            station: require("station")?,
            init_date: require("init_date")?,
            lead_h: require("lead_h")?,
            obs: require("obs")?,
            f_hres: positions.get("f_hres").copied(),
            f_ctrl: positions.get("f_ctrl").copied(),
            f_ens: ens_names.iter().map(|n| require(n)).collect::<Result<_, _>>()?,
        })
    }
}

/// Loads a dataset from a CSV file.
pub fn load_dataset(path: impl AsRef<Path>, x_max: f64) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), x_max)
}

/// Parses the CSV archive format. Values above `x_max` are clamped to it.
pub fn read_dataset<R: Read>(reader: R, x_max: f64) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let cols = Columns::from_header(rdr.headers()?)?;
    let mut cases = Vec::new();
    let mut clamped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| DataError::Parse { line, message };
        let mut value = |idx: usize, name: &str| -> Result<Option<f64>, DataError> {
            let raw = record[idx].trim();
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| parse_err(format!("{name}: cannot parse {raw:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(DataError::Schema { line, message: format!("{name}: {v} outside [0, x_max]") });
            }
            if v > x_max {
                clamped += 1;
                return Ok(Some(x_max));
            }
            Ok(Some(v))
        };

        let obs = value(cols.obs, "obs")?;
        let f_hres = cols.f_hres.map(|i| value(i, "f_hres")).transpose()?.flatten();
        let f_ctrl = cols.f_ctrl.map(|i| value(i, "f_ctrl")).transpose()?.flatten();
        let members: Vec<Option<f64>> =
            cols.f_ens.iter().map(|&i| value(i, "f_ens")).collect::<Result<_, _>>()?;
        let present = members.iter().filter(|m| m.is_some()).count();
        let f_ens = match present {
            0 => None,
            ENS_SIZE => Some(members.into_iter().flatten().collect()),
            n => {
                return Err(DataError::Schema {
                    line,
                    message: format!("{n} of {ENS_SIZE} ensemble members present"),
                })
            }
        };

        let station = StationId::new(record[cols.station].trim())
            .map_err(|_| DataError::Schema { line, message: "empty station".into() })?;
        let raw_date = record[cols.init_date].trim();
        let init_date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| DataError::Parse { line, message: format!("init_date: cannot parse {raw_date:?}") })?;
        let raw_lead = record[cols.lead_h].trim();
        let lead_time_h: u32 = raw_lead
            .parse()
            .map_err(|_| DataError::Parse { line, message: format!("lead_h: cannot parse {raw_lead:?}") })?;
        if lead_time_h < 6 || lead_time_h % 6 != 0 {
            return Err(DataError::Schema { line, message: format!("lead_h {lead_time_h} is not a positive multiple of 6") });
        }
        cases.push(ForecastCase { station, init_date, lead_time_h, f_hres, f_ctrl, f_ens, obs, x_max });
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} values above x_max = {x_max} km");
    }
    let mut dataset = Dataset::new(cases, x_max, cols.f_hres.is_some(), cols.f_ctrl.is_some())?;
    dataset.clamped = clamped;
    Ok(dataset)
}

/// Writes a dataset in the same CSV schema it is read from.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_dataset_to(dataset, std::io::BufWriter::new(file))
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["station", "init_date", "lead_h", "obs"].iter().map(|s| s.to_string()).collect();
    if dataset.has_hres {
        header.push("f_hres".into());
    }
    if dataset.has_ctrl {
        header.push("f_ctrl".into());
    }
    header.extend((1..=ENS_SIZE).map(|k| format!("f_ens_{k:02}")));
    wtr.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for case in &dataset.cases {
        let mut row = vec![
            case.station.to_string(),
            case.init_date.format("%Y-%m-%d").to_string(),
            case.lead_time_h.to_string(),
            fmt(case.obs),
        ];
        if dataset.has_hres {
            row.push(fmt(case.f_hres));
        }
        if dataset.has_ctrl {
            row.push(fmt(case.f_ctrl));
        }
        match &case.f_ens {
            Some(ens) => row.extend(ens.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), ENS_SIZE)),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
