//! Rolling training windows and spatial composition of training sets:
//! regional, local, or semi-local via k-means clusters of stations.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{ensemble_stats, Dataset, ForecastCase, StationId};
use crate::distributions::seeded_rng;
use crate::numeric::{fsum, mean, quantile_sorted, sample_sd};

pub const DEFAULT_FEATURE_QUANTILES: usize = 10;
pub const KMEANS_RESTARTS: usize = 10;
const LLOYD_MAX_ITER: usize = 300;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("need at least {need} stations with features, got {have}")]
    TooFewStations { have: usize, need: usize },
    #[error("station {station} has {have} observations in the window, need {need}")]
    InsufficientData { station: StationId, have: usize, need: usize },
    #[error("feature vectors differ in length")]
    RaggedFeatures,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CompositionMode {
    Regional,
    Local,
    SemiLocal { k: usize },
}

impl fmt::Display for CompositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Regional => f.write_str("regional"),
            Self::Local => f.write_str("local"),
            Self::SemiLocal { .. } => f.write_str("semilocal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub window_days: u32,
    pub mode: CompositionMode,
    #[serde(default = "default_quantiles")]
    pub feature_quantile_count: usize,
}

fn default_quantiles() -> usize {
    DEFAULT_FEATURE_QUANTILES
}

impl TrainingPlan {
    pub fn new(window_days: u32, mode: CompositionMode) -> Self {
        Self { window_days, mode, feature_quantile_count: DEFAULT_FEATURE_QUANTILES }
    }

    pub fn validate(&self, station_count: usize) -> Result<(), TrainingError> {
        if self.window_days == 0 {
            return Err(TrainingError::InvalidPlan("window must be at least one day".into()));
        }
        if self.feature_quantile_count == 0 {
            return Err(TrainingError::InvalidPlan("feature quantile count must be positive".into()));
        }
        if let CompositionMode::SemiLocal { k } = self.mode {
            if k == 0 || k > station_count {
                return Err(TrainingError::InvalidPlan(format!("cluster count {k} outside 1..={station_count}")));
            }
        }
        Ok(())
    }
}

/// Whole days between initialization and the valid date's training cutoff.
pub fn lead_days(lead_h: u32) -> u64 {
    u64::from(lead_h.div_ceil(24)).max(1)
}

/// Inclusive range of valid dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// Training valid dates for verification day `d`: the `n` days ending
/// `ceil(lead_h/24)` days before `d`.
pub fn rolling_window(d: NaiveDate, lead_h: u32, n: u32) -> Result<DateInterval, TrainingError> {
    if n == 0 {
        return Err(TrainingError::InvalidPlan("window must be at least one day".into()));
    }
    let end = d - Days::new(lead_days(lead_h));
    let start = end - Days::new(u64::from(n) - 1);
    Ok(DateInterval { start, end })
}

/// Whether a case can enter a training set.
pub fn is_trainable(case: &ForecastCase, has_hres: bool, has_ctrl: bool) -> bool {
    case.obs.is_some()
        && case.f_ens.is_some()
        && (!has_hres || case.f_hres.is_some())
        && (!has_ctrl || case.f_ctrl.is_some())
}

/// Trainable cases of one lead time whose valid date lies in the window,
/// ordered by valid date then station.
pub fn window_cases<'a>(dataset: &'a Dataset, window: DateInterval, lead_h: u32) -> Vec<&'a ForecastCase> {
    let mut out: Vec<&ForecastCase> = window
        .days()
        .flat_map(|day| dataset.cases_valid_on(lead_h, day))
        .filter(|c| is_trainable(c, dataset.has_hres(), dataset.has_ctrl()))
        .collect();
    out.sort_by(|a, b| a.valid_date().cmp(&b.valid_date()).then_with(|| a.station.cmp(&b.station)));
    out
}

/// Levels `(i − 0.5)/q` for `i = 1..=q`.
pub fn feature_levels(q: usize) -> Vec<f64> {
    (1..=q).map(|i| (i as f64 - 0.5) / q as f64).collect()
}

/// Unstandardized features: quantiles of the observations followed by the
/// same quantiles of the ensemble-mean errors `f̄ − obs`.
pub fn station_features(station: &StationId, cases: &[&ForecastCase], q: usize) -> Result<Vec<f64>, TrainingError> {
    let mut obs = Vec::new();
    let mut err = Vec::new();
    for c in cases.iter().filter(|c| &c.station == station) {
        let (Some(o), Ok(stats)) = (c.obs, ensemble_stats(c)) else { continue };
        obs.push(o);
        err.push(stats.mean_ens - o);
    }
    if obs.len() < q {
        return Err(TrainingError::InsufficientData { station: station.clone(), have: obs.len(), need: q });
    }
    obs.sort_by(f64::total_cmp);
    err.sort_by(f64::total_cmp);
    let levels = feature_levels(q);
    Ok(levels
        .iter()
        .map(|&p| quantile_sorted(&obs, p))
        .chain(levels.iter().map(|&p| quantile_sorted(&err, p)))
        .collect())
}

/// Standardizes every coordinate across stations to zero mean and unit
/// variance; constant coordinates become zero.
pub fn standardize(features: &BTreeMap<StationId, Vec<f64>>) -> Result<BTreeMap<StationId, Vec<f64>>, TrainingError> {
    let dim = features.values().next().map_or(0, Vec::len);
    if features.values().any(|v| v.len() != dim) {
        return Err(TrainingError::RaggedFeatures);
    }
    let mut out: BTreeMap<StationId, Vec<f64>> = features.iter().map(|(s, v)| (s.clone(), v.clone())).collect();
    for j in 0..dim {
        let column: Vec<f64> = features.values().map(|v| v[j]).collect();
        let m = mean(&column);
        let sd = if column.len() > 1 { sample_sd(&column) } else { 0.0 };
        for v in out.values_mut() {
            v[j] = if sd > 0.0 { (v[j] - m) / sd } else { 0.0 };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub valid_for_day: NaiveDate,
    pub labels: BTreeMap<StationId, usize>,
    pub wcss: f64,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.labels.values().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, cluster: usize) -> Vec<&StationId> {
        self.labels.iter().filter(|(_, &c)| c == cluster).map(|(s, _)| s).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    fsum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// D²-weighted seeding; falls back to the farthest point when all
/// remaining distances vanish.
fn seed_centroids<R: Rng>(points: &[&Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total = fsum(d2.iter().copied());
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            centroids.len() % points.len()
        };
        centroids.push(points[idx].clone());
    }
    centroids
}

fn lloyd(points: &[&Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..LLOYD_MAX_ITER {
        for (j, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (d, c) in centroid.iter_mut().enumerate().take(dim) {
                *c = fsum(members.iter().map(|p| p[d])) / members.len() as f64;
            }
        }
        // Re-seed empty clusters at the point farthest from its centroid.
        for j in 0..k {
            if labels.iter().any(|&l| l == j) {
                continue;
            }
            let far = (0..points.len())
                .max_by(|&a, &b| {
                    let da = sq_dist(points[a], &centroids[labels[a]]);
                    let db = sq_dist(points[b], &centroids[labels[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("nonempty");
            centroids[j] = points[far].clone();
            labels[far] = j;
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let wcss = fsum(points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])));
    (labels, wcss)
}

/// Relabels so clusters are numbered by first appearance.
fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// k-means with D²-weighted seeding and several restarts; the assignment
/// with the smallest within-cluster sum of squares is kept.
pub fn kmeans_cluster(
    features: &BTreeMap<StationId, Vec<f64>>,
    k: usize,
    seed: u64,
    day: NaiveDate,
) -> Result<ClusterAssignment, TrainingError> {
    if k == 0 {
        return Err(TrainingError::InvalidPlan("cluster count must be positive".into()));
    }
    if features.len() < k {
        return Err(TrainingError::TooFewStations { have: features.len(), need: k });
    }
    let dim = features.values().next().map_or(0, Vec::len);
    if features.values().any(|v| v.len() != dim) {
        return Err(TrainingError::RaggedFeatures);
    }
    let points: Vec<&Vec<f64>> = features.values().collect();
    let mut rng = seeded_rng(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, wcss) = lloyd(&points, seed_centroids(&points, k, &mut rng));
        let labels = canonical_labels(&labels);
        if best.as_ref().is_none_or(|b| wcss < b.1) {
            best = Some((labels, wcss));
        }
    }
    let (labels, wcss) = best.expect("at least one restart");
    Ok(ClusterAssignment {
        valid_for_day: day,
        labels: features.keys().cloned().zip(labels).collect(),
        wcss,
    })
}

/// Semi-local assignment for verification day `d`. Stations without enough
/// window data keep their previous cluster; `None` means the day falls back
/// to a single regional unit.
pub fn cluster_for_day(
    dataset: &Dataset,
    d: NaiveDate,
    lead_h: u32,
    plan: &TrainingPlan,
    seed: u64,
    previous: Option<&ClusterAssignment>,
) -> Result<Option<ClusterAssignment>, TrainingError> {
    let CompositionMode::SemiLocal { k } = plan.mode else {
        return Ok(None);
    };
    plan.validate(dataset.stations().len())?;
    let window = rolling_window(d, lead_h, plan.window_days)?;
    let cases = window_cases(dataset, window, lead_h);
    let mut raw = BTreeMap::new();
    let mut lacking = Vec::new();
    for s in dataset.stations() {
        match station_features(s, &cases, plan.feature_quantile_count) {
            Ok(f) => {
                raw.insert(s.clone(), f);
            }
            Err(TrainingError::InsufficientData { .. }) => lacking.push(s.clone()),
            Err(e) => return Err(e),
        }
    }
    let previous = previous.filter(|p| lacking.iter().all(|s| p.labels.contains_key(s)));
    if raw.len() < k || (!lacking.is_empty() && previous.is_none()) {
        return Ok(None);
    }
    let mut assignment = kmeans_cluster(&standardize(&raw)?, k, seed, d)?;
    if let Some(prev) = previous {
        for s in lacking {
            assignment.labels.insert(s.clone(), prev.labels[&s]);
        }
        let keys: Vec<StationId> = assignment.labels.keys().cloned().collect();
        let relabeled = canonical_labels(&assignment.labels.values().copied().collect::<Vec<_>>());
        assignment.labels = keys.into_iter().zip(relabeled).collect();
    }
    Ok(Some(assignment))
}

/// Identifies one training set and the model fitted to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FitUnit {
    Regional,
    Station(StationId),
    Cluster(usize),
}

impl fmt::Display for FitUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Regional => f.write_str("regional"),
            Self::Station(s) => write!(f, "station-{s}"),
            Self::Cluster(c) => write!(f, "cluster-{c}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Assembly<'a> {
    pub units: BTreeMap<FitUnit, Vec<&'a ForecastCase>>,
    /// Which unit serves each station.
    pub station_unit: BTreeMap<StationId, FitUnit>,
    /// Units below the minimum case count; callers use the regional fit.
    pub undersized: Vec<FitUnit>,
    pub window: DateInterval,
}

impl Assembly<'_> {
    pub fn unit_for(&self, station: &StationId) -> &FitUnit {
        self.station_unit.get(station).unwrap_or(&FitUnit::Regional)
    }
}

/// Training sets for verification day `d` and one lead time.
pub fn assemble<'a>(
    dataset: &'a Dataset,
    d: NaiveDate,
    lead_h: u32,
    plan: &TrainingPlan,
    assignment: Option<&ClusterAssignment>,
    min_cases: usize,
) -> Result<Assembly<'a>, TrainingError> {
    plan.validate(dataset.stations().len())?;
    let window = rolling_window(d, lead_h, plan.window_days)?;
    let cases = window_cases(dataset, window, lead_h);
    let station_unit: BTreeMap<StationId, FitUnit> = dataset
        .stations()
        .iter()
        .map(|s| {
            let unit = match (plan.mode, assignment) {
                (CompositionMode::Local, _) => FitUnit::Station(s.clone()),
                (CompositionMode::SemiLocal { .. }, Some(a)) => {
                    a.labels.get(s).map_or(FitUnit::Regional, |&c| FitUnit::Cluster(c))
                }
                _ => FitUnit::Regional,
            };
            (s.clone(), unit)
        })
        .collect();
    let mut units: BTreeMap<FitUnit, Vec<&ForecastCase>> = station_unit.values().map(|u| (u.clone(), Vec::new())).collect();
    for c in &cases {
        units.get_mut(&station_unit[&c.station]).expect("unit per station").push(c);
    }
    let undersized = units.iter().filter(|(_, v)| v.len() < min_cases).map(|(u, _)| u.clone()).collect();
    Ok(Assembly { units, station_unit, undersized, window })
}

/// Writes assignments as `date,station,cluster` rows.
pub fn write_assignments<W: Write>(mut out: W, assignments: &[ClusterAssignment]) -> Result<(), TrainingError> {
    writeln!(out, "date,station,cluster")?;
    for a in assignments {
        for (s, c) in &a.labels {
            writeln!(out, "{},{},{}", a.valid_for_day, s, c)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn window_examples() {
        let d = date(2021, 1, 1) + Days::new(99);
        let w = rolling_window(d, 48, 25).unwrap();
        assert_eq!(w.start, date(2021, 1, 1) + Days::new(73));
        assert_eq!(w.end, date(2021, 1, 1) + Days::new(97));
        assert_eq!(w.len(), 25);

        let w = rolling_window(d, 48, 1).unwrap();
        assert_eq!(w.start, w.end);
        assert_eq!(w.end, d - Days::new(2));

        let w = rolling_window(date(2021, 12, 31), 6, 350).unwrap();
        assert_eq!(w.end, date(2021, 12, 30));
        assert_eq!(w.len(), 350);
        assert!(rolling_window(d, 6, 0).is_err());
    }

    #[test]
    fn lead_days_round_up() {
        assert_eq!(lead_days(6), 1);
        assert_eq!(lead_days(24), 1);
        assert_eq!(lead_days(30), 2);
        assert_eq!(lead_days(120), 5);
    }

    #[test]
    fn feature_levels_are_equidistant() {
        let l = feature_levels(10);
        assert_eq!(l.len(), 10);
        assert!((l[0] - 0.05).abs() < 1e-15 && (l[9] - 0.95).abs() < 1e-15);
    }

    fn pts(v: &[(&str, Vec<f64>)]) -> BTreeMap<StationId, Vec<f64>> {
        v.iter().map(|(s, p)| (StationId::new(*s).unwrap(), p.clone())).collect()
    }

    #[test]
    fn kmeans_trivial_cases() {
        let f = pts(&[("a", vec![0.0, 1.0]), ("b", vec![3.0, 1.0]), ("c", vec![5.0, -2.0])]);
        let day = date(2021, 5, 5);
        let each = kmeans_cluster(&f, 3, 1, day).unwrap();
        assert_eq!(each.wcss, 0.0);
        assert_eq!(each.cluster_count(), 3);
        let one = kmeans_cluster(&f, 1, 1, day).unwrap();
        assert!(one.labels.values().all(|&l| l == 0));
        assert!(kmeans_cluster(&f, 4, 1, day).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let f = pts(&[
            ("a", vec![0.0]),
            ("b", vec![0.2]),
            ("c", vec![5.0]),
            ("d", vec![5.3]),
            ("e", vec![9.0]),
            ("f", vec![2.5]),
        ]);
        let day = date(2021, 5, 5);
        assert_eq!(kmeans_cluster(&f, 3, 42, day).unwrap(), kmeans_cluster(&f, 3, 42, day).unwrap());
    }

    #[test]
    fn standardize_zero_mean_unit_variance() {
        let f = pts(&[("a", vec![1.0, 7.0]), ("b", vec![3.0, 7.0]), ("c", vec![8.0, 7.0])]);
        let z = standardize(&f).unwrap();
        let col: Vec<f64> = z.values().map(|v| v[0]).collect();
        assert!(mean(&col).abs() < 1e-15);
        assert!((sample_sd(&col) - 1.0).abs() < 1e-14);
        assert!(z.values().all(|v| v[1] == 0.0));
    }

    #[test]
    fn cluster_csv_rows() {
        let a = ClusterAssignment {
            valid_for_day: date(2021, 3, 1),
            labels: pts(&[("x", vec![]), ("y", vec![])]).into_keys().zip([0, 1]).collect(),
            wcss: 0.0,
        };
        let mut buf = Vec::new();
        write_assignments(&mut buf, &[a]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "date,station,cluster\n2021-03-01,x,0\n2021-03-01,y,1\n");
    }
}
