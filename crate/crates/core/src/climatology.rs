//! Climatological reference forecasts: recent observations of the station
//! used as an ensemble.

use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data_io::{valid_time, Dataset, StationId};
use crate::training::lead_days;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimForecast {
    pub station: StationId,
    pub members: Vec<f64>,
    /// Requested size.
    pub size: usize,
}

impl ClimForecast {
    /// Fewer members were available than requested.
    pub fn is_short(&self) -> bool {
        self.members.len() < self.size
    }
}

/// The `k` most recent observations of `station` with valid date at most
/// `d − ceil(lead_h/24)`. With `hour_matched`, only observations at the UTC
/// hour of the forecast valid time are used (one per day).
pub fn climatology_forecast(
    dataset: &Dataset,
    station: &StationId,
    init_date: NaiveDate,
    lead_h: u32,
    k: usize,
    hour_matched: bool,
) -> ClimForecast {
    let vt = valid_time(init_date, lead_h);
    let last_day = vt.date() - Days::new(lead_days(lead_h));
    let to = NaiveDateTime::new(last_day, NaiveTime::from_hms_opt(23, 59, 59).expect("valid time"));
    let from = NaiveDateTime::MIN;
    let mut members: Vec<f64> = dataset
        .observations_between(station, from, to)
        .rev()
        .filter(|(t, _)| !hour_matched || t.hour() == vt.hour())
        .take(k)
        .map(|(_, v)| v)
        .collect();
    members.reverse();
    ClimForecast { station: station.clone(), members, size: k }
}
