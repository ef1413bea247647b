use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::model::{CatchmentId, DailySeries, Station, StationId, StationKind, Variable};

/// Trailing window, in days up to and including the reference date, in which
/// a station must have observed something to count as active.
pub const ACTIVE_WINDOW_DAYS: u64 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StationSpan {
    pub station_id: StationId,
    pub name: String,
    pub kind: StationKind,
    pub first_observation: Option<NaiveDate>,
    pub last_observation: Option<NaiveDate>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariableCoverage {
    pub active_station_count: usize,
    pub inactive_station_count: usize,
    pub earliest_observation: Option<NaiveDate>,
    pub latest_observation: Option<NaiveDate>,
    pub stations: Vec<StationSpan>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KindCoverage {
    pub active: Vec<StationId>,
    pub inactive: Vec<StationId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageReport {
    pub catchment_id: CatchmentId,
    pub reference_date: NaiveDate,
    pub variables: BTreeMap<Variable, VariableCoverage>,
    pub kinds: BTreeMap<StationKind, KindCoverage>,
}

fn first_last(s: &DailySeries) -> Option<(NaiveDate, NaiveDate)> {
    let first = s.values.iter().position(Option::is_some)?;
    let last = s.values.iter().rposition(Option::is_some)?;
    Some((s.date_at(first), s.date_at(last)))
}

/// How well a catchment is gauged as of `today`.
///
/// `stations` are the stations attributed to the catchment (and its
/// descendants); `series` are their raw observation series. A station is
/// active for a variable when one of its series of that variable holds a
/// value within the trailing [`ACTIVE_WINDOW_DAYS`] ending on `today`.
pub fn coverage_report(
    catchment_id: CatchmentId,
    stations: &[&Station],
    series: &[&DailySeries],
    today: NaiveDate,
) -> CoverageReport {
    let window_start = today
        .checked_sub_days(Days::new(ACTIVE_WINDOW_DAYS - 1))
        .expect("date arithmetic within chrono range");
    let mut variables: BTreeMap<Variable, VariableCoverage> =
        Variable::ALL.iter().map(|v| (*v, VariableCoverage::default())).collect();
    let mut active_any: BTreeMap<&StationId, bool> = BTreeMap::new();

    for station in stations {
        active_any.entry(&station.id).or_insert(false);
        for variable in Variable::ALL {
            let own: Vec<&&DailySeries> = series
                .iter()
                .filter(|s| s.station_id == station.id && s.variable == variable)
                .collect();
            if own.is_empty() {
                continue;
            }
            let spans: Vec<(NaiveDate, NaiveDate)> = own.iter().filter_map(|s| first_last(s)).collect();
            let first = spans.iter().map(|s| s.0).min();
            let last = spans.iter().map(|s| s.1).max();
            let active = own.iter().any(|s| {
                s.observations()
                    .any(|(d, _)| d >= window_start && d <= today)
            });
            if active {
                active_any.insert(&station.id, true);
            }
            let cov = variables.get_mut(&variable).expect("all variables present");
            if active {
                cov.active_station_count += 1;
            } else {
                cov.inactive_station_count += 1;
            }
            cov.earliest_observation = match (cov.earliest_observation, first) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            cov.latest_observation = match (cov.latest_observation, last) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            cov.stations.push(StationSpan {
                station_id: station.id.clone(),
                name: station.name.clone(),
                kind: station.kind,
                first_observation: first,
                last_observation: last,
                active,
            });
        }
    }

    let mut kinds: BTreeMap<StationKind, KindCoverage> = BTreeMap::new();
    for kind in [StationKind::Gauging, StationKind::Climate, StationKind::Rainfall] {
        kinds.insert(kind, KindCoverage::default());
    }
    for station in stations {
        let entry = kinds.get_mut(&station.kind).expect("all kinds present");
        if active_any[&station.id] {
            entry.active.push(station.id.clone());
        } else {
            entry.inactive.push(station.id.clone());
        }
    }
    for k in kinds.values_mut() {
        k.active.sort();
        k.active.dedup();
        k.inactive.sort();
        k.inactive.dedup();
    }

    CoverageReport {
        catchment_id,
        reference_date: today,
        variables,
        kinds,
    }
}
