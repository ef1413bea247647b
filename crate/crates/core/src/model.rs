//! Canonical domain types shared by every other module: variables, the dense
//! daily grid, stations, gap reports and correction provenance.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("invalid date range: {start} is after {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("date {date} outside series range {start}..={end}")]
    OutOfRange {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(SeriesId);
string_id!(StationId);
string_id!(CatchmentId);
string_id!(UserId);

/// How daily values combine into a coarser period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationSemantic {
    Sum,
    Mean,
}

/// Observed quantity. Unit and aggregation semantic are fixed per code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variable {
    Precipitation,
    Discharge,
    Temperature,
    Evaporation,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::Precipitation,
        Variable::Discharge,
        Variable::Temperature,
        Variable::Evaporation,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Variable::Precipitation => "precipitation",
            Variable::Discharge => "discharge",
            Variable::Temperature => "temperature",
            Variable::Evaporation => "evaporation",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Precipitation | Variable::Evaporation => "mm/day",
            Variable::Discharge => "m³/s",
            Variable::Temperature => "°C",
        }
    }

    pub fn semantic(self) -> AggregationSemantic {
        match self {
            Variable::Precipitation | Variable::Evaporation => AggregationSemantic::Sum,
            Variable::Discharge | Variable::Temperature => AggregationSemantic::Mean,
        }
    }

    pub fn from_code(code: &str) -> Option<Variable> {
        Variable::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::from_code(s).ok_or_else(|| format!("unknown variable code '{s}'"))
    }
}

/// Per-slot quality state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityFlag {
    Raw,
    Filled,
    RemovedOutlier,
    Suspect,
}

/// Inclusive range of civil dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, GridError> {
        if start > end {
            return Err(GridError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn len_days(&self) -> usize {
        day_count(self.start, self.end)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn intersect(&self, other: &DateRange) -> Option<DateRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(DateRange { start, end })
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

/// Number of calendar days in `[start, end]`; zero when inverted.
pub fn day_count(start: NaiveDate, end: NaiveDate) -> usize {
    if start > end {
        0
    } else {
        (end - start).num_days() as usize + 1
    }
}

pub fn add_days(d: NaiveDate, n: usize) -> NaiveDate {
    d.checked_add_days(Days::new(n as u64))
        .expect("date arithmetic within chrono range")
}

/// Every calendar day in `[start, end]`, ascending.
pub fn make_daily_grid(start: NaiveDate, end: NaiveDate) -> Result<Vec<NaiveDate>, GridError> {
    Ok(DateRange::new(start, end)?.days().collect())
}

/// Method used to derive a corrected series version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMethod {
    #[serde(rename = "regression-1")]
    Regression1,
    RegressionMulti,
    Idw,
    NormalRatio,
    TemporalLinear,
    External,
    OutlierRemoval,
}

impl CorrectionMethod {
    pub fn is_fill(self) -> bool {
        !matches!(self, CorrectionMethod::OutlierRemoval)
    }
}

/// Provenance attached to every derived series version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrectionRecord {
    pub method: CorrectionMethod,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub source_station_ids: Vec<StationId>,
    pub created_at: DateTime<Utc>,
    pub created_by: UserId,
}

impl CorrectionRecord {
    pub fn is_well_formed(&self) -> bool {
        self.method == CorrectionMethod::External || !self.parameters.is_empty()
    }
}

/// Dense daily time series. `values[i]` belongs to `start + i` days;
/// `None` is an explicit MISSING slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DailySeries {
    pub id: SeriesId,
    pub station_id: StationId,
    pub variable: Variable,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub values: Vec<Option<f64>>,
    pub flags: Vec<QualityFlag>,
    pub version: u32,
    pub parent_version: Option<u32>,
    pub correction: Option<CorrectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    InvalidRange,
    LengthMismatch { expected: usize, actual: usize },
    FlagLengthMismatch { expected: usize, actual: usize },
    NonFiniteValue { index: usize },
    FlagInconsistency { index: usize, flag: QualityFlag },
    Lineage { reason: String },
}

impl DailySeries {
    /// Version-1 series with every slot flagged raw.
    pub fn raw(
        id: SeriesId,
        station_id: StationId,
        variable: Variable,
        start: NaiveDate,
        values: Vec<Option<f64>>,
    ) -> Result<Self, GridError> {
        if values.is_empty() {
            return Err(GridError::InvalidRange { start, end: start });
        }
        let end = add_days(start, values.len() - 1);
        let flags = vec![QualityFlag::Raw; values.len()];
        Ok(Self {
            id,
            station_id,
            variable,
            start,
            end,
            values,
            flags,
            version: 1,
            parent_version: None,
            correction: None,
        })
    }

    /// Next version derived from `self`, carrying `record` as provenance.
    pub fn derive(
        &self,
        values: Vec<Option<f64>>,
        flags: Vec<QualityFlag>,
        record: CorrectionRecord,
    ) -> DailySeries {
        DailySeries {
            id: self.id.clone(),
            station_id: self.station_id.clone(),
            variable: self.variable,
            start: self.start,
            end: self.end,
            values,
            flags,
            version: self.version + 1,
            parent_version: Some(self.version),
            correction: Some(record),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.end,
        }
    }

    pub fn index_of(&self, d: NaiveDate) -> Result<usize, GridError> {
        if d < self.start || d > self.end {
            return Err(GridError::OutOfRange {
                date: d,
                start: self.start,
                end: self.end,
            });
        }
        Ok((d - self.start).num_days() as usize)
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index)
    }

    pub fn value_on(&self, d: NaiveDate) -> Option<f64> {
        self.index_of(d).ok().and_then(|i| self.values[i])
    }

    /// `(date, value)` for every non-MISSING slot.
    pub fn observations(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (self.date_at(i), x)))
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Was this version produced by a gap-filling method?
    pub fn is_filled_version(&self) -> bool {
        self.correction
            .as_ref()
            .is_some_and(|c| c.method.is_fill())
    }

    /// Every violated invariant; empty means well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let expected = day_count(self.start, self.end);
        if self.start > self.end {
            out.push(Violation::InvalidRange);
        }
        if self.values.len() != expected {
            out.push(Violation::LengthMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        if self.flags.len() != self.values.len() {
            out.push(Violation::FlagLengthMismatch {
                expected: self.values.len(),
                actual: self.flags.len(),
            });
        }
        for (index, v) in self.values.iter().enumerate() {
            if let Some(x) = v {
                if !x.is_finite() {
                    out.push(Violation::NonFiniteValue { index });
                }
            }
            if let Some(&flag) = self.flags.get(index) {
                let bad = match flag {
                    QualityFlag::Filled => v.is_none(),
                    QualityFlag::RemovedOutlier => v.is_some(),
                    _ => false,
                };
                if bad {
                    out.push(Violation::FlagInconsistency { index, flag });
                }
            }
        }
        match (self.version, self.parent_version, &self.correction) {
            (0, _, _) => out.push(Violation::Lineage {
                reason: "version must be at least 1".into(),
            }),
            (1, None, None) => {}
            (1, _, _) => out.push(Violation::Lineage {
                reason: "version 1 carries no parent or correction record".into(),
            }),
            (v, Some(p), Some(rec)) => {
                if p + 1 != v {
                    out.push(Violation::Lineage {
                        reason: format!("version {v} has parent {p}"),
                    });
                }
                if !rec.is_well_formed() {
                    out.push(Violation::Lineage {
                        reason: "correction record without parameters".into(),
                    });
                }
            }
            (v, _, _) => out.push(Violation::Lineage {
                reason: format!("version {v} lacks parent or correction record"),
            }),
        }
        out
    }

    /// SHA-256 over the canonical JSON encoding of this version.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("series serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationKind {
    Gauging,
    Climate,
    Rainfall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Station {
    pub id: StationId,
    pub external_id: String,
    pub name: String,
    pub kind: StationKind,
    pub lat: f64,
    pub lon: f64,
    pub elevation: f64,
    pub established: i32,
    pub operator: String,
    #[serde(default)]
    pub catchment_id: Option<CatchmentId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("elevation {0} m outside [-500, 9000]")]
    Elevation(f64),
    #[error("station id must not be empty")]
    EmptyId,
}

impl Station {
    pub fn validate(&self) -> Result<(), StationError> {
        if self.id.0.trim().is_empty() {
            return Err(StationError::EmptyId);
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(StationError::Latitude(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(StationError::Longitude(self.lon));
        }
        if !(-500.0..=9000.0).contains(&self.elevation) {
            return Err(StationError::Elevation(self.elevation));
        }
        Ok(())
    }
}

/// One maximal run of MISSING days, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Gap {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl Gap {
    pub fn len_days(&self) -> usize {
        day_count(self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GapReport {
    pub series_id: SeriesId,
    pub gaps: Vec<Gap>,
    pub total_missing: usize,
    pub fraction_available: f64,
}
