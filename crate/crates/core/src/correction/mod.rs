//! Outlier QC and gap filling.
//!
//! Every operation here is a pure computation producing a [`CorrectionPreview`]:
//! the candidate slots of the next series version plus the provenance that
//! will become its [`CorrectionRecord`]. Nothing is written until the preview
//! is committed against the version it was computed from.

mod fill;
mod outliers;

pub use fill::{
    fill_idw, fill_normal_ratio, fill_regression, fill_temporal_linear, haversine_km, import_external_fill,
    normal_ratio_estimate, IdwNeighbor, RegressionParams, EARTH_RADIUS_KM,
};
pub use outliers::{detect_outliers, modified_zscores, remove_outliers, Outlier, OutlierReason, OutlierRule};

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::IngestError;
use crate::model::{CorrectionMethod, CorrectionRecord, DailySeries, QualityFlag, SeriesId, StationId, UserId, Variable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectionError {
    #[error("neighbor {series} holds {found}, target holds {expected}")]
    VariableMismatch {
        series: SeriesId,
        expected: Variable,
        found: Variable,
    },
    #[error("only {found} jointly observed days; need {required}")]
    InsufficientPairs { found: usize, required: usize },
    #[error("|r| = {r:.4} below required {required}")]
    WeakCorrelation { r: f64, required: f64 },
    #[error("degenerate regression input: {0}")]
    DegenerateInput(String),
    #[error("no neighbor series supplied")]
    NoNeighbors,
    #[error("normal-ratio filling applies to precipitation only")]
    NonPrecipitation,
    #[error("reference mean of {0} is zero or undefined")]
    ZeroMean(SeriesId),
    #[error("{0} already holds an observation")]
    OverwriteAttempt(NaiveDate),
    #[error("{0} outside the target series range")]
    OutOfRange(NaiveDate),
    #[error("value {value} on {date} outside physical bounds [{min}, {max}]")]
    OutOfBounds {
        date: NaiveDate,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{0} is not a detected outlier")]
    NotFlagged(NaiveDate),
    #[error("nothing to change")]
    NoOp,
    #[error("preview computed from version {base}, latest is {latest}")]
    StalePreview { base: u32, latest: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Parse(#[from] IngestError),
}

/// Candidate next version of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrectionPreview {
    pub series_id: SeriesId,
    pub base_version: u32,
    pub method: CorrectionMethod,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub source_station_ids: Vec<StationId>,
    pub start: NaiveDate,
    pub values: Vec<Option<f64>>,
    pub flags: Vec<QualityFlag>,
    /// Slots this correction changed.
    pub changed_dates: Vec<NaiveDate>,
}

impl CorrectionPreview {
    pub(crate) fn new(
        base: &DailySeries,
        method: CorrectionMethod,
        parameters: BTreeMap<String, serde_json::Value>,
        source_station_ids: Vec<StationId>,
        values: Vec<Option<f64>>,
        flags: Vec<QualityFlag>,
    ) -> Self {
        let changed_dates = base
            .values
            .iter()
            .zip(&values)
            .zip(base.flags.iter().zip(&flags))
            .enumerate()
            .filter(|(_, ((a, b), (fa, fb)))| a != b || fa != fb)
            .map(|(i, _)| base.date_at(i))
            .collect();
        Self {
            series_id: base.id.clone(),
            base_version: base.version,
            method,
            parameters,
            source_station_ids,
            start: base.start,
            values,
            flags,
            changed_dates,
        }
    }

    pub fn changed_count(&self) -> usize {
        self.changed_dates.len()
    }

    /// Turn the preview into the next immutable version of `latest`.
    pub fn commit(
        self,
        latest: &DailySeries,
        created_by: UserId,
        created_at: DateTime<Utc>,
    ) -> Result<DailySeries, CorrectionError> {
        if latest.id != self.series_id || latest.version != self.base_version {
            return Err(CorrectionError::StalePreview {
                base: self.base_version,
                latest: latest.version,
            });
        }
        if self.changed_dates.is_empty() {
            return Err(CorrectionError::NoOp);
        }
        let record = CorrectionRecord {
            method: self.method,
            parameters: self.parameters,
            source_station_ids: self.source_station_ids,
            created_at,
            created_by,
        };
        Ok(latest.derive(self.values, self.flags, record))
    }
}

/// Inclusive physical bounds for a variable's daily values.
pub fn physical_bounds(v: Variable) -> (f64, f64) {
    match v {
        Variable::Precipitation => (0.0, 2000.0),
        Variable::Evaporation => (0.0, 100.0),
        Variable::Discharge => (0.0, 1.0e6),
        Variable::Temperature => (-40.0, 60.0),
    }
}

pub(crate) fn clamp_to_bounds(v: Variable, x: f64) -> f64 {
    let (lo, hi) = physical_bounds(v);
    x.clamp(lo, hi)
}

pub(crate) fn check_same_variable(target: &DailySeries, neighbor: &DailySeries) -> Result<(), CorrectionError> {
    if target.variable != neighbor.variable {
        return Err(CorrectionError::VariableMismatch {
            series: neighbor.id.clone(),
            expected: target.variable,
            found: neighbor.variable,
        });
    }
    Ok(())
}
