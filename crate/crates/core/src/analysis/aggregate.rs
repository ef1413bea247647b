use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{compensated_sum, AnalysisError};
use crate::model::{day_count, AggregationSemantic, DailySeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationStep {
    Monthly,
    Yearly,
    HydroYear,
}

/// What to do with periods that contain MISSING days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GapPolicy {
    /// Any missing day makes the period MISSING.
    #[default]
    Strict,
    /// MISSING only when the missing fraction exceeds the bound.
    #[serde(rename_all = "camelCase")]
    Tolerant { max_missing_fraction: f64 },
    /// Aggregate the latest gap-filled version, strictly.
    UseFilled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregationPolicy {
    pub step: AggregationStep,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    #[serde(default = "default_hydro_start")]
    pub hydro_start_month: u32,
}

fn default_hydro_start() -> u32 {
    4
}

impl AggregationPolicy {
    pub fn new(step: AggregationStep, gap_policy: GapPolicy) -> Self {
        Self {
            step,
            gap_policy,
            hydro_start_month: default_hydro_start(),
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(1..=12).contains(&self.hydro_start_month) {
            return Err(AnalysisError::InvalidParameter(format!(
                "hydro start month {} outside 1..=12",
                self.hydro_start_month
            )));
        }
        if let GapPolicy::Tolerant { max_missing_fraction } = self.gap_policy {
            if !(0.0..=1.0).contains(&max_missing_fraction) {
                return Err(AnalysisError::InvalidParameter(format!(
                    "max missing fraction {max_missing_fraction} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateRow {
    pub label: String,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub value: Option<f64>,
    pub missing_fraction: f64,
}

fn first_of(year: i32, month: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, month, 1).expect("valid month start")
}

fn next_month(d: NaiveDate) -> NaiveDate {
    if d.month() == 12 {
        first_of(d.year() + 1, 1)
    } else {
        first_of(d.year(), d.month() + 1)
    }
}

/// Periods `(label, first day, first day of next period)` covering `[start, end]`.
fn periods(step: AggregationStep, hydro_start: u32, start: NaiveDate, end: NaiveDate) -> Vec<(String, NaiveDate, NaiveDate)> {
    let mut out = Vec::new();
    let mut cursor = match step {
        AggregationStep::Monthly => first_of(start.year(), start.month()),
        AggregationStep::Yearly => first_of(start.year(), 1),
        AggregationStep::HydroYear => {
            let y = if start.month() >= hydro_start { start.year() } else { start.year() - 1 };
            first_of(y, hydro_start)
        }
    };
    while cursor <= end {
        let (label, next) = match step {
            AggregationStep::Monthly => (
                format!("{:04}-{:02}", cursor.year(), cursor.month()),
                next_month(cursor),
            ),
            AggregationStep::Yearly => (format!("{:04}", cursor.year()), first_of(cursor.year() + 1, 1)),
            AggregationStep::HydroYear => (
                format!("{:04}", cursor.year()),
                first_of(cursor.year() + 1, hydro_start),
            ),
        };
        out.push((label, cursor, next));
        cursor = next;
    }
    out
}

/// The version `policy` should operate on: the latest gap-filled version for
/// `use-filled`, otherwise `requested` (or the latest when `None`).
pub fn select_for_aggregation<'a>(
    history: &'a [DailySeries],
    policy: &AggregationPolicy,
    requested: Option<u32>,
) -> Result<&'a DailySeries, AnalysisError> {
    match policy.gap_policy {
        GapPolicy::UseFilled => history
            .iter()
            .filter(|s| s.is_filled_version())
            .max_by_key(|s| s.version)
            .ok_or(AnalysisError::NoFilledVersion),
        _ => match requested {
            Some(v) => history
                .iter()
                .find(|s| s.version == v)
                .ok_or_else(|| AnalysisError::InvalidParameter(format!("no version {v}"))),
            None => history
                .iter()
                .max_by_key(|s| s.version)
                .ok_or_else(|| AnalysisError::InvalidParameter("empty history".into())),
        },
    }
}

/// Aggregate daily values to months, calendar years or hydrological years.
///
/// Days of a period outside the series range count as missing. The value
/// combines the non-MISSING days by the variable's semantic (sum or mean).
pub fn aggregate(s: &DailySeries, policy: &AggregationPolicy) -> Result<Vec<AggregateRow>, AnalysisError> {
    policy.validate()?;
    if policy.gap_policy == GapPolicy::UseFilled && !s.is_filled_version() {
        return Err(AnalysisError::NoFilledVersion);
    }
    let semantic = s.variable.semantic();
    let rows = periods(policy.step, policy.hydro_start_month, s.start, s.end)
        .into_iter()
        .map(|(label, first, next)| {
            let last = next.pred_opt().expect("period has a last day");
            let period_len = day_count(first, last);
            let lo = first.max(s.start);
            let hi = last.min(s.end);
            let a = (lo - s.start).num_days() as usize;
            let b = (hi - s.start).num_days() as usize;
            let present: Vec<f64> = s.values[a..=b].iter().flatten().copied().collect();
            let missing = period_len - present.len();
            let missing_fraction = missing as f64 / period_len as f64;
            let blocked = match policy.gap_policy {
                GapPolicy::Strict | GapPolicy::UseFilled => missing > 0,
                GapPolicy::Tolerant { max_missing_fraction } => missing_fraction > max_missing_fraction,
            };
            let value = if blocked || present.is_empty() {
                None
            } else {
                let sum = compensated_sum(present.iter().copied());
                Some(match semantic {
                    AggregationSemantic::Sum => sum,
                    AggregationSemantic::Mean => sum / present.len() as f64,
                })
            };
            AggregateRow {
                label,
                period_start: first,
                period_end: last,
                value,
                missing_fraction,
            }
        })
        .collect();
    Ok(rows)
}
