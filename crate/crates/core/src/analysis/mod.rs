//! On-demand basin analytics over immutable series snapshots.

mod aggregate;
mod availability;
mod coverage;

pub use aggregate::{aggregate, select_for_aggregation, AggregateRow, AggregationPolicy, AggregationStep, GapPolicy};
pub use availability::{availability, overlap_period, Granularity, SeriesAvailability};
pub use coverage::{coverage_report, CoverageReport, KindCoverage, StationSpan, VariableCoverage};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DailySeries, DateRange};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("window {window} outside series range {series}")]
    OutOfRange { window: DateRange, series: DateRange },
    #[error("invalid date range {start}..{end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("only {n} jointly observed days; need at least 3")]
    InsufficientOverlap { n: usize },
    #[error("zero variance in joint sample")]
    DegenerateInput,
    #[error("no gap-filled version exists")]
    NoFilledVersion,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BasicStats {
    pub sum: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub present_count: usize,
    pub missing_count: usize,
}

/// Slots of `s` inside `window` (the whole series when `None`).
fn window_slice<'a>(
    s: &'a DailySeries,
    window: Option<DateRange>,
) -> Result<&'a [Option<f64>], AnalysisError> {
    match window {
        None => Ok(&s.values),
        Some(w) => {
            if w.start < s.start || w.end > s.end {
                return Err(AnalysisError::OutOfRange {
                    window: w,
                    series: s.range(),
                });
            }
            let a = (w.start - s.start).num_days() as usize;
            let b = (w.end - s.start).num_days() as usize;
            Ok(&s.values[a..=b])
        }
    }
}

/// Sum with Neumaier compensation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sum, extremes and mean over the non-MISSING slots in `window`.
pub fn basic_stats(s: &DailySeries, window: Option<DateRange>) -> Result<BasicStats, AnalysisError> {
    let slots = window_slice(s, window)?;
    let present: Vec<f64> = slots.iter().flatten().copied().collect();
    let missing_count = slots.len() - present.len();
    if present.is_empty() {
        return Ok(BasicStats {
            sum: None,
            max: None,
            mean: None,
            min: None,
            present_count: 0,
            missing_count,
        });
    }
    let sum = compensated_sum(present.iter().copied());
    let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = present.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BasicStats {
        sum: Some(sum),
        max: Some(max),
        mean: Some(sum / present.len() as f64),
        min: Some(min),
        present_count: present.len(),
        missing_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trend {
    pub slope_per_day: f64,
    pub slope_per_year: f64,
    /// Fitted value on the series' first day.
    pub intercept: f64,
    pub n: usize,
}

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Ordinary least squares of value against days since `s.start`.
pub fn linear_trend(s: &DailySeries) -> Result<Trend, AnalysisError> {
    let points: Vec<(f64, f64)> = s
        .values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|y| (i as f64, y)))
        .collect();
    let n = points.len();
    if n < 2 {
        return Err(AnalysisError::InsufficientData { needed: 2, found: n });
    }
    let t_mean = compensated_sum(points.iter().map(|p| p.0)) / n as f64;
    let y_mean = compensated_sum(points.iter().map(|p| p.1)) / n as f64;
    let sxx = compensated_sum(points.iter().map(|(t, _)| (t - t_mean) * (t - t_mean)));
    let sxy = compensated_sum(points.iter().map(|(t, y)| (t - t_mean) * (y - y_mean)));
    let slope = sxy / sxx;
    Ok(Trend {
        slope_per_day: slope,
        slope_per_year: slope * DAYS_PER_YEAR,
        intercept: y_mean - slope * t_mean,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Correlation {
    pub r: f64,
    pub n_joint: usize,
}

/// Pairs `(a, b)` for every day where both series hold a value.
pub fn joint_pairs(a: &DailySeries, b: &DailySeries) -> Vec<(f64, f64)> {
    let Some(common) = a.range().intersect(&b.range()) else {
        return Vec::new();
    };
    let ia = (common.start - a.start).num_days() as usize;
    let ib = (common.start - b.start).num_days() as usize;
    let len = common.len_days();
    a.values[ia..ia + len]
        .iter()
        .zip(&b.values[ib..ib + len])
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect()
}

/// Pearson's r of already-paired samples.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, AnalysisError> {
    let n = pairs.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientOverlap { n });
    }
    let mx = compensated_sum(pairs.iter().map(|p| p.0)) / n as f64;
    let my = compensated_sum(pairs.iter().map(|p| p.1)) / n as f64;
    let sxx = compensated_sum(pairs.iter().map(|(x, _)| (x - mx) * (x - mx)));
    let syy = compensated_sum(pairs.iter().map(|(_, y)| (y - my) * (y - my)));
    let sxy = compensated_sum(pairs.iter().map(|(x, y)| (x - mx) * (y - my)));
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(AnalysisError::DegenerateInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation over jointly observed days.
pub fn correlate(a: &DailySeries, b: &DailySeries) -> Result<Correlation, AnalysisError> {
    let pairs = joint_pairs(a, b);
    let r = pearson(&pairs)?;
    Ok(Correlation { r, n_joint: pairs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variable;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn series(values: &[Option<f64>]) -> DailySeries {
        DailySeries::raw("s".into(), "st".into(), Variable::Temperature, d("1980-01-01"), values.to_vec()).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = series(&[Some(1.0), Some(2.0), Some(3.0)]);
        let st = basic_stats(&s, None).unwrap();
        assert_eq!(
            st,
            BasicStats {
                sum: Some(6.0),
                max: Some(3.0),
                mean: Some(2.0),
                min: Some(1.0),
                present_count: 3,
                missing_count: 0
            }
        );

        let s = series(&[Some(1.0), None, Some(3.0)]);
        let st = basic_stats(&s, None).unwrap();
        assert_eq!((st.sum, st.mean, st.present_count, st.missing_count), (Some(4.0), Some(2.0), 2, 1));

        let s = series(&[Some(1.0), None, None, Some(2.0)]);
        let w = DateRange::new(d("1980-01-02"), d("1980-01-03")).unwrap();
        let st = basic_stats(&s, Some(w)).unwrap();
        assert_eq!(st.sum, None);
        assert_eq!(st.mean, None);
        assert_eq!(st.missing_count, 2);

        let outside = DateRange::new(d("1979-12-31"), d("1980-01-02")).unwrap();
        assert!(matches!(basic_stats(&s, Some(outside)), Err(AnalysisError::OutOfRange { .. })));
    }

    #[test]
    fn trend_examples() {
        let t = linear_trend(&series(&[Some(1.0), Some(3.0), Some(5.0)])).unwrap();
        assert_eq!(t.slope_per_day, 2.0);
        assert_eq!(t.slope_per_year, 730.5);
        assert_eq!(t.intercept, 1.0);

        let t = linear_trend(&series(&[Some(4.0); 6])).unwrap();
        assert_eq!(t.slope_per_day, 0.0);

        // closed-form OLS: t̄ = 1, ȳ = 1, Sxy = (-1)(-1) + 0 + (1)(2) = 3, Sxx = 2
        let t = linear_trend(&series(&[Some(0.0), Some(0.0), Some(3.0)])).unwrap();
        assert!((t.slope_per_day - 1.5).abs() < 1e-12);

        assert!(matches!(
            linear_trend(&series(&[Some(1.0), None])),
            Err(AnalysisError::InsufficientData { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn correlate_examples() {
        let a: Vec<Option<f64>> = [1.0, 4.0, 2.0, 8.0, 5.0].iter().map(|x| Some(*x)).collect();
        let twice: Vec<Option<f64>> = a.iter().map(|x| x.map(|v| 2.0 * v)).collect();
        let neg: Vec<Option<f64>> = a.iter().map(|x| x.map(|v| -v)).collect();
        assert!((correlate(&series(&a), &series(&twice)).unwrap().r - 1.0).abs() < 1e-12);
        assert!((correlate(&series(&a), &series(&neg)).unwrap().r + 1.0).abs() < 1e-12);

        // Direct Pearson on (1,1),(2,3),(3,2): means 2 and 2, Sxy = 1, Sxx = Syy = 2
        let c = correlate(
            &series(&[Some(1.0), Some(2.0), Some(3.0)]),
            &series(&[Some(1.0), Some(3.0), Some(2.0)]),
        )
        .unwrap();
        assert!((c.r - 0.5).abs() < 1e-12);
        assert_eq!(c.n_joint, 3);

        assert_eq!(
            correlate(&series(&[Some(1.0), None, Some(3.0)]), &series(&[Some(1.0), Some(2.0), Some(3.0)])),
            Err(AnalysisError::InsufficientOverlap { n: 2 })
        );
        assert_eq!(
            correlate(&series(&[Some(1.0); 4]), &series(&[Some(1.0), Some(2.0), Some(3.0), Some(4.0)])),
            Err(AnalysisError::DegenerateInput)
        );
    }

    #[test]
    fn correlate_aligns_offset_ranges() {
        let a = series(&[Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
        let mut b = DailySeries::raw(
            "b".into(),
            "st".into(),
            Variable::Temperature,
            d("1980-01-02"),
            vec![Some(2.0), Some(3.0), Some(4.0), Some(99.0)],
        )
        .unwrap();
        let c = correlate(&a, &b).unwrap();
        assert_eq!(c.n_joint, 3);
        assert!((c.r - 1.0).abs() < 1e-12);
        b.start = d("1990-01-01");
        b.end = d("1990-01-04");
        assert_eq!(correlate(&a, &b), Err(AnalysisError::InsufficientOverlap { n: 0 }));
    }
}
