use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::{add_days, DailySeries, DateRange, Gap, SeriesId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesAvailability {
    pub series_id: SeriesId,
    pub fraction_available: f64,
    /// Gaps clipped to the requested period; days outside the series count as missing.
    pub gaps: Vec<Gap>,
}

/// Observation mask of `s` over `period`: `true` where a value exists.
fn mask_over(s: &DailySeries, period: DateRange) -> Vec<bool> {
    period.days().map(|d| s.value_on(d).is_some()).collect()
}

/// Per-series availability and gap segments over one shared period.
pub fn availability(
    series: &[&DailySeries],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<SeriesAvailability>, AnalysisError> {
    if start > end {
        return Err(AnalysisError::InvalidRange { start, end });
    }
    if series.is_empty() {
        return Err(AnalysisError::InvalidParameter("at least one series required".into()));
    }
    let period = DateRange { start, end };
    let len = period.len_days();
    Ok(series
        .iter()
        .map(|s| {
            let mask = mask_over(s, period);
            let present = mask.iter().filter(|m| **m).count();
            let mut gaps = Vec::new();
            let mut run: Option<usize> = None;
            for (i, observed) in mask.iter().enumerate() {
                match (observed, run) {
                    (false, None) => run = Some(i),
                    (true, Some(first)) => {
                        gaps.push(Gap {
                            first: add_days(start, first),
                            last: add_days(start, i - 1),
                        });
                        run = None;
                    }
                    _ => {}
                }
            }
            if let Some(first) = run {
                gaps.push(Gap {
                    first: add_days(start, first),
                    last: end,
                });
            }
            SeriesAvailability {
                series_id: s.id.clone(),
                fraction_available: present as f64 / len as f64,
                gaps,
            }
        })
        .collect())
}

/// Alignment of candidate sub-ranges in [`overlap_period`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Any first and last day.
    #[default]
    Day,
    /// Ranges start on the first and end on the last day of a calendar month.
    Month,
}

fn is_month_start(d: NaiveDate) -> bool {
    d.day() == 1
}

fn is_month_end(d: NaiveDate) -> bool {
    d.succ_opt().is_some_and(|n| n.day() == 1)
}

/// Longest contiguous range inside every series' span on which each series'
/// availability is at least `min_fraction`. Ties resolve to the earliest start.
pub fn overlap_period(
    series: &[&DailySeries],
    min_fraction: f64,
    granularity: Granularity,
) -> Result<Option<DateRange>, AnalysisError> {
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(AnalysisError::InvalidParameter(format!(
            "min fraction {min_fraction} outside [0, 1]"
        )));
    }
    let Some(first) = series.first() else {
        return Ok(None);
    };
    let mut common = first.range();
    for s in &series[1..] {
        match common.intersect(&s.range()) {
            Some(c) => common = c,
            None => return Ok(None),
        }
    }
    let n = common.len_days();
    // prefix[k][i] = observed days of series k among the first i days of `common`
    let prefix: Vec<Vec<u32>> = series
        .iter()
        .map(|s| {
            let mut acc = Vec::with_capacity(n + 1);
            acc.push(0u32);
            let mut count = 0;
            for observed in mask_over(s, common) {
                count += observed as u32;
                acc.push(count);
            }
            acc
        })
        .collect();

    let days: Vec<NaiveDate> = common.days().collect();
    let (starts, ends): (Vec<usize>, Vec<usize>) = match granularity {
        Granularity::Day => ((0..n).collect(), (0..n).collect()),
        Granularity::Month => (
            (0..n).filter(|&i| is_month_start(days[i])).collect(),
            (0..n).filter(|&i| is_month_end(days[i])).collect(),
        ),
    };

    let feasible = |a: usize, b: usize| {
        let len = (b - a + 1) as f64;
        prefix
            .iter()
            .all(|p| f64::from(p[b + 1] - p[a]) / len >= min_fraction)
    };

    let mut best: Option<(usize, usize)> = None;
    let mut best_len = 0usize;
    for &a in &starts {
        if n - a <= best_len {
            break;
        }
        for &b in ends.iter().rev() {
            if b < a || b - a + 1 <= best_len {
                break;
            }
            if feasible(a, b) {
                best = Some((a, b));
                best_len = b - a + 1;
                break;
            }
        }
    }
    Ok(best.map(|(a, b)| DateRange {
        start: days[a],
        end: days[b],
    }))
}
