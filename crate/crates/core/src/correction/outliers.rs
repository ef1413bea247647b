use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{physical_bounds, CorrectionError, CorrectionPreview};
use crate::model::{CorrectionMethod, DailySeries, QualityFlag, Variable};

/// Scale factor turning MAD into a consistent estimate of σ for normal data.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutlierRule {
    pub physical_min: f64,
    pub physical_max: f64,
    pub zscore_threshold: f64,
}

impl OutlierRule {
    pub fn for_variable(v: Variable) -> Self {
        let (physical_min, physical_max) = physical_bounds(v);
        Self {
            physical_min,
            physical_max,
            zscore_threshold: 3.5,
        }
    }

    pub fn validate(&self) -> Result<(), CorrectionError> {
        if !(self.physical_min < self.physical_max) {
            return Err(CorrectionError::InvalidParameter(
                "physical min must be below physical max".into(),
            ));
        }
        if !(self.zscore_threshold > 0.0) {
            return Err(CorrectionError::InvalidParameter("z-score threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutlierReason {
    BelowPhysicalMin,
    AbovePhysicalMax,
    ZScore { score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outlier {
    pub date: NaiveDate,
    pub value: f64,
    pub reason: OutlierReason,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Modified z-score of every value, or `None` when MAD is zero.
pub fn modified_zscores(values: &[f64]) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = median(&dev);
    if mad == 0.0 {
        return None;
    }
    Some(values.iter().map(|x| MAD_SCALE * (x - med).abs() / mad).collect())
}

/// Slots violating physical bounds, then slots whose modified z-score exceeds
/// the threshold. One entry per slot, in date order.
pub fn detect_outliers(s: &DailySeries, rule: &OutlierRule) -> Result<Vec<Outlier>, CorrectionError> {
    rule.validate()?;
    let observed: Vec<(NaiveDate, f64)> = s.observations().collect();
    let values: Vec<f64> = observed.iter().map(|o| o.1).collect();
    let scores = modified_zscores(&values);
    let mut out = Vec::new();
    for (i, &(date, value)) in observed.iter().enumerate() {
        let reason = if value < rule.physical_min {
            Some(OutlierReason::BelowPhysicalMin)
        } else if value > rule.physical_max {
            Some(OutlierReason::AbovePhysicalMax)
        } else {
            scores
                .as_ref()
                .map(|z| z[i])
                .filter(|z| *z > rule.zscore_threshold)
                .map(|score| OutlierReason::ZScore { score })
        };
        if let Some(reason) = reason {
            out.push(Outlier { date, value, reason });
        }
    }
    Ok(out)
}

/// Mark the given detected outliers MISSING (flag `removed-outlier`).
pub fn remove_outliers(
    s: &DailySeries,
    rule: &OutlierRule,
    dates: &[NaiveDate],
) -> Result<CorrectionPreview, CorrectionError> {
    if dates.is_empty() {
        return Err(CorrectionError::NoOp);
    }
    let detected: BTreeSet<NaiveDate> = detect_outliers(s, rule)?.into_iter().map(|o| o.date).collect();
    let wanted: BTreeSet<NaiveDate> = dates.iter().copied().collect();
    if let Some(d) = wanted.iter().find(|d| !detected.contains(d)) {
        return Err(CorrectionError::NotFlagged(*d));
    }
    let mut values = s.values.clone();
    let mut flags = s.flags.clone();
    for d in &wanted {
        let i = s.index_of(*d).map_err(|_| CorrectionError::OutOfRange(*d))?;
        values[i] = None;
        flags[i] = QualityFlag::RemovedOutlier;
    }
    let mut parameters = BTreeMap::new();
    parameters.insert(
        "dates".to_string(),
        serde_json::json!(wanted.iter().map(|d| d.to_string()).collect::<Vec<_>>()),
    );
    parameters.insert("physicalMin".to_string(), serde_json::json!(rule.physical_min));
    parameters.insert("physicalMax".to_string(), serde_json::json!(rule.physical_max));
    parameters.insert("zscoreThreshold".to_string(), serde_json::json!(rule.zscore_threshold));
    Ok(CorrectionPreview::new(
        s,
        CorrectionMethod::OutlierRemoval,
        parameters,
        vec![s.station_id.clone()],
        values,
        flags,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn rain(values: Vec<Option<f64>>) -> DailySeries {
        DailySeries::raw("s".into(), "st".into(), Variable::Precipitation, d("2000-01-01"), values).unwrap()
    }

    #[test]
    fn negative_rainfall_flagged() {
        let s = rain(vec![Some(1.0), Some(-5.0), Some(2.0)]);
        let out = detect_outliers(&s, &OutlierRule::for_variable(Variable::Precipitation)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].date, d("2000-01-02"));
        assert_eq!(out[0].reason, OutlierReason::BelowPhysicalMin);
    }

    #[test]
    fn constant_series_skips_zscore() {
        let s = rain(vec![Some(10.0); 50]);
        assert!(detect_outliers(&s, &OutlierRule::for_variable(Variable::Precipitation)).unwrap().is_empty());
        // MAD is zero with 99 equal values, so even 1000 is not a z-score outlier
        let mut v = vec![Some(10.0); 99];
        v.push(Some(1000.0));
        assert!(detect_outliers(&rain(v), &OutlierRule::for_variable(Variable::Precipitation)).unwrap().is_empty());
    }

    #[test]
    fn spike_among_spread_values_flagged() {
        // 99 values evenly in [9, 11] plus one 1000
        let mut raw: Vec<f64> = (0..99).map(|i| 9.0 + 2.0 * i as f64 / 98.0).collect();
        raw.push(1000.0);
        // independent oracle: median 10.0101..., MAD ~0.5, z(1000) ≈ 0.6745·990/0.5
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let med = (sorted[49] + sorted[50]) / 2.0;
        let mut devs: Vec<f64> = raw.iter().map(|x| (x - med).abs()).collect();
        devs.sort_by(f64::total_cmp);
        let mad = (devs[49] + devs[50]) / 2.0;
        let expected: Vec<usize> = raw
            .iter()
            .enumerate()
            .filter(|(_, x)| 0.6745 * (*x - med).abs() / mad > 3.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(expected, vec![99]);

        let s = rain(raw.iter().map(|x| Some(*x)).collect());
        let out = detect_outliers(&s, &OutlierRule::for_variable(Variable::Precipitation)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 1000.0);
        match out[0].reason {
            OutlierReason::ZScore { score } => {
                assert!((score - 0.6745 * (1000.0 - med) / mad).abs() < 1e-9)
            }
            other => panic!("unexpected reason {other:?}"),
        }
    }

    #[test]
    fn removal_creates_new_version() {
        let mut v = vec![Some(1.0); 10];
        v[3] = Some(-2.0);
        let s = rain(v);
        let rule = OutlierRule::for_variable(Variable::Precipitation);
        let preview = remove_outliers(&s, &rule, &[d("2000-01-04")]).unwrap();
        let v2 = preview.commit(&s, "qc".into(), DateTime::UNIX_EPOCH).unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.missing_count(), s.missing_count() + 1);
        assert_eq!(v2.flags[3], QualityFlag::RemovedOutlier);
        assert_eq!(v2.values[3], None);
        assert!(v2.validate().is_empty());
        // the source version is a separate value and stays as it was
        assert_eq!(s.values[3], Some(-2.0));
        assert_eq!(s.version, 1);

        assert_eq!(remove_outliers(&s, &rule, &[]), Err(CorrectionError::NoOp));
        assert_eq!(
            remove_outliers(&s, &rule, &[d("2000-01-01")]),
            Err(CorrectionError::NotFlagged(d("2000-01-01")))
        );
    }

    #[test]
    fn rule_validation() {
        let mut rule = OutlierRule::for_variable(Variable::Temperature);
        assert_eq!((rule.physical_min, rule.physical_max), (-40.0, 60.0));
        rule.zscore_threshold = 0.0;
        assert!(rule.validate().is_err());
        rule.zscore_threshold = 3.5;
        rule.physical_min = 70.0;
        assert!(rule.validate().is_err());
    }
}
