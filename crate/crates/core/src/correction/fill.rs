use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{check_same_variable, clamp_to_bounds, physical_bounds, CorrectionError, CorrectionPreview};
use crate::analysis::{compensated_sum, joint_pairs, pearson, AnalysisError};
use crate::ingest::{decode_text, parse_rows, FormatSpec};
use crate::model::{CorrectionMethod, DailySeries, DateRange, QualityFlag, Station, StationId, Variable};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegressionParams {
    #[serde(default = "default_min_pairs")]
    pub min_pairs: usize,
    #[serde(default = "default_min_abs_r")]
    pub min_abs_r: f64,
}

fn default_min_pairs() -> usize {
    30
}
fn default_min_abs_r() -> f64 {
    0.7
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            min_pairs: default_min_pairs(),
            min_abs_r: default_min_abs_r(),
        }
    }
}

/// Neighbor value on the target's `i`-th day.
fn neighbor_value(target: &DailySeries, neighbor: &DailySeries, i: usize) -> Option<f64> {
    neighbor.value_on(target.date_at(i))
}

fn set_filled(values: &mut [Option<f64>], flags: &mut [QualityFlag], i: usize, v: f64) {
    values[i] = Some(v);
    flags[i] = QualityFlag::Filled;
}

/// Fill from one neighbor (simple linear regression) or several (multiple
/// linear regression solved by QR least squares).
pub fn fill_regression(
    target: &DailySeries,
    neighbors: &[&DailySeries],
    params: RegressionParams,
) -> Result<CorrectionPreview, CorrectionError> {
    if neighbors.is_empty() {
        return Err(CorrectionError::NoNeighbors);
    }
    for n in neighbors {
        check_same_variable(target, n)?;
    }
    if !(0.0..=1.0).contains(&params.min_abs_r) {
        return Err(CorrectionError::InvalidParameter("minAbsR outside [0, 1]".into()));
    }
    let sources: Vec<StationId> = neighbors.iter().map(|n| n.station_id.clone()).collect();
    let mut parameters = BTreeMap::new();
    parameters.insert("minPairs".to_string(), json!(params.min_pairs));
    parameters.insert("minAbsR".to_string(), json!(params.min_abs_r));
    parameters.insert(
        "neighborSeriesIds".to_string(),
        json!(neighbors.iter().map(|n| n.id.as_str()).collect::<Vec<_>>()),
    );

    // (intercept, slopes) of target ~ neighbors
    let (intercept, slopes, method) = if let [neighbor] = neighbors {
        let pairs: Vec<(f64, f64)> = joint_pairs(neighbor, target);
        if pairs.len() < params.min_pairs.max(3) {
            return Err(CorrectionError::InsufficientPairs {
                found: pairs.len(),
                required: params.min_pairs.max(3),
            });
        }
        let r = pearson(&pairs).map_err(|e| match e {
            AnalysisError::DegenerateInput => CorrectionError::DegenerateInput("zero variance".into()),
            other => CorrectionError::DegenerateInput(other.to_string()),
        })?;
        if r.abs() < params.min_abs_r {
            return Err(CorrectionError::WeakCorrelation {
                r,
                required: params.min_abs_r,
            });
        }
        let n = pairs.len() as f64;
        let mx = compensated_sum(pairs.iter().map(|p| p.0)) / n;
        let my = compensated_sum(pairs.iter().map(|p| p.1)) / n;
        let sxx = compensated_sum(pairs.iter().map(|(x, _)| (x - mx) * (x - mx)));
        let sxy = compensated_sum(pairs.iter().map(|(x, y)| (x - mx) * (y - my)));
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        parameters.insert("r".to_string(), json!(r));
        parameters.insert("n".to_string(), json!(pairs.len()));
        (intercept, vec![slope], CorrectionMethod::Regression1)
    } else {
        let k = neighbors.len();
        let rows: Vec<(f64, Vec<f64>)> = (0..target.len())
            .filter_map(|i| {
                let y = target.values[i]?;
                let xs: Option<Vec<f64>> = neighbors.iter().map(|n| neighbor_value(target, n, i)).collect();
                Some((y, xs?))
            })
            .collect();
        let required = params.min_pairs.max(k + 2);
        if rows.len() < required {
            return Err(CorrectionError::InsufficientPairs {
                found: rows.len(),
                required,
            });
        }
        let m = rows.len();
        let design = DMatrix::from_fn(m, k + 1, |r, c| if c == 0 { 1.0 } else { rows[r].1[c - 1] });
        let y = DVector::from_iterator(m, rows.iter().map(|r| r.0));
        let beta = least_squares(design.clone(), &y)?;
        let fitted = &design * &beta;
        let y_mean = compensated_sum(y.iter().copied()) / m as f64;
        let ss_tot = compensated_sum(y.iter().map(|v| (v - y_mean).powi(2)));
        let ss_res = compensated_sum(y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)));
        if ss_tot <= 0.0 {
            return Err(CorrectionError::DegenerateInput("target has zero variance".into()));
        }
        let r = (1.0 - ss_res / ss_tot).clamp(0.0, 1.0).sqrt();
        parameters.insert("r".to_string(), json!(r));
        parameters.insert("n".to_string(), json!(m));
        (beta[0], beta.iter().skip(1).copied().collect(), CorrectionMethod::RegressionMulti)
    };
    parameters.insert("intercept".to_string(), json!(intercept));
    parameters.insert("coefficients".to_string(), json!(slopes));

    let mut values = target.values.clone();
    let mut flags = target.flags.clone();
    for i in 0..target.len() {
        if target.values[i].is_some() {
            continue;
        }
        let xs: Option<Vec<f64>> = neighbors.iter().map(|n| neighbor_value(target, n, i)).collect();
        if let Some(xs) = xs {
            let pred = intercept + xs.iter().zip(&slopes).map(|(x, b)| x * b).sum::<f64>();
            set_filled(&mut values, &mut flags, i, clamp_to_bounds(target.variable, pred));
        }
    }
    Ok(CorrectionPreview::new(target, method, parameters, sources, values, flags))
}

/// Least squares via thin QR of the design matrix.
fn least_squares(design: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, CorrectionError> {
    let p = design.ncols();
    let qr = design.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= max_diag * 1e-12) {
        return Err(CorrectionError::DegenerateInput("collinear regressors".into()));
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| CorrectionError::DegenerateInput("singular system".into()))
}

/// Great-circle distance between two stations' coordinates.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

pub struct IdwNeighbor<'a> {
    pub series: &'a DailySeries,
    pub station: &'a Station,
}

/// Inverse-distance weighting over neighbors observed on each missing day.
/// A co-located neighbor (zero distance) supplies its value directly.
pub fn fill_idw(
    target: &DailySeries,
    target_station: &Station,
    neighbors: &[IdwNeighbor<'_>],
    power: f64,
) -> Result<CorrectionPreview, CorrectionError> {
    if neighbors.is_empty() {
        return Err(CorrectionError::NoNeighbors);
    }
    if !(power.is_finite() && power >= 0.0) {
        return Err(CorrectionError::InvalidParameter("power must be finite and non-negative".into()));
    }
    for n in neighbors {
        check_same_variable(target, n.series)?;
    }
    let distances: Vec<f64> = neighbors
        .iter()
        .map(|n| haversine_km(target_station.lat, target_station.lon, n.station.lat, n.station.lon))
        .collect();
    let mut values = target.values.clone();
    let mut flags = target.flags.clone();
    for i in 0..target.len() {
        if target.values[i].is_some() {
            continue;
        }
        let available: Vec<(f64, f64)> = neighbors
            .iter()
            .zip(&distances)
            .filter_map(|(n, dist)| neighbor_value(target, n.series, i).map(|v| (*dist, v)))
            .collect();
        if available.is_empty() {
            continue;
        }
        let colocated: Vec<f64> = available.iter().filter(|(dist, _)| *dist == 0.0).map(|a| a.1).collect();
        let pred = if !colocated.is_empty() {
            colocated.iter().sum::<f64>() / colocated.len() as f64
        } else {
            let (num, den) = available.iter().fold((0.0, 0.0), |(num, den), (dist, v)| {
                let w = dist.powf(-power);
                (num + w * v, den + w)
            });
            num / den
        };
        set_filled(&mut values, &mut flags, i, clamp_to_bounds(target.variable, pred));
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("power".to_string(), json!(power));
    parameters.insert("distancesKm".to_string(), json!(distances));
    parameters.insert(
        "neighborSeriesIds".to_string(),
        json!(neighbors.iter().map(|n| n.series.id.as_str()).collect::<Vec<_>>()),
    );
    let sources = neighbors.iter().map(|n| n.station.id.clone()).collect();
    Ok(CorrectionPreview::new(target, CorrectionMethod::Idw, parameters, sources, values, flags))
}

/// `(m_t / k) · Σ vᵢ / mᵢ` over the `k` neighbors with a value.
pub fn normal_ratio_estimate(target_mean: f64, neighbors: &[(f64, f64)]) -> Option<f64> {
    if neighbors.is_empty() {
        return None;
    }
    let k = neighbors.len() as f64;
    Some(target_mean / k * neighbors.iter().map(|(v, m)| v / m).sum::<f64>())
}

fn reference_mean(s: &DailySeries, window: DateRange) -> Result<f64, CorrectionError> {
    let vals: Vec<f64> = window.days().filter_map(|d| s.value_on(d)).collect();
    if vals.is_empty() {
        return Err(CorrectionError::ZeroMean(s.id.clone()));
    }
    let m = compensated_sum(vals.iter().copied()) / vals.len() as f64;
    if m <= 0.0 {
        return Err(CorrectionError::ZeroMean(s.id.clone()));
    }
    Ok(m)
}

/// Normal-ratio precipitation estimate with long-term means taken over `window`.
pub fn fill_normal_ratio(
    target: &DailySeries,
    neighbors: &[&DailySeries],
    window: DateRange,
) -> Result<CorrectionPreview, CorrectionError> {
    if target.variable != Variable::Precipitation {
        return Err(CorrectionError::NonPrecipitation);
    }
    if neighbors.is_empty() {
        return Err(CorrectionError::NoNeighbors);
    }
    for n in neighbors {
        check_same_variable(target, n)?;
    }
    let target_mean = reference_mean(target, window)?;
    let means: Vec<f64> = neighbors
        .iter()
        .map(|n| reference_mean(n, window))
        .collect::<Result<_, _>>()?;
    let mut values = target.values.clone();
    let mut flags = target.flags.clone();
    for i in 0..target.len() {
        if target.values[i].is_some() {
            continue;
        }
        let present: Vec<(f64, f64)> = neighbors
            .iter()
            .zip(&means)
            .filter_map(|(n, m)| neighbor_value(target, n, i).map(|v| (v, *m)))
            .collect();
        if let Some(pred) = normal_ratio_estimate(target_mean, &present) {
            set_filled(&mut values, &mut flags, i, clamp_to_bounds(target.variable, pred));
        }
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("referenceStart".to_string(), json!(window.start.to_string()));
    parameters.insert("referenceEnd".to_string(), json!(window.end.to_string()));
    parameters.insert("targetMean".to_string(), json!(target_mean));
    parameters.insert("neighborMeans".to_string(), json!(means));
    parameters.insert(
        "neighborSeriesIds".to_string(),
        json!(neighbors.iter().map(|n| n.id.as_str()).collect::<Vec<_>>()),
    );
    let sources = neighbors.iter().map(|n| n.station_id.clone()).collect();
    Ok(CorrectionPreview::new(target, CorrectionMethod::NormalRatio, parameters, sources, values, flags))
}

/// Linear interpolation across interior gaps of at most `max_gap_days`.
pub fn fill_temporal_linear(target: &DailySeries, max_gap_days: usize) -> Result<CorrectionPreview, CorrectionError> {
    let mut values = target.values.clone();
    let mut flags = target.flags.clone();
    let mut prev: Option<usize> = None;
    for (i, v) in target.values.iter().enumerate() {
        let Some(b) = v else { continue };
        if let Some(p) = prev {
            let gap = i - p - 1;
            if gap > 0 && gap <= max_gap_days {
                let a = target.values[p].expect("previous slot observed");
                for j in 1..=gap {
                    let x = a + (b - a) * j as f64 / (gap + 1) as f64;
                    set_filled(&mut values, &mut flags, p + j, clamp_to_bounds(target.variable, x));
                }
            }
        }
        prev = Some(i);
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("maxGapDays".to_string(), json!(max_gap_days));
    Ok(CorrectionPreview::new(
        target,
        CorrectionMethod::TemporalLinear,
        parameters,
        vec![],
        values,
        flags,
    ))
}

/// Insert values computed by an outside tool. Every provided date must be
/// MISSING in `target`; rows carrying a missing code provide nothing.
pub fn import_external_fill(
    target: &DailySeries,
    raw: &[u8],
    spec: &FormatSpec,
) -> Result<CorrectionPreview, CorrectionError> {
    let text = decode_text(raw)?;
    let rows = parse_rows(text, spec)?;
    let (lo, hi) = physical_bounds(target.variable);
    let mut provided: BTreeMap<chrono::NaiveDate, f64> = BTreeMap::new();
    for row in rows {
        let Some(v) = row.value else { continue };
        let i = target
            .index_of(row.date)
            .map_err(|_| CorrectionError::OutOfRange(row.date))?;
        if target.values[i].is_some() {
            return Err(CorrectionError::OverwriteAttempt(row.date));
        }
        if !(lo..=hi).contains(&v) {
            return Err(CorrectionError::OutOfBounds {
                date: row.date,
                value: v,
                min: lo,
                max: hi,
            });
        }
        if let Some(prev) = provided.insert(row.date, v) {
            if prev != v {
                return Err(crate::ingest::IngestError::DuplicateDate(row.date).into());
            }
        }
    }
    let mut values = target.values.clone();
    let mut flags = target.flags.clone();
    for (date, v) in &provided {
        let i = target.index_of(*date).expect("checked above");
        set_filled(&mut values, &mut flags, i, *v);
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("checksum".to_string(), json!(hex::encode(Sha256::digest(raw))));
    parameters.insert("providedCount".to_string(), json!(provided.len()));
    Ok(CorrectionPreview::new(
        target,
        CorrectionMethod::External,
        parameters,
        vec![],
        values,
        flags,
    ))
}
