//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use basinfo_core::analysis::{
    aggregate, availability, correlate, linear_trend, overlap_period, AggregationPolicy, AggregationStep, GapPolicy,
    Granularity,
};
use basinfo_core::correction::{
    fill_idw, fill_normal_ratio, fill_regression, fill_temporal_linear, import_external_fill, IdwNeighbor,
    RegressionParams,
};
use basinfo_core::ingest::{parse_series, render_rows, FormatSpec, SeriesMeta};
use basinfo_core::model::{
    CorrectionRecord, DailySeries, DateRange, QualityFlag, SeriesId, Station, StationId, StationKind, UserId, Variable,
};
use basinfo_server::config::Config;
use basinfo_server::permissions::{Action, Grant, ObjectRef, Principal, Subject};
use basinfo_server::service::{allowed, FillRequest, IngestRequest, SeriesFilter};
use basinfo_server::state::State;
use basinfo_server::{Service, Session};
use chrono::{Datelike, Days, NaiveDate};
use common::{add_admin, basinfo, basinfo_with_input, ok, spawn_server, Running};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn series(id: &str, variable: Variable, start: NaiveDate, values: Vec<Option<f64>>) -> DailySeries {
    DailySeries::raw(SeriesId::new(id), StationId::new(format!("{id}-st")), variable, start, values).unwrap()
}

fn station(id: &str, lon: f64, lat: f64) -> Station {
    Station {
        id: StationId::new(id),
        external_id: id.to_uppercase(),
        name: id.into(),
        kind: StationKind::Rainfall,
        lat,
        lon,
        elevation: 300.0,
        established: 1960,
        operator: "test".into(),
        catchment_id: None,
    }
}

fn service_config(dir: &std::path::Path) -> Config {
    let mut cfg = Config::new(dir);
    cfg.secret = Some("test-secret".into());
    cfg.pbkdf2_iterations = 1000;
    cfg
}

fn system() -> Session {
    Session::system()
}

// ---------------------------------------------------------------------------

/// Independent spherical polygon area: ring mapped onto Lambert's
/// cylindrical equal-area projection of the authalic sphere, then shoelace.
fn equal_area_km2(ring: &[[f64; 2]]) -> f64 {
    const R: f64 = 6371.0;
    let pts: Vec<(f64, f64)> = ring.iter().map(|p| (R * p[0].to_radians(), R * p[1].to_radians().sin())).collect();
    let twice: f64 = pts.windows(2).map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1).sum();
    twice.abs() / 2.0
}

fn fixture_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let out = basinfo(dir.path(), &["fixture", "load", "kara"]);
    let elapsed = t.elapsed();
    ensure!(out.status.success(), "fixture load failed: {}", common::stderr(&out));
    ensure!(elapsed < Duration::from_secs(10), "fixture load took {elapsed:?}");

    let svc = Service::open(service_config(dir.path())).map_err(|e| e.to_string())?;
    let report = svc.validate().map_err(|e| e.to_string())?;
    ensure!(report.problems.is_empty(), "integrity problems: {:?}", report.problems);
    ensure!(report.series_count == 112, "{} series", report.series_count);

    let all = svc.list_series(&system(), &SeriesFilter::default()).map_err(|e| e.to_string())?;
    ensure!(all.len() == 112, "{} series listed", all.len());
    let st = svc.store().read();
    let discharge: Vec<&DailySeries> = st
        .series
        .values()
        .map(|h| h[0].as_ref())
        .filter(|s| s.variable == Variable::Discharge)
        .collect();
    let first = discharge.iter().filter_map(|s| s.observations().next().map(|o| o.0)).min();
    let last = discharge.iter().filter_map(|s| s.observations().last().map(|o| o.0)).max();
    ensure!(
        first == Some(ymd(1954, 1, 1)) && last == Some(ymd(1989, 12, 31)),
        "discharge extent {first:?} to {last:?}"
    );
    drop(st);

    let cov = svc.coverage(&system(), &basinfo_core::model::CatchmentId::new("kara")).map_err(|e| e.to_string())?;
    let active = |k: StationKind| -> BTreeSet<String> {
        cov.kinds.get(&k).map(|c| c.active.iter().map(|s| s.to_string()).collect()).unwrap_or_default()
    };
    let gauging = active(StationKind::Gauging);
    let climate = active(StationKind::Climate);
    let rainfall = active(StationKind::Rainfall);
    let discharge_active = cov.variables[&Variable::Discharge].active_station_count;
    ensure!(gauging.is_empty() && discharge_active == 0, "active discharge stations: {gauging:?}");
    ensure!(
        climate == BTreeSet::from(["kara-syn".to_string(), "niamtougou-syn".to_string()]),
        "active climate stations {climate:?}"
    );
    ensure!(rainfall == BTreeSet::from(["pagouda-rain".to_string()]), "active rainfall stations {rainfall:?}");

    let st = svc.store().read();
    let kara = &st.catchments[&basinfo_core::model::CatchmentId::new("kara")];
    let area = kara.geometry.area_km2();
    let other_route = equal_area_km2(kara.geometry.outer());
    ensure!((area / 5287.0 - 1.0).abs() <= 0.02, "basin area {area:.1} km²");
    ensure!((area / other_route - 1.0).abs() <= 1e-3, "area {area:.3} vs projected {other_route:.3}");
    Ok(format!(
        "112 series, discharge 1954-01-01..1989-12-31, active {climate:?} + {rainfall:?}, area {area:.0} km², load {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn round_trip_specs() -> Vec<FormatSpec> {
    let spec = |v: Value| -> FormatSpec { serde_json::from_value(v).unwrap() };
    vec![
        FormatSpec::default(),
        spec(json!({"delimiter": ";", "dateFormat": "DD/MM/YYYY", "decimalSeparator": ",", "missingCodes": ["-999", "NA"], "headerLines": 2})),
        spec(json!({"delimiter": ",", "dateFormat": "YYYYMMDD", "dateColumn": 1, "valueColumn": 0, "missingCodes": ["NaN"], "headerLines": 1})),
        spec(json!({"delimiter": "|", "dateFormat": "MM-DD-YYYY", "dateColumn": 0, "valueColumn": 3, "missingCodes": ["M", "-9999"]})),
        spec(json!({"delimiter": " ", "dateFormat": "DD.MM.YYYY", "missingCodes": ["-99.9"], "headerLines": 3})),
    ]
}

fn random_value(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..50_000) as f64 / 100.0,
        1 => -(rng.gen_range(1..4_000) as f64) / 100.0,
        2 => rng.gen_range(0.0..500.0),
        _ => rng.gen_range(0..40) as f64,
    }
}

fn round_trip() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let specs = round_trip_specs();
    let mut rows = 0usize;
    for case in 0..200 {
        let len = rng.gen_range(1..1500);
        let start = ymd(1900, 1, 1) + Days::new(rng.gen_range(0..45_000));
        let p_missing = rng.gen_range(0.0..0.6);
        let mut values: Vec<Option<f64>> = (0..len)
            .map(|_| (!rng.gen_bool(p_missing)).then(|| random_value(&mut rng)))
            .collect();
        if values.iter().all(Option::is_none) {
            values[rng.gen_range(0..len)] = Some(1.5);
        }
        let original = series(&format!("rt-{case}"), Variable::Temperature, start, values);
        for (k, spec) in specs.iter().enumerate() {
            let text = render_rows(&original, spec).map_err(|e| format!("case {case} spec {k}: {e}"))?;
            let meta = SeriesMeta {
                id: original.id.clone(),
                station_id: original.station_id.clone(),
                variable: original.variable,
            };
            let back = parse_series(&text, spec, &meta).map_err(|e| format!("case {case} spec {k}: {e}"))?;
            ensure!(
                back.start == original.start && back.end == original.end,
                "case {case} spec {k}: range {}..{} became {}..{}",
                original.start,
                original.end,
                back.start,
                back.end
            );
            for (i, (a, b)) in original.values.iter().zip(&back.values).enumerate() {
                ensure!(
                    a.map(f64::to_bits) == b.map(f64::to_bits),
                    "case {case} spec {k} slot {i}: {a:?} became {b:?}"
                );
            }
            rows += back.len();
        }
    }
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("200 series x 5 formats, {rows} rows bit-exact, {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Values on a 0.01 grid so that the oracles can work in exact integers.
fn hundredths(rng: &mut ChaCha8Rng, len: usize, p_missing: f64, drift: f64) -> Vec<Option<i64>> {
    let base = rng.gen_range(-2_000..2_000);
    (0..len)
        .map(|i| {
            (!rng.gen_bool(p_missing)).then(|| base + (drift * i as f64) as i64 + rng.gen_range(-3_000..3_000))
        })
        .collect()
}

fn to_series(id: &str, start: NaiveDate, v: &[Option<i64>]) -> DailySeries {
    series(id, Variable::Temperature, start, v.iter().map(|x| x.map(|k| k as f64 / 100.0)).collect())
}

/// Pearson r from exact integer moments.
fn oracle_r(pairs: &[(i64, i64)]) -> Option<f64> {
    let n = pairs.len() as i128;
    if n < 3 {
        return None;
    }
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in pairs {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cxy = n * sxy - sx * sy;
    let cxx = n * sxx - sx * sx;
    let cyy = n * syy - sy * sy;
    if cxx == 0 || cyy == 0 {
        return None;
    }
    Some(cxy as f64 / ((cxx as f64).sqrt() * (cyy as f64).sqrt()))
}

/// OLS slope per day and intercept at day 0, exactly in integers until the end.
fn oracle_trend(points: &[(i64, i64)]) -> (f64, f64) {
    let n = points.len() as i128;
    let (mut st, mut sy, mut stt, mut sty) = (0i128, 0i128, 0i128, 0i128);
    for &(t, y) in points {
        let (t, y) = (t as i128, y as i128);
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let den = n * stt - st * st;
    let slope = (n * sty - st * sy) as f64 / den as f64 / 100.0;
    let intercept = (sy * stt - st * sty) as f64 / den as f64 / 100.0;
    (slope, intercept)
}

/// Longest feasible range by exhaustive enumeration; earliest start on ties.
fn oracle_overlap(series: &[&DailySeries], min_fraction: f64, granularity: Granularity) -> Option<(NaiveDate, NaiveDate)> {
    let start = series.iter().map(|s| s.start).max().unwrap();
    let end = series.iter().map(|s| s.end).min().unwrap();
    if start > end {
        return None;
    }
    let days: Vec<NaiveDate> = start.iter_days().take_while(|d| *d <= end).collect();
    let starts: Vec<usize> = (0..days.len())
        .filter(|&i| granularity == Granularity::Day || days[i].day() == 1)
        .collect();
    let ends: Vec<usize> = (0..days.len())
        .filter(|&i| granularity == Granularity::Day || days[i].succ_opt().unwrap().day() == 1)
        .collect();
    let mut best: Option<(usize, usize)> = None;
    for &a in &starts {
        for &b in &ends {
            if b < a {
                continue;
            }
            let len = b - a + 1;
            if best.is_some_and(|(x, y)| y - x + 1 >= len) {
                continue;
            }
            let ok = series.iter().all(|s| {
                let present = days[a..=b].iter().filter(|d| s.value_on(**d).is_some()).count();
                present as f64 / len as f64 >= min_fraction
            });
            if ok {
                best = Some((a, b));
            }
        }
    }
    best.map(|(a, b)| (days[a], days[b]))
}

fn analytics() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let tol = 1e-9;
    let mut overlaps_found = 0;
    for case in 0..500 {
        let len_a = rng.gen_range(40..900);
        let start_a = ymd(1980, 1, 1) + Days::new(rng.gen_range(0..400));
        let start_b = start_a + Days::new(rng.gen_range(0..200));
        let len_b = rng.gen_range(40..900);
        let drift = rng.gen_range(-5.0..5.0);
        let (pa, pb) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
        let va = hundredths(&mut rng, len_a, pa, drift);
        let mut vb = hundredths(&mut rng, len_b, pb, 0.0);
        // make b partly follow a so that r spans the whole range
        let mix = rng.gen_range(-3..=3);
        let offset = (start_b - start_a).num_days() as usize;
        for (j, v) in vb.iter_mut().enumerate() {
            if let (Some(x), Some(Some(a))) = (v.as_mut(), va.get(offset + j)) {
                *x += mix * a;
            }
        }
        let a = to_series("a", start_a, &va);
        let b = to_series("b", start_b, &vb);

        // Pearson r over jointly observed days
        let pairs: Vec<(i64, i64)> = (0..len_b)
            .filter_map(|j| Some((va.get(offset + j).copied().flatten()?, vb[j]?)))
            .collect();
        match (correlate(&a, &b), oracle_r(&pairs)) {
            (Ok(c), Some(r)) => {
                ensure!(c.n_joint == pairs.len(), "case {case}: n {} vs {}", c.n_joint, pairs.len());
                ensure!(rel_close(c.r, r, tol), "case {case}: r {} vs {r}", c.r);
            }
            (Err(_), None) => {}
            (got, want) => return Err(format!("case {case}: correlate {got:?} vs oracle {want:?}")),
        }

        // OLS trend against days since the first day
        let points: Vec<(i64, i64)> = va.iter().enumerate().filter_map(|(i, v)| Some((i as i64, (*v)?))).collect();
        if points.len() >= 2 {
            let trend = linear_trend(&a).map_err(|e| format!("case {case}: {e}"))?;
            let (slope, intercept) = oracle_trend(&points);
            ensure!(rel_close(trend.slope_per_day, slope, tol), "case {case}: slope {} vs {slope}", trend.slope_per_day);
            ensure!(
                rel_close(trend.intercept, intercept, tol),
                "case {case}: intercept {} vs {intercept}",
                trend.intercept
            );
        }

        // availability over a window reaching past both series
        let from = start_a - Days::new(rng.gen_range(0..30));
        let to = b.end + Days::new(rng.gen_range(0..30));
        let got = availability(&[&a, &b], from, to).map_err(|e| e.to_string())?;
        let span = (to - from).num_days() as f64 + 1.0;
        for (s, av) in [&a, &b].iter().zip(&got) {
            let present = from.iter_days().take_while(|d| *d <= to).filter(|d| s.value_on(*d).is_some()).count();
            let want = present as f64 / span;
            ensure!(rel_close(av.fraction_available, want, tol), "case {case}: availability {} vs {want}", av.fraction_available);
            let gap_days: i64 = av.gaps.iter().map(|g| (g.last - g.first).num_days() + 1).sum();
            ensure!(gap_days as usize + present == span as usize, "case {case}: gaps do not complement availability");
        }

        // overlap: month alignment always, day alignment on short spans
        let min_fraction = [0.5, 0.7, 0.8, 0.9, 1.0][rng.gen_range(0..5)];
        let got = overlap_period(&[&a, &b], min_fraction, Granularity::Month).map_err(|e| e.to_string())?;
        let want = oracle_overlap(&[&a, &b], min_fraction, Granularity::Month);
        ensure!(
            got.map(|r| (r.start, r.end)) == want,
            "case {case}: month overlap {got:?} vs {want:?}"
        );
        overlaps_found += want.is_some() as usize;
        if case % 5 == 0 {
            let short_a = to_series("sa", start_a, &va[..va.len().min(120)]);
            let short_b = to_series("sb", start_a + Days::new(rng.gen_range(0..20)), &vb[..vb.len().min(120)]);
            let got = overlap_period(&[&short_a, &short_b], min_fraction, Granularity::Day).map_err(|e| e.to_string())?;
            let want = oracle_overlap(&[&short_a, &short_b], min_fraction, Granularity::Day);
            ensure!(got.map(|r| (r.start, r.end)) == want, "case {case}: day overlap {got:?} vs {want:?}");
        }
    }
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "500 cases within 1e-9 relative, overlap exact ({overlaps_found} non-empty), {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut years_checked = 0;
    let mut periods_checked = 0;
    for case in 0..200 {
        // gap-free precipitation years; sixteenths of a millimetre are exact
        // in binary so the recomposition must be bit-exact, tenths within 1e-9
        let y0 = rng.gen_range(1950..2010);
        let n_years = rng.gen_range(1..4);
        let start = ymd(y0, 1, 1);
        let end = ymd(y0 + n_years - 1, 12, 31);
        let len = (end - start).num_days() as usize + 1;
        let units: Vec<u32> = (0..len).map(|_| if rng.gen_bool(0.6) { 0 } else { rng.gen_range(1..1500) }).collect();
        for (scale, exact) in [(16.0, true), (10.0, false)] {
            let values = units.iter().map(|u| Some(*u as f64 / scale)).collect();
            let s = series("p", Variable::Precipitation, start, values);
            let monthly = aggregate(&s, &AggregationPolicy::new(AggregationStep::Monthly, GapPolicy::Strict)).map_err(|e| e.to_string())?;
            let yearly = aggregate(&s, &AggregationPolicy::new(AggregationStep::Yearly, GapPolicy::Strict)).map_err(|e| e.to_string())?;
            ensure!(yearly.len() == n_years as usize, "case {case}: {} years", yearly.len());
            for y in &yearly {
                let months: Vec<f64> = monthly
                    .iter()
                    .filter(|m| m.period_start.year() == y.period_start.year())
                    .map(|m| m.value.expect("gap-free month"))
                    .collect();
                ensure!(months.len() == 12, "case {case}: {} months in {}", months.len(), y.label);
                let recomposed: f64 = months.iter().sum();
                let yearly_value = y.value.ok_or(format!("case {case}: year {} missing", y.label))?;
                let same = if exact {
                    recomposed.to_bits() == yearly_value.to_bits()
                } else {
                    (recomposed - yearly_value).abs() <= 1e-9 * yearly_value.max(1.0)
                };
                ensure!(same, "case {case} {} /{scale}: months sum to {recomposed} but year is {yearly_value}", y.label);
                years_checked += 1;
            }
        }

        // strict policy: MISSING iff a day of the period is missing
        let start = ymd(1970, 1, 1) + Days::new(rng.gen_range(0..3000));
        let len = rng.gen_range(1..800);
        let p = [0.0, 0.001, 0.01, 0.1, 0.5][rng.gen_range(0..5)];
        let values: Vec<Option<f64>> = (0..len).map(|_| (!rng.gen_bool(p)).then(|| rng.gen_range(0..300) as f64 / 10.0)).collect();
        let s = series("q", Variable::Precipitation, start, values);
        for step in [AggregationStep::Monthly, AggregationStep::Yearly, AggregationStep::HydroYear] {
            let mut policy = AggregationPolicy::new(step, GapPolicy::Strict);
            policy.hydro_start_month = rng.gen_range(1..=12);
            for row in aggregate(&s, &policy).map_err(|e| e.to_string())? {
                let days: Vec<NaiveDate> = row.period_start.iter_days().take_while(|d| *d <= row.period_end).collect();
                let any_missing = days.iter().any(|d| s.value_on(*d).is_none());
                ensure!(
                    row.value.is_none() == any_missing,
                    "case {case} {step:?} {}: value {:?} with missing={any_missing}",
                    row.label,
                    row.value
                );
                if let Some(v) = row.value {
                    let tenths: i64 = days.iter().map(|d| (s.value_on(*d).unwrap() * 10.0).round() as i64).sum();
                    ensure!(
                        (v - tenths as f64 / 10.0).abs() <= 1e-9 * v.abs().max(1.0),
                        "case {case} {}: sum {v} vs {}",
                        row.label,
                        tenths as f64 / 10.0
                    );
                }
                periods_checked += 1;
            }
        }
    }
    Ok(format!("{years_checked} years recompose (bit-exact on 1/16 mm, 1e-9 on 0.1 mm), {periods_checked} strict periods match"))
}

// ---------------------------------------------------------------------------

fn with_gaps(rng: &mut ChaCha8Rng, full: &[f64], p: f64) -> Vec<Option<f64>> {
    full.iter().map(|v| (!rng.gen_bool(p)).then_some(*v)).collect()
}

fn fill_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let start = ymd(1990, 1, 1);

    // regression recovers exact linear relations
    let mut regression_slots = 0;
    for case in 0..20 {
        let n = 400;
        let n1: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..30.0)).collect();
        let n2: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..30.0)).collect();
        let (a, b1, b2) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.3..0.9), rng.gen_range(-0.4..0.4));
        let single: Vec<f64> = n1.iter().map(|x| a + b1 * x).collect();
        let multi: Vec<f64> = n1.iter().zip(&n2).map(|(x, y)| a + b1 * x + b2 * y).collect();
        let s1 = series("n1", Variable::Temperature, start, n1.iter().map(|v| Some(*v)).collect());
        let s2 = series("n2", Variable::Temperature, start, n2.iter().map(|v| Some(*v)).collect());
        for (truth, neighbors) in [(&single, vec![&s1]), (&multi, vec![&s1, &s2])] {
            let target = series("t", Variable::Temperature, start, with_gaps(&mut rng, truth, 0.3));
            let p = fill_regression(&target, &neighbors, RegressionParams { min_pairs: 30, min_abs_r: 0.7 })
                .map_err(|e| format!("case {case}: {e}"))?;
            for (i, v) in target.values.iter().enumerate() {
                if v.is_none() {
                    let got = p.values[i].ok_or(format!("case {case}: slot {i} unfilled"))?;
                    ensure!(
                        (got - truth[i]).abs() <= 1e-9 * truth[i].abs().max(1.0),
                        "case {case} slot {i}: {got} vs {}",
                        truth[i]
                    );
                    regression_slots += 1;
                }
            }
        }
    }

    // IDW with two equidistant neighbors is symmetric in them
    let target_station = station("centre", 1.0, 9.5);
    let east = station("east", 1.25, 9.5);
    let west = station("west", 0.75, 9.5);
    let mut idw_slots = 0;
    for case in 0..50 {
        let n = 100;
        let va: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(0.0..80.0))).collect();
        let vb: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(0.0..80.0))).collect();
        let target = series("t", Variable::Precipitation, start, with_gaps(&mut rng, &vec![1.0; n], 0.5));
        let sa = series("a", Variable::Precipitation, start, va.clone());
        let sb = series("b", Variable::Precipitation, start, vb.clone());
        let power = [1.0, 2.0, 3.0][case % 3];
        let one = fill_idw(
            &target,
            &target_station,
            &[IdwNeighbor { series: &sa, station: &east }, IdwNeighbor { series: &sb, station: &west }],
            power,
        )
        .map_err(|e| e.to_string())?;
        let swapped = fill_idw(
            &target,
            &target_station,
            &[IdwNeighbor { series: &sb, station: &east }, IdwNeighbor { series: &sa, station: &west }],
            power,
        )
        .map_err(|e| e.to_string())?;
        let reordered = fill_idw(
            &target,
            &target_station,
            &[IdwNeighbor { series: &sb, station: &west }, IdwNeighbor { series: &sa, station: &east }],
            power,
        )
        .map_err(|e| e.to_string())?;
        for i in 0..n {
            if target.values[i].is_some() {
                continue;
            }
            let (x, y, z) = (one.values[i].unwrap(), swapped.values[i].unwrap(), reordered.values[i].unwrap());
            ensure!(
                x.to_bits() == y.to_bits() && x.to_bits() == z.to_bits(),
                "case {case} slot {i}: {x} / {y} / {z}"
            );
            let mid = (va[i].unwrap() + vb[i].unwrap()) / 2.0;
            ensure!((x - mid).abs() <= 1e-12 * mid.max(1.0), "case {case} slot {i}: {x} vs midpoint {mid}");
            idw_slots += 1;
        }
    }

    // temporal-linear fills exact arithmetic progressions for gaps up to 5
    let mut progressions = 0;
    for case in 0..200 {
        let gap = rng.gen_range(1..=5usize);
        let a = rng.gen_range(0..400) as f64 / 4.0;
        let step = rng.gen_range(-64..64) as f64 / 8.0;
        let b = a + (gap + 1) as f64 * step;
        if b < 0.0 {
            continue;
        }
        let mut values = vec![Some(a)];
        values.extend(std::iter::repeat_n(None, gap));
        values.push(Some(b));
        // a gap longer than the limit is left alone
        values.extend(std::iter::repeat_n(None, 6));
        values.push(Some(a));
        let s = series("t", Variable::Precipitation, start, values);
        let p = fill_temporal_linear(&s, 5).map_err(|e| e.to_string())?;
        for j in 1..=gap {
            let want = a + j as f64 * step;
            ensure!(p.values[j] == Some(want), "case {case}: slot {j} {:?} vs {want}", p.values[j]);
        }
        ensure!(p.values[gap + 2..gap + 8].iter().all(Option::is_none), "case {case}: long gap filled");
        progressions += 1;
    }

    // no method ever touches an observed slot
    let n = 10_000;
    let base: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.1..60.0) }).collect();
    let n1: Vec<f64> = base.iter().map(|v| (v * 1.1 + rng.gen_range(0.0..0.5)).max(0.0)).collect();
    let n2: Vec<f64> = base.iter().map(|v| (v * 0.8 + rng.gen_range(0.0..0.5)).max(0.0)).collect();
    let target = series("sweep", Variable::Precipitation, start, with_gaps(&mut rng, &base, 0.3));
    let s1 = series("n1", Variable::Precipitation, start, with_gaps(&mut rng, &n1, 0.1));
    let s2 = series("n2", Variable::Precipitation, start, with_gaps(&mut rng, &n2, 0.1));
    let (st1, st2) = (station("n1-st", 1.1, 9.6), station("n2-st", 0.9, 9.4));
    let external: String = target
        .values
        .iter()
        .enumerate()
        .filter(|(i, v)| v.is_none() && i % 3 == 0)
        .map(|(i, _)| format!("{}\t{}\n", target.date_at(i), i % 50))
        .collect();
    let window = DateRange::new(target.start, target.end).unwrap();
    let previews = [
        ("regression", fill_regression(&target, &[&s1], RegressionParams { min_pairs: 30, min_abs_r: 0.7 })),
        ("regression-2", fill_regression(&target, &[&s1, &s2], RegressionParams { min_pairs: 30, min_abs_r: 0.7 })),
        (
            "idw",
            fill_idw(
                &target,
                &target_station,
                &[IdwNeighbor { series: &s1, station: &st1 }, IdwNeighbor { series: &s2, station: &st2 }],
                2.0,
            ),
        ),
        ("normal-ratio", fill_normal_ratio(&target, &[&s1, &s2], window)),
        ("temporal-linear", fill_temporal_linear(&target, 5)),
        ("external", import_external_fill(&target, external.as_bytes(), &FormatSpec::default())),
    ];
    let observed = target.values.iter().filter(|v| v.is_some()).count();
    for (name, preview) in previews {
        let p = preview.map_err(|e| format!("{name}: {e}"))?;
        ensure!(p.changed_count() > 0, "{name} filled nothing");
        for i in 0..n {
            if let Some(v) = target.values[i] {
                ensure!(
                    p.values[i].map(f64::to_bits) == Some(v.to_bits()) && p.flags[i] == target.flags[i],
                    "{name} altered observed slot {i}"
                );
            } else if p.values[i].is_some() {
                ensure!(p.flags[i] == QualityFlag::Filled, "{name}: slot {i} not flagged filled");
            }
        }
        for d in &p.changed_dates {
            ensure!(target.value_on(*d).is_none(), "{name} reported observed {d} as changed");
        }
    }
    Ok(format!(
        "regression {regression_slots} slots, idw {idw_slots} symmetric, {progressions} progressions exact, 6 methods x {n} slots ({observed} observed) untouched"
    ))
}

// ---------------------------------------------------------------------------

fn fill_request(v: Value) -> FillRequest {
    serde_json::from_value(v).unwrap()
}

fn versioning() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(service_config(dir.path())).map_err(|e| e.to_string())?;
    svc.load_fixture_kara(&system()).map_err(|e| e.to_string())?;
    // gaps of 1, 5 and 40 days, plus a long one
    let mut data = String::new();
    let start = ymd(1990, 1, 1);
    let holes: BTreeSet<usize> = [10].into_iter().chain(30..35).chain(60..100).chain(200..330).collect();
    for i in 0..400usize {
        if !holes.contains(&i) {
            data.push_str(&format!("{}\t{}\n", start + Days::new(i as u64), (i % 23) as f64 / 2.0));
        }
    }
    let id = SeriesId::new("chain");
    svc.ingest(
        &system(),
        &IngestRequest {
            station_id: StationId::new("kara-syn"),
            variable: Variable::Precipitation,
            series_id: Some(id.clone()),
            format: FormatSpec::default(),
            data,
        },
    )
    .map_err(|e| e.to_string())?;
    let v1 = svc.store().read().series[&id][0].clone();
    let v1_bytes = serde_json::to_vec(v1.as_ref()).unwrap();
    let v1_hash = v1.content_hash();

    let steps = [
        json!({"method": "temporal-linear", "maxGapDays": 1}),
        json!({"method": "temporal-linear", "maxGapDays": 5}),
        json!({"method": "external", "data": "1990-03-05\t4.5\n1990-03-06\t0\n"}),
        json!({"method": "external", "data": "1990-07-20\t12.25\n"}),
        json!({"method": "idw", "neighbors": ["niamtougou-syn-precipitation", "pagouda-rain-daily"]}),
    ];
    for (k, step) in steps.iter().enumerate() {
        let mut req = step.clone();
        req["preview"] = json!(false);
        req["baseVersion"] = json!(k + 1);
        let r = svc.fill(&system(), &id, &fill_request(req)).map_err(|e| format!("step {}: {e}", k + 1))?;
        ensure!(r.committed_version == Some(k as u32 + 2), "step {}: committed {:?}", k + 1, r.committed_version);
    }

    let history: Vec<DailySeries> = svc.store().read().series[&id].iter().map(|s| s.as_ref().clone()).collect();
    ensure!(history.len() == 6, "{} versions", history.len());
    ensure!(history[0].content_hash() == v1_hash, "version 1 hash changed");
    ensure!(serde_json::to_vec(&history[0]).unwrap() == v1_bytes, "version 1 bytes changed");
    let records: Vec<CorrectionRecord> = history[1..].iter().map(|s| s.correction.clone().unwrap()).collect();
    for (k, s) in history.iter().enumerate().skip(1) {
        ensure!(s.parent_version == Some(k as u32), "v{} parent {:?}", k + 1, s.parent_version);
        let rec = s.correction.as_ref().unwrap();
        let back: CorrectionRecord = serde_json::from_str(&serde_json::to_string(rec).unwrap()).unwrap();
        ensure!(&back == rec, "v{} record does not round-trip", k + 1);
        ensure!(rec.created_by == UserId::new("system"), "v{} created by {}", k + 1, rec.created_by);
    }
    drop(svc);

    let svc = Service::open(service_config(dir.path())).map_err(|e| e.to_string())?;
    let reopened: Vec<DailySeries> = svc.store().read().series[&id].iter().map(|s| s.as_ref().clone()).collect();
    ensure!(reopened == history, "history differs after reopen");
    ensure!(reopened[0].content_hash() == v1_hash, "version 1 hash changed on reopen");
    let reopened_records: Vec<CorrectionRecord> = reopened[1..].iter().map(|s| s.correction.clone().unwrap()).collect();
    ensure!(reopened_records == records, "records differ after reopen");
    let methods: Vec<String> = records.iter().map(|r| serde_json::to_value(r.method).unwrap().as_str().unwrap().to_string()).collect();
    Ok(format!("chain of 5 ({}), v1 {}… unchanged, records round-trip", methods.join(" > "), &v1_hash[..12]))
}

// ---------------------------------------------------------------------------

/// Every endpoint with a request an administrator could make successfully.
fn endpoints() -> Vec<(&'static str, String, Value)> {
    let s = "/api/series/rain-01-daily";
    let geometry = json!({"rings": [[[1.0, 9.5], [1.1, 9.5], [1.1, 9.6], [1.0, 9.6], [1.0, 9.5]]]});
    vec![
        ("GET", "/api/auth/me".into(), Value::Null),
        ("GET", "/api/stations".into(), Value::Null),
        ("GET", "/api/stations/kara-syn".into(), Value::Null),
        (
            "POST",
            "/api/stations".into(),
            json!({"id": "new-st", "externalId": "X1", "name": "New", "kind": "rainfall", "lat": 9.6, "lon": 1.1,
                   "elevation": 300.0, "established": 2000, "operator": "op", "studyArea": "kara"}),
        ),
        ("GET", "/api/series".into(), Value::Null),
        (
            "POST",
            "/api/series".into(),
            json!({"stationId": "kara-syn", "variable": "evaporation", "seriesId": "new-series", "data": "2000-01-01\t1.5\n"}),
        ),
        ("GET", s.into(), Value::Null),
        ("GET", format!("{s}/data"), Value::Null),
        ("GET", format!("{s}/stats"), Value::Null),
        ("GET", format!("{s}/gaps"), Value::Null),
        ("POST", format!("{s}/aggregate"), json!({"step": "monthly"})),
        ("POST", format!("{s}/outliers/detect"), json!({})),
        ("POST", format!("{s}/outliers/remove"), json!({"dates": ["1980-01-01"]})),
        ("POST", format!("{s}/fill"), json!({"method": "temporal-linear", "preview": true})),
        ("POST", format!("{s}/fill"), json!({"method": "temporal-linear", "preview": false})),
        ("POST", "/api/analysis/correlate".into(), json!({"a": "rain-01-daily", "b": "rain-02-daily"})),
        ("POST", "/api/analysis/availability".into(), json!({"series": ["rain-01-daily"]})),
        ("POST", "/api/analysis/overlap".into(), json!({"series": ["rain-01-daily"], "minFraction": 0.5})),
        ("GET", "/api/catchments".into(), Value::Null),
        ("GET", "/api/catchments/kara".into(), Value::Null),
        ("GET", "/api/catchments/kara/coverage".into(), Value::Null),
        (
            "POST",
            "/api/catchments".into(),
            json!({"id": "sub", "name": "Sub", "parentId": "kara", "studyArea": "kara", "geometry": geometry}),
        ),
        ("POST", "/api/catchments/kara/link-stations".into(), Value::Null),
        ("POST", "/api/export".into(), json!({"series": ["rain-01-daily"]})),
        ("GET", "/api/assets".into(), Value::Null),
        ("GET", "/api/assets/notes".into(), Value::Null),
        ("POST", "/api/assets?kind=document&filename=b.txt&studyArea=kara".into(), Value::Null),
        ("GET", "/api/admin/users".into(), Value::Null),
        ("POST", "/api/admin/users".into(), json!({"username": "eve", "password": "password-123"})),
        ("GET", "/api/admin/grants".into(), Value::Null),
        (
            "POST",
            "/api/admin/grants".into(),
            json!({"subject": {"user": "ana"}, "object": {"series": "rain-01-daily"}, "actions": ["view-data"]}),
        ),
        ("GET", "/api/admin/study-areas".into(), Value::Null),
        ("POST", "/api/admin/study-areas".into(), json!({"id": "other", "name": "Other"})),
        ("POST", "/api/admin/fixtures/kara".into(), Value::Null),
        ("GET", "/api/admin/validate".into(), Value::Null),
    ]
}

fn call(srv: &Running, method: &str, path: &str, body: &Value, token: &str) -> (u16, String) {
    let token = (!token.is_empty()).then_some(token);
    if method == "GET" {
        srv.get(path, token)
    } else if path.starts_with("/api/assets") {
        srv.post_raw(path, token, "application/octet-stream", b"bytes")
    } else if body.is_null() {
        srv.post_raw(path, token, "application/json", b"")
    } else {
        srv.post(path, token, body)
    }
}

fn holdings(st: &State, p: &Principal, objects: &[ObjectRef]) -> BTreeSet<(ObjectRef, Action)> {
    objects
        .iter()
        .flat_map(|o| Action::ALL.iter().map(move |a| (o.clone(), *a)))
        .filter(|(o, a)| allowed(st, p, o, *a))
        .collect()
}

fn permissions(srv: &Running, admin: &str) -> Outcome {
    // sweep
    let ana = srv.login("ana");
    let (_, before) = srv.get("/api/admin/validate", Some(admin));
    let seq_before = serde_json::from_str::<Value>(&before).unwrap()["seq"].clone();
    let lists = ["/api/stations", "/api/series", "/api/catchments", "/api/assets", "/api/admin/grants", "/api/admin/study-areas"];
    let sweep = endpoints();
    for (method, path, body) in &sweep {
        let (status, text) = call(srv, method, path, body, &ana);
        if path == "/api/auth/me" {
            ensure!(status == 200, "whoami {status}");
        } else if *method == "GET" && lists.contains(&path.as_str()) {
            ensure!(status == 200 && text == "[]", "{method} {path}: {status} {text}");
        } else {
            ensure!(matches!(status, 403 | 404), "{method} {path}: {status} {text}");
        }
        let (anon, _) = call(srv, method, path, body, "");
        ensure!(anon == 401, "anonymous {method} {path}: {anon}");
    }
    let (_, csw) = srv.get("/csw?service=CSW&version=2.0.2&request=GetRecords&resultType=hits", Some(&ana));
    ensure!(csw.contains("numberOfRecordsMatched=\"0\""), "catalogue leaks records to a grantless user");
    let (_, after) = srv.get("/api/admin/validate", Some(admin));
    ensure!(
        serde_json::from_str::<Value>(&after).unwrap()["seq"] == seq_before,
        "denied requests changed the store"
    );

    // monotonicity over random grant sets
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(service_config(dir.path())).map_err(|e| e.to_string())?;
    svc.load_fixture_kara(&system()).map_err(|e| e.to_string())?;
    let base = svc.store().read().clone();
    let mut objects: Vec<ObjectRef> = ["rain-01-daily", "rain-01-archive", "gauge-01-discharge", "kara-syn-precipitation", "none"]
        .iter()
        .map(|s| ObjectRef::Series(SeriesId::new(*s)))
        .collect();
    objects.extend(["rain-01", "kara-syn"].iter().map(|s| ObjectRef::Station(StationId::new(*s))));
    objects.extend(["kara", "oti"].iter().map(|c| ObjectRef::Catchment(basinfo_core::model::CatchmentId::new(*c))));
    objects.extend(["kara", "elsewhere"].iter().map(|a| ObjectRef::StudyArea(a.to_string())));
    let subjects: Vec<Subject> = vec![
        Subject::User(UserId::new("ana")),
        Subject::User(UserId::new("ben")),
        Subject::Group("hydro".into()),
        Subject::Group("met".into()),
        Subject::Group("public".into()),
    ];
    let principals = [
        Principal::anonymous(),
        Principal { user: Some(UserId::new("ana")), groups: vec!["hydro".into()], is_admin: false },
        Principal { user: Some(UserId::new("ben")), groups: vec!["met".into(), "hydro".into()], is_admin: false },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let random_grant = |rng: &mut ChaCha8Rng| Grant {
        id: String::new(),
        subject: subjects.choose(rng).unwrap().clone(),
        object: objects.choose(rng).unwrap().clone(),
        actions: Action::ALL.iter().copied().filter(|_| rng.gen_bool(0.4)).collect(),
    };
    let mut strict_growth = 0;
    for case in 0..1000 {
        let set: Vec<Grant> = (0..rng.gen_range(0..8)).map(|_| random_grant(&mut rng)).collect();
        let extra = random_grant(&mut rng);
        let mut st = base.clone();
        st.grants = set.clone();
        let mut more = base.clone();
        more.grants = set.iter().cloned().chain([extra]).collect();
        let mut none = base.clone();
        none.grants.clear();
        for p in &principals {
            ensure!(holdings(&none, p, &objects).is_empty(), "case {case}: access without grants");
            let (h0, h1) = (holdings(&st, p, &objects), holdings(&more, p, &objects));
            ensure!(h0.is_subset(&h1), "case {case}: adding a grant removed {:?}", h0.difference(&h1).next());
            strict_growth += (h1.len() > h0.len()) as usize;
        }
    }
    Ok(format!(
        "{} endpoints denied to a grantless user and 401 to anonymous; 1000 grant sets monotone ({strict_growth} strict gains)",
        sweep.len()
    ))
}

// ---------------------------------------------------------------------------

fn records_in(xml: &str) -> Result<Vec<String>, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| format!("malformed XML: {e}"))?;
    let root = doc.root_element();
    let results = root
        .children()
        .find(|n| n.tag_name().name() == "SearchResults")
        .ok_or("no SearchResults")?;
    Ok(results
        .children()
        .filter(|n| n.is_element())
        .map(|n| xml[n.range()].to_string())
        .collect())
}

fn matched(xml: &str) -> Result<usize, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| format!("malformed XML: {e}"))?;
    doc.descendants()
        .find(|n| n.tag_name().name() == "SearchResults")
        .and_then(|n| n.attribute("numberOfRecordsMatched"))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no match count in {xml}"))
}

fn csw(srv: &Running, admin: &str) -> Outcome {
    let get = |q: &str| srv.get(&format!("/csw?service=CSW&version=2.0.2&{q}"), Some(admin));
    let (status, caps) = get("request=GetCapabilities");
    ensure!(status == 200, "GetCapabilities {status}");
    let doc = roxmltree::Document::parse(&caps).map_err(|e| format!("capabilities: {e}"))?;
    ensure!(doc.root_element().tag_name().name() == "Capabilities", "root {:?}", doc.root_element().tag_name());

    let (_, hits) = get("request=GetRecords&resultType=hits&constraintLanguage=CQL_TEXT&constraint=dc%3Atype%20%3D%20%27series%27");
    let series_count = matched(&hits)?;
    ensure!(series_count == 112, "{series_count} series records");

    for element_set in ["brief", "summary", "full"] {
        let (_, all) = get(&format!("request=GetRecords&elementSetName={element_set}&maxRecords=1000"));
        let total = matched(&all)?;
        let unpaged = records_in(&all)?;
        ensure!(unpaged.len() == total, "{element_set}: {} of {total} returned unpaged", unpaged.len());
        let mut paged = Vec::new();
        let mut start = 1;
        while start <= total {
            let (_, page) = get(&format!("request=GetRecords&elementSetName={element_set}&startPosition={start}&maxRecords=17"));
            paged.extend(records_in(&page)?);
            start += 17;
        }
        ensure!(paged == unpaged, "{element_set}: paging differs from unpaged results");
    }

    let (_, one) = get("request=GetRecordById&id=series/rain-01-daily&elementSetName=full");
    let doc = roxmltree::Document::parse(&one).map_err(|e| format!("GetRecordById: {e}"))?;
    let ids: Vec<&str> = doc.descendants().filter(|n| n.tag_name().name() == "identifier").filter_map(|n| n.text()).collect();
    ensure!(ids == ["series/rain-01-daily"], "GetRecordById identifiers {ids:?}");
    let (_, err) = get("request=GetRecords&maxRecords=0");
    roxmltree::Document::parse(&err).map_err(|e| format!("exception report: {e}"))?;
    ensure!(err.contains("ExceptionReport"), "no exception for maxRecords=0");
    Ok(format!("well-formed responses, {series_count} series matched, paging equals unpaged for 3 element sets"))
}

// ---------------------------------------------------------------------------

fn durability(dir: &std::path::Path, mut srv: Running) -> Outcome {
    let token = srv.login("admin");
    let ingest = |srv: &Running, id: &str, n: usize| {
        let data: String = (0..n).map(|i| format!("{}\t{}\n", ymd(2000, 1, 1) + Days::new(i as u64), i % 17)).collect();
        srv.post(
            "/api/series",
            Some(&token),
            &json!({"stationId": "kara-syn", "variable": "evaporation", "seriesId": id, "data": data}),
        )
    };

    // acknowledged commits survive SIGKILL
    let mut acked: Vec<String> = Vec::new();
    for round in 0..3 {
        let id = format!("dur-{round}");
        let (status, body) = ingest(&srv, &id, 300);
        ensure!(status == 201, "ingest {id}: {status} {body}");
        acked.push(id);
        srv.kill();
        srv = spawn_server(dir);
        for id in &acked {
            let (status, _) = srv.get(&format!("/api/series/{id}"), Some(&token));
            ensure!(status == 200, "{id} lost after kill (status {status})");
        }
    }
    // kill in the middle of a stream of writes
    let base = srv.base.clone();
    let writer = std::thread::spawn({
        let token = token.clone();
        move || {
            let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
            let mut acked = Vec::new();
            for i in 0..10_000 {
                let id = format!("burst-{i}");
                let data: String = (0..200).map(|d| format!("{}\t{}\n", ymd(2000, 1, 1) + Days::new(d), d % 7)).collect();
                let body = json!({"stationId": "kara-syn", "variable": "evaporation", "seriesId": id, "data": data});
                match agent
                    .post(format!("{base}/api/series"))
                    .header("Authorization", format!("Bearer {token}"))
                    .header("Content-Type", "application/json")
                    .send(body.to_string())
                {
                    Ok(r) if r.status().as_u16() == 201 => acked.push(id),
                    _ => break,
                }
            }
            acked
        }
    });
    std::thread::sleep(Duration::from_millis(400));
    srv.kill();
    let burst = writer.join().unwrap();
    srv = spawn_server(dir);
    for id in &burst {
        let (status, _) = srv.get(&format!("/api/series/{id}"), Some(&token));
        ensure!(status == 200, "acknowledged {id} lost after kill");
    }
    let (_, report) = srv.get("/api/admin/validate", Some(&token));
    let report: Value = serde_json::from_str(&report).unwrap();
    ensure!(report["problems"] == json!([]), "integrity after kill: {}", report["problems"]);

    // conflicting commits: exactly one wins
    let (status, body) = srv.post(
        "/api/series",
        Some(&token),
        &json!({"stationId": "kara-syn", "variable": "evaporation", "seriesId": "conflict", "data": "2014-01-01\t1\n2014-03-01\t2\n"}),
    );
    ensure!(status == 201, "conflict series: {status} {body}");
    let mut stale = 0;
    for round in 0..5u32 {
        let threads = 8;
        let barrier = Arc::new(Barrier::new(threads));
        let base_version = round + 1;
        let workers: Vec<_> = (0..threads)
            .map(|k| {
                let (barrier, base, token) = (barrier.clone(), srv.base.clone(), token.clone());
                std::thread::spawn(move || {
                    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
                    let date = ymd(2014, 1, 1) + Days::new((round * 8 + k as u32) as u64);
                    let body = json!({"method": "external", "data": format!("{date}\t1.5\n"), "preview": false, "baseVersion": base_version});
                    barrier.wait();
                    let r = agent
                        .post(format!("{base}/api/series/conflict/fill"))
                        .header("Authorization", format!("Bearer {token}"))
                        .header("Content-Type", "application/json")
                        .send(body.to_string())
                        .unwrap();
                    r.status().as_u16()
                })
            })
            .collect();
        let statuses: Vec<u16> = workers.into_iter().map(|w| w.join().unwrap()).collect();
        let wins = statuses.iter().filter(|s| **s == 200).count();
        let conflicts = statuses.iter().filter(|s| **s == 409).count();
        ensure!(wins == 1 && conflicts == threads - 1, "round {round}: {statuses:?}");
        stale += conflicts;
    }
    let (_, detail) = srv.get("/api/series/conflict", Some(&token));
    let versions = serde_json::from_str::<Value>(&detail).unwrap()["versions"].as_array().map(Vec::len);
    ensure!(versions == Some(6), "conflict series has {versions:?} versions");
    Ok(format!(
        "{} acknowledged commits survived SIGKILL; 5 rounds x 8 writers gave 1 winner each ({stale} stale)",
        acked.len() + burst.len()
    ))
}

// ---------------------------------------------------------------------------

fn report(name: &str, f: impl FnOnce() -> Outcome, failures: &mut Vec<String>) {
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let line = match &outcome {
        Ok(detail) => format!("PASS {name}: {detail}"),
        Err(why) => {
            failures.push(name.to_string());
            format!("FAIL {name}: {why}")
        }
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    let _ = writeln!(std::io::stdout().lock());
    report("fixture-fidelity", fixture_fidelity, &mut failures);
    report("round-trip", round_trip, &mut failures);
    report("analytics-oracles", analytics, &mut failures);
    report("aggregation", aggregation, &mut failures);
    report("fill-correctness", fill_correctness, &mut failures);
    report("versioning-provenance", versioning, &mut failures);

    // the HTTP criteria share one served store
    let dir = tempfile::tempdir().unwrap();
    ok(basinfo(dir.path(), &["fixture", "load", "kara"]));
    add_admin(dir.path());
    ok(basinfo_with_input(dir.path(), &["user", "add", "ana"], &format!("{}\n", common::PASSWORD)));
    let srv = spawn_server(dir.path());
    let admin = srv.login("admin");
    let (status, _) = srv.post_raw(
        "/api/assets?kind=document&filename=notes.txt&studyArea=kara&id=notes",
        Some(&admin),
        "application/octet-stream",
        b"notes",
    );
    assert_eq!(status, 201);
    report("permissions", || permissions(&srv, &admin), &mut failures);
    report("csw", || csw(&srv, &admin), &mut failures);
    report("durability", || durability(dir.path(), srv), &mut failures);

    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
