//! Deterministic synthetic dataset for the Kara sub-basin of the Oti.
//!
//! Everything is generated from a fixed seed, so two calls return identical
//! stations, geometries and series.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geodata::{Catchment, Polygon};
use crate::model::{add_days, day_count, CatchmentId, DailySeries, SeriesId, Station, StationId, StationKind, Variable};

pub const SEED: u64 = 0x6b61_7261;
pub const SERIES_COUNT: usize = 112;
pub const TARGET_AREA_KM2: f64 = 5287.0;
/// Basin bounds: west, south, east, north.
pub const BASIN_BBOX: [f64; 4] = [0.5, 9.25, 1.633, 10.017];
pub const DISCHARGE_START: (i32, u32, u32) = (1954, 1, 1);
pub const DISCHARGE_END: (i32, u32, u32) = (1989, 12, 31);

pub const KARA: &str = "kara";
pub const OTI: &str = "oti";

#[derive(Debug, Clone)]
pub struct Fixture {
    /// Parent first, so the list can be registered in order.
    pub catchments: Vec<Catchment>,
    pub stations: Vec<Station>,
    pub series: Vec<DailySeries>,
    /// Last day of the synthetic record; activity is judged against it.
    pub reference_date: NaiveDate,
    /// The six rainfall series with hand-designed gap patterns.
    pub gap_pattern_series: Vec<SeriesId>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

pub fn reference_date() -> NaiveDate {
    ymd(2014, 12, 31)
}

fn center() -> (f64, f64) {
    let [w, s, e, n] = BASIN_BBOX;
    ((w + e) / 2.0, (s + n) / 2.0)
}

fn ellipse(scale: f64) -> Vec<[f64; 2]> {
    let [w, s, e, n] = BASIN_BBOX;
    let (cx, cy) = center();
    let (ax, ay) = ((e - w) / 2.0 * scale, (n - s) / 2.0 * scale);
    // counter-clockwise, closed
    let k = 96;
    let mut ring: Vec<[f64; 2]> = (0..k)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / k as f64;
            [cx + ax * t.cos(), cy + ay * t.sin()]
        })
        .collect();
    ring.push(ring[0]);
    ring
}

/// Kara outline: an ellipse inscribed in the basin bounds, scaled so its
/// spherical area matches the published basin area.
pub fn kara_polygon() -> Polygon {
    let area = |scale: f64| Polygon::new(vec![ellipse(scale)]).expect("ellipse is valid").area_km2();
    let (mut lo, mut hi) = (0.05, 1.0);
    for _ in 0..60 {
        let mid = (lo + hi) / 2.0;
        if area(mid) < TARGET_AREA_KM2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Polygon::new(vec![ellipse((lo + hi) / 2.0)]).expect("ellipse is valid")
}

pub fn oti_polygon() -> Polygon {
    let ring = vec![[-0.6, 9.0], [2.1, 9.0], [2.1, 11.6], [-0.6, 11.6], [-0.6, 9.0]];
    Polygon::new(vec![ring]).expect("rectangle is valid")
}

/// True when `(lon, lat)` lies inside the ellipse shrunk by `margin` (0..1).
fn inside_core(lon: f64, lat: f64, margin: f64) -> bool {
    let [w, s, e, n] = BASIN_BBOX;
    let (cx, cy) = center();
    // the Kara ellipse uses roughly 0.8 of the half-axes
    let (ax, ay) = ((e - w) / 2.0 * 0.8 * margin, (n - s) / 2.0 * 0.8 * margin);
    ((lon - cx) / ax).powi(2) + ((lat - cy) / ay).powi(2) <= 1.0
}

fn random_site(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let [w, s, e, n] = BASIN_BBOX;
    loop {
        let lon = w + (e - w) * rng.gen::<f64>();
        let lat = s + (n - s) * rng.gen::<f64>();
        if inside_core(lon, lat, 0.85) {
            return ((lon * 1e4).round() / 1e4, (lat * 1e4).round() / 1e4);
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn day_of_year(d: NaiveDate) -> f64 {
    d.ordinal0() as f64
}

/// -ln(U): unit exponential draw.
fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

fn precipitation(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate, wetness: f64) -> Vec<Option<f64>> {
    (0..day_count(start, end))
        .map(|i| {
            let d = add_days(start, i);
            // single rainy season peaking in August
            let season = (std::f64::consts::TAU * (day_of_year(d) - 120.0) / 365.25).sin().max(0.0);
            let p_wet = 0.03 + 0.55 * season * wetness;
            if rng.gen::<f64>() < p_wet {
                Some(round1((12.0 * exp1(rng)).min(250.0)).max(0.1))
            } else {
                Some(0.0)
            }
        })
        .collect()
}

fn temperature(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate, base: f64) -> [Vec<Option<f64>>; 3] {
    let n = day_count(start, end);
    let mut tmin = Vec::with_capacity(n);
    let mut tmax = Vec::with_capacity(n);
    let mut tmean = Vec::with_capacity(n);
    for i in 0..n {
        let d = add_days(start, i);
        let seasonal = 3.0 * (std::f64::consts::TAU * (day_of_year(d) - 60.0) / 365.25).cos();
        let lo = round1(base - 6.0 + seasonal + rng.gen_range(-1.5..1.5));
        let hi = round1(base + 6.0 + seasonal + rng.gen_range(-1.5..1.5));
        tmin.push(Some(lo));
        tmax.push(Some(hi));
        tmean.push(Some(round1((lo + hi) / 2.0)));
    }
    [tmin, tmax, tmean]
}

fn evaporation(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate) -> Vec<Option<f64>> {
    (0..day_count(start, end))
        .map(|i| {
            let d = add_days(start, i);
            let dry = (std::f64::consts::TAU * (day_of_year(d) - 30.0) / 365.25).cos();
            Some(round1(5.5 + 2.0 * dry + rng.gen_range(-0.8..0.8)))
        })
        .collect()
}

fn discharge(rng: &mut ChaCha8Rng, start: NaiveDate, end: NaiveDate, size: f64) -> Vec<Option<f64>> {
    let mut q = size * 0.05;
    (0..day_count(start, end))
        .map(|i| {
            let d = add_days(start, i);
            let season = (std::f64::consts::TAU * (day_of_year(d) - 150.0) / 365.25).sin().max(0.0);
            let target = size * (0.02 + season.powi(2));
            q += 0.08 * (target - q) + 0.05 * size * season * (rng.gen::<f64>() - 0.45);
            q = q.max(0.001 * size);
            Some(round1(q))
        })
        .collect()
}

/// Blank out `[from, to]` (inclusive) where it overlaps the series.
fn blank(values: &mut [Option<f64>], start: NaiveDate, from: NaiveDate, to: NaiveDate) {
    let n = values.len() as i64;
    let a = (from - start).num_days().clamp(0, n);
    let b = ((to - start).num_days() + 1).clamp(0, n);
    for v in &mut values[a as usize..b as usize] {
        *v = None;
    }
}

/// Scatter gaps at random, keeping the first and last day observed.
fn random_gaps(rng: &mut ChaCha8Rng, values: &mut [Option<f64>]) {
    let n = values.len();
    let count = rng.gen_range(2..12);
    for _ in 0..count {
        let len = if rng.gen_bool(0.3) { rng.gen_range(30..400) } else { rng.gen_range(1..20) };
        let at = rng.gen_range(1..n.saturating_sub(len + 1).max(2));
        let stop = (at + len).min(n - 1);
        for v in &mut values[at..stop] {
            *v = None;
        }
    }
}

fn station(
    id: &str,
    name: &str,
    kind: StationKind,
    (lon, lat): (f64, f64),
    elevation: f64,
    established: i32,
    operator: &str,
) -> Station {
    Station {
        id: StationId::new(id),
        external_id: String::new(),
        name: name.to_string(),
        kind,
        lat,
        lon,
        elevation,
        established,
        operator: operator.to_string(),
        catchment_id: Some(CatchmentId::new(KARA)),
    }
}

fn series(id: String, station: &Station, variable: Variable, start: NaiveDate, values: Vec<Option<f64>>) -> DailySeries {
    DailySeries::raw(SeriesId::new(id), station.id.clone(), variable, start, values).expect("non-empty fixture series")
}

/// Build the Kara dataset.
pub fn kara() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let today = reference_date();

    let mut registered = BTreeMap::new();
    let oti = Catchment::new(CatchmentId::new(OTI), "Oti".into(), None, oti_polygon(), &registered)
        .expect("oti registers");
    registered.insert(oti.id.clone(), oti.clone());
    let kara_c = Catchment::new(
        CatchmentId::new(KARA),
        "Kara".into(),
        Some(oti.id.clone()),
        kara_polygon(),
        &registered,
    )
    .expect("kara registers");

    let mut stations = Vec::new();
    let mut all = Vec::new();

    // climate stations: (id, name, site, elevation, first year, last day)
    let climate = [
        ("kara-syn", "Kara", (1.1917, 9.5525), 342.0, 1961, today),
        ("niamtougou-syn", "Niamtougou", (1.1000, 9.7672), 461.0, 1967, today),
        ("bafilo-clim", "Bafilo", (1.2200, 9.4000), 420.0, 1963, ymd(1998, 6, 30)),
        ("kande-clim", "Kande", (1.0500, 9.8800), 380.0, 1965, ymd(1991, 12, 31)),
        ("guerin-kouka-clim", "Guerin-Kouka", (0.8200, 9.6800), 260.0, 1970, ymd(2003, 3, 31)),
    ];
    for (id, name, site, elevation, year, last) in climate {
        let st = station(id, name, StationKind::Climate, site, elevation, year, "national meteorological service");
        let start = ymd(year, 1, 1);
        let mut precip = precipitation(&mut rng, start, last, 1.0);
        random_gaps(&mut rng, &mut precip);
        all.push(series(format!("{id}-precipitation"), &st, Variable::Precipitation, start, precip));
        let base = 27.5 - (elevation - 300.0) / 200.0;
        let [tmin, tmax, tmean] = temperature(&mut rng, start, last, base);
        for (suffix, mut values) in [("tmin", tmin), ("tmax", tmax), ("tmean", tmean)] {
            random_gaps(&mut rng, &mut values);
            all.push(series(format!("{id}-{suffix}"), &st, Variable::Temperature, start, values));
        }
        if id == "kara-syn" {
            let evap_end = ymd(1996, 12, 31);
            let mut evap = evaporation(&mut rng, start, evap_end);
            random_gaps(&mut rng, &mut evap);
            all.push(series(format!("{id}-evaporation"), &st, Variable::Evaporation, start, evap));
        }
        stations.push(st);
    }

    // gauging stations: spans jointly cover exactly the discharge record
    let spans = [
        ((1954, 1, 1), (1975, 12, 31), 180.0),
        ((1956, 6, 1), (1989, 12, 31), 95.0),
        ((1961, 1, 1), (1980, 12, 31), 40.0),
        ((1963, 4, 1), (1984, 9, 30), 22.0),
        ((1968, 1, 1), (1979, 12, 31), 60.0),
        ((1970, 1, 1), (1988, 12, 31), 12.0),
        ((1972, 7, 1), (1986, 6, 30), 8.0),
    ];
    for (i, (from, to, size)) in spans.into_iter().enumerate() {
        let id = format!("gauge-{:02}", i + 1);
        let st = station(
            &id,
            &format!("Kara gauge {:02}", i + 1),
            StationKind::Gauging,
            random_site(&mut rng),
            rng.gen_range(180.0..420.0_f64).round(),
            from.0,
            "hydrological service",
        );
        let start = ymd(from.0, from.1, from.2);
        let mut q = discharge(&mut rng, start, ymd(to.0, to.1, to.2), size);
        random_gaps(&mut rng, &mut q);
        all.push(series(format!("{id}-discharge"), &st, Variable::Discharge, start, q));
        stations.push(st);
    }

    // rainfall network: Pagouda is the only gauge still reporting; it sits
    // just outside the Kara outline but is attributed to the basin
    let pagouda = station(
        "pagouda-rain",
        "Pagouda",
        StationKind::Rainfall,
        (1.55, 9.97),
        520.0,
        1950,
        "national meteorological service",
    );
    let rain_count = (SERIES_COUNT - all.len()) / 2;
    let mut rainfall = vec![pagouda];
    for i in 1..rain_count {
        rainfall.push(station(
            &format!("rain-{i:02}"),
            &format!("Rain gauge {i:02}"),
            StationKind::Rainfall,
            random_site(&mut rng),
            rng.gen_range(200.0..600.0_f64).round(),
            rng.gen_range(1940..1975),
            "national meteorological service",
        ));
    }
    let mut gap_pattern_series = Vec::new();
    for (i, st) in rainfall.into_iter().enumerate() {
        let active = i == 0;
        let start = ymd(st.established, 1, 1);
        let last = if active { today } else { ymd(rng.gen_range(1985..2005), 12, 31) };
        // one daily record and one from a second, shorter archive
        let wet = rng.gen_range(0.8..1.2);
        let mut primary = precipitation(&mut rng, start, last, wet);
        let archive_start = ymd(st.established + 5, 1, 1);
        let archive_end = ymd(st.established + 25, 12, 31).min(last);
        let mut archive = precipitation(&mut rng, archive_start, archive_end, wet);
        if (1..=6).contains(&i) {
            designed_gaps(i, &mut primary, start);
            gap_pattern_series.push(SeriesId::new(format!("{}-daily", st.id)));
        } else {
            random_gaps(&mut rng, &mut primary);
        }
        random_gaps(&mut rng, &mut archive);
        all.push(series(format!("{}-daily", st.id), &st, Variable::Precipitation, start, primary));
        all.push(series(format!("{}-archive", st.id), &st, Variable::Precipitation, archive_start, archive));
        stations.push(st);
    }
    debug_assert_eq!(all.len(), SERIES_COUNT);

    Fixture {
        catchments: vec![oti, kara_c],
        stations,
        series: all,
        reference_date: today,
        gap_pattern_series,
    }
}

/// Six recognisably different gap layouts for the availability chart.
fn designed_gaps(pattern: usize, values: &mut [Option<f64>], start: NaiveDate) {
    let y0 = start.year();
    let n = values.len();
    match pattern {
        // one multi-year outage
        1 => blank(values, start, ymd(y0 + 8, 3, 1), ymd(y0 + 12, 10, 31)),
        // every dry season missing for a decade
        2 => {
            for y in (y0 + 4)..(y0 + 14) {
                blank(values, start, ymd(y, 11, 1), ymd(y + 1, 2, 28));
            }
        }
        // scattered single days, every 37th
        3 => {
            for i in (5..n - 1).step_by(37) {
                values[i] = None;
            }
        }
        // two medium gaps a few years apart
        4 => {
            blank(values, start, ymd(y0 + 3, 6, 1), ymd(y0 + 3, 9, 30));
            blank(values, start, ymd(y0 + 9, 1, 1), ymd(y0 + 10, 6, 30));
        }
        // an early block of sparse records
        5 => {
            for i in (1..(n / 3)).filter(|i| i % 3 != 0) {
                values[i] = None;
            }
        }
        // monthly one-week gaps throughout
        _ => {
            for i in (10..n - 1).step_by(30) {
                for v in &mut values[i..(i + 7).min(n - 1)] {
                    *v = None;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_bounds() {
        let f = kara();
        assert_eq!(f.series.len(), SERIES_COUNT);
        assert_eq!(f.gap_pattern_series.len(), 6);
        let [w, s, e, n] = BASIN_BBOX;
        for st in &f.stations {
            assert!(st.lon >= w && st.lon <= e && st.lat >= s && st.lat <= n, "{}", st.id);
            st.validate().unwrap();
        }
        for s in &f.series {
            assert!(s.validate().is_empty(), "{}", s.id);
            assert!(s.values[0].is_some() && s.values[s.len() - 1].is_some(), "{}", s.id);
        }
        let area = f.catchments[1].area_km2;
        assert!((area - TARGET_AREA_KM2).abs() / TARGET_AREA_KM2 < 0.001, "{area}");
    }

    #[test]
    fn deterministic() {
        let a = kara();
        let b = kara();
        assert_eq!(a.series, b.series);
        assert_eq!(a.stations, b.stations);
    }

    #[test]
    fn pagouda_outside_outline() {
        let f = kara();
        let p = f.stations.iter().find(|s| s.name == "Pagouda").unwrap();
        assert!(!f.catchments[1].geometry.contains(p.lon, p.lat));
        for st in f.stations.iter().filter(|s| s.name != "Pagouda") {
            assert!(f.catchments[1].geometry.contains(st.lon, st.lat), "{}", st.id);
        }
    }
}
