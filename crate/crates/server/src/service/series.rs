//! Stations, series, ingestion, analytics, corrections and export.

use std::sync::Arc;

use basinfo_core::analysis::{
    self, AggregateRow, AggregationPolicy, AggregationStep, BasicStats, Correlation, GapPolicy, Granularity,
    SeriesAvailability, Trend,
};
use basinfo_core::correction::{
    self, CorrectionPreview, IdwNeighbor, OutlierRule, RegressionParams,
};
use basinfo_core::ingest::{self, ExportError, FormatSpec, SeriesMeta};
use basinfo_core::model::{
    CorrectionRecord, DailySeries, DateRange, GapReport, QualityFlag, SeriesId, Station, StationId, StationKind,
    Variable,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{authorize, check_id, series_record, station_record, visible, Service, Session};
use crate::error::{Result, ServiceError};
use crate::permissions::{Action, ObjectRef};
use crate::state::{Change, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StationView {
    #[serde(flatten)]
    pub station: Station,
    pub study_area: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NewStation {
    #[serde(flatten)]
    pub station: Station,
    pub study_area: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StationFilter {
    pub kind: Option<StationKind>,
    pub catchment_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesSummary {
    pub id: SeriesId,
    pub station_id: StationId,
    pub variable: Variable,
    pub unit: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub latest_version: u32,
    pub missing_count: usize,
}

impl SeriesSummary {
    fn of(s: &DailySeries) -> Self {
        Self {
            id: s.id.clone(),
            station_id: s.station_id.clone(),
            variable: s.variable,
            unit: s.variable.unit().into(),
            start: s.start,
            end: s.end,
            latest_version: s.version,
            missing_count: s.missing_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VersionInfo {
    pub version: u32,
    pub parent_version: Option<u32>,
    pub correction: Option<CorrectionRecord>,
    pub content_hash: String,
    pub missing_count: usize,
}

impl VersionInfo {
    fn of(s: &DailySeries) -> Self {
        Self {
            version: s.version,
            parent_version: s.parent_version,
            correction: s.correction.clone(),
            content_hash: s.content_hash(),
            missing_count: s.missing_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesDetail {
    #[serde(flatten)]
    pub summary: SeriesSummary,
    pub study_area: String,
    pub owner: Option<String>,
    pub versions: Vec<VersionInfo>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesFilter {
    pub station_id: Option<StationId>,
    pub variable: Option<Variable>,
}

/// Dense slots over the requested window; days outside the series are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesData {
    pub id: SeriesId,
    pub version: u32,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub values: Vec<Option<f64>>,
    pub flags: Vec<Option<QualityFlag>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Window {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsResponse {
    pub id: SeriesId,
    pub version: u32,
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(flatten)]
    pub stats: BasicStats,
    /// Absent with fewer than two observations.
    pub trend: Option<Trend>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IngestRequest {
    pub station_id: StationId,
    pub variable: Variable,
    #[serde(default)]
    pub series_id: Option<SeriesId>,
    #[serde(default)]
    pub format: FormatSpec,
    pub data: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AggregateRequest {
    pub step: AggregationStep,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    /// Defaults to the study area's setting.
    #[serde(default)]
    pub hydro_start_month: Option<u32>,
    #[serde(default)]
    pub version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateResponse {
    pub id: SeriesId,
    pub version: u32,
    pub policy: AggregationPolicy,
    pub rows: Vec<AggregateRow>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CorrelateRequest {
    pub a: SeriesId,
    pub b: SeriesId,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AvailabilityRequest {
    pub series: Vec<SeriesId>,
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AvailabilityResponse {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub series: Vec<SeriesAvailability>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OverlapRequest {
    pub series: Vec<SeriesId>,
    pub min_fraction: f64,
    #[serde(default)]
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OverlapResponse {
    pub period: Option<DateRange>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutlierDetectRequest {
    #[serde(default)]
    pub rule: Option<OutlierRule>,
    #[serde(default)]
    pub version: Option<u32>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutlierRemoveRequest {
    pub dates: Vec<NaiveDate>,
    #[serde(default)]
    pub rule: Option<OutlierRule>,
    #[serde(default = "yes")]
    pub preview: bool,
    #[serde(default)]
    pub base_version: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FillMethod {
    #[serde(rename_all = "camelCase")]
    Regression {
        neighbors: Vec<SeriesId>,
        #[serde(default)]
        min_pairs: Option<usize>,
        #[serde(default)]
        min_abs_r: Option<f64>,
    },
    #[serde(rename_all = "camelCase")]
    Idw {
        neighbors: Vec<SeriesId>,
        #[serde(default)]
        power: Option<f64>,
    },
    #[serde(rename_all = "camelCase")]
    NormalRatio {
        neighbors: Vec<SeriesId>,
        /// Reference window for long-term means; defaults to the common span.
        #[serde(default)]
        window_start: Option<NaiveDate>,
        #[serde(default)]
        window_end: Option<NaiveDate>,
    },
    #[serde(rename_all = "camelCase")]
    TemporalLinear {
        #[serde(default)]
        max_gap_days: Option<usize>,
    },
    #[serde(rename_all = "camelCase")]
    External {
        #[serde(default)]
        format: FormatSpec,
        data: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FillRequest {
    #[serde(flatten)]
    pub method: FillMethod,
    #[serde(default = "yes")]
    pub preview: bool,
    /// Version the caller previewed against; a commit fails with a stale
    /// write when the series has moved on.
    #[serde(default)]
    pub base_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FillResponse {
    #[serde(flatten)]
    pub preview: CorrectionPreview,
    /// Set when the preview was committed.
    pub committed_version: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ExportItem {
    Latest(SeriesId),
    Version { id: SeriesId, version: u32 },
}

impl ExportItem {
    fn parts(&self) -> (&SeriesId, Option<u32>) {
        match self {
            ExportItem::Latest(id) => (id, None),
            ExportItem::Version { id, version } => (id, Some(*version)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExportRequest {
    pub series: Vec<ExportItem>,
    #[serde(default)]
    pub format: FormatSpec,
    #[serde(default)]
    pub aggregation: Option<AggregationPolicy>,
}

/// A version of a series, or `NotFound` naming it.
pub(crate) fn version_of(st: &State, id: &SeriesId, version: Option<u32>) -> Result<Arc<DailySeries>> {
    let history = st
        .series
        .get(id)
        .ok_or_else(|| ServiceError::NotFound(ObjectRef::Series(id.clone()).to_string()))?;
    match version {
        None => Ok(history.last().expect("histories are non-empty").clone()),
        Some(v) => history
            .get((v as usize).wrapping_sub(1))
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("series/{id} version {v}"))),
    }
}

/// Authorize `action` on a series and fetch a version of it.
fn series_for(st: &State, s: &Session, id: &SeriesId, action: Action, version: Option<u32>) -> Result<Arc<DailySeries>> {
    authorize(st, &s.principal, &ObjectRef::Series(id.clone()), action)?;
    version_of(st, id, version)
}

fn lineage(history: &[Arc<DailySeries>], upto: u32) -> String {
    history
        .iter()
        .take(upto as usize)
        .map(|v| match &v.correction {
            None => format!("v{} raw", v.version),
            Some(c) => {
                let params: Vec<String> = c.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!(
                    "v{} {} [{}] by {} at {}",
                    v.version,
                    serde_json::to_value(c.method).ok().and_then(|m| m.as_str().map(String::from)).unwrap_or_default(),
                    params.join(", "),
                    c.created_by,
                    c.created_at.to_rfc3339()
                )
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Aggregated rows as delimited text; the date column holds the period start.
fn render_aggregate(rows: &[AggregateRow], spec: &FormatSpec) -> std::result::Result<String, ExportError> {
    let pattern = spec.validate().map_err(ExportError::InvalidSpec)?;
    let width = spec.date_column.max(spec.value_column) + 1;
    let d = spec.delimiter.to_string();
    let mut out = String::new();
    for _ in 0..spec.header_lines {
        let mut cells = vec!["-"; width];
        cells[spec.date_column] = "date";
        cells[spec.value_column] = "value";
        out.push_str(&cells.join(&d));
        out.push('\n');
    }
    let mut cells = vec![String::from("-"); width];
    for row in rows {
        cells[spec.date_column] = pattern.render(row.period_start);
        cells[spec.value_column] = match row.value {
            None => spec.missing_codes[0].clone(),
            Some(x) => {
                let r = ingest::render_value(x, spec);
                if let Some(code) = spec.missing_codes.iter().find(|c| c.trim() == r) {
                    return Err(ExportError::ValueCollidesWithMissingCode {
                        date: row.period_start,
                        value: x,
                        code: code.clone(),
                    });
                }
                r
            }
        };
        out.push_str(&cells.join(&d));
        out.push('\n');
    }
    Ok(out)
}

/// Version an aggregation works on: the latest gap-filled one for
/// `use-filled`, else the requested or latest version.
fn select_version(history: &[Arc<DailySeries>], policy: &AggregationPolicy, requested: Option<u32>) -> Result<Arc<DailySeries>> {
    if policy.gap_policy == GapPolicy::UseFilled {
        return history
            .iter()
            .rev()
            .find(|v| v.is_filled_version())
            .cloned()
            .ok_or(analysis::AnalysisError::NoFilledVersion.into());
    }
    match requested {
        None => Ok(history.last().expect("histories are non-empty").clone()),
        Some(v) => history
            .get((v as usize).wrapping_sub(1))
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("series version {v}"))),
    }
}

impl Service {
    pub fn list_stations(&self, s: &Session, filter: &StationFilter) -> Result<Vec<StationView>> {
        let st = self.store.read();
        Ok(st
            .stations
            .values()
            .filter(|x| filter.kind.is_none_or(|k| k == x.kind))
            .filter(|x| {
                filter
                    .catchment_id
                    .as_deref()
                    .is_none_or(|c| x.catchment_id.as_ref().is_some_and(|id| id.as_str() == c))
            })
            .filter(|x| visible(&st, &s.principal, &ObjectRef::Station(x.id.clone())))
            .map(|x| StationView {
                station: x.clone(),
                study_area: st.meta[&ObjectRef::Station(x.id.clone())].study_area.clone(),
            })
            .collect())
    }

    pub fn get_station(&self, s: &Session, id: &StationId) -> Result<StationView> {
        let st = self.store.read();
        let obj = ObjectRef::Station(id.clone());
        authorize(&st, &s.principal, &obj, Action::ViewMetadata)?;
        Ok(StationView {
            station: st.stations[id].clone(),
            study_area: st.meta[&obj].study_area.clone(),
        })
    }

    pub fn create_station(&self, s: &Session, req: &NewStation) -> Result<StationView> {
        check_id("station", req.station.id.as_str())?;
        req.station
            .validate()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let now = self.now();
        self.store.commit(now, |st| {
            authorize(st, &s.principal, &ObjectRef::StudyArea(req.study_area.clone()), Action::Edit)?;
            if st.stations.contains_key(&req.station.id) {
                return Err(ServiceError::AlreadyExists(format!("station {}", req.station.id)));
            }
            if let Some(c) = &req.station.catchment_id {
                if !st.catchments.contains_key(c) {
                    return Err(ServiceError::BadRequest(format!("unknown catchment {c}")));
                }
            }
            let changes = vec![
                Change::PutStation {
                    station: req.station.clone(),
                    meta: self.new_meta(s, &req.study_area),
                },
                Change::PutRecord {
                    record: station_record(&req.station, now),
                },
            ];
            Ok((
                changes,
                StationView {
                    station: req.station.clone(),
                    study_area: req.study_area.clone(),
                },
            ))
        })
    }

    pub fn list_series(&self, s: &Session, filter: &SeriesFilter) -> Result<Vec<SeriesSummary>> {
        let st = self.store.read();
        Ok(st
            .series
            .values()
            .filter_map(|h| h.last())
            .filter(|x| filter.station_id.as_ref().is_none_or(|id| &x.station_id == id))
            .filter(|x| filter.variable.is_none_or(|v| v == x.variable))
            .filter(|x| visible(&st, &s.principal, &ObjectRef::Series(x.id.clone())))
            .map(|x| SeriesSummary::of(x))
            .collect())
    }

    pub fn get_series(&self, s: &Session, id: &SeriesId) -> Result<SeriesDetail> {
        let st = self.store.read();
        let latest = series_for(&st, s, id, Action::ViewMetadata, None)?;
        let meta = &st.meta[&ObjectRef::Series(id.clone())];
        Ok(SeriesDetail {
            summary: SeriesSummary::of(&latest),
            study_area: meta.study_area.clone(),
            owner: meta.owner.as_ref().map(|u| u.to_string()),
            versions: st.series[id].iter().map(|v| VersionInfo::of(v)).collect(),
        })
    }

    pub fn series_data(&self, s: &Session, id: &SeriesId, w: Window) -> Result<SeriesData> {
        let series = {
            let st = self.store.read();
            series_for(&st, s, id, Action::ViewData, w.version)?
        };
        let from = w.from.unwrap_or(series.start);
        let to = w.to.unwrap_or(series.end);
        let range = DateRange::new(from, to).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let (values, flags) = range
            .days()
            .map(|d| match series.index_of(d) {
                Ok(i) => (series.values[i], Some(series.flags[i])),
                Err(_) => (None, None),
            })
            .unzip();
        Ok(SeriesData {
            id: id.clone(),
            version: series.version,
            from,
            to,
            values,
            flags,
        })
    }

    pub fn series_stats(&self, s: &Session, id: &SeriesId, w: Window) -> Result<StatsResponse> {
        let series = {
            let st = self.store.read();
            series_for(&st, s, id, Action::ViewData, w.version)?
        };
        let window = match (w.from, w.to) {
            (None, None) => None,
            (f, t) => Some(
                DateRange::new(f.unwrap_or(series.start), t.unwrap_or(series.end))
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?,
            ),
        };
        let stats = analysis::basic_stats(&series, window)?;
        let range = window.unwrap_or(series.range());
        let trend = if window.is_some() {
            let a = series.index_of(range.start).expect("window checked");
            let b = series.index_of(range.end).expect("window checked");
            let sub = DailySeries::raw(series.id.clone(), series.station_id.clone(), series.variable, range.start, series.values[a..=b].to_vec())
                .expect("non-empty window");
            analysis::linear_trend(&sub).ok()
        } else {
            analysis::linear_trend(&series).ok()
        };
        Ok(StatsResponse {
            id: id.clone(),
            version: series.version,
            from: range.start,
            to: range.end,
            stats,
            trend,
        })
    }

    pub fn series_gaps(&self, s: &Session, id: &SeriesId, version: Option<u32>) -> Result<GapReport> {
        let st = self.store.read();
        let series = series_for(&st, s, id, Action::ViewData, version)?;
        if version.is_none() {
            return Ok(st.gap_reports[id].clone());
        }
        Ok(ingest::detect_gaps(&series))
    }

    pub fn aggregate(&self, s: &Session, id: &SeriesId, req: &AggregateRequest) -> Result<AggregateResponse> {
        let (history, hydro_default) = {
            let st = self.store.read();
            authorize(&st, &s.principal, &ObjectRef::Series(id.clone()), Action::ViewData)?;
            let area = &st.meta[&ObjectRef::Series(id.clone())].study_area;
            let month = st.study_areas.get(area).map_or(4, |a| a.hydro_start_month);
            (st.series[id].clone(), month)
        };
        let policy = AggregationPolicy {
            step: req.step,
            gap_policy: req.gap_policy,
            hydro_start_month: req.hydro_start_month.unwrap_or(hydro_default),
        };
        let series = select_version(&history, &policy, req.version)?;
        let rows = analysis::aggregate(&series, &policy)?;
        Ok(AggregateResponse {
            id: id.clone(),
            version: series.version,
            policy,
            rows,
        })
    }

    /// Parse and register a new series at an existing station.
    pub fn ingest(&self, s: &Session, req: &IngestRequest) -> Result<SeriesSummary> {
        let id = req
            .series_id
            .clone()
            .unwrap_or_else(|| SeriesId::new(format!("{}-{}", req.station_id, req.variable.code())));
        check_id("series", id.as_str())?;
        {
            let st = self.store.read();
            self.ingest_gate(&st, s, &req.station_id)?;
        }
        req.format.validate().map_err(ingest::IngestError::InvalidSpec)?;
        let meta = SeriesMeta {
            id: id.clone(),
            station_id: req.station_id.clone(),
            variable: req.variable,
        };
        let series = ingest::parse_series(&req.data, &req.format, &meta)?;
        self.register_series(s, series)
    }

    fn ingest_gate(&self, st: &State, s: &Session, station: &StationId) -> Result<()> {
        let obj = ObjectRef::Station(station.clone());
        if !visible(st, &s.principal, &obj) {
            return Err(ServiceError::UnknownStation(station.to_string()));
        }
        authorize(st, &s.principal, &obj, Action::Edit)
    }

    /// Persist a version-1 series with its catalogue record.
    pub fn register_series(&self, s: &Session, series: DailySeries) -> Result<SeriesSummary> {
        if series.version != 1 || !series.validate().is_empty() {
            return Err(ServiceError::BadRequest("only well-formed version-1 series can be registered".into()));
        }
        let now = self.now();
        let summary = SeriesSummary::of(&series);
        self.store.commit(now, |st| {
            self.ingest_gate(st, s, &series.station_id)?;
            if st.series.contains_key(&series.id) {
                return Err(ServiceError::AlreadyExists(format!("series {}", series.id)));
            }
            let station = &st.stations[&series.station_id];
            let area = st.meta[&ObjectRef::Station(station.id.clone())].study_area.clone();
            let record = series_record(&series, station, now);
            tracing::info!(series = %series.id, "registering series");
            Ok((
                vec![
                    Change::PutSeriesVersion {
                        series,
                        meta: Some(self.new_meta(s, &area)),
                    },
                    Change::PutRecord { record },
                ],
                summary,
            ))
        })
    }

    pub fn correlate(&self, s: &Session, req: &CorrelateRequest) -> Result<Correlation> {
        let (a, b) = {
            let st = self.store.read();
            (
                series_for(&st, s, &req.a, Action::ViewData, None)?,
                series_for(&st, s, &req.b, Action::ViewData, None)?,
            )
        };
        Ok(analysis::correlate(&a, &b)?)
    }

    fn latest_all(&self, s: &Session, ids: &[SeriesId]) -> Result<Vec<Arc<DailySeries>>> {
        let st = self.store.read();
        ids.iter().map(|id| series_for(&st, s, id, Action::ViewData, None)).collect()
    }

    pub fn availability(&self, s: &Session, req: &AvailabilityRequest) -> Result<AvailabilityResponse> {
        if req.series.is_empty() {
            return Err(ServiceError::BadRequest("at least one series required".into()));
        }
        let series = self.latest_all(s, &req.series)?;
        let from = req.from.unwrap_or_else(|| series.iter().map(|x| x.start).min().expect("non-empty"));
        let to = req.to.unwrap_or_else(|| series.iter().map(|x| x.end).max().expect("non-empty"));
        let refs: Vec<&DailySeries> = series.iter().map(|x| x.as_ref()).collect();
        Ok(AvailabilityResponse {
            from,
            to,
            series: analysis::availability(&refs, from, to)?,
        })
    }

    pub fn overlap(&self, s: &Session, req: &OverlapRequest) -> Result<OverlapResponse> {
        let series = self.latest_all(s, &req.series)?;
        let refs: Vec<&DailySeries> = series.iter().map(|x| x.as_ref()).collect();
        Ok(OverlapResponse {
            period: analysis::overlap_period(&refs, req.min_fraction, req.granularity)?,
        })
    }

    pub fn detect_outliers(&self, s: &Session, id: &SeriesId, req: &OutlierDetectRequest) -> Result<Vec<correction::Outlier>> {
        let series = {
            let st = self.store.read();
            series_for(&st, s, id, Action::ViewData, req.version)?
        };
        let rule = req.rule.unwrap_or(OutlierRule::for_variable(series.variable));
        Ok(correction::detect_outliers(&series, &rule)?)
    }

    pub fn remove_outliers(&self, s: &Session, id: &SeriesId, req: &OutlierRemoveRequest) -> Result<FillResponse> {
        self.correct(s, id, req.preview, req.base_version, |_, base| {
            let rule = req.rule.unwrap_or(OutlierRule::for_variable(base.variable));
            Ok(correction::remove_outliers(base, &rule, &req.dates)?)
        })
    }

    pub fn fill(&self, s: &Session, id: &SeriesId, req: &FillRequest) -> Result<FillResponse> {
        self.correct(s, id, req.preview, req.base_version, |st, base| self.compute_fill(st, s, base, &req.method))
    }

    fn compute_fill(&self, st: &State, s: &Session, target: &DailySeries, method: &FillMethod) -> Result<CorrectionPreview> {
        let neighbors = |ids: &[SeriesId]| -> Result<Vec<Arc<DailySeries>>> {
            if ids.iter().any(|n| n == &target.id) {
                return Err(ServiceError::BadRequest("a series cannot be its own neighbor".into()));
            }
            ids.iter().map(|n| series_for(st, s, n, Action::ViewData, None)).collect()
        };
        let preview = match method {
            FillMethod::Regression {
                neighbors: ids,
                min_pairs,
                min_abs_r,
            } => {
                let ns = neighbors(ids)?;
                let refs: Vec<&DailySeries> = ns.iter().map(|x| x.as_ref()).collect();
                let defaults = RegressionParams::default();
                let params = RegressionParams {
                    min_pairs: min_pairs.unwrap_or(defaults.min_pairs),
                    min_abs_r: min_abs_r.unwrap_or(defaults.min_abs_r),
                };
                correction::fill_regression(target, &refs, params)?
            }
            FillMethod::Idw { neighbors: ids, power } => {
                let ns = neighbors(ids)?;
                let stations: Vec<&Station> = ns.iter().map(|n| &st.stations[&n.station_id]).collect();
                let idw: Vec<IdwNeighbor<'_>> = ns
                    .iter()
                    .zip(&stations)
                    .map(|(n, station)| IdwNeighbor { series: n, station })
                    .collect();
                correction::fill_idw(target, &st.stations[&target.station_id], &idw, power.unwrap_or(2.0))?
            }
            FillMethod::NormalRatio {
                neighbors: ids,
                window_start,
                window_end,
            } => {
                let ns = neighbors(ids)?;
                let mut common = target.range();
                for n in &ns {
                    common = common
                        .intersect(&n.range())
                        .ok_or_else(|| ServiceError::BadRequest(format!("{} shares no days with the target", n.id)))?;
                }
                let window = DateRange::new(window_start.unwrap_or(common.start), window_end.unwrap_or(common.end))
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                let refs: Vec<&DailySeries> = ns.iter().map(|x| x.as_ref()).collect();
                correction::fill_normal_ratio(target, &refs, window)?
            }
            FillMethod::TemporalLinear { max_gap_days } => correction::fill_temporal_linear(target, max_gap_days.unwrap_or(3))?,
            FillMethod::External { format, data } => correction::import_external_fill(target, data.as_bytes(), format)?,
        };
        Ok(preview)
    }

    /// Preview or commit a derived version of `id`.
    fn correct(
        &self,
        s: &Session,
        id: &SeriesId,
        preview_only: bool,
        base_version: Option<u32>,
        compute: impl FnOnce(&State, &DailySeries) -> Result<CorrectionPreview>,
    ) -> Result<FillResponse> {
        if preview_only {
            let st = self.store.read();
            let base = series_for(&st, s, id, Action::Edit, base_version)?;
            let preview = compute(&st, &base)?;
            return Ok(FillResponse {
                preview,
                committed_version: None,
            });
        }
        let now = self.now();
        self.store.commit(now, |st| {
            let latest = series_for(st, s, id, Action::Edit, None)?;
            let base = base_version.unwrap_or(latest.version);
            if base != latest.version {
                return Err(ServiceError::StaleWrite {
                    base,
                    latest: latest.version,
                });
            }
            let preview = compute(st, &latest)?;
            let next = preview.clone().commit(&latest, s.actor(), now)?;
            let version = next.version;
            let record = series_record(&next, &st.stations[&next.station_id], now);
            tracing::info!(series = %id, version, "committing corrected version");
            Ok((
                vec![Change::PutSeriesVersion { series: next, meta: None }, Change::PutRecord { record }],
                FillResponse {
                    preview,
                    committed_version: Some(version),
                },
            ))
        })
    }

    /// One block per series: '#' metadata lines, then delimited rows.
    /// Any series the caller may not download aborts the whole export.
    pub fn export(&self, s: &Session, req: &ExportRequest) -> Result<String> {
        if req.series.is_empty() {
            return Err(ServiceError::BadRequest("no series to export".into()));
        }
        req.format.validate().map_err(ExportError::InvalidSpec)?;
        if let Some(p) = &req.aggregation {
            p.validate()?;
        }
        let mut picked = Vec::new();
        {
            let st = self.store.read();
            for item in &req.series {
                let (id, version) = item.parts();
                authorize(&st, &s.principal, &ObjectRef::Series(id.clone()), Action::Download)?;
                let history = st.series[id].clone();
                let station = st.stations[&history[0].station_id].clone();
                picked.push((history, version, station));
            }
        }
        let mut out = String::new();
        for (history, version, station) in picked {
            let series = match &req.aggregation {
                Some(p) => select_version(&history, p, version)?,
                None => select_version(&history, &AggregationPolicy::new(AggregationStep::Monthly, GapPolicy::Strict), version)?,
            };
            let mut header = vec![
                format!("# series: {}", series.id),
                format!("# station: {} ({})", station.id, station.name),
                format!("# variable: {}", series.variable.code()),
                format!("# unit: {}", series.variable.unit()),
                format!("# version: {}", series.version),
                format!("# lineage: {}", lineage(&history, series.version)),
            ];
            let body = match &req.aggregation {
                None => ingest::render_rows(&series, &req.format)?,
                Some(p) => {
                    let policy = serde_json::to_string(p).map_err(|e| ServiceError::Internal(e.to_string()))?;
                    header.push(format!("# aggregation: {policy}"));
                    render_aggregate(&analysis::aggregate(&series, p)?, &req.format)?
                }
            };
            for line in &header {
                out.push_str(line);
                out.push('\n');
            }
            out.push_str(&body);
        }
        Ok(out)
    }
}
