//! Catchments, assets, the catalogue endpoint and the demonstration fixture.

use basinfo_core::analysis::{self, CoverageReport};
use basinfo_core::catalogue::{csw, BoundingBox, MetadataRecord, RecordType};
use basinfo_core::fixture;
use basinfo_core::geodata::{self, Asset, AssetError, AssetKind, Catchment, Polygon, ShapeGeometries};
use basinfo_core::model::{CatchmentId, DailySeries, Station, StationId};
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{authorize, check_id, series_record, station_record, visible, Service, Session};
use crate::error::{Result, ServiceError};
use crate::permissions::{Action, ObjectRef};
use crate::state::{Change, ObjectMeta, StudyArea};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CatchmentView {
    #[serde(flatten)]
    pub catchment: Catchment,
    pub study_area: String,
}

/// Geometry comes either as polygon rings or as a base64 `.shp` file
/// holding exactly one polygon.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NewCatchment {
    pub id: CatchmentId,
    pub name: String,
    #[serde(default)]
    pub parent_id: Option<CatchmentId>,
    pub study_area: String,
    #[serde(default)]
    pub geometry: Option<Polygon>,
    #[serde(default)]
    pub shapefile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkResponse {
    pub catchment_id: CatchmentId,
    pub linked: Vec<(StationId, CatchmentId)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssetUpload {
    #[serde(default)]
    pub id: Option<String>,
    pub kind: AssetKind,
    pub filename: String,
    pub study_area: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssetView {
    #[serde(flatten)]
    pub asset: Asset,
    pub study_area: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FixtureSummary {
    pub study_area: String,
    pub catchments: usize,
    pub stations: usize,
    pub series: usize,
}

fn bbox_of(b: [f64; 4]) -> BoundingBox {
    BoundingBox {
        west: b[0],
        south: b[1],
        east: b[2],
        north: b[3],
    }
}

fn catchment_record(c: &Catchment, at: chrono::DateTime<chrono::Utc>) -> MetadataRecord {
    MetadataRecord {
        identifier: ObjectRef::Catchment(c.id.clone()).to_string(),
        title: format!("{} catchment", c.name),
        abstract_text: format!("Catchment boundary of {} ({:.0} km²).", c.name, c.area_km2),
        keywords: vec!["catchment".into(), c.name.clone()],
        record_type: RecordType::Catchment,
        bounding_box: Some(bbox_of(c.geometry.bbox())),
        temporal_extent: None,
        modified: at,
    }
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.trim_matches('-').to_string();
    if s.is_empty() {
        "asset".into()
    } else {
        s.chars().take(64).collect()
    }
}

impl Service {
    pub fn list_catchments(&self, s: &Session) -> Result<Vec<CatchmentView>> {
        let st = self.store.read();
        Ok(st
            .catchments
            .values()
            .filter(|c| visible(&st, &s.principal, &ObjectRef::Catchment(c.id.clone())))
            .map(|c| CatchmentView {
                catchment: c.clone(),
                study_area: st.meta[&ObjectRef::Catchment(c.id.clone())].study_area.clone(),
            })
            .collect())
    }

    pub fn get_catchment(&self, s: &Session, id: &CatchmentId) -> Result<CatchmentView> {
        let st = self.store.read();
        let obj = ObjectRef::Catchment(id.clone());
        authorize(&st, &s.principal, &obj, Action::ViewMetadata)?;
        Ok(CatchmentView {
            catchment: st.catchments[id].clone(),
            study_area: st.meta[&obj].study_area.clone(),
        })
    }

    pub fn create_catchment(&self, s: &Session, req: &NewCatchment) -> Result<CatchmentView> {
        check_id("catchment", req.id.as_str())?;
        let geometry = match (&req.geometry, &req.shapefile) {
            (Some(g), None) => g.clone(),
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ServiceError::BadRequest(format!("shapefile is not base64: {e}")))?;
                match geodata::parse_shapefile_geometry(&bytes)? {
                    ShapeGeometries::Polygons(mut p) if p.len() == 1 => p.remove(0),
                    ShapeGeometries::Polygons(p) => {
                        return Err(ServiceError::BadRequest(format!(
                            "shapefile holds {} polygons; a catchment takes exactly one",
                            p.len()
                        )))
                    }
                    ShapeGeometries::Points(_) => {
                        return Err(ServiceError::BadRequest("shapefile holds points, not a polygon".into()))
                    }
                }
            }
            _ => return Err(ServiceError::BadRequest("give exactly one of geometry or shapefile".into())),
        };
        let now = self.now();
        self.store.commit(now, |st| {
            authorize(st, &s.principal, &ObjectRef::StudyArea(req.study_area.clone()), Action::Edit)?;
            if let Some(p) = &req.parent_id {
                authorize(st, &s.principal, &ObjectRef::Catchment(p.clone()), Action::ViewMetadata)?;
            }
            if st.catchments.contains_key(&req.id) {
                return Err(ServiceError::AlreadyExists(format!("catchment {}", req.id)));
            }
            let c = Catchment::new(req.id.clone(), req.name.clone(), req.parent_id.clone(), geometry, &st.catchments)?;
            let record = catchment_record(&c, now);
            let view = CatchmentView {
                catchment: c.clone(),
                study_area: req.study_area.clone(),
            };
            Ok((
                vec![
                    Change::PutCatchment {
                        catchment: c,
                        meta: self.new_meta(s, &req.study_area),
                    },
                    Change::PutRecord { record },
                ],
                view,
            ))
        })
    }

    /// Attach the stations inside the catchment to their deepest containing
    /// catchment. Only stations the caller may edit are considered.
    pub fn link_stations(&self, s: &Session, id: &CatchmentId) -> Result<LinkResponse> {
        self.store.commit(self.now(), |st| {
            authorize(st, &s.principal, &ObjectRef::Catchment(id.clone()), Action::Edit)?;
            let editable = st
                .stations
                .values()
                .filter(|x| super::allowed(st, &s.principal, &ObjectRef::Station(x.id.clone()), Action::Edit));
            let links: Vec<_> = geodata::link_stations(&st.catchments, id, editable)?
                .into_iter()
                .filter(|(sid, cid)| st.stations[sid].catchment_id.as_ref() != Some(cid))
                .collect();
            let out = LinkResponse {
                catchment_id: id.clone(),
                linked: links.clone(),
            };
            let changes = if links.is_empty() { vec![] } else { vec![Change::LinkStations { links }] };
            Ok((changes, out))
        })
    }

    /// Coverage of the catchment and its descendants, as of the study area's
    /// reference date. Only stations and series visible to the caller count.
    pub fn coverage(&self, s: &Session, id: &CatchmentId) -> Result<CoverageReport> {
        let st = self.store.read();
        let obj = ObjectRef::Catchment(id.clone());
        authorize(&st, &s.principal, &obj, Action::ViewMetadata)?;
        let area = &st.meta[&obj].study_area;
        let today = st
            .study_areas
            .get(area)
            .and_then(|a| a.reference_date)
            .unwrap_or_else(|| self.now().date_naive());
        let subtree = geodata::descendants(&st.catchments, id);
        let stations: Vec<&Station> = st
            .stations
            .values()
            .filter(|x| x.catchment_id.as_ref().is_some_and(|c| subtree.contains(c)))
            .filter(|x| visible(&st, &s.principal, &ObjectRef::Station(x.id.clone())))
            .collect();
        let series: Vec<&DailySeries> = st
            .series
            .values()
            .map(|h| h[0].as_ref())
            .filter(|x| stations.iter().any(|station| station.id == x.station_id))
            .filter(|x| super::allowed(&st, &s.principal, &ObjectRef::Series(x.id.clone()), Action::ViewData))
            .collect();
        Ok(analysis::coverage_report(id.clone(), &stations, &series, today))
    }

    pub fn list_assets(&self, s: &Session) -> Result<Vec<AssetView>> {
        let st = self.store.read();
        Ok(st
            .assets
            .values()
            .filter(|a| visible(&st, &s.principal, &ObjectRef::Asset(a.id.clone())))
            .map(|a| AssetView {
                asset: a.clone(),
                study_area: st.meta[&ObjectRef::Asset(a.id.clone())].study_area.clone(),
            })
            .collect())
    }

    /// Store an opaque file with its catalogue record. Vector uploads named
    /// `*.shp` are parsed first and supply a bounding box when none is given.
    pub fn upload_asset(&self, s: &Session, meta: &AssetUpload, bytes: &[u8]) -> Result<AssetView> {
        let limit = self.config.asset_limit;
        if bytes.len() as u64 > limit {
            return Err(ServiceError::TooLarge {
                size: bytes.len() as u64,
                limit,
            });
        }
        {
            let st = self.store.read();
            authorize(&st, &s.principal, &ObjectRef::StudyArea(meta.study_area.clone()), Action::Edit)?;
        }
        let mut bbox = meta.bbox;
        if meta.kind == AssetKind::Vector && meta.filename.to_ascii_lowercase().ends_with(".shp") {
            let bounds = match geodata::parse_shapefile_geometry(bytes)? {
                ShapeGeometries::Points(p) => p.iter().fold(None, |acc: Option<[f64; 4]>, q| grow(acc, [q[0], q[1], q[0], q[1]])),
                ShapeGeometries::Polygons(p) => p.iter().fold(None, |acc, poly| grow(acc, poly.bbox())),
            };
            bbox = bbox.or(bounds);
        }
        let checksum = geodata::checksum(bytes);
        let id = match &meta.id {
            Some(id) => id.clone(),
            None => format!("{}-{}", slug(&meta.filename), &checksum[..8]),
        };
        check_id("asset", &id)?;
        let asset = Asset::describe(id, meta.kind, meta.filename.clone(), bytes, bbox, limit).map_err(|e| match e {
            AssetError::TooLarge { size, limit } => ServiceError::TooLarge { size, limit },
            other => ServiceError::Internal(other.to_string()),
        })?;
        // the blob is durable before the log references it
        self.store.put_blob(&asset.checksum, bytes)?;
        let now = self.now();
        self.store.commit(now, |st| {
            authorize(st, &s.principal, &ObjectRef::StudyArea(meta.study_area.clone()), Action::Edit)?;
            if st.assets.contains_key(&asset.id) {
                return Err(ServiceError::AlreadyExists(format!("asset {}", asset.id)));
            }
            let record_type = match meta.kind {
                AssetKind::Vector => RecordType::Vector,
                AssetKind::Raster => RecordType::Raster,
                AssetKind::Document => RecordType::Document,
            };
            let mut keywords = meta.keywords.clone();
            keywords.push(record_type.code().into());
            let record = MetadataRecord {
                identifier: ObjectRef::Asset(asset.id.clone()).to_string(),
                title: meta.title.clone().unwrap_or_else(|| meta.filename.clone()),
                abstract_text: meta.abstract_text.clone().unwrap_or_default(),
                keywords,
                record_type,
                bounding_box: asset.bbox.map(bbox_of),
                temporal_extent: None,
                modified: now,
            };
            let view = AssetView {
                asset: asset.clone(),
                study_area: meta.study_area.clone(),
            };
            Ok((
                vec![
                    Change::PutAsset {
                        asset: asset.clone(),
                        meta: self.new_meta(s, &meta.study_area),
                    },
                    Change::PutRecord { record },
                ],
                view,
            ))
        })
    }

    /// Asset description and its verified bytes.
    pub fn get_asset(&self, s: &Session, id: &str) -> Result<(Asset, Vec<u8>)> {
        let asset = {
            let st = self.store.read();
            authorize(&st, &s.principal, &ObjectRef::Asset(id.to_string()), Action::Download)?;
            st.assets[id].clone()
        };
        let bytes = self.store.get_blob(&asset.checksum)?;
        asset.verify(&bytes).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok((asset, bytes))
    }

    /// Answer a CSW request over the records whose datasets the caller may
    /// see. `Err` carries an OWS exception report.
    pub fn csw(&self, s: &Session, params: &[(String, String)], endpoint: &str) -> std::result::Result<String, String> {
        let st = self.store.read();
        let visible_records: Vec<&MetadataRecord> = st
            .meta
            .keys()
            .filter(|obj| super::allowed(&st, &s.principal, obj, Action::ViewMetadata))
            .filter_map(|obj| st.records.get(&obj.to_string()))
            .collect();
        csw::respond(params, &visible_records, endpoint, self.now())
    }

    /// Load the synthetic Kara basin as study area `kara` in one change set.
    pub fn load_fixture_kara(&self, s: &Session) -> Result<FixtureSummary> {
        super::require_admin(s)?;
        let f = fixture::kara();
        let now = self.now();
        self.store.commit(now, |st| {
            if st.study_areas.contains_key(fixture::KARA) {
                return Err(ServiceError::AlreadyExists(format!("study area {}", fixture::KARA)));
            }
            let clash = f.stations.iter().any(|x| st.stations.contains_key(&x.id))
                || f.series.iter().any(|x| st.series.contains_key(&x.id))
                || f.catchments.iter().any(|x| st.catchments.contains_key(&x.id));
            if clash {
                return Err(ServiceError::AlreadyExists("fixture identifiers already in use".into()));
            }
            let meta = ObjectMeta {
                owner: s.principal.user.clone(),
                study_area: fixture::KARA.into(),
                created_at: now,
            };
            let mut changes = vec![Change::PutStudyArea {
                area: StudyArea {
                    id: fixture::KARA.into(),
                    name: "Kara basin".into(),
                    root_catchment_id: Some(CatchmentId::new(fixture::KARA)),
                    hydro_start_month: 4,
                    reference_date: Some(f.reference_date),
                },
            }];
            for c in &f.catchments {
                changes.push(Change::PutCatchment {
                    catchment: c.clone(),
                    meta: meta.clone(),
                });
                changes.push(Change::PutRecord {
                    record: catchment_record(c, now),
                });
            }
            for x in &f.stations {
                changes.push(Change::PutStation {
                    station: x.clone(),
                    meta: meta.clone(),
                });
                changes.push(Change::PutRecord {
                    record: station_record(x, now),
                });
            }
            for x in &f.series {
                let station = f.stations.iter().find(|y| y.id == x.station_id).expect("fixture station");
                changes.push(Change::PutRecord {
                    record: series_record(x, station, now),
                });
                changes.push(Change::PutSeriesVersion {
                    series: x.clone(),
                    meta: Some(meta.clone()),
                });
            }
            let summary = FixtureSummary {
                study_area: fixture::KARA.into(),
                catchments: f.catchments.len(),
                stations: f.stations.len(),
                series: f.series.len(),
            };
            Ok((changes, summary))
        })
    }
}

fn grow(acc: Option<[f64; 4]>, b: [f64; 4]) -> Option<[f64; 4]> {
    Some(match acc {
        None => b,
        Some(a) => [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
    })
}
