//! In-memory materialisation of the write-ahead log.

use std::collections::BTreeMap;
use std::sync::Arc;

use basinfo_core::catalogue::MetadataRecord;
use basinfo_core::geodata::{Asset, Catchment};
use basinfo_core::ingest::detect_gaps;
use basinfo_core::model::{CatchmentId, DailySeries, GapReport, SeriesId, Station, StationId, UserId};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::auth::PasswordVerifier;
use crate::permissions::{Grant, ObjectRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct User {
    pub id: UserId,
    pub groups: Vec<String>,
    pub is_admin: bool,
    pub verifier: PasswordVerifier,
}

/// Public view of a user; the verifier never leaves the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserView {
    pub id: UserId,
    pub groups: Vec<String>,
    pub is_admin: bool,
}

impl From<&User> for UserView {
    fn from(u: &User) -> Self {
        Self {
            id: u.id.clone(),
            groups: u.groups.clone(),
            is_admin: u.is_admin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StudyArea {
    pub id: String,
    pub name: String,
    pub root_catchment_id: Option<CatchmentId>,
    #[serde(default = "default_hydro_start")]
    pub hydro_start_month: u32,
    /// "Today" for coverage reports; the current date when absent.
    #[serde(default)]
    pub reference_date: Option<NaiveDate>,
}

fn default_hydro_start() -> u32 {
    4
}

/// Ownership and study-area membership of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectMeta {
    pub owner: Option<UserId>,
    pub study_area: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Change {
    PutUser { user: User },
    PutGrant { grant: Grant },
    PutStudyArea { area: StudyArea },
    PutStation { station: Station, meta: ObjectMeta },
    /// Version 1 carries `meta`; later versions leave it `None`.
    PutSeriesVersion { series: DailySeries, meta: Option<ObjectMeta> },
    PutCatchment { catchment: Catchment, meta: ObjectMeta },
    LinkStations { links: Vec<(StationId, CatchmentId)> },
    PutAsset { asset: Asset, meta: ObjectMeta },
    PutRecord { record: MetadataRecord },
    RevokeToken { nonce: String, expires_at: i64 },
}

/// One atomic unit in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub changes: Vec<Change>,
}

#[derive(Debug, Clone, Default)]
pub struct State {
    pub seq: u64,
    pub users: BTreeMap<UserId, User>,
    pub grants: Vec<Grant>,
    pub study_areas: BTreeMap<String, StudyArea>,
    pub stations: BTreeMap<StationId, Station>,
    /// Every version, oldest first.
    pub series: BTreeMap<SeriesId, Vec<Arc<DailySeries>>>,
    pub gap_reports: BTreeMap<SeriesId, GapReport>,
    pub catchments: BTreeMap<CatchmentId, Catchment>,
    pub assets: BTreeMap<String, Asset>,
    pub meta: BTreeMap<ObjectRef, ObjectMeta>,
    pub records: BTreeMap<String, MetadataRecord>,
    pub revoked: BTreeMap<String, i64>,
}

impl State {
    pub fn apply(&mut self, cs: &ChangeSet) {
        self.seq = cs.seq;
        for change in &cs.changes {
            self.apply_one(change.clone());
        }
    }

    fn apply_one(&mut self, change: Change) {
        match change {
            Change::PutUser { user } => {
                self.users.insert(user.id.clone(), user);
            }
            Change::PutGrant { grant } => {
                self.grants.retain(|g| g.id != grant.id);
                self.grants.push(grant);
            }
            Change::PutStudyArea { area } => {
                self.study_areas.insert(area.id.clone(), area);
            }
            Change::PutStation { station, meta } => {
                self.meta.insert(ObjectRef::Station(station.id.clone()), meta);
                self.stations.insert(station.id.clone(), station);
            }
            Change::PutSeriesVersion { series, meta } => {
                if let Some(meta) = meta {
                    self.meta.insert(ObjectRef::Series(series.id.clone()), meta);
                }
                self.gap_reports.insert(series.id.clone(), detect_gaps(&series));
                self.series.entry(series.id.clone()).or_default().push(Arc::new(series));
            }
            Change::PutCatchment { catchment, meta } => {
                self.meta.insert(ObjectRef::Catchment(catchment.id.clone()), meta);
                self.catchments.insert(catchment.id.clone(), catchment);
            }
            Change::LinkStations { links } => {
                for (sid, cid) in links {
                    if let Some(st) = self.stations.get_mut(&sid) {
                        st.catchment_id = Some(cid);
                    }
                }
            }
            Change::PutAsset { asset, meta } => {
                self.meta.insert(ObjectRef::Asset(asset.id.clone()), meta);
                self.assets.insert(asset.id.clone(), asset);
            }
            Change::PutRecord { record } => {
                self.records.insert(record.identifier.clone(), record);
            }
            Change::RevokeToken { nonce, expires_at } => {
                self.revoked.insert(nonce, expires_at);
            }
        }
    }

    pub fn latest(&self, id: &SeriesId) -> Option<&Arc<DailySeries>> {
        self.series.get(id).and_then(|h| h.last())
    }

    /// The object followed by its containers, for permission checks.
    pub fn scope(&self, obj: &ObjectRef) -> Vec<ObjectRef> {
        let mut out = vec![obj.clone()];
        if let ObjectRef::Series(id) = obj {
            if let Some(s) = self.latest(id) {
                out.push(ObjectRef::Station(s.station_id.clone()));
            }
        }
        if let Some(m) = self.meta.get(obj) {
            out.push(ObjectRef::StudyArea(m.study_area.clone()));
        }
        out
    }

    pub fn exists(&self, obj: &ObjectRef) -> bool {
        match obj {
            ObjectRef::StudyArea(id) => self.study_areas.contains_key(id),
            other => self.meta.contains_key(other),
        }
    }

    /// Integrity sweep: every dataset well-formed, linked and catalogued.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (id, history) in &self.series {
            for (i, s) in history.iter().enumerate() {
                if s.version as usize != i + 1 {
                    problems.push(format!("series {id}: version {} at position {}", s.version, i + 1));
                }
                for v in s.validate() {
                    problems.push(format!("series {id} v{}: {v:?}", s.version));
                }
            }
            if let Some(first) = history.first() {
                if !self.stations.contains_key(&first.station_id) {
                    problems.push(format!("series {id}: unknown station {}", first.station_id));
                }
            }
        }
        for obj in self.meta.keys() {
            let key = obj.to_string();
            if !self.records.contains_key(&key) {
                problems.push(format!("{key}: no metadata record"));
            }
            let area = &self.meta[obj].study_area;
            if !self.study_areas.contains_key(area) {
                problems.push(format!("{key}: unknown study area {area}"));
            }
        }
        for key in self.records.keys() {
            if !self.meta.keys().any(|o| &o.to_string() == key) {
                problems.push(format!("record {key}: no dataset"));
            }
        }
        for c in self.catchments.values() {
            if let Some(p) = &c.parent_id {
                if !self.catchments.contains_key(p) {
                    problems.push(format!("catchment {}: unknown parent {p}", c.id));
                }
            }
        }
        problems
    }
}
