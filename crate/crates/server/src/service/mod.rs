//! Every operation of the information system, permission-checked. The HTTP
//! layer and the command line both call into this module.

mod geo;
mod series;

pub use geo::*;
pub use series::*;

use std::sync::Arc;

use basinfo_core::catalogue::{BoundingBox, MetadataRecord, RecordType};
use basinfo_core::model::{DailySeries, Station, StationKind, UserId};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::auth::{self, Claims, PasswordVerifier, TokenKey};
use crate::config::Config;
use crate::error::{Result, ServiceError};
use crate::permissions::{check_permission, Action, Grant, ObjectRef, Principal, Subject};
use crate::state::{Change, ObjectMeta, State, StudyArea, User, UserView};
use crate::store::Store;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Caller identity for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub principal: Principal,
    pub claims: Option<Claims>,
}

impl Session {
    pub fn anonymous() -> Self {
        Self {
            principal: Principal::anonymous(),
            claims: None,
        }
    }

    /// Operator identity used by the command line.
    pub fn system() -> Self {
        Self {
            principal: Principal {
                user: None,
                groups: vec![],
                is_admin: true,
            },
            claims: None,
        }
    }

    pub fn is_authenticated(&self) -> bool {
        self.claims.is_some() || self.principal.is_admin
    }

    fn actor(&self) -> UserId {
        self.principal.user.clone().unwrap_or_else(|| UserId::new("system"))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoginResponse {
    pub token: String,
    pub expires_at: i64,
    pub user: UserView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NewUser {
    pub username: String,
    pub password: String,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub is_admin: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NewGrant {
    pub subject: Subject,
    pub object: ObjectRef,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NewStudyArea {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub root_catchment_id: Option<basinfo_core::model::CatchmentId>,
    #[serde(default)]
    pub hydro_start_month: Option<u32>,
    #[serde(default)]
    pub reference_date: Option<chrono::NaiveDate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub seq: u64,
    pub series_count: usize,
    pub version_count: usize,
    pub station_count: usize,
    pub catchment_count: usize,
    pub asset_count: usize,
    pub record_count: usize,
    pub problems: Vec<String>,
}

/// Identifiers appear in URL paths and record identifiers.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !id.starts_with('.')
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(ServiceError::BadRequest(format!(
            "{kind} id '{id}' must be 1-128 characters of letters, digits, '-', '_' or '.'"
        )))
    }
}

fn is_read(action: Action) -> bool {
    matches!(action, Action::ViewMetadata | Action::ViewData | Action::Download)
}

pub fn allowed(st: &State, p: &Principal, obj: &ObjectRef, action: Action) -> bool {
    let scope = st.scope(obj);
    let owner = st.meta.get(obj).and_then(|m| m.owner.as_ref());
    check_permission(p, &scope, owner, &st.grants, action)
}

/// An object is visible when it exists and the caller holds any action on it.
pub fn visible(st: &State, p: &Principal, obj: &ObjectRef) -> bool {
    st.exists(obj) && Action::ALL.iter().any(|a| allowed(st, p, obj, *a))
}

/// Gate for one action. Invisible and missing objects are both `NotFound`,
/// as is a denied read; a denied write on a visible object is `Forbidden`.
pub fn authorize(st: &State, p: &Principal, obj: &ObjectRef, action: Action) -> Result<()> {
    if !visible(st, p, obj) {
        return Err(ServiceError::NotFound(obj.to_string()));
    }
    if allowed(st, p, obj, action) {
        Ok(())
    } else if is_read(action) {
        Err(ServiceError::NotFound(obj.to_string()))
    } else {
        Err(ServiceError::Forbidden(format!("{action:?} on {obj}")))
    }
}

fn require_admin(s: &Session) -> Result<()> {
    if s.principal.is_admin {
        Ok(())
    } else {
        Err(ServiceError::Forbidden("administrator only".into()))
    }
}

fn kind_code(k: StationKind) -> &'static str {
    match k {
        StationKind::Gauging => "gauging",
        StationKind::Climate => "climate",
        StationKind::Rainfall => "rainfall",
    }
}

pub(crate) fn station_record(st: &Station, at: DateTime<Utc>) -> MetadataRecord {
    MetadataRecord {
        identifier: ObjectRef::Station(st.id.clone()).to_string(),
        title: format!("{} ({} station)", st.name, kind_code(st.kind)),
        abstract_text: format!(
            "{} station {}, identification number {}, elevation {} m, operated by {} since {}.",
            kind_code(st.kind),
            st.name,
            st.external_id,
            st.elevation,
            st.operator,
            st.established
        ),
        keywords: vec![kind_code(st.kind).into(), st.name.clone(), st.external_id.clone()],
        record_type: RecordType::Station,
        bounding_box: Some(point_bbox(st)),
        temporal_extent: None,
        modified: at,
    }
}

fn point_bbox(st: &Station) -> BoundingBox {
    BoundingBox {
        west: st.lon,
        south: st.lat,
        east: st.lon,
        north: st.lat,
    }
}

pub(crate) fn series_record(s: &DailySeries, st: &Station, at: DateTime<Utc>) -> MetadataRecord {
    let mut keywords = vec![s.variable.code().to_string(), kind_code(st.kind).into(), st.name.clone(), "daily".into()];
    if s.variable == basinfo_core::model::Variable::Precipitation {
        keywords.push("rainfall".into());
    }
    MetadataRecord {
        identifier: ObjectRef::Series(s.id.clone()).to_string(),
        title: format!("Daily {} at {}", s.variable.code(), st.name),
        abstract_text: format!(
            "Daily {} ({}) observed at station {} ({}) from {} to {}; latest version {}.",
            s.variable.code(),
            s.variable.unit(),
            st.name,
            st.external_id,
            s.start,
            s.end,
            s.version
        ),
        keywords,
        record_type: RecordType::Series,
        bounding_box: Some(point_bbox(st)),
        temporal_extent: Some(s.range()),
        modified: at,
    }
}

pub struct Service {
    store: Store,
    key: TokenKey,
    config: Config,
    clock: Clock,
}

impl Service {
    pub fn open(config: Config) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(Utc::now))
    }

    pub fn open_with_clock(config: Config, clock: Clock) -> Result<Self> {
        let store = Store::open(&config.data_dir)?;
        let key = match &config.secret {
            Some(s) => TokenKey::new(s.as_bytes()),
            None => TokenKey::random(),
        };
        Ok(Self {
            store,
            key,
            config,
            clock,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    fn new_meta(&self, s: &Session, study_area: &str) -> ObjectMeta {
        ObjectMeta {
            owner: s.principal.user.clone(),
            study_area: study_area.to_string(),
            created_at: self.now(),
        }
    }

    // ---- authentication ----

    pub fn login(&self, req: &LoginRequest) -> Result<LoginResponse> {
        let user = self.store.read().users.get(&UserId::new(req.username.as_str())).cloned();
        let Some(user) = user else {
            auth::dummy_verify(&req.password, self.config.pbkdf2_iterations);
            return Err(ServiceError::AuthFailed);
        };
        if !user.verifier.verify(&req.password) {
            return Err(ServiceError::AuthFailed);
        }
        let (token, claims) = self.key.issue(&user.id, self.now().timestamp());
        Ok(LoginResponse {
            token,
            expires_at: claims.expires_at,
            user: UserView::from(&user),
        })
    }

    /// Resolve a bearer token; no token means an anonymous caller.
    pub fn authenticate(&self, token: Option<&str>) -> Result<Session> {
        let Some(token) = token else {
            return Ok(Session::anonymous());
        };
        let claims = self
            .key
            .verify(token, self.now().timestamp())
            .map_err(|_| ServiceError::Unauthenticated)?;
        let st = self.store.read();
        if st.revoked.contains_key(&claims.nonce) {
            return Err(ServiceError::Unauthenticated);
        }
        let user = st.users.get(&claims.user).ok_or(ServiceError::Unauthenticated)?;
        Ok(Session {
            principal: Principal {
                user: Some(user.id.clone()),
                groups: user.groups.clone(),
                is_admin: user.is_admin,
            },
            claims: Some(claims),
        })
    }

    pub fn logout(&self, s: &Session) -> Result<()> {
        let claims = s.claims.clone().ok_or(ServiceError::Unauthenticated)?;
        self.store.commit(self.now(), |_| {
            Ok((
                vec![Change::RevokeToken {
                    nonce: claims.nonce,
                    expires_at: claims.expires_at,
                }],
                (),
            ))
        })
    }

    pub fn whoami(&self, s: &Session) -> Result<UserView> {
        let id = s.principal.user.as_ref().ok_or(ServiceError::Unauthenticated)?;
        let st = self.store.read();
        st.users.get(id).map(UserView::from).ok_or(ServiceError::Unauthenticated)
    }

    // ---- administration ----

    pub fn list_users(&self, s: &Session) -> Result<Vec<UserView>> {
        require_admin(s)?;
        Ok(self.store.read().users.values().map(UserView::from).collect())
    }

    pub fn create_user(&self, s: &Session, req: &NewUser) -> Result<UserView> {
        require_admin(s)?;
        if !auth::valid_username(&req.username) {
            return Err(ServiceError::BadRequest(format!("invalid username '{}'", req.username)));
        }
        if req.password.chars().count() < 8 {
            return Err(ServiceError::BadRequest("password must have at least 8 characters".into()));
        }
        let user = User {
            id: UserId::new(req.username.as_str()),
            groups: req.groups.clone(),
            is_admin: req.is_admin,
            verifier: PasswordVerifier::new(&req.password, self.config.pbkdf2_iterations),
        };
        self.store.commit(self.now(), |st| {
            if st.users.contains_key(&user.id) {
                return Err(ServiceError::AlreadyExists(format!("user {}", user.id)));
            }
            let view = UserView::from(&user);
            Ok((vec![Change::PutUser { user }], view))
        })
    }

    /// Grants the caller may administer: all for admins, otherwise those on
    /// objects the caller manages.
    pub fn list_grants(&self, s: &Session) -> Result<Vec<Grant>> {
        let st = self.store.read();
        Ok(st
            .grants
            .iter()
            .filter(|g| s.principal.is_admin || authorize(&st, &s.principal, &g.object, Action::Manage).is_ok())
            .cloned()
            .collect())
    }

    pub fn create_grant(&self, s: &Session, req: &NewGrant) -> Result<Grant> {
        if req.actions.is_empty() {
            return Err(ServiceError::BadRequest("a grant needs at least one action".into()));
        }
        self.store.commit(self.now(), |st| {
            if !s.principal.is_admin {
                authorize(st, &s.principal, &req.object, Action::Manage)?;
            } else if !st.exists(&req.object) {
                return Err(ServiceError::NotFound(req.object.to_string()));
            }
            if let Subject::User(u) = &req.subject {
                if !st.users.contains_key(u) {
                    return Err(ServiceError::BadRequest(format!("unknown user {u}")));
                }
            }
            let grant = Grant {
                id: format!("g{}", st.seq + 1),
                subject: req.subject.clone(),
                object: req.object.clone(),
                actions: req.actions.iter().copied().collect(),
            };
            Ok((vec![Change::PutGrant { grant: grant.clone() }], grant))
        })
    }

    pub fn list_study_areas(&self, s: &Session) -> Result<Vec<StudyArea>> {
        let st = self.store.read();
        Ok(st
            .study_areas
            .values()
            .filter(|a| visible(&st, &s.principal, &ObjectRef::StudyArea(a.id.clone())))
            .cloned()
            .collect())
    }

    pub fn create_study_area(&self, s: &Session, req: &NewStudyArea) -> Result<StudyArea> {
        require_admin(s)?;
        check_id("study area", &req.id)?;
        let month = req.hydro_start_month.unwrap_or(4);
        if !(1..=12).contains(&month) {
            return Err(ServiceError::BadRequest(format!("hydro start month {month} outside 1..=12")));
        }
        let area = StudyArea {
            id: req.id.clone(),
            name: req.name.clone(),
            root_catchment_id: req.root_catchment_id.clone(),
            hydro_start_month: month,
            reference_date: req.reference_date,
        };
        self.store.commit(self.now(), |st| {
            if st.study_areas.contains_key(&area.id) {
                return Err(ServiceError::AlreadyExists(format!("study area {}", area.id)));
            }
            Ok((vec![Change::PutStudyArea { area: area.clone() }], area))
        })
    }

    /// Replay the log from disk and sweep the state for broken invariants.
    pub fn validate(&self) -> Result<ValidationReport> {
        let replay = self.store.replay_from_disk()?;
        let st = self.store.read();
        let mut problems = st.validate();
        if replay.state.seq != st.seq {
            problems.push(format!("log replays to {} change sets, live state has {}", replay.state.seq, st.seq));
        }
        for (id, history) in &st.series {
            let disk = replay.state.series.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let same = disk.len() == history.len()
                && disk.iter().zip(history).all(|(a, b)| a.content_hash() == b.content_hash());
            if !same {
                problems.push(format!("series {id}: replayed history differs from live state"));
            }
        }
        for a in st.assets.values() {
            match self.store.get_blob(&a.checksum) {
                Ok(bytes) if a.verify(&bytes).is_ok() => {}
                Ok(_) => problems.push(format!("asset {}: checksum mismatch", a.id)),
                Err(e) => problems.push(format!("asset {}: {e}", a.id)),
            }
        }
        Ok(ValidationReport {
            seq: st.seq,
            series_count: st.series.len(),
            version_count: st.series.values().map(Vec::len).sum(),
            station_count: st.stations.len(),
            catchment_count: st.catchments.len(),
            asset_count: st.assets.len(),
            record_count: st.records.len(),
            problems,
        })
    }
}
