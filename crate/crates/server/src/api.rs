//! JSON-over-HTTP front end. Every `/api` route except login needs a bearer
//! token; `/csw` also answers anonymous callers.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use basinfo_core::geodata::AssetKind;
use basinfo_core::model::{CatchmentId, SeriesId, StationId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::service::*;

type Svc = Arc<Service>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(self.envelope())).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn bearer(headers: &HeaderMap) -> Result<Option<String>> {
    match headers.get(header::AUTHORIZATION) {
        None => Ok(None),
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.strip_prefix("Bearer "))
            .map(|t| Some(t.trim().to_string()))
            .ok_or(ServiceError::Unauthenticated),
    }
}

fn session(svc: &Service, headers: &HeaderMap, required: bool) -> Result<Session> {
    let token = bearer(headers)?;
    if required && token.is_none() {
        return Err(ServiceError::Unauthenticated);
    }
    svc.authenticate(token.as_deref())
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid JSON body: {e}")))
}

fn query<T>(q: std::result::Result<Query<T>, QueryRejection>) -> Result<T> {
    q.map(|Query(v)| v)
        .map_err(|e| ServiceError::BadRequest(format!("invalid query: {}", e.body_text())))
}

fn bytes(b: std::result::Result<Bytes, BytesRejection>) -> Result<Bytes> {
    b.map_err(|e| ServiceError::BadRequest(format!("unreadable body: {}", e.body_text())))
}

fn reply<T: Serialize>(status: StatusCode, r: Result<T>) -> Response {
    match r {
        Ok(v) => (status, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Authenticate, then run `op` on the blocking pool.
async fn run<T: Serialize + Send + 'static>(
    svc: Svc,
    headers: HeaderMap,
    status: StatusCode,
    op: impl FnOnce(&Service, &Session) -> Result<T> + Send + 'static,
) -> Response {
    let r = blocking(move || {
        let s = session(&svc, &headers, true)?;
        op(&svc, &s)
    })
    .await;
    reply(status, r)
}

macro_rules! json_post {
    ($status:expr, $req:ty, |$svc:ident, $s:ident, $body:ident| $op:expr) => {
        |State(svc): State<Svc>, headers: HeaderMap, body: std::result::Result<Bytes, BytesRejection>| async move {
            let parsed: Result<$req> = bytes(body).and_then(|b| parse(&b));
            match parsed {
                Err(e) => e.into_response(),
                Ok($body) => run(svc, headers, $status, move |$svc, $s| $op).await,
            }
        }
    };
}

macro_rules! json_post_id {
    ($status:expr, $req:ty, |$svc:ident, $s:ident, $id:ident, $body:ident| $op:expr) => {
        |State(svc): State<Svc>,
         headers: HeaderMap,
         Path($id): Path<String>,
         body: std::result::Result<Bytes, BytesRejection>| async move {
            let parsed: Result<$req> = bytes(body).and_then(|b| parse(&b));
            match parsed {
                Err(e) => e.into_response(),
                Ok($body) => run(svc, headers, $status, move |$svc, $s| $op).await,
            }
        }
    };
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AssetQuery {
    id: Option<String>,
    kind: AssetKind,
    filename: String,
    study_area: String,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    /// Comma-separated.
    keywords: Option<String>,
    /// `west,south,east,north`.
    bbox: Option<String>,
}

impl AssetQuery {
    fn into_upload(self) -> Result<AssetUpload> {
        let bbox = match &self.bbox {
            None => None,
            Some(b) => {
                let parts: Vec<f64> = b
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| ServiceError::BadRequest(format!("bad bbox '{b}'")))?;
                let arr: [f64; 4] = parts
                    .try_into()
                    .map_err(|_| ServiceError::BadRequest("bbox needs four numbers".into()))?;
                Some(arr)
            }
        };
        Ok(AssetUpload {
            id: self.id,
            kind: self.kind,
            filename: self.filename,
            study_area: self.study_area,
            title: self.title,
            abstract_text: self.abstract_text,
            keywords: self
                .keywords
                .map(|k| k.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect())
                .unwrap_or_default(),
            bbox,
        })
    }
}

async fn login(State(svc): State<Svc>, body: std::result::Result<Bytes, BytesRejection>) -> Response {
    let r = async {
        let req: LoginRequest = parse(&bytes(body)?)?;
        blocking(move || svc.login(&req)).await
    }
    .await;
    reply(StatusCode::OK, r)
}

async fn upload_asset(
    State(svc): State<Svc>,
    headers: HeaderMap,
    q: std::result::Result<Query<AssetQuery>, QueryRejection>,
    body: std::result::Result<Bytes, BytesRejection>,
) -> Response {
    let limit = svc.config().asset_limit;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if let Some(size) = declared.filter(|n| *n > limit) {
        return ServiceError::TooLarge { size, limit }.into_response();
    }
    let prepared = query(q).and_then(AssetQuery::into_upload).and_then(|m| Ok((m, bytes(body)?)));
    match prepared {
        Err(e) => e.into_response(),
        Ok((meta, data)) => run(svc, headers, StatusCode::CREATED, move |svc, s| svc.upload_asset(s, &meta, &data)).await,
    }
}

async fn download_asset(State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let r = blocking(move || {
        let s = session(&svc, &headers, true)?;
        svc.get_asset(&s, &id)
    })
    .await;
    match r {
        Err(e) => e.into_response(),
        Ok((asset, data)) => {
            let mut resp = data.into_response();
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
            if let Ok(v) = HeaderValue::from_str(&asset.checksum) {
                h.insert("x-checksum-sha256", v);
            }
            let disposition = format!("attachment; filename=\"{}\"", asset.filename.replace(['"', '\\', '\r', '\n'], "_"));
            if let Ok(v) = HeaderValue::from_str(&disposition) {
                h.insert(header::CONTENT_DISPOSITION, v);
            }
            resp
        }
    }
}

async fn export(State(svc): State<Svc>, headers: HeaderMap, body: std::result::Result<Bytes, BytesRejection>) -> Response {
    let r = async {
        let req: ExportRequest = parse(&bytes(body)?)?;
        blocking(move || {
            let s = session(&svc, &headers, true)?;
            svc.export(&s, &req)
        })
        .await
    }
    .await;
    match r {
        Err(e) => e.into_response(),
        Ok(text) => (
            [
                (header::CONTENT_TYPE, "text/plain; charset=utf-8"),
                (header::CONTENT_DISPOSITION, "attachment; filename=\"export.txt\""),
            ],
            text,
        )
            .into_response(),
    }
}

async fn csw(
    State(svc): State<Svc>,
    headers: HeaderMap,
    q: std::result::Result<Query<Vec<(String, String)>>, QueryRejection>,
) -> Response {
    let host = headers
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .unwrap_or("localhost")
        .to_string();
    let r = async {
        let params = query(q)?;
        blocking(move || {
            let s = session(&svc, &headers, false)?;
            Ok(svc.csw(&s, &params, &format!("http://{host}/csw")))
        })
        .await
    }
    .await;
    match r {
        Err(e) => e.into_response(),
        // exception reports are documents too, not HTTP failures
        Ok(Ok(xml)) | Ok(Err(xml)) => ([(header::CONTENT_TYPE, "application/xml; charset=utf-8")], xml).into_response(),
    }
}

async fn not_found() -> Response {
    ServiceError::NotFound("route".into()).into_response()
}

pub fn router(svc: Svc) -> Router {
    const OK: StatusCode = StatusCode::OK;
    const CREATED: StatusCode = StatusCode::CREATED;
    let body_limit = (svc.config().asset_limit.saturating_add(1) as usize).max(256 << 20);

    Router::new()
        .route("/api/auth/login", post(login))
        .route(
            "/api/auth/logout",
            post(|State(svc): State<Svc>, headers: HeaderMap| async move {
                run(svc, headers, OK, |svc, s| svc.logout(s).map(|_| serde_json::json!({"loggedOut": true}))).await
            }),
        )
        .route(
            "/api/auth/me",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.whoami(s)).await }),
        )
        .route(
            "/api/stations",
            get(
                |State(svc): State<Svc>, headers: HeaderMap, q: std::result::Result<Query<StationFilter>, QueryRejection>| async move {
                    match query(q) {
                        Err(e) => e.into_response(),
                        Ok(f) => run(svc, headers, OK, move |svc, s| svc.list_stations(s, &f)).await,
                    }
                },
            )
            .post(json_post!(CREATED, NewStation, |svc, s, req| svc.create_station(s, &req))),
        )
        .route(
            "/api/stations/{id}",
            get(|State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>| async move {
                run(svc, headers, OK, move |svc, s| svc.get_station(s, &StationId::new(id))).await
            }),
        )
        .route(
            "/api/series",
            get(
                |State(svc): State<Svc>, headers: HeaderMap, q: std::result::Result<Query<SeriesFilter>, QueryRejection>| async move {
                    match query(q) {
                        Err(e) => e.into_response(),
                        Ok(f) => run(svc, headers, OK, move |svc, s| svc.list_series(s, &f)).await,
                    }
                },
            )
            .post(json_post!(CREATED, IngestRequest, |svc, s, req| svc.ingest(s, &req))),
        )
        .route(
            "/api/series/{id}",
            get(|State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>| async move {
                run(svc, headers, OK, move |svc, s| svc.get_series(s, &SeriesId::new(id))).await
            }),
        )
        .route(
            "/api/series/{id}/data",
            get(
                |State(svc): State<Svc>,
                 headers: HeaderMap,
                 Path(id): Path<String>,
                 q: std::result::Result<Query<Window>, QueryRejection>| async move {
                    match query(q) {
                        Err(e) => e.into_response(),
                        Ok(w) => run(svc, headers, OK, move |svc, s| svc.series_data(s, &SeriesId::new(id), w)).await,
                    }
                },
            ),
        )
        .route(
            "/api/series/{id}/stats",
            get(
                |State(svc): State<Svc>,
                 headers: HeaderMap,
                 Path(id): Path<String>,
                 q: std::result::Result<Query<Window>, QueryRejection>| async move {
                    match query(q) {
                        Err(e) => e.into_response(),
                        Ok(w) => run(svc, headers, OK, move |svc, s| svc.series_stats(s, &SeriesId::new(id), w)).await,
                    }
                },
            ),
        )
        .route(
            "/api/series/{id}/gaps",
            get(
                |State(svc): State<Svc>,
                 headers: HeaderMap,
                 Path(id): Path<String>,
                 q: std::result::Result<Query<Window>, QueryRejection>| async move {
                    match query(q) {
                        Err(e) => e.into_response(),
                        Ok(w) => run(svc, headers, OK, move |svc, s| svc.series_gaps(s, &SeriesId::new(id), w.version)).await,
                    }
                },
            ),
        )
        .route(
            "/api/series/{id}/aggregate",
            post(json_post_id!(OK, AggregateRequest, |svc, s, id, req| svc.aggregate(s, &SeriesId::new(id), &req))),
        )
        .route(
            "/api/series/{id}/outliers/detect",
            post(json_post_id!(OK, OutlierDetectRequest, |svc, s, id, req| svc.detect_outliers(s, &SeriesId::new(id), &req))),
        )
        .route(
            "/api/series/{id}/outliers/remove",
            post(json_post_id!(OK, OutlierRemoveRequest, |svc, s, id, req| svc.remove_outliers(s, &SeriesId::new(id), &req))),
        )
        .route(
            "/api/series/{id}/fill",
            post(json_post_id!(OK, FillRequest, |svc, s, id, req| svc.fill(s, &SeriesId::new(id), &req))),
        )
        .route(
            "/api/analysis/correlate",
            post(json_post!(OK, CorrelateRequest, |svc, s, req| svc.correlate(s, &req))),
        )
        .route(
            "/api/analysis/availability",
            post(json_post!(OK, AvailabilityRequest, |svc, s, req| svc.availability(s, &req))),
        )
        .route(
            "/api/analysis/overlap",
            post(json_post!(OK, OverlapRequest, |svc, s, req| svc.overlap(s, &req))),
        )
        .route(
            "/api/catchments",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.list_catchments(s)).await })
                .post(json_post!(CREATED, NewCatchment, |svc, s, req| svc.create_catchment(s, &req))),
        )
        .route(
            "/api/catchments/{id}",
            get(|State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>| async move {
                run(svc, headers, OK, move |svc, s| svc.get_catchment(s, &CatchmentId::new(id))).await
            }),
        )
        .route(
            "/api/catchments/{id}/coverage",
            get(|State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>| async move {
                run(svc, headers, OK, move |svc, s| svc.coverage(s, &CatchmentId::new(id))).await
            }),
        )
        .route(
            "/api/catchments/{id}/link-stations",
            post(|State(svc): State<Svc>, headers: HeaderMap, Path(id): Path<String>| async move {
                run(svc, headers, OK, move |svc, s| svc.link_stations(s, &CatchmentId::new(id))).await
            }),
        )
        .route("/api/export", post(export))
        .route(
            "/api/assets",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.list_assets(s)).await })
                .post(upload_asset),
        )
        .route("/api/assets/{id}", get(download_asset))
        .route(
            "/api/admin/users",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.list_users(s)).await })
                .post(json_post!(CREATED, NewUser, |svc, s, req| svc.create_user(s, &req))),
        )
        .route(
            "/api/admin/grants",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.list_grants(s)).await })
                .post(json_post!(CREATED, NewGrant, |svc, s, req| svc.create_grant(s, &req))),
        )
        .route(
            "/api/admin/study-areas",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move { run(svc, headers, OK, |svc, s| svc.list_study_areas(s)).await })
                .post(json_post!(CREATED, NewStudyArea, |svc, s, req| svc.create_study_area(s, &req))),
        )
        .route(
            "/api/admin/fixtures/kara",
            post(|State(svc): State<Svc>, headers: HeaderMap| async move {
                run(svc, headers, CREATED, |svc, s| svc.load_fixture_kara(s)).await
            }),
        )
        .route(
            "/api/admin/validate",
            get(|State(svc): State<Svc>, headers: HeaderMap| async move {
                run(svc, headers, OK, |svc, s| {
                    if !s.principal.is_admin {
                        return Err(ServiceError::Forbidden("administrator only".into()));
                    }
                    svc.validate()
                })
                .await
            }),
        )
        .route("/csw", get(csw))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(svc)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Svc,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await
}
