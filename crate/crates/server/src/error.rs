use basinfo_core::analysis::AnalysisError;
use basinfo_core::correction::CorrectionError;
use basinfo_core::geodata::shapefile::ShapefileError;
use basinfo_core::geodata::{CatchmentError, GeometryError};
use basinfo_core::ingest::{ExportError, IngestError};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("authentication required")]
    Unauthenticated,
    #[error("invalid username or password")]
    AuthFailed,
    /// Also returned for objects the caller may not see.
    #[error("{0} not found")]
    NotFound(String),
    #[error("not permitted: {0}")]
    Forbidden(String),
    #[error("unknown station {0}")]
    UnknownStation(String),
    #[error("{0} already exists")]
    AlreadyExists(String),
    #[error("write based on version {base} but latest is {latest}")]
    StaleWrite { base: u32, latest: u32 },
    #[error("upload of {size} bytes exceeds the {limit}-byte limit")]
    TooLarge { size: u64, limit: u64 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Shapefile(#[from] ShapefileError),
    #[error(transparent)]
    Catchment(#[from] CatchmentError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

/// `{code, message, detail}` body of every error response.
#[derive(Debug, Serialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

fn kebab(name: &str) -> String {
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 {
                out.push('-');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Variant name of a `Debug`-printed enum value.
fn variant(debug: String) -> String {
    let end = debug.find(|c: char| !c.is_alphanumeric()).unwrap_or(debug.len());
    kebab(&debug[..end])
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Unauthenticated | ServiceError::AuthFailed => 401,
            ServiceError::Forbidden(_) => 403,
            ServiceError::NotFound(_) | ServiceError::UnknownStation(_) => 404,
            ServiceError::AlreadyExists(_) | ServiceError::StaleWrite { .. } => 409,
            ServiceError::Correction(CorrectionError::StalePreview { .. }) => 409,
            ServiceError::TooLarge { .. } => 413,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Storage(_) | ServiceError::Internal(_) => 500,
            _ => 422,
        }
    }

    pub fn code(&self) -> String {
        match self {
            ServiceError::Ingest(e) => variant(format!("{e:?}")),
            ServiceError::Export(e) => variant(format!("{e:?}")),
            ServiceError::Analysis(e) => variant(format!("{e:?}")),
            ServiceError::Correction(CorrectionError::Parse(e)) => variant(format!("{e:?}")),
            ServiceError::Correction(e) => variant(format!("{e:?}")),
            ServiceError::Geometry(_) => "invalid-geometry".into(),
            ServiceError::Shapefile(e) => variant(format!("{e:?}")),
            ServiceError::Catchment(e) => variant(format!("{e:?}")),
            other => variant(format!("{other:?}")),
        }
    }

    pub fn detail(&self) -> Value {
        match self {
            ServiceError::StaleWrite { base, latest } => json!({ "baseVersion": base, "latestVersion": latest }),
            ServiceError::TooLarge { size, limit } => json!({ "size": size, "limit": limit }),
            ServiceError::Ingest(IngestError::ParseError { line, reason }) => json!({ "line": line, "reason": reason }),
            ServiceError::Correction(CorrectionError::StalePreview { base, latest }) => {
                json!({ "baseVersion": base, "latestVersion": latest })
            }
            ServiceError::Correction(CorrectionError::WeakCorrelation { r, required }) => {
                json!({ "r": r, "required": required })
            }
            ServiceError::Correction(CorrectionError::InsufficientPairs { found, required }) => {
                json!({ "found": found, "required": required })
            }
            ServiceError::Analysis(AnalysisError::InsufficientOverlap { n }) => json!({ "n": n }),
            _ => Value::Null,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            code: self.code(),
            message: self.to_string(),
            detail: self.detail(),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
