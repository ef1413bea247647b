//! Dublin-Core-style metadata records and catalogue search.

pub mod csw;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::DateRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordType {
    Series,
    Station,
    Vector,
    Raster,
    Document,
    Catchment,
}

impl RecordType {
    pub const ALL: [RecordType; 6] = [
        RecordType::Series,
        RecordType::Station,
        RecordType::Vector,
        RecordType::Raster,
        RecordType::Document,
        RecordType::Catchment,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RecordType::Series => "series",
            RecordType::Station => "station",
            RecordType::Vector => "vector",
            RecordType::Raster => "raster",
            RecordType::Document => "document",
            RecordType::Catchment => "catchment",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        RecordType::ALL.into_iter().find(|t| t.code().eq_ignore_ascii_case(code))
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetadataRecord {
    pub identifier: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub keywords: Vec<String>,
    #[serde(rename = "type")]
    pub record_type: RecordType,
    pub bounding_box: Option<BoundingBox>,
    pub temporal_extent: Option<DateRange>,
    pub modified: DateTime<Utc>,
}

/// Keyword and type constraint. Keywords match case-insensitively as
/// substrings of the title or any keyword; all must match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordFilter {
    pub keywords: Vec<String>,
    pub record_type: Option<RecordType>,
}

impl RecordFilter {
    pub fn keyword(k: impl Into<String>) -> Self {
        Self {
            keywords: vec![k.into()],
            record_type: None,
        }
    }

    pub fn of_type(t: RecordType) -> Self {
        Self {
            keywords: vec![],
            record_type: Some(t),
        }
    }

    pub fn matches(&self, r: &MetadataRecord) -> bool {
        if self.record_type.is_some_and(|t| t != r.record_type) {
            return false;
        }
        self.keywords.iter().all(|k| {
            let k = k.to_lowercase();
            r.title.to_lowercase().contains(&k) || r.keywords.iter().any(|kw| kw.to_lowercase().contains(&k))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub matched: usize,
    pub records: Vec<MetadataRecord>,
    /// 1-based position of the next page, 0 when exhausted.
    pub next_record: usize,
}

/// Matching records ordered by identifier, paged from a 1-based start position.
pub fn search<'a>(
    records: impl IntoIterator<Item = &'a MetadataRecord>,
    filter: &RecordFilter,
    start_position: usize,
    max_records: usize,
) -> SearchResult {
    let mut hits: Vec<&MetadataRecord> = records.into_iter().filter(|r| filter.matches(r)).collect();
    hits.sort_by(|a, b| a.identifier.cmp(&b.identifier));
    let matched = hits.len();
    let skip = start_position.saturating_sub(1);
    let page: Vec<MetadataRecord> = hits.into_iter().skip(skip).take(max_records).cloned().collect();
    let after = skip + page.len();
    SearchResult {
        matched,
        next_record: if after < matched { after + 1 } else { 0 },
        records: page,
    }
}
