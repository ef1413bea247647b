//! Agency text files to canonical daily series, and back.
//!
//! A [`FormatSpec`] describes one delimited layout: which columns hold the
//! date and the value, the date pattern, the decimal separator and the codes
//! that mean "no observation". Parsing is fail-fast: the first bad row aborts
//! with its 1-based line number. Lines starting with `#` are comments, which
//! lets exported blocks (whose metadata header is `#`-prefixed) be read back.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    day_count, DailySeries, Gap, GapReport, SeriesId, StationId, Variable,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("date {0} appears twice with different values")]
    DuplicateDate(NaiveDate),
    #[error("invalid format spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("value {value} on {date} renders identical to missing code '{code}'")]
    ValueCollidesWithMissingCode {
        date: NaiveDate,
        value: f64,
        code: String,
    },
    #[error("invalid format spec: {0}")]
    InvalidSpec(String),
}

/// Delimited text layout. Serialized with exactly the keys
/// `delimiter, dateFormat, missingCodes, decimalSeparator, dateColumn,
/// valueColumn, headerLines`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FormatSpec {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_date_format")]
    pub date_format: String,
    #[serde(default = "default_missing_codes")]
    pub missing_codes: Vec<String>,
    #[serde(default = "default_decimal")]
    pub decimal_separator: char,
    #[serde(default)]
    pub date_column: usize,
    #[serde(default = "default_value_column")]
    pub value_column: usize,
    #[serde(default)]
    pub header_lines: usize,
}

fn default_delimiter() -> char {
    '\t'
}
fn default_date_format() -> String {
    "YYYY-MM-DD".into()
}
fn default_missing_codes() -> Vec<String> {
    vec!["-9999".into()]
}
fn default_decimal() -> char {
    '.'
}
fn default_value_column() -> usize {
    1
}

impl Default for FormatSpec {
    fn default() -> Self {
        Self {
            delimiter: default_delimiter(),
            date_format: default_date_format(),
            missing_codes: default_missing_codes(),
            decimal_separator: default_decimal(),
            date_column: 0,
            value_column: default_value_column(),
            header_lines: 0,
        }
    }
}

impl FormatSpec {
    pub fn validate(&self) -> Result<DatePattern, String> {
        if self.date_column == self.value_column {
            return Err("dateColumn and valueColumn must differ".into());
        }
        if self.missing_codes.is_empty() || self.missing_codes.iter().any(|c| c.trim().is_empty()) {
            return Err("missingCodes must hold at least one non-blank code".into());
        }
        if !matches!(self.decimal_separator, '.' | ',') {
            return Err("decimalSeparator must be '.' or ','".into());
        }
        if self.delimiter == self.decimal_separator {
            return Err("delimiter and decimalSeparator must differ".into());
        }
        if matches!(self.delimiter, '\n' | '\r' | '#') || self.delimiter.is_ascii_digit() {
            return Err(format!("unusable delimiter {:?}", self.delimiter));
        }
        let pattern = DatePattern::compile(&self.date_format)?;
        if self.date_format.contains(self.delimiter) {
            return Err("dateFormat must not contain the delimiter".into());
        }
        for code in &self.missing_codes {
            if code.contains(self.delimiter) {
                return Err(format!("missing code '{code}' contains the delimiter"));
            }
        }
        Ok(pattern)
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let spec: FormatSpec =
            serde_json::from_str(text).map_err(|e| IngestError::InvalidSpec(e.to_string()))?;
        spec.validate().map_err(IngestError::InvalidSpec)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum DateToken {
    Year,
    Month,
    Day,
    Literal(char),
}

/// Compiled date pattern over `YYYY`, `MM` and `DD` with literal separators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatePattern {
    tokens: Vec<DateToken>,
}

impl DatePattern {
    pub fn compile(pattern: &str) -> Result<Self, String> {
        let mut tokens = Vec::new();
        let mut rest = pattern;
        while !rest.is_empty() {
            let (tok, len) = if rest.starts_with("YYYY") {
                (DateToken::Year, 4)
            } else if rest.starts_with("MM") {
                (DateToken::Month, 2)
            } else if rest.starts_with("DD") {
                (DateToken::Day, 2)
            } else {
                let c = rest.chars().next().unwrap();
                if c.is_ascii_alphanumeric() {
                    return Err(format!("unsupported token at '{rest}' in date pattern"));
                }
                (DateToken::Literal(c), c.len_utf8())
            };
            tokens.push(tok);
            rest = &rest[len..];
        }
        for needed in [DateToken::Year, DateToken::Month, DateToken::Day] {
            if tokens.iter().filter(|t| **t == needed).count() != 1 {
                return Err(format!("date pattern '{pattern}' needs exactly one YYYY, MM and DD"));
            }
        }
        Ok(Self { tokens })
    }

    pub fn parse(&self, text: &str) -> Result<NaiveDate, String> {
        let (mut y, mut m, mut d) = (0i32, 0u32, 0u32);
        let mut rest = text;
        for tok in &self.tokens {
            match tok {
                DateToken::Literal(c) => {
                    rest = rest
                        .strip_prefix(*c)
                        .ok_or_else(|| format!("expected '{c}' in date '{text}'"))?;
                }
                DateToken::Year | DateToken::Month | DateToken::Day => {
                    let width = if *tok == DateToken::Year { 4 } else { 2 };
                    let digits = rest
                        .get(..width)
                        .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
                        .ok_or_else(|| format!("expected {width} digits in date '{text}'"))?;
                    let n: u32 = digits.parse().expect("ascii digits");
                    match tok {
                        DateToken::Year => y = n as i32,
                        DateToken::Month => m = n,
                        _ => d = n,
                    }
                    rest = &rest[width..];
                }
            }
        }
        if !rest.is_empty() {
            return Err(format!("trailing characters in date '{text}'"));
        }
        NaiveDate::from_ymd_opt(y, m, d).ok_or_else(|| format!("impossible calendar date '{text}'"))
    }

    pub fn render(&self, date: NaiveDate) -> String {
        let mut out = String::with_capacity(10);
        for tok in &self.tokens {
            match tok {
                DateToken::Literal(c) => out.push(*c),
                DateToken::Year => out.push_str(&format!("{:04}", date.year())),
                DateToken::Month => out.push_str(&format!("{:02}", date.month())),
                DateToken::Day => out.push_str(&format!("{:02}", date.day())),
            }
        }
        out
    }
}

/// One parsed data row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub line: usize,
    pub date: NaiveDate,
    pub value: Option<f64>,
}

/// Strip a UTF-8 byte-order mark and decode.
pub fn decode_text(raw: &[u8]) -> Result<&str, IngestError> {
    let raw = raw.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(raw);
    std::str::from_utf8(raw).map_err(|_| IngestError::NotUtf8)
}

fn parse_value(cell: &str, spec: &FormatSpec) -> Result<Option<f64>, String> {
    let cell = cell.trim();
    if spec.missing_codes.iter().any(|c| c.trim() == cell) {
        return Ok(None);
    }
    let normalized;
    let text = if spec.decimal_separator == ',' {
        if cell.contains('.') {
            return Err(format!("unexpected '.' in value '{cell}'"));
        }
        normalized = cell.replace(',', ".");
        normalized.as_str()
    } else {
        cell
    };
    let ok_chars = text
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if text.is_empty() || !ok_chars {
        return Err(format!("unparseable value '{cell}'"));
    }
    let v: f64 = text.parse().map_err(|_| format!("unparseable value '{cell}'"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value '{cell}'"));
    }
    Ok(Some(v))
}

/// Parse every data row; fails on the first malformed line.
pub fn parse_rows(text: &str, spec: &FormatSpec) -> Result<Vec<Row>, IngestError> {
    let pattern = spec.validate().map_err(IngestError::InvalidSpec)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut rows = Vec::new();
    // header lines are counted after '#' comment lines, which may appear anywhere
    let mut headers_left = spec.header_lines;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.starts_with('#') {
            continue;
        }
        if headers_left > 0 {
            headers_left -= 1;
            continue;
        }
        if trimmed.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(spec.delimiter).collect();
        let cell = |col: usize| {
            cells.get(col).copied().ok_or_else(|| IngestError::ParseError {
                line: line_no,
                reason: format!("missing column {col}"),
            })
        };
        let date_cell = cell(spec.date_column)?;
        let value_cell = cell(spec.value_column)?;
        let date = pattern
            .parse(date_cell.trim())
            .map_err(|reason| IngestError::ParseError { line: line_no, reason })?;
        let value = parse_value(value_cell, spec)
            .map_err(|reason| IngestError::ParseError { line: line_no, reason })?;
        rows.push(Row {
            line: line_no,
            date,
            value,
        });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(rows)
}

/// Identity and semantics of a series being ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesMeta {
    pub id: SeriesId,
    pub station_id: StationId,
    pub variable: Variable,
}

/// Build a version-1 series spanning the earliest to the latest parsed date.
/// Dates absent from the file and missing codes both become MISSING.
pub fn parse_series(text: &str, spec: &FormatSpec, meta: &SeriesMeta) -> Result<DailySeries, IngestError> {
    let rows = parse_rows(text, spec)?;
    let mut by_date: BTreeMap<NaiveDate, Option<f64>> = BTreeMap::new();
    for row in rows {
        match by_date.get(&row.date) {
            Some(prev) if *prev != row.value => return Err(IngestError::DuplicateDate(row.date)),
            Some(_) => {}
            None => {
                by_date.insert(row.date, row.value);
            }
        }
    }
    let start = *by_date.keys().next().expect("rows non-empty");
    let end = *by_date.keys().next_back().expect("rows non-empty");
    let mut values = vec![None; day_count(start, end)];
    for (date, value) in by_date {
        values[(date - start).num_days() as usize] = value;
    }
    Ok(DailySeries::raw(meta.id.clone(), meta.station_id.clone(), meta.variable, start, values)
        .expect("non-empty grid"))
}

pub fn parse_series_bytes(raw: &[u8], spec: &FormatSpec, meta: &SeriesMeta) -> Result<DailySeries, IngestError> {
    parse_series(decode_text(raw)?, spec, meta)
}

/// Maximal runs of MISSING slots, in date order.
pub fn detect_gaps(s: &DailySeries) -> GapReport {
    let mut gaps = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, v) in s.values.iter().enumerate() {
        match (v, run_start) {
            (None, None) => run_start = Some(i),
            (Some(_), Some(first)) => {
                gaps.push(Gap {
                    first: s.date_at(first),
                    last: s.date_at(i - 1),
                });
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(first) = run_start {
        gaps.push(Gap {
            first: s.date_at(first),
            last: s.end,
        });
    }
    let total_missing: usize = gaps.iter().map(Gap::len_days).sum();
    let fraction_available = if s.is_empty() {
        0.0
    } else {
        1.0 - total_missing as f64 / s.len() as f64
    };
    GapReport {
        series_id: s.id.clone(),
        gaps,
        total_missing,
        fraction_available,
    }
}

/// Render a value with `spec`'s decimal separator. `f64`'s `Display` is the
/// shortest representation that parses back to the same bits.
pub fn render_value(v: f64, spec: &FormatSpec) -> String {
    let s = format!("{v}");
    if spec.decimal_separator == ',' {
        s.replace('.', ",")
    } else {
        s
    }
}

/// Delimited rows for every day of `s` (header lines first, if any).
/// MISSING renders as the first missing code.
pub fn render_rows(s: &DailySeries, spec: &FormatSpec) -> Result<String, ExportError> {
    let pattern = spec.validate().map_err(ExportError::InvalidSpec)?;
    let width = spec.date_column.max(spec.value_column) + 1;
    let d = spec.delimiter.to_string();
    let mut out = String::with_capacity(s.len() * 20);
    for _ in 0..spec.header_lines {
        let header: Vec<&str> = (0..width)
            .map(|c| {
                if c == spec.date_column {
                    "date"
                } else if c == spec.value_column {
                    "value"
                } else {
                    "-"
                }
            })
            .collect();
        out.push_str(&header.join(&d));
        out.push('\n');
    }
    let missing = &spec.missing_codes[0];
    let mut cells = vec![String::from("-"); width];
    for (i, v) in s.values.iter().enumerate() {
        let date = s.date_at(i);
        let value = match v {
            None => missing.clone(),
            Some(x) => {
                let r = render_value(*x, spec);
                if let Some(code) = spec.missing_codes.iter().find(|c| c.trim() == r) {
                    return Err(ExportError::ValueCollidesWithMissingCode {
                        date,
                        value: *x,
                        code: code.clone(),
                    });
                }
                r
            }
        };
        cells[spec.date_column] = pattern.render(date);
        cells[spec.value_column] = value;
        out.push_str(&cells.join(&d));
        out.push('\n');
    }
    Ok(out)
}
