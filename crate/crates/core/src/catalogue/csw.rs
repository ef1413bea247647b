//! OGC CSW 2.0.2 subset over the HTTP GET key-value-pair binding.
//!
//! Supported operations: GetCapabilities, GetRecords and GetRecordById.
//! GetRecords filtering accepts a CQL_TEXT constraint limited to
//! `AnyText LIKE '%word%'` and `dc:type = 'series'` clauses joined by `AND`.

use chrono::{DateTime, SecondsFormat, Utc};
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::Writer;

use super::{MetadataRecord, RecordFilter, RecordType, SearchResult};

pub const VERSION: &str = "2.0.2";
pub const NS_CSW: &str = "http://www.opengis.net/cat/csw/2.0.2";
pub const NS_DC: &str = "http://purl.org/dc/elements/1.1/";
pub const NS_DCT: &str = "http://purl.org/dc/terms/";
pub const NS_OWS: &str = "http://www.opengis.net/ows";
pub const NS_XLINK: &str = "http://www.w3.org/1999/xlink";
pub const MAX_RECORDS_LIMIT: usize = 1000;
pub const OPERATIONS: [&str; 3] = ["GetCapabilities", "GetRecords", "GetRecordById"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExceptionCode {
    MissingParameterValue,
    InvalidParameterValue,
    OperationNotSupported,
    VersionNegotiationFailed,
    NoApplicableCode,
}

impl ExceptionCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExceptionCode::MissingParameterValue => "MissingParameterValue",
            ExceptionCode::InvalidParameterValue => "InvalidParameterValue",
            ExceptionCode::OperationNotSupported => "OperationNotSupported",
            ExceptionCode::VersionNegotiationFailed => "VersionNegotiationFailed",
            ExceptionCode::NoApplicableCode => "NoApplicableCode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwsException {
    pub code: ExceptionCode,
    pub locator: Option<String>,
    pub text: String,
}

impl OwsException {
    pub fn new(code: ExceptionCode, locator: impl Into<Option<String>>, text: impl Into<String>) -> Self {
        Self {
            code,
            locator: locator.into(),
            text: text.into(),
        }
    }

    fn missing(param: &str) -> Self {
        Self::new(
            ExceptionCode::MissingParameterValue,
            Some(param.to_string()),
            format!("parameter '{param}' is required"),
        )
    }

    fn invalid(param: &str, text: impl Into<String>) -> Self {
        Self::new(ExceptionCode::InvalidParameterValue, Some(param.to_string()), text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElementSet {
    Brief,
    #[default]
    Summary,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResultType {
    #[default]
    Results,
    Hits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetRecords {
    pub filter: RecordFilter,
    pub start_position: usize,
    pub max_records: usize,
    pub element_set: ElementSet,
    pub result_type: ResultType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CswRequest {
    GetCapabilities,
    GetRecords(GetRecords),
    GetRecordById { ids: Vec<String>, element_set: ElementSet },
}

/// Case-insensitive parameter lookup, as KVP names are case-insensitive.
fn param<'a>(params: &'a [(String, String)], name: &str) -> Option<&'a str> {
    params
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn parse_element_set(params: &[(String, String)]) -> Result<ElementSet, OwsException> {
    match param(params, "elementSetName").map(str::to_ascii_lowercase).as_deref() {
        None => Ok(ElementSet::default()),
        Some("brief") => Ok(ElementSet::Brief),
        Some("summary") => Ok(ElementSet::Summary),
        Some("full") => Ok(ElementSet::Full),
        Some(other) => Err(OwsException::invalid("elementSetName", format!("unknown element set '{other}'"))),
    }
}

fn parse_positive(params: &[(String, String)], name: &str, default: usize) -> Result<usize, OwsException> {
    match param(params, name) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| OwsException::invalid(name, format!("'{v}' is not a positive integer"))),
    }
}

/// Parse a single-quoted CQL string literal, returning it and the remainder.
fn quoted(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('\'')?;
    let mut out = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '\'' {
            if chars.peek().map(|p| p.1) == Some('\'') {
                out.push('\'');
                chars.next();
            } else {
                return Some((out, &body[i + 1..]));
            }
        } else {
            out.push(c);
        }
    }
    None
}

fn split_and(s: &str) -> Vec<&str> {
    // splits on the AND keyword outside quotes
    let mut parts = Vec::new();
    let bytes = s.as_bytes();
    let mut in_quote = false;
    let mut last = 0;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\'' {
            in_quote = !in_quote;
        } else if !in_quote
            && i + 5 <= bytes.len()
            && bytes[i].is_ascii_whitespace()
            && bytes[i + 1..i + 4].eq_ignore_ascii_case(b"and")
            && bytes[i + 4].is_ascii_whitespace()
        {
            parts.push(&s[last..i]);
            last = i + 5;
            i += 5;
            continue;
        }
        i += 1;
    }
    parts.push(&s[last..]);
    parts
}

/// Parse the supported CQL_TEXT subset into a [`RecordFilter`].
pub fn parse_constraint(cql: &str) -> Result<RecordFilter, OwsException> {
    let bad = |why: &str| OwsException::invalid("constraint", format!("unsupported constraint: {why}"));
    let mut filter = RecordFilter::default();
    for clause in split_and(cql.trim()) {
        let clause = clause.trim();
        let end = clause
            .find(|c: char| c.is_whitespace() || c == '=')
            .ok_or_else(|| bad(clause))?;
        let (field, rest) = clause.split_at(end);
        let rest = rest.trim_start();
        if field.eq_ignore_ascii_case("AnyText") || field.eq_ignore_ascii_case("csw:AnyText") {
            let (op, lit) = rest.split_once(char::is_whitespace).ok_or_else(|| bad(clause))?;
            if !op.eq_ignore_ascii_case("like") {
                return Err(bad("AnyText supports only LIKE"));
            }
            let (pattern, tail) = quoted(lit.trim_start()).ok_or_else(|| bad("unterminated string"))?;
            if !tail.trim().is_empty() {
                return Err(bad(clause));
            }
            let word = pattern.trim_start_matches('%').trim_end_matches('%');
            if word.contains('%') || word.is_empty() {
                return Err(bad("only '%word%' patterns are supported"));
            }
            filter.keywords.push(word.to_string());
        } else if ["dc:type", "type"].iter().any(|f| field.eq_ignore_ascii_case(f)) {
            let lit = rest.strip_prefix('=').ok_or_else(|| bad("dc:type supports only '='"))?;
            let (value, tail) = quoted(lit.trim_start()).ok_or_else(|| bad("unterminated string"))?;
            if !tail.trim().is_empty() {
                return Err(bad(clause));
            }
            let t = RecordType::from_code(&value).ok_or_else(|| bad(&format!("unknown type '{value}'")))?;
            if filter.record_type.is_some_and(|prev| prev != t) {
                return Err(bad("conflicting type clauses"));
            }
            filter.record_type = Some(t);
        } else {
            return Err(bad(&format!("unknown property '{field}'")));
        }
    }
    Ok(filter)
}

/// Interpret KVP parameters of a `GET /csw` request.
pub fn parse_request(params: &[(String, String)]) -> Result<CswRequest, OwsException> {
    let service = param(params, "service").ok_or_else(|| OwsException::missing("service"))?;
    if service != "CSW" {
        return Err(OwsException::invalid("service", format!("service '{service}' is not CSW")));
    }
    let request = param(params, "request").ok_or_else(|| OwsException::missing("request"))?;
    let negotiate = |v: &str| {
        OwsException::new(
            ExceptionCode::VersionNegotiationFailed,
            Some("version".to_string()),
            format!("version '{v}' not supported; this service implements {VERSION}"),
        )
    };
    if request.eq_ignore_ascii_case("GetCapabilities") {
        if let Some(v) = param(params, "version") {
            if v != VERSION {
                return Err(negotiate(v));
            }
        }
        if let Some(list) = param(params, "acceptVersions") {
            if !list.split(',').any(|v| v.trim() == VERSION) {
                return Err(negotiate(list));
            }
        }
        return Ok(CswRequest::GetCapabilities);
    }
    if !OPERATIONS.iter().any(|op| op.eq_ignore_ascii_case(request)) {
        return Err(OwsException::new(
            ExceptionCode::OperationNotSupported,
            Some("request".to_string()),
            format!("operation '{request}' is not supported"),
        ));
    }
    let version = param(params, "version").ok_or_else(|| OwsException::missing("version"))?;
    if version != VERSION {
        return Err(negotiate(version));
    }
    if let Some(schema) = param(params, "outputSchema") {
        if schema != NS_CSW {
            return Err(OwsException::invalid("outputSchema", format!("unsupported schema '{schema}'")));
        }
    }
    if let Some(fmt) = param(params, "outputFormat") {
        if fmt != "application/xml" {
            return Err(OwsException::invalid("outputFormat", format!("unsupported format '{fmt}'")));
        }
    }
    let element_set = parse_element_set(params)?;

    if request.eq_ignore_ascii_case("GetRecordById") {
        let ids: Vec<String> = param(params, "id")
            .ok_or_else(|| OwsException::missing("id"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if ids.is_empty() {
            return Err(OwsException::missing("id"));
        }
        return Ok(CswRequest::GetRecordById { ids, element_set });
    }

    if let Some(names) = param(params, "typeNames") {
        if !names.split(',').any(|n| n.trim().eq_ignore_ascii_case("csw:Record")) {
            return Err(OwsException::invalid("typeNames", format!("unsupported type names '{names}'")));
        }
    }
    let result_type = match param(params, "resultType").map(str::to_ascii_lowercase).as_deref() {
        None | Some("results") => ResultType::Results,
        Some("hits") => ResultType::Hits,
        Some(other) => return Err(OwsException::invalid("resultType", format!("unsupported result type '{other}'"))),
    };
    let start_position = parse_positive(params, "startPosition", 1)?;
    let max_records = parse_positive(params, "maxRecords", 10)?;
    if max_records > MAX_RECORDS_LIMIT {
        return Err(OwsException::invalid(
            "maxRecords",
            format!("maxRecords must lie in [1, {MAX_RECORDS_LIMIT}]"),
        ));
    }
    let filter = match param(params, "constraint") {
        None => RecordFilter::default(),
        Some(cql) => {
            if let Some(lang) = param(params, "constraintLanguage") {
                if !lang.eq_ignore_ascii_case("CQL_TEXT") {
                    return Err(OwsException::invalid(
                        "constraintLanguage",
                        format!("constraint language '{lang}' not supported; use CQL_TEXT"),
                    ));
                }
            }
            parse_constraint(cql)?
        }
    };
    Ok(CswRequest::GetRecords(GetRecords {
        filter,
        start_position,
        max_records,
        element_set,
        result_type,
    }))
}

struct Xml {
    w: Writer<Vec<u8>>,
}

impl Xml {
    fn new() -> Self {
        let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
        w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
            .expect("write to Vec");
        Self { w }
    }

    fn open(&mut self, name: &str, attrs: &[(&str, &str)]) -> &mut Self {
        let mut start = BytesStart::new(name);
        for a in attrs {
            start.push_attribute(*a);
        }
        self.w.write_event(Event::Start(start)).expect("write to Vec");
        self
    }

    fn close(&mut self, name: &str) -> &mut Self {
        self.w.write_event(Event::End(BytesEnd::new(name))).expect("write to Vec");
        self
    }

    fn leaf(&mut self, name: &str, attrs: &[(&str, &str)], text: &str) -> &mut Self {
        self.open(name, attrs);
        self.w
            .write_event(Event::Text(BytesText::new(text)))
            .expect("write to Vec");
        self.close(name)
    }

    fn empty(&mut self, name: &str, attrs: &[(&str, &str)]) -> &mut Self {
        let mut start = BytesStart::new(name);
        for a in attrs {
            start.push_attribute(*a);
        }
        self.w.write_event(Event::Empty(start)).expect("write to Vec");
        self
    }

    fn finish(self) -> String {
        String::from_utf8(self.w.into_inner()).expect("writer emits UTF-8")
    }
}

/// Capabilities document naming version 2.0.2 and the three operations,
/// each bound to HTTP GET at `endpoint`.
pub fn capabilities_xml(endpoint: &str) -> String {
    let mut x = Xml::new();
    x.open(
        "csw:Capabilities",
        &[
            ("xmlns:csw", NS_CSW),
            ("xmlns:ows", NS_OWS),
            ("xmlns:xlink", NS_XLINK),
            ("version", VERSION),
        ],
    );
    x.open("ows:ServiceIdentification", &[])
        .leaf("ows:Title", &[], "River basin information system catalogue")
        .leaf(
            "ows:Abstract",
            &[],
            "Metadata records for hydro-meteorological series, stations, catchments, geodata and documents.",
        )
        .leaf("ows:ServiceType", &[], "CSW")
        .leaf("ows:ServiceTypeVersion", &[], VERSION)
        .close("ows:ServiceIdentification");
    x.open("ows:OperationsMetadata", &[]);
    for op in OPERATIONS {
        x.open("ows:Operation", &[("name", op)])
            .open("ows:DCP", &[])
            .open("ows:HTTP", &[])
            .empty("ows:Get", &[("xlink:href", endpoint)])
            .close("ows:HTTP")
            .close("ows:DCP");
        if op == "GetRecords" {
            x.open("ows:Parameter", &[("name", "resultType")])
                .leaf("ows:Value", &[], "results")
                .leaf("ows:Value", &[], "hits")
                .close("ows:Parameter");
            x.open("ows:Constraint", &[("name", "SupportedQueryables")])
                .leaf("ows:Value", &[], "AnyText")
                .leaf("ows:Value", &[], "dc:type")
                .close("ows:Constraint");
        }
        if op != "GetCapabilities" {
            x.open("ows:Parameter", &[("name", "ElementSetName")])
                .leaf("ows:Value", &[], "brief")
                .leaf("ows:Value", &[], "summary")
                .leaf("ows:Value", &[], "full")
                .close("ows:Parameter");
        }
        x.close("ows:Operation");
    }
    x.open("ows:Parameter", &[("name", "service")])
        .leaf("ows:Value", &[], "CSW")
        .close("ows:Parameter")
        .open("ows:Parameter", &[("name", "version")])
        .leaf("ows:Value", &[], VERSION)
        .close("ows:Parameter");
    x.close("ows:OperationsMetadata");
    x.close("csw:Capabilities");
    x.finish()
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn write_record(x: &mut Xml, r: &MetadataRecord, set: ElementSet) {
    let tag = match set {
        ElementSet::Brief => "csw:BriefRecord",
        ElementSet::Summary => "csw:SummaryRecord",
        ElementSet::Full => "csw:Record",
    };
    x.open(tag, &[]);
    x.leaf("dc:identifier", &[], &r.identifier)
        .leaf("dc:title", &[], &r.title)
        .leaf("dc:type", &[], r.record_type.code());
    if set != ElementSet::Brief {
        for k in &r.keywords {
            x.leaf("dc:subject", &[], k);
        }
        x.leaf("dct:modified", &[], &timestamp(r.modified));
        x.leaf("dct:abstract", &[], &r.abstract_text);
    }
    if set == ElementSet::Full {
        if let Some(t) = &r.temporal_extent {
            x.leaf("dct:temporal", &[], &format!("{}/{}", t.start, t.end));
        }
    }
    if let Some(b) = &r.bounding_box {
        // EPSG:4326 axis order is latitude, longitude
        x.open("ows:BoundingBox", &[("crs", "urn:ogc:def:crs:EPSG::4326")])
            .leaf("ows:LowerCorner", &[], &format!("{} {}", b.south, b.west))
            .leaf("ows:UpperCorner", &[], &format!("{} {}", b.north, b.east))
            .close("ows:BoundingBox");
    }
    x.close(tag);
}

const RECORD_NAMESPACES: [(&str, &str); 4] = [
    ("xmlns:csw", NS_CSW),
    ("xmlns:dc", NS_DC),
    ("xmlns:dct", NS_DCT),
    ("xmlns:ows", NS_OWS),
];

/// `GetRecordsResponse`; `as_of` becomes the SearchStatus timestamp.
pub fn get_records_xml(result: &SearchResult, req: &GetRecords, as_of: DateTime<Utc>) -> String {
    let mut x = Xml::new();
    let mut attrs = RECORD_NAMESPACES.to_vec();
    attrs.push(("version", VERSION));
    x.open("csw:GetRecordsResponse", &attrs);
    x.empty("csw:SearchStatus", &[("timestamp", &timestamp(as_of))]);
    let set = match req.element_set {
        ElementSet::Brief => "brief",
        ElementSet::Summary => "summary",
        ElementSet::Full => "full",
    };
    let returned = match req.result_type {
        ResultType::Hits => 0,
        ResultType::Results => result.records.len(),
    };
    let next = match req.result_type {
        ResultType::Hits => 0,
        ResultType::Results => result.next_record,
    };
    let matched_s = result.matched.to_string();
    let returned_s = returned.to_string();
    let next_s = next.to_string();
    x.open(
        "csw:SearchResults",
        &[
            ("numberOfRecordsMatched", matched_s.as_str()),
            ("numberOfRecordsReturned", returned_s.as_str()),
            ("nextRecord", next_s.as_str()),
            ("recordSchema", NS_CSW),
            ("elementSet", set),
        ],
    );
    if req.result_type == ResultType::Results {
        for r in &result.records {
            write_record(&mut x, r, req.element_set);
        }
    }
    x.close("csw:SearchResults");
    x.close("csw:GetRecordsResponse");
    x.finish()
}

pub fn get_record_by_id_xml(records: &[MetadataRecord], set: ElementSet) -> String {
    let mut x = Xml::new();
    x.open("csw:GetRecordByIdResponse", &RECORD_NAMESPACES);
    for r in records {
        write_record(&mut x, r, set);
    }
    x.close("csw:GetRecordByIdResponse");
    x.finish()
}

/// OWS 1.0 ExceptionReport.
pub fn exception_xml(e: &OwsException) -> String {
    let mut x = Xml::new();
    x.open(
        "ows:ExceptionReport",
        &[("xmlns:ows", NS_OWS), ("version", "1.2.0"), ("language", "en")],
    );
    let mut attrs = vec![("exceptionCode", e.code.as_str())];
    if let Some(l) = &e.locator {
        attrs.push(("locator", l.as_str()));
    }
    x.open("ows:Exception", &attrs)
        .leaf("ows:ExceptionText", &[], &e.text)
        .close("ows:Exception");
    x.close("ows:ExceptionReport");
    x.finish()
}

/// Answer one CSW request against the records visible to the caller.
pub fn respond(
    params: &[(String, String)],
    visible: &[&MetadataRecord],
    endpoint: &str,
    as_of: DateTime<Utc>,
) -> Result<String, String> {
    let req = match parse_request(params) {
        Ok(r) => r,
        Err(e) => return Err(exception_xml(&e)),
    };
    match req {
        CswRequest::GetCapabilities => Ok(capabilities_xml(endpoint)),
        CswRequest::GetRecords(q) => {
            let result = super::search(visible.iter().copied(), &q.filter, q.start_position, q.max_records);
            Ok(get_records_xml(&result, &q, as_of))
        }
        CswRequest::GetRecordById { ids, element_set } => {
            let mut found = Vec::new();
            for id in &ids {
                match visible.iter().find(|r| &r.identifier == id) {
                    Some(r) => found.push((*r).clone()),
                    None => {
                        return Err(exception_xml(&OwsException::invalid(
                            "id",
                            format!("no record with identifier '{id}'"),
                        )))
                    }
                }
            }
            Ok(get_record_by_id_xml(&found, element_set))
        }
    }
}
