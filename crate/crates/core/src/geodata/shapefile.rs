//! Reader for the geometry part (`.shp`) of ESRI shapefiles.
//!
//! Layout: a 100-byte main header (file code 9994 and file length in 16-bit
//! words, big-endian; version 1000, shape type and bounding box,
//! little-endian) followed by records of an 8-byte big-endian header
//! (record number, content length in words) and little-endian content.
//! Only point (1) and polygon (5) files are accepted.

use thiserror::Error;

use super::{signed_ring_area, GeometryError, Polygon};

pub const FILE_CODE: i32 = 9994;
pub const HEADER_LEN: usize = 100;
pub const SHAPE_NULL: i32 = 0;
pub const SHAPE_POINT: i32 = 1;
pub const SHAPE_POLYGON: i32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapefileError {
    #[error("bad file code {0}, expected 9994")]
    BadMagic(i32),
    #[error("unsupported shape type {0}")]
    UnsupportedShapeType(i32),
    #[error("truncated record at byte {offset}")]
    TruncatedRecord { offset: usize },
    #[error("invalid geometry in record {record}: {source}")]
    InvalidGeometry {
        record: i32,
        #[source]
        source: GeometryError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeGeometries {
    /// `[lon, lat]` per point record.
    Points(Vec<[f64; 2]>),
    Polygons(Vec<Polygon>),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ShapefileError> {
        let end = self.pos.checked_add(N).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ShapefileError::TruncatedRecord { offset: self.pos });
        };
        let out: [u8; N] = self.bytes[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn i32_be(&mut self) -> Result<i32, ShapefileError> {
        Ok(i32::from_be_bytes(self.take()?))
    }

    fn i32_le(&mut self) -> Result<i32, ShapefileError> {
        Ok(i32::from_le_bytes(self.take()?))
    }

    fn f64_le(&mut self) -> Result<f64, ShapefileError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Parse a `.shp` main file into points or polygons.
///
/// Multi-part polygon records are split by ring orientation: clockwise rings
/// start a new polygon, counter-clockwise rings are holes of the preceding one.
pub fn parse_shapefile_geometry(bytes: &[u8]) -> Result<ShapeGeometries, ShapefileError> {
    if bytes.len() < 4 {
        return Err(ShapefileError::TruncatedRecord { offset: 0 });
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let code = cur.i32_be()?;
    if code != FILE_CODE {
        return Err(ShapefileError::BadMagic(code));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ShapefileError::TruncatedRecord { offset: bytes.len() });
    }
    cur.pos = 24;
    let file_words = cur.i32_be()?;
    let _version = cur.i32_le()?;
    let shape_type = cur.i32_le()?;
    if shape_type != SHAPE_POINT && shape_type != SHAPE_POLYGON {
        return Err(ShapefileError::UnsupportedShapeType(shape_type));
    }
    let declared_len = usize::try_from(file_words).unwrap_or(0) * 2;
    let end = if declared_len >= HEADER_LEN && declared_len <= bytes.len() {
        declared_len
    } else if declared_len > bytes.len() {
        return Err(ShapefileError::TruncatedRecord { offset: bytes.len() });
    } else {
        bytes.len()
    };

    let mut points = Vec::new();
    let mut polygons = Vec::new();
    cur.pos = HEADER_LEN;
    while cur.pos < end {
        let record_start = cur.pos;
        let record_no = cur.i32_be()?;
        let content_words = cur.i32_be()?;
        let content_len = usize::try_from(content_words)
            .map_err(|_| ShapefileError::TruncatedRecord { offset: record_start })?
            * 2;
        let content_end = cur.pos + content_len;
        if content_end > end || content_len < 4 {
            return Err(ShapefileError::TruncatedRecord { offset: record_start });
        }
        let mut rec = Cursor {
            bytes: &bytes[..content_end],
            pos: cur.pos,
        };
        let rec_type = rec.i32_le()?;
        match rec_type {
            SHAPE_NULL => {}
            t if t != shape_type => return Err(ShapefileError::UnsupportedShapeType(t)),
            SHAPE_POINT => {
                let x = rec.f64_le()?;
                let y = rec.f64_le()?;
                if !(-180.0..=180.0).contains(&x) || !(-90.0..=90.0).contains(&y) {
                    return Err(ShapefileError::InvalidGeometry {
                        record: record_no,
                        source: GeometryError::OutOfBounds { lon: x, lat: y },
                    });
                }
                points.push([x, y]);
            }
            _ => {
                for _ in 0..4 {
                    rec.f64_le()?;
                }
                let num_parts = rec.i32_le()?;
                let num_points = rec.i32_le()?;
                if num_parts < 1 || num_points < 0 {
                    return Err(ShapefileError::TruncatedRecord { offset: record_start });
                }
                let mut parts = Vec::with_capacity(num_parts as usize);
                for _ in 0..num_parts {
                    parts.push(rec.i32_le()? as usize);
                }
                let mut pts = Vec::with_capacity(num_points as usize);
                for _ in 0..num_points {
                    let x = rec.f64_le()?;
                    let y = rec.f64_le()?;
                    pts.push([x, y]);
                }
                let mut rings = Vec::with_capacity(parts.len());
                for (i, &first) in parts.iter().enumerate() {
                    let last = parts.get(i + 1).copied().unwrap_or(pts.len());
                    if first > last || last > pts.len() {
                        return Err(ShapefileError::TruncatedRecord { offset: record_start });
                    }
                    rings.push(pts[first..last].to_vec());
                }
                let mut current: Option<Vec<Vec<[f64; 2]>>> = None;
                for ring in rings {
                    let clockwise = signed_ring_area(&ring) < 0.0;
                    match (&mut current, clockwise) {
                        (Some(poly), false) => poly.push(ring),
                        (slot, _) => {
                            if let Some(done) = slot.take() {
                                polygons.push((record_no, done));
                            }
                            *slot = Some(vec![ring]);
                        }
                    }
                }
                if let Some(done) = current {
                    polygons.push((record_no, done));
                }
            }
        }
        cur.pos = content_end;
    }

    if shape_type == SHAPE_POINT {
        return Ok(ShapeGeometries::Points(points));
    }
    let polygons = polygons
        .into_iter()
        .map(|(record, rings)| {
            Polygon::new(rings).map_err(|source| ShapefileError::InvalidGeometry { record, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ShapeGeometries::Polygons(polygons))
}
