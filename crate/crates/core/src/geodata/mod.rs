//! Catchment geometries, station linking and opaque assets.

pub mod shapefile;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::correction::EARTH_RADIUS_KM;
use crate::model::{CatchmentId, Station, StationId};

pub use shapefile::{parse_shapefile_geometry, ShapeGeometries, ShapefileError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least one ring")]
    NoRings,
    #[error("ring {ring} has {count} vertices; at least 4 required")]
    TooFewVertices { ring: usize, count: usize },
    #[error("ring {ring} is not closed")]
    NotClosed { ring: usize },
    #[error("vertex ({lon}, {lat}) outside WGS84 bounds")]
    OutOfBounds { lon: f64, lat: f64 },
}

/// Outer ring followed by holes; vertices are `[lon, lat]` with first == last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonJson", into = "PolygonJson")]
pub struct Polygon {
    rings: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct PolygonJson {
    rings: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<PolygonJson> for Polygon {
    type Error = GeometryError;
    fn try_from(p: PolygonJson) -> Result<Self, Self::Error> {
        Polygon::new(p.rings)
    }
}

impl From<Polygon> for PolygonJson {
    fn from(p: Polygon) -> Self {
        PolygonJson { rings: p.rings }
    }
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Result<Self, GeometryError> {
        if rings.is_empty() {
            return Err(GeometryError::NoRings);
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(GeometryError::TooFewVertices { ring: i, count: ring.len() });
            }
            if ring.first() != ring.last() {
                return Err(GeometryError::NotClosed { ring: i });
            }
            if let Some(&[lon, lat]) = ring
                .iter()
                .find(|[lon, lat]| !(-180.0..=180.0).contains(lon) || !(-90.0..=90.0).contains(lat))
            {
                return Err(GeometryError::OutOfBounds { lon, lat });
            }
        }
        Ok(Self { rings })
    }

    pub fn rings(&self) -> &[Vec<[f64; 2]>] {
        &self.rings
    }

    pub fn outer(&self) -> &[[f64; 2]] {
        &self.rings[0]
    }

    pub fn holes(&self) -> &[Vec<[f64; 2]>] {
        &self.rings[1..]
    }

    /// `(min lon, min lat, max lon, max lat)` of the outer ring.
    pub fn bbox(&self) -> [f64; 4] {
        self.outer().iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, [x, y]| [b[0].min(*x), b[1].min(*y), b[2].max(*x), b[3].max(*y)],
        )
    }

    /// Area on a sphere of radius 6371 km, outer ring minus holes.
    pub fn area_km2(&self) -> f64 {
        let outer = ring_spherical_area_km2(self.outer());
        let holes: f64 = self.holes().iter().map(|h| ring_spherical_area_km2(h)).sum();
        (outer - holes).max(0.0)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        point_in_polygon([lon, lat], self)
    }
}

/// Planar shoelace area in degree units; positive for counter-clockwise rings.
pub fn signed_ring_area(ring: &[[f64; 2]]) -> f64 {
    ring.windows(2)
        .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
        .sum::<f64>()
        / 2.0
}

/// Spherical excess of a closed ring with great-circle edges, in km².
///
/// Sums, per edge, the signed excess of the triangle formed with the pole:
/// `E = 2·atan2(tan(Δλ/2)·(tan(φ₁/2) + tan(φ₂/2)), 1 + tan(φ₁/2)·tan(φ₂/2))`.
pub fn ring_spherical_area_km2(ring: &[[f64; 2]]) -> f64 {
    let excess: f64 = ring
        .windows(2)
        .map(|w| {
            let (l1, p1) = (w[0][0].to_radians(), w[0][1].to_radians());
            let (l2, p2) = (w[1][0].to_radians(), w[1][1].to_radians());
            let t1 = (p1 / 2.0).tan();
            let t2 = (p2 / 2.0).tan();
            let mut dl = l2 - l1;
            if dl > std::f64::consts::PI {
                dl -= 2.0 * std::f64::consts::PI;
            } else if dl < -std::f64::consts::PI {
                dl += 2.0 * std::f64::consts::PI;
            }
            2.0 * ((dl / 2.0).tan() * (t1 + t2)).atan2(1.0 + t1 * t2)
        })
        .sum();
    excess.abs() * EARTH_RADIUS_KM * EARTH_RADIUS_KM
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Even-odd containment over all rings; points on any edge or vertex are inside.
pub fn point_in_polygon(p: [f64; 2], poly: &Polygon) -> bool {
    if poly
        .rings()
        .iter()
        .any(|ring| ring.windows(2).any(|w| on_segment(p, w[0], w[1])))
    {
        return true;
    }
    let mut inside = false;
    for ring in poly.rings() {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Catchment {
    pub id: CatchmentId,
    pub name: String,
    pub parent_id: Option<CatchmentId>,
    pub geometry: Polygon,
    pub area_km2: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatchmentError {
    #[error("unknown catchment {0}")]
    UnknownCatchment(CatchmentId),
    #[error("catchment {0} already exists")]
    Duplicate(CatchmentId),
    #[error("catchment geometry has zero area")]
    ZeroArea,
}

impl Catchment {
    /// Build a catchment; the parent must already be registered, which keeps
    /// the hierarchy acyclic.
    pub fn new(
        id: CatchmentId,
        name: String,
        parent_id: Option<CatchmentId>,
        geometry: Polygon,
        existing: &BTreeMap<CatchmentId, Catchment>,
    ) -> Result<Self, CatchmentError> {
        if existing.contains_key(&id) {
            return Err(CatchmentError::Duplicate(id));
        }
        if let Some(p) = &parent_id {
            if !existing.contains_key(p) {
                return Err(CatchmentError::UnknownCatchment(p.clone()));
            }
        }
        let area_km2 = geometry.area_km2();
        if !(area_km2 > 0.0) {
            return Err(CatchmentError::ZeroArea);
        }
        Ok(Self {
            id,
            name,
            parent_id,
            geometry,
            area_km2,
        })
    }
}

/// Nesting depth of every catchment (roots are 0).
fn depths(catchments: &BTreeMap<CatchmentId, Catchment>) -> HashMap<&CatchmentId, usize> {
    let mut out = HashMap::new();
    for id in catchments.keys() {
        let mut depth = 0;
        let mut cur = catchments[id].parent_id.as_ref();
        while let Some(p) = cur {
            depth += 1;
            cur = catchments.get(p).and_then(|c| c.parent_id.as_ref());
            if depth > catchments.len() {
                break;
            }
        }
        out.insert(id, depth);
    }
    out
}

/// `root` and every catchment below it.
pub fn descendants(catchments: &BTreeMap<CatchmentId, Catchment>, root: &CatchmentId) -> Vec<CatchmentId> {
    let mut out = vec![root.clone()];
    let mut i = 0;
    while i < out.len() {
        let cur = out[i].clone();
        out.extend(
            catchments
                .values()
                .filter(|c| c.parent_id.as_ref() == Some(&cur))
                .map(|c| c.id.clone()),
        );
        i += 1;
    }
    out
}

/// Assignments produced by linking the stations inside `root`'s geometry:
/// each goes to the deepest catchment in `root`'s subtree that contains it.
/// Stations outside the geometry are not touched.
pub fn link_stations<'a>(
    catchments: &BTreeMap<CatchmentId, Catchment>,
    root: &CatchmentId,
    stations: impl IntoIterator<Item = &'a Station>,
) -> Result<Vec<(StationId, CatchmentId)>, CatchmentError> {
    let root_c = catchments
        .get(root)
        .ok_or_else(|| CatchmentError::UnknownCatchment(root.clone()))?;
    let subtree = descendants(catchments, root);
    let depth = depths(catchments);
    let mut out = Vec::new();
    for st in stations {
        if !root_c.geometry.contains(st.lon, st.lat) {
            continue;
        }
        let best = subtree
            .iter()
            .filter(|id| catchments[*id].geometry.contains(st.lon, st.lat))
            .max_by(|a, b| depth[a].cmp(&depth[b]).then_with(|| b.cmp(a)))
            .expect("root contains the station");
        out.push((st.id.clone(), best.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssetKind {
    Vector,
    Raster,
    Document,
}

/// Default upper bound on a single stored asset.
pub const DEFAULT_ASSET_LIMIT: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Asset {
    pub id: String,
    pub kind: AssetKind,
    pub filename: String,
    pub byte_size: u64,
    /// Hex SHA-256 of the stored bytes.
    pub checksum: String,
    /// `[west, south, east, north]`, as declared by the uploader.
    pub bbox: Option<[f64; 4]>,
    /// Coordinates are taken as WGS84 lon/lat; no projection is read from uploads.
    #[serde(default = "default_crs")]
    pub crs: String,
}

pub const ASSUMED_CRS: &str = "EPSG:4326";

fn default_crs() -> String {
    ASSUMED_CRS.to_string()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssetError {
    #[error("asset of {size} bytes exceeds the {limit}-byte limit")]
    TooLarge { size: u64, limit: u64 },
    #[error("checksum mismatch for asset {0}")]
    ChecksumMismatch(String),
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Asset {
    pub fn describe(
        id: String,
        kind: AssetKind,
        filename: String,
        bytes: &[u8],
        bbox: Option<[f64; 4]>,
        limit: u64,
    ) -> Result<Self, AssetError> {
        let size = bytes.len() as u64;
        if size > limit {
            return Err(AssetError::TooLarge { size, limit });
        }
        Ok(Self {
            id,
            kind,
            filename,
            byte_size: size,
            checksum: checksum(bytes),
            bbox,
            crs: default_crs(),
        })
    }

    pub fn verify(&self, bytes: &[u8]) -> Result<(), AssetError> {
        if bytes.len() as u64 != self.byte_size || checksum(bytes) != self.checksum {
            return Err(AssetError::ChecksumMismatch(self.id.clone()));
        }
        Ok(())
    }
}
