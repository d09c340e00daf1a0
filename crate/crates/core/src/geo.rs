//! Spherical geodesy, a uniform-grid point index and radius deduplication.
//!
//! Everything downstream (mask post-processing, detection dedup, exposure
//! counts) measures distances with [`haversine_distance`] on a sphere of
//! radius [`EARTH_RADIUS_M`].

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::CoordinateOutOfRange { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let half_dlat = (lat2 - lat1) / 2.0;
    let half_dlon = (b.lon - a.lon).to_radians() / 2.0;
    let h = half_dlat.sin().powi(2) + lat1.cos() * lat2.cos() * half_dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

type Cell = (i64, i64);

/// Uniform grid over a local equirectangular projection centred on `anchor`.
///
/// Point ids are insertion indices. Radius queries are exact with respect to
/// [`haversine_distance`]: the grid only narrows the candidate set.
#[derive(Debug, Clone)]
pub struct SpatialGridIndex {
    cell_size: f64,
    anchor: GeoPoint,
    cos_anchor: f64,
    points: Vec<GeoPoint>,
    buckets: HashMap<Cell, Vec<usize>>,
}

impl SpatialGridIndex {
    pub(crate) fn empty(anchor: GeoPoint, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        Ok(SpatialGridIndex {
            cell_size,
            anchor,
            cos_anchor: anchor.lat.to_radians().cos().max(1e-9),
            points: Vec::new(),
            buckets: HashMap::new(),
        })
    }

    pub(crate) fn insert(&mut self, p: GeoPoint) -> usize {
        let id = self.points.len();
        let cell = self.cell_of(p.lat, p.lon);
        self.points.push(p);
        self.buckets.entry(cell).or_default().push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn anchor(&self) -> GeoPoint {
        self.anchor
    }

    pub fn point(&self, id: usize) -> Option<GeoPoint> {
        self.points.get(id).copied()
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Iterates over `(cell, ids)` pairs in unspecified order.
    pub fn buckets(&self) -> impl Iterator<Item = (Cell, &[usize])> {
        self.buckets.iter().map(|(c, ids)| (*c, ids.as_slice()))
    }

    fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = EARTH_RADIUS_M * (lon - self.anchor.lon).to_radians() * self.cos_anchor;
        let y = EARTH_RADIUS_M * (lat - self.anchor.lat).to_radians();
        (x, y)
    }

    fn cell_of(&self, lat: f64, lon: f64) -> Cell {
        let (x, y) = self.project(lat, lon);
        (
            (x / self.cell_size).floor() as i64,
            (y / self.cell_size).floor() as i64,
        )
    }

    /// Cell rectangle enclosing the spherical cap of radius `r` around
    /// `center`, or `None` when the cap reaches a pole.
    fn query_cells(&self, center: GeoPoint, r: f64) -> Option<(Cell, Cell)> {
        let ang = r / EARTH_RADIUS_M;
        let lat = center.lat.to_radians();
        if lat.abs() + ang >= FRAC_PI_2 {
            return None;
        }
        let dlat = ang.to_degrees();
        let dlon = (ang.sin() / lat.cos()).min(1.0).asin().to_degrees();
        // widen slightly so rounding in the projection never drops a boundary cell
        let pad = 1e-9 * (1.0 + dlon.max(dlat));
        let (x0, y0) = self.cell_of(center.lat - dlat - pad, center.lon - dlon - pad);
        let (x1, y1) = self.cell_of(center.lat + dlat + pad, center.lon + dlon + pad);
        Some(((x0, y0), (x1, y1)))
    }

    /// Number of buckets a radius query would visit.
    pub fn buckets_inspected(&self, center: GeoPoint, r: f64) -> usize {
        match self.query_cells(center, r) {
            Some(((x0, y0), (x1, y1))) => {
                let span = ((x1 - x0 + 1) as u128) * ((y1 - y0 + 1) as u128);
                if span > self.buckets.len() as u128 {
                    self.buckets.len()
                } else {
                    (x0..=x1)
                        .flat_map(|x| (y0..=y1).map(move |y| (x, y)))
                        .filter(|c| self.buckets.contains_key(c))
                        .count()
                }
            }
            None => self.buckets.len(),
        }
    }

    fn for_each_candidate(&self, center: GeoPoint, r: f64, mut f: impl FnMut(usize)) {
        match self.query_cells(center, r) {
            Some(((x0, y0), (x1, y1)))
                if ((x1 - x0 + 1) as u128) * ((y1 - y0 + 1) as u128)
                    <= self.buckets.len() as u128 =>
            {
                for x in x0..=x1 {
                    for y in y0..=y1 {
                        if let Some(ids) = self.buckets.get(&(x, y)) {
                            ids.iter().copied().for_each(&mut f);
                        }
                    }
                }
            }
            Some(((x0, y0), (x1, y1))) => {
                for ((x, y), ids) in &self.buckets {
                    if (x0..=x1).contains(x) && (y0..=y1).contains(y) {
                        ids.iter().copied().for_each(&mut f);
                    }
                }
            }
            None => self.buckets.values().flatten().copied().for_each(f),
        }
    }

    /// Ids within `r` meters of `center`, ascending.
    pub fn points_within_radius(&self, center: GeoPoint, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_candidate(center, r, |id| {
            if haversine_distance(center, self.points[id]) <= r {
                out.push(id);
            }
        });
        out.sort_unstable();
        out
    }

    /// True when any indexed point lies within `r` meters of `center`.
    pub fn any_within_radius(&self, center: GeoPoint, r: f64) -> bool {
        let mut hit = false;
        self.for_each_candidate(center, r, |id| {
            if !hit && haversine_distance(center, self.points[id]) <= r {
                hit = true;
            }
        });
        hit
    }
}

/// Builds a grid index; the first point anchors the projection.
pub fn build_index(points: &[GeoPoint], cell_size: f64) -> Result<SpatialGridIndex> {
    let anchor = points
        .first()
        .copied()
        .unwrap_or(GeoPoint { lat: 0.0, lon: 0.0 });
    let mut index = SpatialGridIndex::empty(anchor, cell_size)?;
    for &p in points {
        index.insert(p);
    }
    Ok(index)
}

pub fn points_within_radius(index: &SpatialGridIndex, center: GeoPoint, r: f64) -> Vec<usize> {
    index.points_within_radius(center, r)
}

/// Indices of the points kept by a greedy keep-first sweep: a point survives
/// iff it is farther than `r` from every previously kept point.
pub fn dedup_radius_indices(points: &[GeoPoint], r: f64) -> Vec<usize> {
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let cell = if r > 0.0 { r } else { 1.0 };
    let mut kept_index =
        SpatialGridIndex::empty(first, cell).expect("cell size is positive by construction");
    let mut kept = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if !kept_index.any_within_radius(p, r) {
            kept_index.insert(p);
            kept.push(i);
        }
    }
    kept
}

pub fn dedup_radius(points: &[GeoPoint], r: f64) -> Vec<GeoPoint> {
    dedup_radius_indices(points, r)
        .into_iter()
        .map(|i| points[i])
        .collect()
}
