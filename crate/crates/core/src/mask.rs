//! Binary kiln masks and the post-processing chain that turns them into
//! geographic candidate points: isolated-pixel removal, morphological
//! closing, 8-connected clustering, centroid geolocation, 20 m dedup and
//! the per-tile cap.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{dedup_radius_indices, GeoPoint};
use crate::raster::GeoRef;

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub tile_id: String,
    pub georef: GeoRef,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(tile_id: impl Into<String>, georef: GeoRef) -> Self {
        let (width, height) = (georef.width_px as usize, georef.height_px as usize);
        BinaryMask {
            tile_id: tile_id.into(),
            georef,
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(tile_id: impl Into<String>, georef: GeoRef, bits: Vec<bool>) -> Result<Self> {
        let (width, height) = (georef.width_px as usize, georef.height_px as usize);
        if bits.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask has {} bits, georef expects {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask {
            tile_id: tile_id.into(),
            georef,
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Out-of-bounds reads as unset.
    #[inline]
    fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn with_bits(&self, bits: Vec<bool>) -> Self {
        BinaryMask {
            tile_id: self.tile_id.clone(),
            georef: self.georef,
            width: self.width,
            height: self.height,
            bits,
        }
    }
}

/// An 8-connected blob of set pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelCluster {
    /// Row-major ordered `(x, y)` members.
    pub members: Vec<(usize, usize)>,
    pub centroid_px: (f64, f64),
}

impl PixelCluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePoint {
    pub location: GeoPoint,
    pub source_tile: String,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessParams {
    pub se_radius: usize,
    pub dedup_radius_m: f64,
    pub cap_per_tile: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams {
            se_radius: 1,
            dedup_radius_m: 20.0,
            cap_per_tile: 15,
        }
    }
}

/// Clears every set pixel with no set 8-neighbor.
pub fn remove_isolated(mask: &BinaryMask) -> BinaryMask {
    let mut bits = mask.bits.clone();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let has_neighbor = NEIGHBORS_8
                .iter()
                .any(|&(dx, dy)| mask.get_signed(x as isize + dx, y as isize + dy));
            if !has_neighbor {
                bits[y * mask.width + x] = false;
            }
        }
    }
    mask.with_bits(bits)
}

/// Running OR/AND over a `2r+1` window along one axis; cells outside
/// `0..len` read as unset.
fn sweep(src: &[bool], w: usize, h: usize, r: usize, horizontal: bool, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let (outer, inner) = if horizontal { (h, w) } else { (w, h) };
    let at = |o: usize, i: usize| if horizontal { o * w + i } else { i * w + o };
    for o in 0..outer {
        // prefix count of set cells along the line
        let mut prefix = vec![0usize; inner + 1];
        for i in 0..inner {
            prefix[i + 1] = prefix[i] + src[at(o, i)] as usize;
        }
        for i in 0..inner {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(inner - 1);
            let set = prefix[hi + 1] - prefix[lo];
            out[at(o, i)] = if dilate {
                set > 0
            } else {
                // window cells past either end are unset
                i >= r && i + r < inner && set == 2 * r + 1
            };
        }
    }
    out
}

/// Dilation followed by erosion with a `(2r+1)^2` square structuring element.
///
/// The mask is treated as lying on an unbounded unset plane: the work is done
/// on a canvas padded by `se_radius` on every side, then cropped back.
pub fn morphological_close(mask: &BinaryMask, se_radius: usize) -> BinaryMask {
    if se_radius == 0 || mask.width == 0 || mask.height == 0 {
        return mask.clone();
    }
    let r = se_radius;
    let (pw, ph) = (mask.width + 2 * r, mask.height + 2 * r);
    let mut canvas = vec![false; pw * ph];
    for y in 0..mask.height {
        for x in 0..mask.width {
            canvas[(y + r) * pw + x + r] = mask.get(x, y);
        }
    }
    let dilated = sweep(&sweep(&canvas, pw, ph, r, true, true), pw, ph, r, false, true);
    let closed = sweep(&sweep(&dilated, pw, ph, r, true, false), pw, ph, r, false, false);
    let mut bits = Vec::with_capacity(mask.width * mask.height);
    for y in 0..mask.height {
        bits.extend_from_slice(&closed[(y + r) * pw + r..(y + r) * pw + r + mask.width]);
    }
    mask.with_bits(bits)
}

/// 8-connected components ordered by their topmost, then leftmost, pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<PixelCluster> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            members.push((x, y));
            for &(dx, dy) in &NEIGHBORS_8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable_by_key(|&(x, y)| (y, x));
        let n = members.len() as f64;
        let (sx, sy) = members
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
        clusters.push(PixelCluster {
            members,
            centroid_px: (sx / n, sy / n),
        });
    }
    clusters
}

pub fn clusters_to_candidates(
    clusters: &[PixelCluster],
    georef: &GeoRef,
    tile_id: &str,
) -> Result<Vec<CandidatePoint>> {
    clusters
        .iter()
        .map(|c| {
            let loc = georef.pixel_to_geo(c.centroid_px.0, c.centroid_px.1)?;
            Ok(CandidatePoint {
                location: loc.point,
                source_tile: tile_id.to_string(),
                cluster_size: c.size(),
            })
        })
        .collect()
}

/// Keeps the `limit` largest clusters (earlier wins ties), preserving order.
pub fn cap_per_tile(candidates: Vec<CandidatePoint>, limit: usize) -> Vec<CandidatePoint> {
    if candidates.len() <= limit {
        return candidates;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .cluster_size
            .cmp(&candidates[a].cluster_size)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; candidates.len()];
    for &i in &order[..limit] {
        keep[i] = true;
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Full mask-to-candidates chain with default parameters.
pub fn postprocess_tile(mask: &BinaryMask) -> Result<Vec<CandidatePoint>> {
    postprocess_tile_with(mask, &PostprocessParams::default())
}

/// Dedup runs in descending cluster-size order so the largest blob of a
/// close group survives; survivors return to cluster order before the cap.
pub fn postprocess_tile_with(mask: &BinaryMask, params: &PostprocessParams) -> Result<Vec<CandidatePoint>> {
    let cleaned = remove_isolated(mask);
    let closed = morphological_close(&cleaned, params.se_radius);
    let clusters = connected_components(&closed);
    let candidates = clusters_to_candidates(&clusters, &mask.georef, &mask.tile_id)?;

    let mut priority: Vec<usize> = (0..candidates.len()).collect();
    priority.sort_by(|&a, &b| {
        candidates[b]
            .cluster_size
            .cmp(&candidates[a].cluster_size)
            .then(a.cmp(&b))
    });
    let ranked: Vec<GeoPoint> = priority.iter().map(|&i| candidates[i].location).collect();
    let mut survivors: Vec<usize> = dedup_radius_indices(&ranked, params.dedup_radius_m)
        .into_iter()
        .map(|k| priority[k])
        .collect();
    survivors.sort_unstable();

    let mut slots: Vec<Option<CandidatePoint>> = candidates.into_iter().map(Some).collect();
    let deduped = survivors
        .into_iter()
        .filter_map(|i| slots[i].take())
        .collect();
    Ok(cap_per_tile(deduped, params.cap_per_tile))
}

pub const CANDIDATE_CSV_HEADER: [&str; 4] = ["tile_id", "lat", "lon", "cluster_size"];

pub fn write_candidates_csv<W: Write>(out: W, candidates: &[CandidatePoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CANDIDATE_CSV_HEADER)?;
    for c in candidates {
        w.write_record([
            c.source_tile.clone(),
            format!("{:.6}", c.location.lat()),
            format!("{:.6}", c.location.lon()),
            c.cluster_size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<candidates>", e))?;
    Ok(())
}
