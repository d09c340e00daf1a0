//! Object-detection post-processing: static-map georeferencing, IoU and
//! class-aware NMS, bounding-box geolocation, fetch grouping of candidate
//! points, and cross-image deduplication.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{dedup_radius_indices, GeoPoint, SpatialGridIndex};
use crate::raster::GeoRef;

/// Tile size of the web-map pyramid at zoom 0, pixels.
pub const WEB_TILE_PX: f64 = 256.0;
pub const MAX_MERCATOR_LAT: f64 = 85.05;
pub const MAX_ZOOM: u8 = 22;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;
pub const DEFAULT_MAX_DETECTIONS: usize = 10;
pub const DEFAULT_GROUP_RADIUS_M: f64 = 335.0;
pub const CROSS_IMAGE_DEDUP_M: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum KilnClass {
    Fcbk = 0,
    ZigZag = 1,
}

impl TryFrom<u8> for KilnClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(KilnClass::Fcbk),
            1 => Ok(KilnClass::ZigZag),
            other => Err(Error::InvalidParameter(format!(
                "kiln class must be 0 (FCBK) or 1 (ZigZag), got {other}"
            ))),
        }
    }
}

impl From<KilnClass> for u8 {
    fn from(c: KilnClass) -> u8 {
        c as u8
    }
}

impl KilnClass {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for KilnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KilnClass::Fcbk => f.write_str("FCBK"),
            KilnClass::ZigZag => f.write_str("ZigZag"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class: KilnClass,
    pub confidence: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class: KilnClass, confidence: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
            class,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::InvalidParameter(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidParameter(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            x_max: self.x_max + dx,
            y_min: self.y_min + dy,
            y_max: self.y_max + dy,
            ..*self
        }
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clamped(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.clamp(0.0, width),
            x_max: self.x_max.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            y_max: self.y_max.clamp(0.0, height),
            ..*self
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Descending confidence, then lower `x_min`, then lower `y_min`.
pub(crate) fn nms_order(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&boxes[i], &boxes[j]);
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.x_min.total_cmp(&b.x_min))
            .then(a.y_min.total_cmp(&b.y_min))
            .then(i.cmp(&j))
    });
    order
}

/// Greedy class-aware non-maximum suppression.
pub fn nms(boxes: &[BBox], iou_threshold: f64, max_det: usize) -> Vec<BBox> {
    let mut kept: Vec<BBox> = Vec::new();
    for i in nms_order(boxes) {
        if kept.len() == max_det {
            break;
        }
        let b = boxes[i];
        if kept
            .iter()
            .all(|k| k.class != b.class || iou(k, &b) <= iou_threshold)
        {
            kept.push(b);
        }
    }
    kept
}

/// Georef of a north-up static-map image: Web-Mercator pixel size in
/// longitude, with latitude linearised about the image center.
pub fn static_map_georef(center: GeoPoint, zoom: u8, scale: u8, size_px: u32) -> Result<GeoRef> {
    if zoom > MAX_ZOOM {
        return Err(Error::InvalidParameter(format!("zoom {zoom} outside [0, {MAX_ZOOM}]")));
    }
    if scale != 1 && scale != 2 {
        return Err(Error::InvalidParameter(format!("scale must be 1 or 2, got {scale}")));
    }
    if size_px == 0 {
        return Err(Error::InvalidParameter("image size must be positive".into()));
    }
    if center.lat().abs() > MAX_MERCATOR_LAT {
        return Err(Error::InvalidParameter(format!(
            "latitude {} beyond the Web-Mercator limit",
            center.lat()
        )));
    }
    let dlon = 360.0 / (WEB_TILE_PX * (1u64 << zoom) as f64 * scale as f64);
    let dlat = -dlon * center.lat().to_radians().cos();
    GeoRef::new(center.lat(), center.lon(), size_px, size_px, dlat, dlon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KilnPoint {
    pub location: GeoPoint,
    pub class: KilnClass,
    pub confidence: f64,
    pub image_id: String,
}

/// Maps the box center through the image georef.
pub fn bbox_to_geo(georef: &GeoRef, b: &BBox, image_id: &str) -> Result<KilnPoint> {
    let (cx, cy) = b.center();
    Ok(KilnPoint {
        location: georef.pixel_to_geo(cx, cy)?.point,
        class: b.class,
        confidence: b.confidence,
        image_id: image_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub seed: GeoPoint,
    /// Input indices, ascending.
    pub members: Vec<usize>,
    /// Arithmetic mean of member coordinates.
    pub fetch_center: GeoPoint,
}

/// Single pass: each point joins the earliest-founded group whose seed is
/// within `group_radius_m`, otherwise it seeds a new group.
pub fn group_candidates(points: &[GeoPoint], group_radius_m: f64) -> Result<Vec<CandidateGroup>> {
    if !(group_radius_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "group radius must be positive, got {group_radius_m}"
        )));
    }
    let Some(&first) = points.first() else {
        return Ok(Vec::new());
    };
    let mut seeds = SpatialGridIndex::empty(first, group_radius_m)?;
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        match seeds.points_within_radius(p, group_radius_m).first() {
            Some(&g) => members[g].push(i),
            None => {
                seeds.insert(p);
                members.push(vec![i]);
            }
        }
    }
    members
        .into_iter()
        .enumerate()
        .map(|(g, m)| {
            let n = m.len() as f64;
            let (lat, lon) = m.iter().fold((0.0, 0.0), |(a, b), &i| {
                (a + points[i].lat(), b + points[i].lon())
            });
            Ok(CandidateGroup {
                seed: seeds.point(g).expect("one seed per group"),
                fetch_center: GeoPoint::new(lat / n, lon / n)?,
                members: m,
            })
        })
        .collect()
}

/// Removes points within 12 m of a higher-priority point. Priority is
/// descending confidence, then ascending image id; survivors keep their
/// input order.
pub fn cross_image_dedup(points: &[KilnPoint]) -> Vec<KilnPoint> {
    cross_image_dedup_radius(points, CROSS_IMAGE_DEDUP_M)
}

pub fn cross_image_dedup_radius(points: &[KilnPoint], radius_m: f64) -> Vec<KilnPoint> {
    let mut priority: Vec<usize> = (0..points.len()).collect();
    priority.sort_by(|&i, &j| {
        points[j]
            .confidence
            .total_cmp(&points[i].confidence)
            .then_with(|| points[i].image_id.cmp(&points[j].image_id))
            .then(i.cmp(&j))
    });
    let ranked: Vec<GeoPoint> = priority.iter().map(|&i| points[i].location).collect();
    let mut keep: Vec<usize> = dedup_radius_indices(&ranked, radius_m)
        .into_iter()
        .map(|k| priority[k])
        .collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| points[i].clone()).collect()
}

/// One static-map image worth of detections.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub georef: GeoRef,
    pub zoom: u8,
    pub scale: u8,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionLine {
    image_id: String,
    center_lat: f64,
    center_lon: f64,
    zoom: u8,
    scale: u8,
    size_px: u32,
    boxes: Vec<BBox>,
}

/// A line-level problem found while reading detections.
#[derive(Debug, Clone, PartialEq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct DetectionsFile {
    pub images: Vec<ImageDetections>,
    pub issues: Vec<LineIssue>,
    /// Boxes dropped because nothing remained after clipping to the image.
    pub clipped_away: usize,
}

/// Reads JSON-lines detections. Bad lines are collected in `issues`
/// rather than aborting the read; blank lines are skipped.
pub fn read_detections_jsonl<R: BufRead>(reader: R) -> std::io::Result<DetectionsFile> {
    let mut out = DetectionsFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_detection_line(&line) {
            Ok((img, dropped)) => {
                out.clipped_away += dropped;
                out.images.push(img);
            }
            Err(e) => out.issues.push(LineIssue {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn parse_detection_line(line: &str) -> Result<(ImageDetections, usize)> {
    let raw: DetectionLine = serde_json::from_str(line)?;
    let center = GeoPoint::new(raw.center_lat, raw.center_lon)?;
    let georef = static_map_georef(center, raw.zoom, raw.scale, raw.size_px)?;
    let side = raw.size_px as f64;
    let mut boxes = Vec::with_capacity(raw.boxes.len());
    let mut dropped = 0;
    for b in raw.boxes {
        if !(0.0..=1.0).contains(&b.confidence) {
            return Err(Error::InvalidParameter(format!(
                "confidence {} outside [0, 1]",
                b.confidence
            )));
        }
        match b.clamped(side, side) {
            Some(c) => boxes.push(c),
            None => dropped += 1,
        }
    }
    Ok((
        ImageDetections {
            image_id: raw.image_id,
            georef,
            zoom: raw.zoom,
            scale: raw.scale,
            boxes,
        },
        dropped,
    ))
}

/// Serialises one image back to its JSON-lines form.
pub fn detection_line(img: &ImageDetections, size_px: u32) -> Result<String> {
    let raw = DetectionLine {
        image_id: img.image_id.clone(),
        center_lat: img.georef.lat_center,
        center_lon: img.georef.lon_center,
        zoom: img.zoom,
        scale: img.scale,
        size_px,
        boxes: img.boxes.clone(),
    };
    Ok(serde_json::to_string(&raw)?)
}

/// NMS followed by center geolocation for a single image.
pub fn geolocate_image(img: &ImageDetections, iou_threshold: f64, max_det: usize) -> Result<Vec<KilnPoint>> {
    nms(&img.boxes, iou_threshold, max_det)
        .iter()
        .map(|b| bbox_to_geo(&img.georef, b, &img.image_id))
        .collect()
}

pub const KILN_POINTS_CSV_HEADER: [&str; 5] = ["class", "lat", "lon", "confidence", "image_id"];

pub fn write_kiln_points_csv<W: Write>(out: W, points: &[KilnPoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(KILN_POINTS_CSV_HEADER)?;
    for p in points {
        w.write_record([
            p.class.code().to_string(),
            format!("{:.6}", p.location.lat()),
            format!("{:.6}", p.location.lon()),
            format!("{:.6}", p.confidence),
            p.image_id.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<kiln points>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct KilnPointRow {
    class: u8,
    lat: f64,
    lon: f64,
    confidence: f64,
    image_id: String,
}

pub fn read_kiln_points_csv<R: Read>(input: R, path: &Path) -> Result<Vec<KilnPoint>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<KilnPointRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let err = |e: Error| Error::parse(path, line, e.to_string());
        out.push(KilnPoint {
            location: GeoPoint::new(row.lat, row.lon).map_err(err)?,
            class: KilnClass::try_from(row.class).map_err(err)?,
            confidence: row.confidence,
            image_id: row.image_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_distance;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64, conf: f64) -> BBox {
        BBox::new(x0, y0, x1, y1, KilnClass::Fcbk, conf).unwrap()
    }

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn static_map_deltas() {
        let g = static_map_georef(p(0.0, 0.0), 17, 2, 1280).unwrap();
        assert_eq!(g.dlon_per_px, 360.0 / (1u64 << 26) as f64);
        assert!((g.dlon_per_px - 5.364418e-6).abs() < 1e-12);
        assert_eq!(g.dlat_per_px, -g.dlon_per_px);

        let g1 = static_map_georef(p(31.0, 74.0), 17, 1, 640).unwrap();
        let g2 = static_map_georef(p(31.0, 74.0), 17, 2, 1280).unwrap();
        assert_eq!(g2.dlon_per_px * 2.0, g1.dlon_per_px);
        assert_eq!(g2.dlat_per_px * 2.0, g1.dlat_per_px);

        assert!(static_map_georef(p(85.1, 0.0), 17, 2, 1280).is_err());
        assert!(static_map_georef(p(0.0, 0.0), 23, 2, 1280).is_err());
        assert!(static_map_georef(p(0.0, 0.0), 17, 3, 1280).is_err());
        assert!(static_map_georef(p(0.0, 0.0), 17, 2, 0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0, 0.5);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0, 0.5)), 0.0);
        assert!((iou(&a, &b(1.0, 0.0, 3.0, 2.0, 0.5)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nms_examples() {
        let one = b(0.0, 0.0, 10.0, 10.0, 0.5);
        assert_eq!(nms(&[one], 0.7, 10), vec![one]);

        // 10x10 vs 10x9 nested: IoU 0.9
        let hi = b(0.0, 0.0, 10.0, 10.0, 0.8);
        let lo = b(0.0, 0.0, 10.0, 9.0, 0.7);
        assert!((iou(&hi, &lo) - 0.9).abs() < 1e-12);
        assert_eq!(nms(&[lo, hi], 0.7, 10), vec![hi]);

        let other_class = BBox { class: KilnClass::ZigZag, ..lo };
        assert_eq!(nms(&[other_class, hi], 0.7, 10), vec![hi, other_class]);
    }

    #[test]
    fn nms_caps_detections() {
        let boxes: Vec<_> = (0..15)
            .map(|i| b(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0, 0.5 + i as f64 * 0.01))
            .collect();
        let out = nms(&boxes, 0.7, 10);
        assert_eq!(out.len(), 10);
        assert_eq!(out[0].confidence, boxes[14].confidence);
    }

    #[test]
    fn bbox_center_mapping() {
        let g = static_map_georef(p(31.0, 74.0), 17, 2, 1280).unwrap();
        let centered = b(600.0, 600.0, 680.0, 680.0, 0.9);
        let k = bbox_to_geo(&g, &centered, "img").unwrap();
        assert_eq!(k.location, p(31.0, 74.0));

        let east = b(920.0, 600.0, 1000.0, 680.0, 0.9);
        let k = bbox_to_geo(&g, &east, "img").unwrap();
        assert!((k.location.lon() - 74.0017166).abs() < 1e-7);
        assert_eq!(k.location.lat(), 31.0);

        let west = b(280.0, 600.0, 360.0, 680.0, 0.9);
        let w = bbox_to_geo(&g, &west, "img").unwrap();
        assert!(((k.location.lon() + w.location.lon()) / 2.0 - 74.0).abs() < 1e-12);
    }

    fn east_of(origin: GeoPoint, meters: f64) -> GeoPoint {
        let lat = origin.lat().to_radians();
        let dlon = 2.0 * ((meters / (2.0 * crate::geo::EARTH_RADIUS_M)).sin() / lat.cos()).asin();
        p(origin.lat(), origin.lon() + dlon.to_degrees())
    }

    #[test]
    fn grouping_examples() {
        let a = p(31.0, 74.0);
        let near: Vec<_> = (0..5).map(|i| east_of(a, i as f64 * 10.0)).collect();
        assert_eq!(group_candidates(&near, 335.0).unwrap().len(), 1);

        let far = [a, east_of(a, 1000.0)];
        assert_eq!(group_candidates(&far, 335.0).unwrap().len(), 2);

        let chain = [a, east_of(a, 300.0), east_of(a, 600.0)];
        assert!((haversine_distance(chain[0], chain[2]) - 600.0).abs() < 1e-6);
        let groups = group_candidates(&chain, 335.0).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].members, vec![0, 1]);
        assert_eq!(groups[1].members, vec![2]);
        assert_eq!(groups[1].fetch_center, chain[2]);

        assert!(group_candidates(&chain, 0.0).is_err());
        assert!(group_candidates(&[], 335.0).unwrap().is_empty());
    }

    fn kp(loc: GeoPoint, conf: f64, image: &str) -> KilnPoint {
        KilnPoint {
            location: loc,
            class: KilnClass::Fcbk,
            confidence: conf,
            image_id: image.into(),
        }
    }

    #[test]
    fn split_kiln_dedup() {
        let a = p(31.0, 74.0);
        let out = cross_image_dedup(&[kp(a, 0.6, "img_a"), kp(east_of(a, 5.0), 0.9, "img_b")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].image_id, "img_b");

        let out = cross_image_dedup(&[kp(a, 0.6, "img_a"), kp(east_of(a, 13.0), 0.9, "img_b")]);
        assert_eq!(out.len(), 2);

        assert!(cross_image_dedup(&[]).is_empty());
    }

    #[test]
    fn equal_confidence_prefers_lower_image_id() {
        let a = p(31.0, 74.0);
        let out = cross_image_dedup(&[kp(a, 0.8, "img_b"), kp(east_of(a, 3.0), 0.8, "img_a")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].image_id, "img_a");
    }

    #[test]
    fn jsonl_reading() {
        let text = concat!(
            r#"{"image_id":"a","center_lat":31.0,"center_lon":74.0,"zoom":17,"scale":2,"size_px":1280,"boxes":[{"x_min":-5,"y_min":10,"x_max":40,"y_max":50,"class":0,"confidence":0.9},{"x_min":1300,"y_min":10,"x_max":1400,"y_max":50,"class":1,"confidence":0.4}]}"#,
            "\n\n",
            "not json\n",
            r#"{"image_id":"b","center_lat":31.0,"center_lon":74.0,"zoom":17,"scale":2,"size_px":1280,"boxes":[{"x_min":0,"y_min":0,"x_max":4,"y_max":4,"class":2,"confidence":0.9}]}"#,
            "\n"
        );
        let file = read_detections_jsonl(text.as_bytes()).unwrap();
        assert_eq!(file.images.len(), 1);
        assert_eq!(file.images[0].boxes.len(), 1);
        assert_eq!(file.images[0].boxes[0].x_min, 0.0);
        assert_eq!(file.clipped_away, 1);
        assert_eq!(file.issues.iter().map(|i| i.line).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn points_csv_round_trip() {
        let pts = vec![kp(p(31.5, 74.3), 0.875, "img_1")];
        let mut buf = Vec::new();
        write_kiln_points_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "class,lat,lon,confidence,image_id\n0,31.500000,74.300000,0.875000,img_1\n");
        let back = read_kiln_points_csv(buf.as_slice(), Path::new("x.csv")).unwrap();
        assert_eq!(back, pts);
    }
}
