//! Counts of schools, hospitals and residents near each kiln.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detect::LineIssue;
use crate::error::{Error, Result};
use crate::geo::{build_index, haversine_distance, GeoPoint, SpatialGridIndex};

pub const DEFAULT_EXPOSURE_RADIUS_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmenityKind {
    School,
    Hospital,
}

impl AmenityKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "school" => Some(AmenityKind::School),
            "hospital" => Some(AmenityKind::Hospital),
            _ => None,
        }
    }
}

impl fmt::Display for AmenityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AmenityKind::School => "school",
            AmenityKind::Hospital => "hospital",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmenityPoint {
    pub kind: AmenityKind,
    pub location: GeoPoint,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationCell {
    pub location: GeoPoint,
    pub population: f64,
}

/// Result of reading a point file: parsed rows plus rejected ones.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub points: Vec<T>,
    /// Row problems; `line` is the file line for CSV and the 1-based
    /// feature number for GeoJSON.
    pub issues: Vec<LineIssue>,
    pub unknown_kinds: usize,
}

impl<T> Default for Loaded<T> {
    fn default() -> Self {
        Loaded {
            points: Vec::new(),
            issues: Vec::new(),
            unknown_kinds: 0,
        }
    }
}

fn is_geojson(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("geojson") | Some("json")
    )
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

type CsvRows = (Vec<(usize, GeoPoint, csv::StringRecord)>, csv::StringRecord, Vec<LineIssue>);
type GeoJsonRows = (Vec<(usize, GeoPoint, serde_json::Map<String, Value>)>, Vec<LineIssue>);

/// `(line, point, fields)` per data row, the header, and issues for bad rows.
fn csv_rows(text: &str, required: &[&str]) -> Result<CsvRows> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    for col in required {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(Error::parse("<csv>", 1, format!("missing column {col}")));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (lat_i, lon_i) = (col("lat").unwrap(), col("lon").unwrap());
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| rec.get(i).and_then(|s| s.trim().parse::<f64>().ok());
        match (num(lat_i), num(lon_i)) {
            (Some(lat), Some(lon)) => match GeoPoint::new(lat, lon) {
                Ok(p) => rows.push((line, p, rec)),
                Err(e) => issues.push(LineIssue {
                    line,
                    message: e.to_string(),
                }),
            },
            _ => issues.push(LineIssue {
                line,
                message: "unparseable lat/lon".into(),
            }),
        }
    }
    Ok((rows, headers, issues))
}

/// `(feature_no, point, properties)` per Point feature.
fn geojson_points(text: &str) -> Result<GeoJsonRows> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::UnsupportedFormat("GeoJSON must be a FeatureCollection".into()))?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let no = i + 1;
        let geom = f.get("geometry");
        if geom.and_then(|g| g.get("type")).and_then(Value::as_str) != Some("Point") {
            issues.push(LineIssue {
                line: no,
                message: "not a Point feature".into(),
            });
            continue;
        }
        let coords = geom
            .and_then(|g| g.get("coordinates"))
            .and_then(Value::as_array)
            .filter(|c| c.len() >= 2)
            .and_then(|c| Some((c[0].as_f64()?, c[1].as_f64()?)));
        let Some((lon, lat)) = coords else {
            issues.push(LineIssue {
                line: no,
                message: "bad coordinates".into(),
            });
            continue;
        };
        match GeoPoint::new(lat, lon) {
            Ok(p) => {
                let props = f
                    .get("properties")
                    .and_then(Value::as_object)
                    .cloned()
                    .unwrap_or_default();
                out.push((no, p, props));
            }
            Err(e) => issues.push(LineIssue {
                line: no,
                message: e.to_string(),
            }),
        }
    }
    Ok((out, issues))
}

/// Reads amenities from `kind,lat,lon,name` CSV or a GeoJSON
/// FeatureCollection of Points with `kind`/`name` properties.
pub fn load_amenities(path: &Path) -> Result<Loaded<AmenityPoint>> {
    let text = read_text(path)?;
    let mut out = Loaded::default();
    if is_geojson(path) {
        let (rows, issues) = geojson_points(&text)?;
        out.issues = issues;
        for (_, location, props) in rows {
            match props.get("kind").and_then(Value::as_str).and_then(AmenityKind::parse) {
                Some(kind) => out.points.push(AmenityPoint {
                    kind,
                    location,
                    name: props.get("name").and_then(Value::as_str).map(str::to_string),
                }),
                None => out.unknown_kinds += 1,
            }
        }
    } else {
        let (rows, headers, issues) = csv_rows(&text, &["kind", "lat", "lon"]).map_err(|e| relabel(e, path))?;
        out.issues = issues;
        let kind_i = headers.iter().position(|h| h.trim() == "kind").unwrap();
        let name_i = headers.iter().position(|h| h.trim() == "name");
        for (_, location, rec) in rows {
            match rec.get(kind_i).and_then(AmenityKind::parse) {
                Some(kind) => out.points.push(AmenityPoint {
                    kind,
                    location,
                    name: name_i
                        .and_then(|i| rec.get(i))
                        .filter(|s| !s.is_empty())
                        .map(str::to_string),
                }),
                None => out.unknown_kinds += 1,
            }
        }
    }
    if out.unknown_kinds > 0 {
        log::warn!("{}: skipped {} amenities of unknown kind", path.display(), out.unknown_kinds);
    }
    Ok(out)
}

/// Reads population cells from `lat,lon,population` CSV or GeoJSON Points
/// with a `population` property.
pub fn load_population(path: &Path) -> Result<Loaded<PopulationCell>> {
    let text = read_text(path)?;
    let mut out = Loaded::default();
    let push = |line: usize, location: GeoPoint, pop: Option<f64>, out: &mut Loaded<PopulationCell>| match pop {
        Some(population) if population >= 0.0 && population.is_finite() => {
            out.points.push(PopulationCell { location, population })
        }
        _ => out.issues.push(LineIssue {
            line,
            message: "population must be a non-negative number".into(),
        }),
    };
    if is_geojson(path) {
        let (rows, issues) = geojson_points(&text)?;
        out.issues = issues;
        for (no, location, props) in rows {
            push(no, location, props.get("population").and_then(Value::as_f64), &mut out);
        }
    } else {
        let (rows, headers, issues) = csv_rows(&text, &["lat", "lon", "population"]).map_err(|e| relabel(e, path))?;
        out.issues = issues;
        let pop_i = headers.iter().position(|h| h.trim() == "population").unwrap();
        for (line, location, rec) in rows {
            let pop = rec.get(pop_i).and_then(|s| s.trim().parse::<f64>().ok());
            push(line, location, pop, &mut out);
        }
    }
    Ok(out)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message, .. } => Error::parse(path, line, message),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureResult {
    pub kiln_id: u64,
    pub schools_1km: usize,
    pub hospitals_1km: usize,
    pub population_1km: f64,
    /// Indices of the population cells counted for this kiln.
    #[serde(skip)]
    pub cells: Vec<(usize, f64)>,
}

/// Per-kiln amenity counts and population sums within `radius_m`, ordered
/// by kiln id.
pub fn exposure_for_kilns(
    kilns: &[(u64, GeoPoint)],
    amenities: &[AmenityPoint],
    cells: &[PopulationCell],
    radius_m: f64,
) -> Result<Vec<ExposureResult>> {
    if !(radius_m > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius_m}")));
    }
    let amenity_pts: Vec<GeoPoint> = amenities.iter().map(|a| a.location).collect();
    let cell_pts: Vec<GeoPoint> = cells.iter().map(|c| c.location).collect();
    let amenity_index = build_index(&amenity_pts, radius_m)?;
    let cell_index = build_index(&cell_pts, radius_m)?;

    let mut results: Vec<ExposureResult> = kilns
        .par_iter()
        .map(|&(kiln_id, loc)| exposure_at(kiln_id, loc, amenities, &amenity_index, cells, &cell_index, radius_m))
        .collect();
    results.sort_by_key(|r| r.kiln_id);
    Ok(results)
}

fn exposure_at(
    kiln_id: u64,
    loc: GeoPoint,
    amenities: &[AmenityPoint],
    amenity_index: &SpatialGridIndex,
    cells: &[PopulationCell],
    cell_index: &SpatialGridIndex,
    radius_m: f64,
) -> ExposureResult {
    let mut schools = 0;
    let mut hospitals = 0;
    for id in amenity_index.points_within_radius(loc, radius_m) {
        match amenities[id].kind {
            AmenityKind::School => schools += 1,
            AmenityKind::Hospital => hospitals += 1,
        }
    }
    let near: Vec<(usize, f64)> = cell_index
        .points_within_radius(loc, radius_m)
        .into_iter()
        .map(|id| (id, cells[id].population))
        .collect();
    ExposureResult {
        kiln_id,
        schools_1km: schools,
        hospitals_1km: hospitals,
        population_1km: near.iter().map(|&(_, p)| p).sum(),
        cells: near,
    }
}

/// O(n*m) reference computation of the same counts.
pub fn exposure_brute_force(
    kilns: &[(u64, GeoPoint)],
    amenities: &[AmenityPoint],
    cells: &[PopulationCell],
    radius_m: f64,
) -> Vec<ExposureResult> {
    let mut out: Vec<ExposureResult> = kilns
        .iter()
        .map(|&(kiln_id, loc)| {
            let within = |p: GeoPoint| haversine_distance(loc, p) <= radius_m;
            let count = |k: AmenityKind| amenities.iter().filter(|a| a.kind == k && within(a.location)).count();
            let near: Vec<(usize, f64)> = cells
                .iter()
                .enumerate()
                .filter(|(_, c)| within(c.location))
                .map(|(i, c)| (i, c.population))
                .collect();
            ExposureResult {
                kiln_id,
                schools_1km: count(AmenityKind::School),
                hospitals_1km: count(AmenityKind::Hospital),
                population_1km: near.iter().map(|&(_, p)| p).sum(),
                cells: near,
            }
        })
        .collect();
    out.sort_by_key(|r| r.kiln_id);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    pub kilns: usize,
    pub pct_kilns_with_school: f64,
    pub pct_kilns_with_hospital: f64,
    /// Sum of per-kiln totals; a cell near two kilns counts twice.
    pub population_raw: f64,
    /// Each cell counted once however many kilns it is near.
    pub population_dedup: f64,
}

pub fn exposure_summary(results: &[ExposureResult]) -> Result<ExposureSummary> {
    if results.is_empty() {
        return Err(Error::EmptyInput("exposure results"));
    }
    let n = results.len() as f64;
    let pct = |f: fn(&ExposureResult) -> bool| 100.0 * results.iter().filter(|r| f(r)).count() as f64 / n;
    let unique: BTreeMap<usize, f64> = results.iter().flat_map(|r| r.cells.iter().copied()).collect();
    Ok(ExposureSummary {
        kilns: results.len(),
        pct_kilns_with_school: pct(|r| r.schools_1km > 0),
        pct_kilns_with_hospital: pct(|r| r.hospitals_1km > 0),
        population_raw: results.iter().map(|r| r.population_1km).sum(),
        population_dedup: unique.values().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::EARTH_RADIUS_M;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn north_of(o: GeoPoint, m: f64) -> GeoPoint {
        p(o.lat() + (m / EARTH_RADIUS_M).to_degrees(), o.lon())
    }

    fn amenity(kind: AmenityKind, location: GeoPoint) -> AmenityPoint {
        AmenityPoint {
            kind,
            location,
            name: None,
        }
    }

    #[test]
    fn planted_distances() {
        let k = p(31.0, 74.0);
        let school = north_of(k, 999.0);
        let hospital = north_of(k, 1001.0);
        assert!((haversine_distance(k, school) - 999.0).abs() < 1e-6);
        let r = exposure_for_kilns(
            &[(7, k)],
            &[amenity(AmenityKind::School, school), amenity(AmenityKind::Hospital, hospital)],
            &[],
            1000.0,
        )
        .unwrap();
        assert_eq!((r[0].schools_1km, r[0].hospitals_1km), (1, 0));
        assert_eq!(r[0].population_1km, 0.0);
    }

    #[test]
    fn nothing_nearby() {
        let r = exposure_for_kilns(&[(1, p(31.0, 74.0))], &[], &[], 1000.0).unwrap();
        assert_eq!((r[0].schools_1km, r[0].hospitals_1km, r[0].population_1km), (0, 0, 0.0));
        assert!(exposure_for_kilns(&[], &[], &[], 0.0).is_err());
    }

    #[test]
    fn summary_examples() {
        let mk = |id, schools, cells: Vec<(usize, f64)>| ExposureResult {
            kiln_id: id,
            schools_1km: schools,
            hospitals_1km: 0,
            population_1km: cells.iter().map(|c| c.1).sum(),
            cells,
        };
        let all = vec![mk(1, 1, vec![]), mk(2, 3, vec![])];
        assert_eq!(exposure_summary(&all).unwrap().pct_kilns_with_school, 100.0);

        let quarter = vec![mk(1, 1, vec![]), mk(2, 0, vec![]), mk(3, 0, vec![]), mk(4, 0, vec![])];
        assert_eq!(exposure_summary(&quarter).unwrap().pct_kilns_with_school, 25.0);

        assert!(exposure_summary(&[]).is_err());
    }

    #[test]
    fn shared_cell_is_double_counted_raw_only() {
        let a = p(31.0, 74.0);
        let b = north_of(a, 600.0);
        let cell = PopulationCell {
            location: north_of(a, 300.0),
            population: 250.0,
        };
        let r = exposure_for_kilns(&[(1, a), (2, b)], &[], &[cell], 1000.0).unwrap();
        let s = exposure_summary(&r).unwrap();
        assert_eq!(s.population_raw, 500.0);
        assert_eq!(s.population_dedup, 250.0);
    }

    #[test]
    fn csv_loading_reports_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("amenities.csv");
        std::fs::write(
            &path,
            "kind,lat,lon,name\nschool,31.0,74.0,A\nhospital,31.1,74.1,\nschool,95.0,74.0,bad\nschool,31.2,74.2,C\nmosque,31.0,74.0,X\n",
        )
        .unwrap();
        let loaded = load_amenities(&path).unwrap();
        assert_eq!(loaded.points.len(), 3);
        assert_eq!(loaded.issues.len(), 1);
        assert_eq!(loaded.issues[0].line, 4);
        assert_eq!(loaded.unknown_kinds, 1);
        assert_eq!(loaded.points[0].name.as_deref(), Some("A"));
        assert_eq!(loaded.points[1].name, None);

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "kind,lat,lon,name\n").unwrap();
        assert!(load_amenities(&empty).unwrap().points.is_empty());

        assert!(load_amenities(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn geojson_matches_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("a.csv");
        std::fs::write(&csv_path, "kind,lat,lon,name\nschool,31.0,74.0,A\nhospital,31.1,74.1,B\n").unwrap();
        let gj_path = dir.path().join("a.geojson");
        std::fs::write(
            &gj_path,
            r#"{"type":"FeatureCollection","features":[
                {"type":"Feature","geometry":{"type":"Point","coordinates":[74.0,31.0]},"properties":{"kind":"school","name":"A"}},
                {"type":"Feature","geometry":{"type":"Point","coordinates":[74.1,31.1]},"properties":{"kind":"hospital","name":"B"}}
            ]}"#,
        )
        .unwrap();
        assert_eq!(load_amenities(&csv_path).unwrap().points, load_amenities(&gj_path).unwrap().points);
    }

    #[test]
    fn population_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        std::fs::write(&path, "lat,lon,population\n31.0,74.0,120.5\n31.0,74.001,-3\n").unwrap();
        let loaded = load_population(&path).unwrap();
        assert_eq!(loaded.points.len(), 1);
        assert_eq!(loaded.issues[0].line, 3);
    }
}
