//! The kiln dataset and its CSV / GeoJSON encodings.
//!
//! All writers emit UTF-8 with LF line endings, `.` decimals and records in
//! ascending id order, so identical datasets serialise to identical bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detect::KilnClass;
use crate::emissions::{EmissionProfile, Pollutant, PollutantEmission};
use crate::error::{Error, Result};
use crate::exposure::ExposureResult;
use crate::geo::GeoPoint;

pub const CRS: &str = "WGS84";

#[derive(Debug, Clone, PartialEq)]
pub struct KilnRecord {
    pub id: u64,
    pub kiln_type: KilnClass,
    pub location: GeoPoint,
    pub district: Option<String>,
    pub emissions: Option<EmissionProfile>,
    pub exposure: Option<ExposureResult>,
}

impl KilnRecord {
    pub fn new(id: u64, kiln_type: KilnClass, location: GeoPoint) -> Self {
        KilnRecord {
            id,
            kiln_type,
            location,
            district: None,
            emissions: None,
            exposure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub pipeline_version: String,
    pub parameter_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KilnDataset {
    records: Vec<KilnRecord>,
    pub provenance: Provenance,
}

impl KilnDataset {
    /// Sorts by id; duplicate ids are rejected.
    pub fn new(mut records: Vec<KilnRecord>, provenance: Provenance) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidParameter(format!("duplicate kiln id {}", w[0].id)));
        }
        Ok(KilnDataset { records, provenance })
    }

    pub fn records(&self) -> &[KilnRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn crs(&self) -> &'static str {
        CRS
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub const MINIMAL_CSV_HEADER: &str = "kiln_type,lat,lon";

/// `kiln_type,lat,lon` rows with 6-decimal coordinates.
pub fn write_minimal_csv_to<W: Write>(mut out: W, dataset: &KilnDataset) -> std::io::Result<()> {
    writeln!(out, "{MINIMAL_CSV_HEADER}")?;
    for r in &dataset.records {
        writeln!(
            out,
            "{},{:.6},{:.6}",
            r.kiln_type.code(),
            r.location.lat(),
            r.location.lon()
        )?;
    }
    out.flush()
}

pub fn write_minimal_csv(dataset: &KilnDataset, path: &Path) -> Result<()> {
    write_minimal_csv_to(create(path)?, dataset).map_err(|e| Error::io(path, e))
}

/// Ids are assigned from 1 in row order.
pub fn read_minimal_csv(path: &Path) -> Result<KilnDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_minimal_csv(&text, path)
}

pub fn parse_minimal_csv(text: &str, path: &Path) -> Result<KilnDataset> {
    let mut records = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == MINIMAL_CSV_HEADER => {}
        Some((i, other)) => {
            return Err(Error::parse(path, i + 1, format!("expected header {MINIMAL_CSV_HEADER:?}, got {other:?}")))
        }
        None => return KilnDataset::new(Vec::new(), Provenance::default()),
    }
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, line_no, format!("expected 3 columns, found {}", fields.len())));
        }
        let kiln_type = fields[0]
            .parse::<u8>()
            .map_err(|_| Error::parse(path, line_no, format!("kiln_type {:?} is not 0 or 1", fields[0])))
            .and_then(|v| {
                KilnClass::try_from(v)
                    .map_err(|_| Error::parse(path, line_no, format!("kiln_type {v} is not 0 or 1")))
            })?;
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("{what} {s:?} is not a number")))
        };
        let (lat, lon) = (num(fields[1], "lat")?, num(fields[2], "lon")?);
        let location = GeoPoint::new(lat, lon).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        records.push(KilnRecord::new(records.len() as u64 + 1, kiln_type, location));
    }
    KilnDataset::new(records, Provenance::default())
}

pub const EXTENDED_CSV_HEADER: [&str; 16] = [
    "id",
    "kiln_type",
    "lat",
    "lon",
    "district",
    "pm10_kg_day",
    "pm25_kg_day",
    "sox_kg_day",
    "nox_kg_day",
    "pm10_kg_yr",
    "pm25_kg_yr",
    "sox_kg_yr",
    "nox_kg_yr",
    "schools_1km",
    "hospitals_1km",
    "population_1km",
];

fn fmt_population(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

pub fn write_extended_csv_to<W: Write>(out: W, dataset: &KilnDataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(EXTENDED_CSV_HEADER)?;
    for r in &dataset.records {
        let mut row = vec![
            r.id.to_string(),
            r.kiln_type.code().to_string(),
            format!("{:.6}", r.location.lat()),
            format!("{:.6}", r.location.lon()),
            r.district.clone().unwrap_or_default(),
        ];
        for seasonal in [false, true] {
            for p in Pollutant::ALL {
                row.push(match &r.emissions {
                    Some(e) if seasonal => format!("{:.2}", e.seasonal_kg(p)),
                    Some(e) => format!("{:.2}", e.daily_kg(p)),
                    None => String::new(),
                });
            }
        }
        match &r.exposure {
            Some(x) => {
                row.push(x.schools_1km.to_string());
                row.push(x.hospitals_1km.to_string());
                row.push(fmt_population(x.population_1km));
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<extended csv>", e))?;
    Ok(())
}

pub fn write_extended_csv(dataset: &KilnDataset, path: &Path) -> Result<()> {
    write_extended_csv_to(create(path)?, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    crs: Option<Value>,
    #[serde(default)]
    provenance: Option<Provenance>,
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    geometry: Geometry,
    properties: Properties,
}

#[derive(Serialize, Deserialize)]
struct Geometry {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Value,
}

#[derive(Serialize, Deserialize)]
struct Properties {
    id: u64,
    kiln_type: u8,
    district: Option<String>,
    daily_brick_kg: Option<f64>,
    working_days: Option<u32>,
    pm10_kg_day: Option<f64>,
    pm25_kg_day: Option<f64>,
    sox_kg_day: Option<f64>,
    nox_kg_day: Option<f64>,
    pm10_kg_yr: Option<f64>,
    pm25_kg_yr: Option<f64>,
    sox_kg_yr: Option<f64>,
    nox_kg_yr: Option<f64>,
    schools_1km: Option<usize>,
    hospitals_1km: Option<usize>,
    population_1km: Option<f64>,
}

impl Properties {
    fn from_record(r: &KilnRecord) -> Self {
        let e = r.emissions.as_ref();
        let daily = |p| e.map(|e| e.daily_kg(p));
        let seasonal = |p| e.map(|e| e.seasonal_kg(p));
        let x = r.exposure.as_ref();
        Properties {
            id: r.id,
            kiln_type: r.kiln_type.code(),
            district: r.district.clone(),
            daily_brick_kg: e.map(|e| e.daily_brick_mass_kg),
            working_days: e.map(|e| e.working_days),
            pm10_kg_day: daily(Pollutant::Pm10),
            pm25_kg_day: daily(Pollutant::Pm25),
            sox_kg_day: daily(Pollutant::Sox),
            nox_kg_day: daily(Pollutant::Nox),
            pm10_kg_yr: seasonal(Pollutant::Pm10),
            pm25_kg_yr: seasonal(Pollutant::Pm25),
            sox_kg_yr: seasonal(Pollutant::Sox),
            nox_kg_yr: seasonal(Pollutant::Nox),
            schools_1km: x.map(|x| x.schools_1km),
            hospitals_1km: x.map(|x| x.hospitals_1km),
            population_1km: x.map(|x| x.population_1km),
        }
    }

    fn emissions(&self, kiln_type: KilnClass) -> Option<EmissionProfile> {
        let pairs = [
            (Pollutant::Pm10, self.pm10_kg_day, self.pm10_kg_yr),
            (Pollutant::Pm25, self.pm25_kg_day, self.pm25_kg_yr),
            (Pollutant::Sox, self.sox_kg_day, self.sox_kg_yr),
            (Pollutant::Nox, self.nox_kg_day, self.nox_kg_yr),
        ];
        let mut pollutants = BTreeMap::new();
        for (p, d, s) in pairs {
            pollutants.insert(
                p,
                PollutantEmission {
                    daily_kg: d?,
                    seasonal_kg: s?,
                },
            );
        }
        Some(EmissionProfile {
            kiln_type: Some(kiln_type),
            daily_brick_mass_kg: self.daily_brick_kg?,
            working_days: self.working_days?,
            pollutants,
        })
    }

    fn exposure(&self) -> Option<ExposureResult> {
        Some(ExposureResult {
            kiln_id: self.id,
            schools_1km: self.schools_1km?,
            hospitals_1km: self.hospitals_1km?,
            population_1km: self.population_1km?,
            cells: Vec::new(),
        })
    }
}

/// FeatureCollection of Points, `[lon, lat]` order, every attribute as a property.
pub fn write_geojson_to<W: Write>(mut out: W, dataset: &KilnDataset) -> Result<()> {
    let fc = FeatureCollection {
        kind: "FeatureCollection".into(),
        crs: Some(serde_json::json!({
            "type": "name",
            "properties": { "name": "urn:ogc:def:crs:OGC:1.3:CRS84" }
        })),
        provenance: Some(dataset.provenance.clone()),
        features: dataset
            .records
            .iter()
            .map(|r| Feature {
                kind: "Feature".into(),
                geometry: Geometry {
                    kind: "Point".into(),
                    coordinates: serde_json::json!([round6(r.location.lon()), round6(r.location.lat())]),
                },
                properties: Properties::from_record(r),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut out, &fc)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<geojson>", e))
}

pub fn write_geojson(dataset: &KilnDataset, path: &Path) -> Result<()> {
    write_geojson_to(create(path)?, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_geojson(path: &Path) -> Result<KilnDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geojson(&text, path)
}

pub fn parse_geojson(text: &str, path: &Path) -> Result<KilnDataset> {
    let fc: FeatureCollection = serde_json::from_str(text)?;
    if fc.kind != "FeatureCollection" {
        return Err(Error::UnsupportedFormat(format!("expected FeatureCollection, got {}", fc.kind)));
    }
    let mut records = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.into_iter().enumerate() {
        let no = i + 1;
        if f.geometry.kind != "Point" {
            return Err(Error::parse(path, no, format!("feature geometry is {}, expected Point", f.geometry.kind)));
        }
        let coords: Vec<f64> = serde_json::from_value(f.geometry.coordinates)
            .map_err(|e| Error::parse(path, no, e.to_string()))?;
        if coords.len() < 2 {
            return Err(Error::parse(path, no, "Point needs two coordinates"));
        }
        let location = GeoPoint::new(coords[1], coords[0]).map_err(|e| Error::parse(path, no, e.to_string()))?;
        let kiln_type = KilnClass::try_from(f.properties.kiln_type).map_err(|e| Error::parse(path, no, e.to_string()))?;
        records.push(KilnRecord {
            id: f.properties.id,
            kiln_type,
            location,
            district: f.properties.district.clone(),
            emissions: f.properties.emissions(kiln_type),
            exposure: f.properties.exposure(),
        });
    }
    KilnDataset::new(records, fc.provenance.unwrap_or_default())
}

/// Rings of `(lon, lat)`; the first is the outer boundary.
type Polygon = Vec<Vec<(f64, f64)>>;

/// Named administrative polygons for tagging kilns with a district.
#[derive(Debug, Clone, Default)]
pub struct DistrictBoundaries {
    /// `(name, polygons)`; each polygon is a list of rings of `(lon, lat)`.
    districts: Vec<(String, Vec<Polygon>)>,
}

impl DistrictBoundaries {
    /// Polygon/MultiPolygon features named by a `district` or `name` property.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::UnsupportedFormat("boundary file must be a FeatureCollection".into()))?;
        let ring = |v: &Value| -> Option<Vec<(f64, f64)>> {
            v.as_array()?
                .iter()
                .map(|c| Some((c.get(0)?.as_f64()?, c.get(1)?.as_f64()?)))
                .collect()
        };
        let polygon = |v: &Value| -> Option<Vec<Vec<(f64, f64)>>> { v.as_array()?.iter().map(ring).collect() };
        let mut districts = Vec::new();
        for f in features {
            let props = f.get("properties");
            let name = props
                .and_then(|p| p.get("district").or_else(|| p.get("name")))
                .and_then(Value::as_str);
            let geom = f.get("geometry");
            let kind = geom.and_then(|g| g.get("type")).and_then(Value::as_str);
            let coords = geom.and_then(|g| g.get("coordinates"));
            let (Some(name), Some(coords)) = (name, coords) else { continue };
            let polys = match kind {
                Some("Polygon") => polygon(coords).map(|p| vec![p]),
                Some("MultiPolygon") => coords.as_array().and_then(|a| a.iter().map(polygon).collect()),
                _ => None,
            };
            match polys {
                Some(p) => districts.push((name.to_string(), p)),
                None => log::warn!("skipping boundary feature {name:?}: unsupported geometry"),
            }
        }
        Ok(DistrictBoundaries { districts })
    }

    /// First district whose polygon contains `p` (even-odd rule over rings).
    pub fn district_for(&self, p: GeoPoint) -> Option<&str> {
        let (x, y) = (p.lon(), p.lat());
        self.districts
            .iter()
            .find(|(_, polys)| {
                polys.iter().any(|rings| {
                    rings.iter().filter(|ring| ring_crossings_odd(ring, x, y)).count() % 2 == 1
                })
            })
            .map(|(name, _)| name.as_str())
    }
}

fn ring_crossings_odd(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}
