//! Georeferenced RGB tiles: pixel/geographic conversion, AOI tiling and
//! PPM/PNG storage with a JSON georef sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Kilometers per degree used for AOI tiling (equatorial approximation).
pub const KM_PER_DEGREE: f64 = 111.32;

/// Ground sample distance of the Sentinel-2 RGB bands, meters.
pub const SENTINEL2_GSD_M: f64 = 10.0;

/// Georeferencing of one image: its center coordinate and signed
/// per-pixel degree deltas. Row index grows with `dlat_per_px`, so north-up
/// imagery has a negative `dlat_per_px`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoRef {
    pub lat_center: f64,
    pub lon_center: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub dlat_per_px: f64,
    pub dlon_per_px: f64,
}

/// A pixel mapped to geographic space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelLocation {
    pub point: GeoPoint,
    /// False when the pixel lies outside `[0, width] x [0, height]`.
    pub in_bounds: bool,
}

impl GeoRef {
    pub fn new(
        lat_center: f64,
        lon_center: f64,
        width_px: u32,
        height_px: u32,
        dlat_per_px: f64,
        dlon_per_px: f64,
    ) -> Result<Self> {
        let g = GeoRef {
            lat_center,
            lon_center,
            width_px,
            height_px,
            dlat_per_px,
            dlon_per_px,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidParameter(format!(
                "georef dimensions must be positive, got {}x{}",
                self.width_px, self.height_px
            )));
        }
        let finite_nonzero = |v: f64| v.is_finite() && v != 0.0;
        if !finite_nonzero(self.dlat_per_px) || !finite_nonzero(self.dlon_per_px) {
            return Err(Error::InvalidParameter(format!(
                "per-pixel deltas must be finite and non-zero, got dlat {} dlon {}",
                self.dlat_per_px, self.dlon_per_px
            )));
        }
        GeoPoint::new(self.lat_center, self.lon_center)?;
        Ok(())
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(self.lat_center, self.lon_center).expect("validated georef")
    }

    pub fn contains_pixel(&self, cx: f64, cy: f64) -> bool {
        (0.0..=self.width_px as f64).contains(&cx) && (0.0..=self.height_px as f64).contains(&cy)
    }

    /// Adds the pixel offset from the image center, scaled by the per-pixel
    /// deltas, to the center coordinate.
    pub fn pixel_to_geo(&self, cx: f64, cy: f64) -> Result<PixelLocation> {
        let lat = self.lat_center + (cy - self.height_px as f64 / 2.0) * self.dlat_per_px;
        let lon = self.lon_center + (cx - self.width_px as f64 / 2.0) * self.dlon_per_px;
        Ok(PixelLocation {
            point: GeoPoint::new(lat, lon)?,
            in_bounds: self.contains_pixel(cx, cy),
        })
    }

    pub fn geo_to_pixel(&self, p: GeoPoint) -> (f64, f64) {
        let cx = self.width_px as f64 / 2.0 + (p.lon() - self.lon_center) / self.dlon_per_px;
        let cy = self.height_px as f64 / 2.0 + (p.lat() - self.lat_center) / self.dlat_per_px;
        (cx, cy)
    }
}

pub fn pixel_to_geo(georef: &GeoRef, cx: f64, cy: f64) -> Result<PixelLocation> {
    georef.pixel_to_geo(cx, cy)
}

pub fn geo_to_pixel(georef: &GeoRef, p: GeoPoint) -> (f64, f64) {
    georef.geo_to_pixel(p)
}

/// Per-pixel deltas from two reference points separated by `pixel_span`
/// pixels along the image width. Returns `(dlat_per_px, dlon_per_px)`.
pub fn compute_per_pixel_deltas(a: GeoPoint, b: GeoPoint, pixel_span: u32) -> Result<(f64, f64)> {
    compute_axis_deltas(a, b, pixel_span, pixel_span)
}

/// Like [`compute_per_pixel_deltas`] but with separate pixel spans for the
/// longitude (x) and latitude (y) axes, for non-square rasters.
pub fn compute_axis_deltas(a: GeoPoint, b: GeoPoint, span_x: u32, span_y: u32) -> Result<(f64, f64)> {
    if span_x == 0 || span_y == 0 {
        return Err(Error::InvalidParameter("pixel span must be positive".into()));
    }
    let dlat = b.lat() - a.lat();
    let dlon = b.lon() - a.lon();
    if dlat == 0.0 && dlon == 0.0 {
        return Err(Error::InvalidParameter(
            "reference points are identical".into(),
        ));
    }
    Ok((dlat / span_y as f64, dlon / span_x as f64))
}

/// An 8-bit RGB raster with its georeferencing.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterTile {
    pub tile_id: String,
    pub georef: GeoRef,
    pixels: Vec<[u8; 3]>,
}

impl RasterTile {
    pub fn new(tile_id: impl Into<String>, georef: GeoRef, pixels: Vec<[u8; 3]>) -> Result<Self> {
        georef.validate()?;
        let expected = georef.width_px as usize * georef.height_px as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "pixel buffer has {} entries, georef expects {expected}",
                pixels.len()
            )));
        }
        Ok(RasterTile {
            tile_id: tile_id.into(),
            georef,
            pixels,
        })
    }

    /// Uniformly coloured tile.
    pub fn filled(tile_id: impl Into<String>, georef: GeoRef, rgb: [u8; 3]) -> Result<Self> {
        let n = georef.width_px as usize * georef.height_px as usize;
        Self::new(tile_id, georef, vec![rgb; n])
    }

    pub fn width(&self) -> u32 {
        self.georef.width_px
    }

    pub fn height(&self) -> u32 {
        self.georef.height_px
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width() as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width() as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }
}

/// Latitude/longitude bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl GeoBounds {
    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.south..=self.north).contains(&p.lat()) && (self.west..=self.east).contains(&p.lon())
    }
}

/// One cell of an [`AoiGrid`]. Edges are half-open: `[south, north)` x `[west, east)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiTile {
    pub tile_id: String,
    pub row: usize,
    pub col: usize,
    pub bounds: GeoBounds,
    pub georef: GeoRef,
}

impl AoiTile {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat() >= self.bounds.south
            && p.lat() < self.bounds.north
            && p.lon() >= self.bounds.west
            && p.lon() < self.bounds.east
    }
}

/// Regular tiling of an AOI; row 0 is the northernmost row.
#[derive(Debug, Clone)]
pub struct AoiGrid {
    pub bounds: GeoBounds,
    pub tile_size_km: f64,
    pub rows: usize,
    pub cols: usize,
    pub tile_dlat: f64,
    pub tile_dlon: f64,
    pub tiles: Vec<AoiTile>,
}

impl AoiGrid {
    /// Row-major index of the tile containing `p`, if any.
    pub fn locate(&self, p: GeoPoint) -> Option<usize> {
        let row = ((self.bounds.north - p.lat()) / self.tile_dlat).floor();
        let col = ((p.lon() - self.bounds.west) / self.tile_dlon).floor();
        if row < 0.0 || col < 0.0 {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        // floating rounding at an edge can put p one cell off; settle on the exact edges
        for r in row.saturating_sub(1)..=(row + 1).min(self.rows.saturating_sub(1)) {
            for c in col.saturating_sub(1)..=(col + 1).min(self.cols.saturating_sub(1)) {
                let i = r * self.cols + c;
                if self.tiles[i].contains(p) {
                    return Some(i);
                }
            }
        }
        None
    }
}

/// Tiles `bounds` into `tile_size_km` squares at Sentinel-2 resolution.
pub fn tile_aoi(bounds: GeoBounds, tile_size_km: f64) -> Result<AoiGrid> {
    tile_aoi_with_resolution(bounds, tile_size_km, SENTINEL2_GSD_M)
}

/// Degree sizes of a tile come from the km-per-degree factors at the AOI's
/// central latitude so that the lattice is regular; each tile's pixel
/// deltas then divide its extent by its pixel dimensions.
pub fn tile_aoi_with_resolution(bounds: GeoBounds, tile_size_km: f64, gsd_m: f64) -> Result<AoiGrid> {
    if !(bounds.north > bounds.south) || !(bounds.east > bounds.west) {
        return Err(Error::InvalidParameter(format!(
            "inverted bounding box: {bounds:?}"
        )));
    }
    GeoPoint::new(bounds.south, bounds.west)?;
    GeoPoint::new(bounds.north, bounds.east)?;
    if !(tile_size_km > 0.0) || !(gsd_m > 0.0) {
        return Err(Error::InvalidParameter(
            "tile size and ground sample distance must be positive".into(),
        ));
    }
    let mid_lat = (bounds.north + bounds.south) / 2.0;
    let tile_dlat = tile_size_km / KM_PER_DEGREE;
    let tile_dlon = tile_size_km / (KM_PER_DEGREE * mid_lat.to_radians().cos());
    let count = |extent: f64, step: f64| ((extent / step) - 1e-9).ceil().max(1.0) as usize;
    let rows = count(bounds.north - bounds.south, tile_dlat);
    let cols = count(bounds.east - bounds.west, tile_dlon);
    let side_px = ((tile_size_km * 1000.0 / gsd_m).round() as u32).max(1);

    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let north = bounds.north - row as f64 * tile_dlat;
        let south = bounds.north - (row + 1) as f64 * tile_dlat;
        for col in 0..cols {
            let west = bounds.west + col as f64 * tile_dlon;
            let east = bounds.west + (col + 1) as f64 * tile_dlon;
            let georef = GeoRef {
                lat_center: (north + south) / 2.0,
                lon_center: (west + east) / 2.0,
                width_px: side_px,
                height_px: side_px,
                dlat_per_px: -(north - south) / side_px as f64,
                dlon_per_px: (east - west) / side_px as f64,
            };
            tiles.push(AoiTile {
                tile_id: format!("r{row}_c{col}"),
                row,
                col,
                bounds: GeoBounds {
                    south,
                    west,
                    north,
                    east,
                },
                georef,
            });
        }
    }
    Ok(AoiGrid {
        bounds,
        tile_size_km,
        rows,
        cols,
        tile_dlat,
        tile_dlon,
        tiles,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    tile_id: String,
    #[serde(flatten)]
    georef: GeoRef,
}

/// `<dir>/<stem>.georef.json` for a raster at `<dir>/<stem>.<ext>`.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    let stem = raster
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    raster.with_file_name(format!("{stem}.georef.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RasterFormat {
    Ppm,
    Png,
}

fn format_of(path: &Path) -> Result<RasterFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") => Ok(RasterFormat::Ppm),
        Some("png") => Ok(RasterFormat::Png),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected .ppm or .png",
            path.display()
        ))),
    }
}

/// True for paths `load_tile` can read.
pub fn is_raster_path(path: &Path) -> bool {
    format_of(path).is_ok()
}

pub fn load_tile(path: &Path) -> Result<RasterTile> {
    let format = format_of(path)?;
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Err(Error::MissingSidecar(sidecar));
    }
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;

    let (w, h, data) = match format {
        RasterFormat::Ppm => read_ppm(path)?,
        RasterFormat::Png => read_png(path)?,
    };
    if w != meta.georef.width_px || h != meta.georef.height_px {
        return Err(Error::DimensionMismatch {
            raster_w: w,
            raster_h: h,
            georef_w: meta.georef.width_px,
            georef_h: meta.georef.height_px,
        });
    }
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    RasterTile::new(meta.tile_id, meta.georef, pixels)
}

pub fn store_tile(tile: &RasterTile, path: &Path) -> Result<()> {
    let format = format_of(path)?;
    let data: Vec<u8> = tile.pixels.iter().flatten().copied().collect();
    match format {
        RasterFormat::Ppm => write_ppm(path, tile.width(), tile.height(), &data)?,
        RasterFormat::Png => write_png(path, tile.width(), tile.height(), &data)?,
    }
    let sidecar = sidecar_path(path);
    let meta = Sidecar {
        tile_id: tile.tile_id.clone(),
        georef: tile.georef,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

fn read_ppm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::UnsupportedFormat(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 PPM is supported"));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| bad("invalid header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("unsupported bit depth (maxval must be 255)"));
    }
    // single whitespace byte separates header from raster data
    pos += 1;
    let len = w as usize * h as usize * 3;
    if bytes.len() < pos + len {
        return Err(bad("truncated pixel data"));
    }
    Ok((w, h, bytes[pos..pos + len].to_vec()))
}

fn write_ppm(path: &Path, w: u32, h: u32, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")
        .and_then(|_| out.write_all(data))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_png(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::UnsupportedFormat(format!("{}: {msg}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.line_size * info.height as usize);
    let data = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|c| [c[0], c[1], c[2]])
            .collect(),
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    Ok((info.width, info.height, data))
}

fn write_png(path: &Path, w: u32, h: u32, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w, h);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}
