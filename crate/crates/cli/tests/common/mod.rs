#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kiln_atlas::detect::{detection_line, static_map_georef, BBox, ImageDetections, KilnClass};
use kiln_atlas::forest::{write_training_csv, LabelSchema, LabeledPixel, LabeledPixelSet};
use kiln_atlas::raster::{store_tile, GeoRef, RasterTile};
use kiln_atlas::GeoPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// One well-separated colour per class; class 1 is the kiln class.
pub const PALETTE: [[u8; 3]; 10] = [
    [180, 60, 50],
    [40, 130, 50],
    [200, 200, 190],
    [30, 60, 160],
    [120, 90, 60],
    [230, 210, 80],
    [90, 90, 90],
    [20, 20, 20],
    [150, 170, 220],
    [240, 140, 200],
];

pub const KILN_RGB: [u8; 3] = PALETTE[0];
pub const BACKGROUND_RGB: [u8; 3] = PALETTE[1];

pub fn colour(class: u8) -> [u8; 3] {
    PALETTE[class as usize - 1]
}

/// `per_class` pixels per class, each jittered by up to +/-12 per channel.
pub fn separable_pixels(per_class: usize, seed: u64) -> LabeledPixelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(per_class * 10);
    for class in 1..=10u8 {
        let base = colour(class);
        for _ in 0..per_class {
            let j = |v: u8, rng: &mut ChaCha8Rng| (v as i32 + rng.gen_range(-12..=12)).clamp(0, 255) as u8;
            rows.push(LabeledPixel {
                r: j(base[0], &mut rng),
                g: j(base[1], &mut rng),
                b: j(base[2], &mut rng),
                class,
            });
        }
    }
    LabeledPixelSet::new(rows, &LabelSchema::default()).unwrap()
}

pub fn write_training(dir: &Path, per_class: usize) -> PathBuf {
    let path = dir.join("training.csv");
    write_training_csv(&path, &separable_pixels(per_class, 11)).unwrap();
    path
}

/// North-up georef with square pixels of `m_per_px` metres.
pub fn tile_georef(lat: f64, lon: f64, w: u32, h: u32, m_per_px: f64) -> GeoRef {
    let dlat = m_per_px / METERS_PER_DEGREE;
    let dlon = dlat / lat.to_radians().cos();
    GeoRef::new(lat, lon, w, h, -dlat, dlon).unwrap()
}

/// Background tile with kiln-coloured rectangles `(x, y, w, h)`.
pub fn planted_tile(tile_id: &str, georef: GeoRef, blobs: &[(u32, u32, u32, u32)]) -> RasterTile {
    let mut tile = RasterTile::filled(tile_id, georef, BACKGROUND_RGB).unwrap();
    for &(x, y, w, h) in blobs {
        for yy in y..y + h {
            for xx in x..x + w {
                tile.set(xx, yy, KILN_RGB);
            }
        }
    }
    tile
}

pub fn write_tile(dir: &Path, name: &str, tile: &RasterTile) {
    std::fs::create_dir_all(dir).unwrap();
    store_tile(tile, &dir.join(name)).unwrap();
}

/// Four 10 m tiles with two well separated 3x3 kilns each.
pub fn four_tile_fixture(dir: &Path) -> Vec<GeoPoint> {
    let mut expected = Vec::new();
    for (i, (lat, lon)) in [(31.50, 74.30), (31.50, 74.31), (31.49, 74.30), (31.49, 74.31)].iter().enumerate() {
        let g = tile_georef(*lat, *lon, 48, 48, 10.0);
        let blobs = [(8, 10, 3, 3), (30, 32, 3, 3)];
        write_tile(dir, &format!("tile_{i}.ppm"), &planted_tile(&format!("r0_c{i}"), g, &blobs));
        for (x, y, _, _) in blobs {
            expected.push(g.pixel_to_geo(x as f64 + 1.0, y as f64 + 1.0).unwrap().point);
        }
    }
    expected
}

/// Small forest settings that keep CLI tests fast.
pub fn fast_parameters() -> Value {
    json!({ "forest": { "n_trees": 12, "max_depth": 12, "rng_seed": 5 } })
}

pub fn write_config(dir: &Path, paths: Value, parameters: Value) -> PathBuf {
    let cfg = json!({ "paths": paths, "parameters": parameters });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn run(subcommand: &str, config: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kiln-atlas"))
        .arg(subcommand)
        .arg("--config")
        .arg(config)
        .args(extra)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Box of side `side` px centred on `p` in `img`.
pub fn box_at(georef: &GeoRef, p: GeoPoint, side: f64, class: KilnClass, conf: f64) -> BBox {
    let (cx, cy) = georef.geo_to_pixel(p);
    BBox::new(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0, class, conf).unwrap()
}

pub fn static_image(id: &str, center: GeoPoint) -> ImageDetections {
    ImageDetections {
        image_id: id.to_string(),
        georef: static_map_georef(center, 17, 2, 1280).unwrap(),
        zoom: 17,
        scale: 2,
        boxes: Vec::new(),
    }
}

pub fn write_detections(path: &Path, images: &[ImageDetections]) {
    let mut text = String::new();
    for img in images {
        text.push_str(&detection_line(img, 1280).unwrap());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

/// Two overlapping static-map images that both see the same kiln.
pub fn split_kiln_images() -> (Vec<ImageDetections>, GeoPoint) {
    let kiln = GeoPoint::new(31.5, 74.3015).unwrap();
    let mut a = static_image("img_a", GeoPoint::new(31.5, 74.3).unwrap());
    let mut b = static_image("img_b", GeoPoint::new(31.5, 74.303).unwrap());
    a.boxes.push(box_at(&a.georef, kiln, 60.0, KilnClass::Fcbk, 0.91));
    b.boxes.push(box_at(&b.georef, kiln, 60.0, KilnClass::Fcbk, 0.84));
    (vec![a, b], kiln)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
