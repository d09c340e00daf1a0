use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use kiln_atlas::detect::{
    cross_image_dedup_radius, geolocate_image, group_candidates, read_detections_jsonl, read_kiln_points_csv,
    write_kiln_points_csv,
};
use kiln_atlas::emissions::{daily_production_per_kiln, emission_profile_for_kiln, EmissionMode};
use kiln_atlas::exposure::{exposure_for_kilns, exposure_summary, load_amenities, load_population};
use kiln_atlas::forest::{classify_tile, evaluate, load_training_csv, split_train_test, train_forest_with_schema};
use kiln_atlas::inventory::{
    parse_minimal_csv, write_extended_csv, write_geojson, write_minimal_csv, DistrictBoundaries, Provenance,
    MINIMAL_CSV_HEADER,
};
use kiln_atlas::mask::{postprocess_tile_with, write_candidates_csv};
use kiln_atlas::raster::{is_raster_path, load_tile};
use kiln_atlas::{CandidatePoint, Forest, GeoPoint, KilnDataset, KilnRecord, LabelSchema};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, Stage};
use crate::{Outcome, RunError};

pub const EVALUATION_FILE: &str = "evaluation.json";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const FETCH_PLAN_FILE: &str = "fetch_plan.json";
pub const KILN_POINTS_FILE: &str = "kiln_points.csv";
pub const MINIMAL_FILE: &str = "kilns_minimal.csv";
pub const EXTENDED_FILE: &str = "kilns_extended.csv";
pub const GEOJSON_FILE: &str = "kilns.geojson";
pub const EXPOSURE_SUMMARY_FILE: &str = "exposure_summary.json";

fn stage_err(stage: &'static str) -> impl FnOnce(anyhow::Error) -> RunError {
    move |source| RunError::Stage { stage, source }
}

fn prepare(cfg: &PipelineConfig, stage: Stage) -> Result<(), RunError> {
    cfg.validate(stage).map_err(RunError::Config)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(RunError::Config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<Outcome, RunError> {
    prepare(cfg, Stage::Train)?;
    let run = || -> anyhow::Result<()> {
        let params = &cfg.parameters;
        let schema = LabelSchema::default();
        let data_path = cfg.training_csv()?;
        let data = load_training_csv(&data_path, &schema)?;
        log::info!("loaded {} labeled pixels from {}", data.len(), data_path.display());

        let (train, test) = split_train_test(&data, params.forest.train_fraction, params.forest.rng_seed)?;
        log::info!(
            "training {} trees on {} rows ({} held out)",
            params.forest.n_trees,
            train.len(),
            test.len()
        );
        let forest = train_forest_with_schema(&train, &params.forest, &schema)?;
        let model_path = cfg.model()?;
        forest.save(&model_path)?;
        log::info!("model written to {}", model_path.display());

        let pred: Vec<u8> = test.rows().par_iter().map(|p| forest.predict(p.rgb()).class).collect();
        let report = evaluate(&pred, &test.labels(), &schema)?;
        if let Some(acc) = report.accuracy {
            log::info!("held-out accuracy {acc:.4}");
        }
        write_json(&cfg.output(EVALUATION_FILE), &report)
    };
    run().map_err(stage_err("train"))?;
    Ok(Outcome::Complete)
}

#[derive(Debug, Serialize)]
struct FetchRequest {
    group: usize,
    center_lat: f64,
    center_lon: f64,
    zoom: u8,
    scale: u8,
    size_px: u32,
    /// Candidate row numbers (0-based, CSV order) covered by this image.
    candidates: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct FetchPlan {
    group_radius_m: f64,
    requests: Vec<FetchRequest>,
}

fn raster_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && is_raster_path(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn cmd_detect_lowres(cfg: &PipelineConfig) -> Result<Outcome, RunError> {
    prepare(cfg, Stage::DetectLowres)?;
    let params = &cfg.parameters;
    let model_path = cfg.model().map_err(RunError::Config)?;
    let forest = Forest::load(&model_path)
        .with_context(|| format!("loading model {}", model_path.display()))
        .map_err(stage_err("detect-lowres"))?;
    let files = raster_files(&cfg.tiles_dir().map_err(RunError::Config)?).map_err(stage_err("detect-lowres"))?;
    if files.is_empty() {
        log::warn!("no .ppm or .png tiles found; writing empty outputs");
    }
    log::info!("classifying {} tiles with {} trees", files.len(), forest.trees.len());

    let results: Vec<anyhow::Result<(String, Vec<CandidatePoint>)>> = files
        .into_par_iter()
        .map(|path| {
            (|| {
                let tile = load_tile(&path)?;
                let mask = classify_tile(&forest, &tile, params.kiln_class);
                let cands = postprocess_tile_with(&mask, &params.postprocess)?;
                Ok::<_, kiln_atlas::Error>((tile.tile_id, cands))
            })()
            .with_context(|| format!("tile {}", path.display()))
        })
        .collect();

    let mut tiles = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(t) => tiles.push(t),
            Err(e) => {
                log::error!("{e:#}");
                failures.push(format!("{e:#}"));
            }
        }
    }
    tiles.sort_by(|a, b| a.0.cmp(&b.0));
    let candidates: Vec<CandidatePoint> = tiles.into_iter().flat_map(|(_, c)| c).collect();
    log::info!("{} candidates", candidates.len());

    let write = || -> anyhow::Result<()> {
        let path = cfg.output(CANDIDATES_FILE);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_candidates_csv(BufWriter::new(file), &candidates)?;

        let points: Vec<GeoPoint> = candidates.iter().map(|c| c.location).collect();
        let groups = group_candidates(&points, params.group_radius_m)?;
        let plan = FetchPlan {
            group_radius_m: params.group_radius_m,
            requests: groups
                .into_iter()
                .enumerate()
                .map(|(i, g)| FetchRequest {
                    group: i,
                    center_lat: g.fetch_center.lat(),
                    center_lon: g.fetch_center.lon(),
                    zoom: params.fetch.zoom,
                    scale: params.fetch.scale,
                    size_px: params.fetch.size_px,
                    candidates: g.members,
                })
                .collect(),
        };
        log::info!("fetch plan holds {} requests", plan.requests.len());
        write_json(&cfg.output(FETCH_PLAN_FILE), &plan)
    };
    write().map_err(stage_err("detect-lowres"))?;
    Ok(outcome(failures))
}

pub fn cmd_geolocate(cfg: &PipelineConfig) -> Result<Outcome, RunError> {
    prepare(cfg, Stage::Geolocate)?;
    let params = &cfg.parameters;
    let run = || -> anyhow::Result<Vec<String>> {
        let path = cfg.detections()?;
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let mut parsed = read_detections_jsonl(BufReader::new(file))?;
        let mut failures: Vec<String> = parsed
            .issues
            .iter()
            .map(|i| format!("{}:{}: {}", path.display(), i.line, i.message))
            .collect();
        for f in &failures {
            log::error!("{f}");
        }
        if parsed.clipped_away > 0 {
            log::warn!("{} boxes fell entirely outside their image", parsed.clipped_away);
        }
        parsed.images.sort_by(|a, b| a.image_id.cmp(&b.image_id));

        let per_image: Vec<(String, kiln_atlas::Result<Vec<_>>)> = parsed
            .images
            .par_iter()
            .map(|img| {
                (
                    img.image_id.clone(),
                    geolocate_image(img, params.iou_threshold, params.max_detections),
                )
            })
            .collect();
        let mut points = Vec::new();
        for (id, res) in per_image {
            match res {
                Ok(p) => points.extend(p),
                Err(e) => {
                    log::error!("image {id}: {e}");
                    failures.push(format!("image {id}: {e}"));
                }
            }
        }
        let before = points.len();
        let kept = cross_image_dedup_radius(&points, params.cross_image_dedup_m);
        log::info!(
            "{} images, {} detections after NMS, {} after cross-image dedup",
            parsed.images.len(),
            before,
            kept.len()
        );
        let out = cfg.output(KILN_POINTS_FILE);
        let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
        write_kiln_points_csv(BufWriter::new(file), &kept)?;
        Ok(failures)
    };
    let failures = run().map_err(stage_err("geolocate"))?;
    Ok(outcome(failures))
}

/// Reads either the geolocate output or a minimal `kiln_type,lat,lon` file.
fn read_kiln_points(path: &Path) -> anyhow::Result<Vec<KilnRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    if header.trim() == MINIMAL_CSV_HEADER {
        return Ok(parse_minimal_csv(&text, path)?.records().to_vec());
    }
    let points = read_kiln_points_csv(text.as_bytes(), path)?;
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(i, p)| KilnRecord::new(i as u64 + 1, p.class, p.location))
        .collect())
}

pub fn cmd_inventory(cfg: &PipelineConfig) -> Result<Outcome, RunError> {
    prepare(cfg, Stage::Inventory)?;
    let params = &cfg.parameters;
    let mode = if params.reproduce_paper {
        EmissionMode::ReproducePaper
    } else {
        EmissionMode::Exact
    };

    let mut failures = Vec::new();
    let mut records = read_kiln_points(&cfg.kiln_points()).map_err(stage_err("inventory: read kiln points"))?;
    log::info!("{} kilns", records.len());

    let mut emissions = || -> anyhow::Result<()> {
        let ep = &params.emissions;
        log::info!("emission mode {mode:?}");
        daily_production_per_kiln(&ep.params, mode)?;
        for r in records.iter_mut() {
            r.emissions = Some(emission_profile_for_kiln(Some(r.kiln_type), &ep.params, &ep.factors, mode)?);
        }
        Ok(())
    };
    emissions().map_err(stage_err("inventory: emissions"))?;

    let amenities_path = cfg.optional(&cfg.paths.amenities);
    let population_path = cfg.optional(&cfg.paths.population);
    let mut summary = None;
    if amenities_path.is_some() || population_path.is_some() {
        let mut exposure = || -> anyhow::Result<Vec<String>> {
            let mut issues = Vec::new();
            let amenities = match &amenities_path {
                Some(p) => {
                    let loaded = load_amenities(p)?;
                    issues.extend(loaded.issues.iter().map(|i| format!("{}:{}: {}", p.display(), i.line, i.message)));
                    loaded.points
                }
                None => Vec::new(),
            };
            let cells = match &population_path {
                Some(p) => {
                    let loaded = load_population(p)?;
                    issues.extend(loaded.issues.iter().map(|i| format!("{}:{}: {}", p.display(), i.line, i.message)));
                    loaded.points
                }
                None => Vec::new(),
            };
            let kilns: Vec<(u64, GeoPoint)> = records.iter().map(|r| (r.id, r.location)).collect();
            let results = exposure_for_kilns(&kilns, &amenities, &cells, params.exposure_radius_m)?;
            if !results.is_empty() {
                summary = Some(exposure_summary(&results)?);
            }
            for (r, e) in records.iter_mut().zip(results) {
                debug_assert_eq!(r.id, e.kiln_id);
                r.exposure = Some(e);
            }
            Ok(issues)
        };
        let issues = exposure().map_err(stage_err("inventory: exposure"))?;
        for i in &issues {
            log::error!("{i}");
        }
        failures.extend(issues);
    } else {
        log::info!("no amenity or population files configured; exposure columns left empty");
    }

    if let Some(path) = cfg.optional(&cfg.paths.districts) {
        let districts = DistrictBoundaries::load(&path).map_err(|e| stage_err("inventory: districts")(e.into()))?;
        for r in records.iter_mut() {
            r.district = districts.district_for(r.location).map(str::to_string);
        }
    }

    let provenance = Provenance {
        pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
        parameter_hash: cfg.parameter_hash(),
    };
    let write = || -> anyhow::Result<()> {
        let dataset = KilnDataset::new(records, provenance)?;
        write_minimal_csv(&dataset, &cfg.output(MINIMAL_FILE))?;
        write_extended_csv(&dataset, &cfg.output(EXTENDED_FILE))?;
        write_geojson(&dataset, &cfg.output(GEOJSON_FILE))?;
        if let Some(s) = &summary {
            write_json(&cfg.output(EXPOSURE_SUMMARY_FILE), s)?;
        }
        log::info!("wrote {} records", dataset.len());
        Ok(())
    };
    write().map_err(stage_err("inventory: write"))?;
    Ok(outcome(failures))
}

fn outcome(failures: Vec<String>) -> Outcome {
    if failures.is_empty() {
        Outcome::Complete
    } else {
        log::warn!("{} failures:", failures.len());
        for f in &failures {
            log::warn!("  {f}");
        }
        Outcome::Partial(failures)
    }
}
