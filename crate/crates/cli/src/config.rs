use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use kiln_atlas::detect::{CROSS_IMAGE_DEDUP_M, DEFAULT_GROUP_RADIUS_M, DEFAULT_IOU_THRESHOLD, DEFAULT_MAX_DETECTIONS};
use kiln_atlas::emissions::EmissionsConfig;
use kiln_atlas::exposure::DEFAULT_EXPOSURE_RADIUS_M;
use kiln_atlas::forest::{ForestConfig, KILN_CLASS};
use kiln_atlas::PostprocessParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Input and output locations. Relative paths resolve against the directory
/// holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub training_csv: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub tiles_dir: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Kiln points for `inventory`; defaults to `<output_dir>/kiln_points.csv`.
    pub kiln_points: Option<PathBuf>,
    pub amenities: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub districts: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Static-map request shape written to the fetch plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchParams {
    pub zoom: u8,
    pub scale: u8,
    pub size_px: u32,
}

impl Default for FetchParams {
    fn default() -> Self {
        FetchParams {
            zoom: 17,
            scale: 2,
            size_px: 1280,
        }
    }
}

/// Every tunable that affects output bytes. Hashed into dataset provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parameters {
    pub forest: ForestConfig,
    pub kiln_class: u8,
    pub postprocess: PostprocessParams,
    pub group_radius_m: f64,
    pub fetch: FetchParams,
    pub iou_threshold: f64,
    pub max_detections: usize,
    pub cross_image_dedup_m: f64,
    pub exposure_radius_m: f64,
    pub emissions: EmissionsConfig,
    pub reproduce_paper: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            forest: ForestConfig::default(),
            kiln_class: KILN_CLASS,
            postprocess: PostprocessParams::default(),
            group_radius_m: DEFAULT_GROUP_RADIUS_M,
            fetch: FetchParams::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            max_detections: DEFAULT_MAX_DETECTIONS,
            cross_image_dedup_m: CROSS_IMAGE_DEDUP_M,
            exposure_radius_m: DEFAULT_EXPOSURE_RADIUS_M,
            emissions: EmissionsConfig::default(),
            reproduce_paper: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub parameters: Parameters,
    /// Worker threads; `None` uses all cores. `--workers` overrides.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Which subcommand a config is being validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    DetectLowres,
    Geolocate,
    Inventory,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_parts(paths: Paths, parameters: Parameters, base_dir: PathBuf) -> Self {
        PipelineConfig {
            paths,
            parameters,
            workers: None,
            base_dir,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    fn required(&self, field: &'static str, value: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
        match value {
            Some(p) => Ok(self.resolve(p)),
            None => bail!("config is missing paths.{field}"),
        }
    }

    pub fn training_csv(&self) -> anyhow::Result<PathBuf> {
        self.required("training_csv", &self.paths.training_csv)
    }

    pub fn model(&self) -> anyhow::Result<PathBuf> {
        self.required("model", &self.paths.model)
    }

    pub fn tiles_dir(&self) -> anyhow::Result<PathBuf> {
        self.required("tiles_dir", &self.paths.tiles_dir)
    }

    pub fn detections(&self) -> anyhow::Result<PathBuf> {
        self.required("detections", &self.paths.detections)
    }

    pub fn kiln_points(&self) -> PathBuf {
        match &self.paths.kiln_points {
            Some(p) => self.resolve(p),
            None => self.output("kiln_points.csv"),
        }
    }

    pub fn optional(&self, value: &Option<PathBuf>) -> Option<PathBuf> {
        value.as_deref().map(|p| self.resolve(p))
    }

    /// Checks parameters and that every input the stage reads exists,
    /// before any work starts.
    pub fn validate(&self, stage: Stage) -> anyhow::Result<()> {
        let p = &self.parameters;
        p.forest.validate()?;
        p.emissions.params.validate()?;
        if !(p.group_radius_m > 0.0 && p.cross_image_dedup_m > 0.0 && p.exposure_radius_m > 0.0) {
            bail!("radii must be positive");
        }
        if !(p.postprocess.dedup_radius_m > 0.0) {
            bail!("postprocess.dedup_radius_m must be positive");
        }
        if !(0.0..=1.0).contains(&p.iou_threshold) {
            bail!("iou_threshold must be in [0, 1], got {}", p.iou_threshold);
        }
        if p.max_detections == 0 {
            bail!("max_detections must be positive");
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }

        let must_exist = |path: PathBuf, what: &str| -> anyhow::Result<()> {
            if !path.exists() {
                bail!("{what} not found: {}", path.display());
            }
            Ok(())
        };
        match stage {
            Stage::Train => {
                must_exist(self.training_csv()?, "training data")?;
                self.model()?;
            }
            Stage::DetectLowres => {
                must_exist(self.model()?, "model file")?;
                let dir = self.tiles_dir()?;
                if !dir.is_dir() {
                    bail!("tile directory not found: {}", dir.display());
                }
            }
            Stage::Geolocate => must_exist(self.detections()?, "detections file")?,
            Stage::Inventory => {
                must_exist(self.kiln_points(), "kiln points")?;
                for (what, path) in [
                    ("amenities file", self.optional(&self.paths.amenities)),
                    ("population file", self.optional(&self.paths.population)),
                    ("districts file", self.optional(&self.paths.districts)),
                ] {
                    if let Some(path) = path {
                        must_exist(path, what)?;
                    }
                }
            }
        }
        let out = self.output_dir();
        if out.exists() && !out.is_dir() {
            bail!("output_dir is not a directory: {}", out.display());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the parameters.
    pub fn parameter_hash(&self) -> String {
        let json = serde_json::to_vec(&self.parameters).expect("parameters serialise");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
