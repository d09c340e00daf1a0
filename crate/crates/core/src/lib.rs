//! Non-neural core of a satellite brick-kiln detection and emission
//! inventory pipeline.
//!
//! * [`geo`]: haversine distance, grid index, radius dedup
//! * [`raster`]: georeferenced tiles, pixel/geo conversion, AOI tiling
//! * [`forest`]: random-forest pixel classifier and evaluation
//! * [`mask`]: binary-mask post-processing into candidate points
//! * [`detect`]: static-map georefs, NMS, box geolocation, grouping
//! * [`emissions`]: per-kiln bottom-up emission estimates
//! * [`exposure`]: amenity and population counts around kilns
//! * [`inventory`]: the kiln dataset and its CSV/GeoJSON encodings

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod emissions;
pub mod error;
pub mod exposure;
pub mod forest;
pub mod geo;
pub mod inventory;
pub mod mask;
pub mod raster;

pub use detect::{BBox, ImageDetections, KilnClass, KilnPoint};
pub use emissions::{EmissionFactors, EmissionMode, EmissionProfile, Pollutant, ProductionParams};
pub use error::{Error, Result};
pub use exposure::{AmenityKind, AmenityPoint, ExposureResult, PopulationCell};
pub use forest::{Forest, ForestConfig, LabelSchema, LabeledPixel, LabeledPixelSet};
pub use geo::{haversine_distance, GeoPoint, SpatialGridIndex};
pub use inventory::{KilnDataset, KilnRecord};
pub use mask::{BinaryMask, CandidatePoint, PixelCluster, PostprocessParams};
pub use raster::{AoiGrid, GeoBounds, GeoRef, RasterTile};
