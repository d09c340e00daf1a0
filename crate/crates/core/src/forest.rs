//! Random-forest pixel classifier over RGB features.
//!
//! Trees are CART classifiers grown on bootstrap samples with Gini splits at
//! midpoints between adjacent distinct feature values. Each tree draws from
//! its own ChaCha stream so training is reproducible for any thread count.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::RasterTile;

pub const FEATURE_COUNT: usize = 3;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Land-cover classes, in label order starting at 1.
pub const DEFAULT_CLASS_NAMES: [&str; 10] = [
    "Brick Kilns",
    "Redroof Structures",
    "Water Bodies",
    "Green Areas",
    "Forests",
    "Fallow Lands",
    "Desert",
    "Urban Areas",
    "Roads",
    "Rocky Terrain",
];

pub const KILN_CLASS: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    names: Vec<String>,
}

impl Default for LabelSchema {
    fn default() -> Self {
        LabelSchema {
            names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelSchema {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, class: u8) -> bool {
        class >= 1 && (class as usize) <= self.names.len()
    }

    pub fn name(&self, class: u8) -> Option<&str> {
        self.contains(class).then(|| self.names[class as usize - 1].as_str())
    }

    pub fn classes(&self) -> impl Iterator<Item = u8> + '_ {
        (1..=self.names.len()).map(|c| c as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPixel {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub class: u8,
}

impl LabeledPixel {
    pub fn rgb(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPixelSet {
    rows: Vec<LabeledPixel>,
}

impl LabeledPixelSet {
    pub fn new(rows: Vec<LabeledPixel>, schema: &LabelSchema) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|p| !schema.contains(p.class)) {
            return Err(Error::InvalidParameter(format!(
                "class {} is not in the label schema",
                bad.class
            )));
        }
        Ok(LabeledPixelSet { rows })
    }

    pub fn rows(&self) -> &[LabeledPixel] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|p| p.class).collect()
    }
}

/// Reads a `r,g,b,class` CSV.
pub fn load_training_csv(path: &Path, schema: &LabelSchema) -> Result<LabeledPixelSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<LabeledPixel>().enumerate() {
        // header is line 1
        let line = i + 2;
        let px = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !schema.contains(px.class) {
            return Err(Error::parse(path, line, format!("unknown class {}", px.class)));
        }
        rows.push(px);
    }
    Ok(LabeledPixelSet { rows })
}

pub fn write_training_csv(path: &Path, set: &LabeledPixelSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in &set.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Deterministic shuffled split; the train part has `floor(n * fraction)` rows.
pub fn split_train_test(
    set: &LabeledPixelSet,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledPixelSet, LabeledPixelSet)> {
    if set.is_empty() {
        return Err(Error::EmptyInput("labeled pixel set"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n as f64 * fraction) + 1e-9).floor() as usize;
    let pick = |idx: &[usize]| LabeledPixelSet {
        rows: idx.iter().map(|&i| set.rows[i]).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub train_fraction: f64,
    pub rng_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: 50,
            max_features: 10,
            min_samples_split: 2,
            min_samples_leaf: 1,
            train_fraction: 0.8,
            rng_seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_trees", self.n_trees),
            ("max_depth", self.max_depth),
            ("max_features", self.max_features),
            ("min_samples_split", self.min_samples_split),
            ("min_samples_leaf", self.min_samples_leaf),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u8,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Per-class counts of the training rows that reached this leaf,
    /// indexed by `class - 1`.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, rgb: [u8; 3]) -> &[u32] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if (rgb[*feature as usize] as f64) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts } => Some(counts.as_slice()),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestMetadata {
    pub feature_count: usize,
    /// `max_features` clamped to the feature count.
    pub effective_max_features: usize,
    pub max_features_clamped: bool,
    /// Set when training saw a single class and produced one leaf.
    pub degenerate: bool,
    pub training_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub schema: LabelSchema,
    pub config: ForestConfig,
    pub metadata: ForestMetadata,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: u8,
    /// Indexed by `class - 1`; sums to 1.
    pub vote_fractions: Vec<f64>,
}

struct TreeBuilder<'a> {
    rows: &'a [LabeledPixel],
    n_classes: usize,
    config: &'a ForestConfig,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in idx {
            counts[self.rows[i].class as usize - 1] += 1;
        }
        counts
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.class_counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.config.max_depth || idx.len() < self.config.min_samples_split {
            self.nodes.push(Node::Leaf { counts });
            return id;
        }
        let Some(split) = self.best_split(&idx) else {
            self.nodes.push(Node::Leaf { counts });
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| (self.rows[i].rgb()[split.feature] as f64) <= split.threshold);
        // reserve the slot; children are appended after it
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: split.feature as u8,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    /// Maximises `sum(l_k^2)/n_l + sum(r_k^2)/n_r`, which is the same as
    /// minimising the size-weighted Gini impurity of the children.
    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let mut features: Vec<usize> = sample(&mut self.rng, FEATURE_COUNT, self.max_features).into_vec();
        features.sort_unstable();

        let k = self.n_classes;
        let n = idx.len();
        let min_leaf = self.config.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        let mut hist = vec![0u32; 256 * k];
        for &f in &features {
            hist.iter_mut().for_each(|h| *h = 0);
            for &i in idx {
                let row = &self.rows[i];
                hist[row.rgb()[f] as usize * k + row.class as usize - 1] += 1;
            }
            let present: Vec<usize> = (0..256)
                .filter(|&v| hist[v * k..(v + 1) * k].iter().any(|&c| c > 0))
                .collect();
            let mut left = vec![0u64; k];
            let mut total = vec![0u64; k];
            for v in &present {
                for c in 0..k {
                    total[c] += hist[v * k + c] as u64;
                }
            }
            let mut n_left = 0usize;
            for w in present.windows(2) {
                let v = w[0];
                for c in 0..k {
                    let h = hist[v * k + c] as u64;
                    left[c] += h;
                    n_left += h as usize;
                }
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let mut sl = 0.0;
                let mut sr = 0.0;
                for c in 0..k {
                    let l = left[c] as f64;
                    let r = (total[c] - left[c]) as f64;
                    sl += l * l;
                    sr += r * r;
                }
                let score = sl / n_left as f64 + sr / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: (w[0] as f64 + w[1] as f64) / 2.0,
                        score,
                    });
                }
            }
        }
        best
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

pub fn train_forest(train: &LabeledPixelSet, config: &ForestConfig) -> Result<Forest> {
    train_forest_with_schema(train, config, &LabelSchema::default())
}

pub fn train_forest_with_schema(
    train: &LabeledPixelSet,
    config: &ForestConfig,
    schema: &LabelSchema,
) -> Result<Forest> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if train.len() < config.min_samples_split {
        return Err(Error::InvalidParameter(format!(
            "{} training rows is fewer than min_samples_split = {}",
            train.len(),
            config.min_samples_split
        )));
    }
    let n_classes = schema.len();
    if let Some(bad) = train.rows.iter().find(|p| !schema.contains(p.class)) {
        return Err(Error::InvalidParameter(format!("class {} not in schema", bad.class)));
    }
    let effective = config.max_features.min(FEATURE_COUNT);
    let present: BTreeSet<u8> = train.rows.iter().map(|p| p.class).collect();
    let mut metadata = ForestMetadata {
        feature_count: FEATURE_COUNT,
        effective_max_features: effective,
        max_features_clamped: effective < config.max_features,
        degenerate: false,
        training_rows: train.len(),
    };

    let trees = if present.len() < 2 {
        log::warn!("training data holds a single class; returning a one-leaf forest");
        metadata.degenerate = true;
        let mut counts = vec![0u32; n_classes];
        counts[*present.iter().next().unwrap() as usize - 1] = train.len() as u32;
        vec![Tree {
            nodes: vec![Node::Leaf { counts }],
        }]
    } else {
        let n = train.len();
        (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(config.rng_seed, t);
                let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let mut builder = TreeBuilder {
                    rows: &train.rows,
                    n_classes,
                    config,
                    max_features: effective,
                    rng,
                    nodes: Vec::new(),
                };
                builder.build(idx, 0);
                Tree { nodes: builder.nodes }
            })
            .collect()
    };

    Ok(Forest {
        format_version: MODEL_FORMAT_VERSION,
        schema: schema.clone(),
        config: config.clone(),
        metadata,
        trees,
    })
}

/// Row indices drawn into the bootstrap sample of tree `tree`.
pub fn bootstrap_indices(config: &ForestConfig, n: usize, tree: usize) -> Vec<usize> {
    let mut rng = tree_rng(config.rng_seed, tree);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

impl Forest {
    /// Sums leaf histograms across trees; ties go to the lowest class.
    pub fn predict(&self, rgb: [u8; 3]) -> Prediction {
        let k = self.schema.len();
        let mut sums = vec![0u64; k];
        for tree in &self.trees {
            for (s, &c) in sums.iter_mut().zip(tree.leaf_for(rgb)) {
                *s += c as u64;
            }
        }
        let total: u64 = sums.iter().sum();
        let mut best = 0usize;
        for c in 1..k {
            if sums[c] > sums[best] {
                best = c;
            }
        }
        Prediction {
            class: best as u8 + 1,
            vote_fractions: sums.iter().map(|&s| s as f64 / total as f64).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let forest: Forest = serde_json::from_reader(BufReader::new(file))?;
        if forest.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                forest.format_version
            )));
        }
        Ok(forest)
    }
}

pub fn predict_pixel(forest: &Forest, rgb: [u8; 3]) -> Prediction {
    forest.predict(rgb)
}

/// Marks the pixels whose predicted class is `target_class`.
pub fn classify_tile(forest: &Forest, tile: &RasterTile, target_class: u8) -> BinaryMask {
    let bits = tile
        .pixels()
        .par_iter()
        .map(|&rgb| forest.predict(rgb).class == target_class)
        .collect();
    BinaryMask::from_bits(tile.tile_id.clone(), tile.georef, bits)
        .expect("tile pixels match georef dimensions")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub name: String,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub accuracy: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// Row `i` is true class `i + 1`, normalised to sum to 1; `None` for
    /// classes with no support.
    pub confusion: Vec<Option<Vec<f64>>>,
}

impl Evaluation {
    pub fn class(&self, class: u8) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

pub fn evaluate(pred: &[u8], truth: &[u8], schema: &LabelSchema) -> Result<Evaluation> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let k = schema.len();
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if !schema.contains(p) || !schema.contains(t) {
            return Err(Error::InvalidParameter(format!("label outside schema: {p} / {t}")));
        }
        counts[t as usize - 1][p as usize - 1] += 1;
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let per_class = schema
        .classes()
        .map(|c| {
            let i = c as usize - 1;
            let tp = counts[i][i];
            let support: usize = counts[i].iter().sum();
            let predicted: usize = counts.iter().map(|row| row[i]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassMetrics {
                class: c,
                name: schema.name(c).unwrap_or_default().to_string(),
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let confusion = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row.iter().map(|&c| c as f64 / total as f64).collect())
        })
        .collect();
    let correct: usize = (0..k).map(|i| counts[i][i]).sum();
    Ok(Evaluation {
        samples: pred.len(),
        accuracy: ratio(correct, pred.len()),
        per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(r: u8, g: u8, b: u8, class: u8) -> LabeledPixel {
        LabeledPixel { r, g, b, class }
    }

    fn set(rows: Vec<LabeledPixel>) -> LabeledPixelSet {
        LabeledPixelSet::new(rows, &LabelSchema::default()).unwrap()
    }

    fn small_config(n_trees: usize) -> ForestConfig {
        ForestConfig {
            n_trees,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn schema_indices() {
        let s = LabelSchema::default();
        assert_eq!(s.len(), 10);
        assert_eq!(s.name(1), Some("Brick Kilns"));
        assert_eq!(s.name(10), Some("Rocky Terrain"));
        assert!(!s.contains(0) && !s.contains(11));
        assert!(LabeledPixelSet::new(vec![px(0, 0, 0, 11)], &s).is_err());
    }

    #[test]
    fn split_partitions() {
        let s = set((0..10).map(|i| px(i, 0, 0, 1)).collect());
        let (a, b) = split_train_test(&s, 0.8, 7).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<u8> = a.rows().iter().chain(b.rows()).map(|p| p.r).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<u8>>());
        assert_eq!(split_train_test(&s, 0.8, 7).unwrap(), (a, b));

        let (a, b) = split_train_test(&s, 0.999, 1).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));

        assert!(split_train_test(&LabeledPixelSet::default(), 0.8, 1).is_err());
        assert!(split_train_test(&s, 1.0, 1).is_err());
    }

    #[test]
    fn identical_features_give_majority_leaves() {
        let mut rows = vec![px(100, 100, 100, 2); 70];
        rows.extend(vec![px(100, 100, 100, 5); 30]);
        let forest = train_forest(&set(rows), &small_config(50)).unwrap();
        assert!(forest.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(forest.predict([100, 100, 100]).class, 2);
        assert_eq!(forest.predict([0, 0, 0]).class, 2);
    }

    #[test]
    fn single_class_is_degenerate() {
        let forest = train_forest(&set(vec![px(1, 2, 3, 4); 5]), &small_config(10)).unwrap();
        assert!(forest.metadata.degenerate);
        assert_eq!(forest.trees.len(), 1);
        let p = forest.predict([200, 0, 0]);
        assert_eq!(p.class, 4);
        assert_eq!(p.vote_fractions[3], 1.0);
    }

    #[test]
    fn max_features_is_clamped() {
        let rows = vec![px(10, 0, 0, 1), px(200, 0, 0, 2), px(12, 0, 0, 1), px(210, 0, 0, 2)];
        let forest = train_forest(&set(rows), &small_config(5)).unwrap();
        assert_eq!(forest.metadata.effective_max_features, 3);
        assert!(forest.metadata.max_features_clamped);
    }

    #[test]
    fn simple_threshold_split() {
        let rows: Vec<_> = (0..40)
            .map(|i| if i < 20 { px(i, 50, 50, 1) } else { px(i + 100, 50, 50, 3) })
            .collect();
        let forest = train_forest(&set(rows), &small_config(25)).unwrap();
        assert_eq!(forest.predict([5, 50, 50]).class, 1);
        assert_eq!(forest.predict([200, 50, 50]).class, 3);
        let p = forest.predict([5, 50, 50]);
        assert!((p.vote_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config() {
        let s = set(vec![px(0, 0, 0, 1), px(1, 1, 1, 2)]);
        let mut c = small_config(0);
        assert!(train_forest(&s, &c).is_err());
        c = ForestConfig {
            train_fraction: 1.5,
            ..small_config(3)
        };
        assert!(train_forest(&s, &c).is_err());
        assert!(train_forest(&LabeledPixelSet::default(), &small_config(3)).is_err());
    }

    #[test]
    fn evaluate_hand_counted() {
        let s = LabelSchema::default();
        let e = evaluate(&[1, 2, 2, 2], &[1, 1, 2, 2], &s).unwrap();
        let c1 = e.class(1).unwrap();
        assert_eq!(c1.precision, Some(1.0));
        assert_eq!(c1.recall, Some(0.5));
        let c2 = e.class(2).unwrap();
        assert!((c2.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c2.recall, Some(1.0));
        assert_eq!(e.confusion[0], Some(vec![0.5, 0.5, 0., 0., 0., 0., 0., 0., 0., 0.]));
        assert_eq!(e.confusion[2], None);
        assert_eq!(e.class(3).unwrap().precision, None);
        assert_eq!(e.accuracy, Some(0.75));
    }

    #[test]
    fn evaluate_perfect_and_mismatch() {
        let s = LabelSchema::default();
        let labels = [1, 3, 3, 7, 10];
        let e = evaluate(&labels, &labels, &s).unwrap();
        for c in [1u8, 3, 7, 10] {
            let m = e.class(c).unwrap();
            assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
        assert!(matches!(
            evaluate(&[1, 2], &[1], &s),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
