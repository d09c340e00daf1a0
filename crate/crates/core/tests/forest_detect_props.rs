use kiln_atlas::detect::{bbox_to_geo, group_candidates, iou, nms, static_map_georef, BBox, KilnClass};
use kiln_atlas::forest::{
    bootstrap_indices, evaluate, train_forest, ForestConfig, LabelSchema, LabeledPixel, LabeledPixelSet,
};
use kiln_atlas::geo::{haversine_distance, GeoPoint};
use proptest::prelude::*;

fn small_config(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 8,
        max_depth: 6,
        rng_seed: seed,
        ..ForestConfig::default()
    }
}

fn pixels(max: usize) -> impl Strategy<Value = Vec<LabeledPixel>> {
    prop::collection::vec((any::<u8>(), any::<u8>(), any::<u8>(), 1u8..=10), 2..max)
        .prop_map(|v| v.into_iter().map(|(r, g, b, class)| LabeledPixel { r, g, b, class }).collect())
}

fn boxes(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(
        (0.0f64..200.0, 0.0f64..200.0, 1.0f64..80.0, 1.0f64..80.0, any::<bool>(), 0.05f64..1.0),
        len,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h, zz, c)| {
                let class = if zz { KilnClass::ZigZag } else { KilnClass::Fcbk };
                BBox::new(x, y, x + w, y + h, class, c).unwrap()
            })
            .collect()
    })
}

// Keep-set by definition: a box survives when no earlier survivor of its class overlaps it.
fn nms_oracle(boxes: &[BBox], thr: f64, max_det: usize) -> Vec<BBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let key = |b: &BBox| (-b.confidence, b.x_min, b.y_min);
        key(&boxes[i]).partial_cmp(&key(&boxes[j])).unwrap()
    });
    let overlap = |a: &BBox, b: &BBox| {
        let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
        let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
        let inter = ix * iy;
        inter / ((a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter)
    };
    let mut keep = vec![false; order.len()];
    for k in 0..order.len() {
        let b = &boxes[order[k]];
        keep[k] = (0..k).all(|j| !keep[j] || boxes[order[j]].class != b.class || overlap(&boxes[order[j]], b) <= thr);
    }
    order
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(&i, _)| boxes[i])
        .take(max_det)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forest_is_seed_deterministic(rows in pixels(120), seed in any::<u64>()) {
        let set = LabeledPixelSet::new(rows, &LabelSchema::default()).unwrap();
        let a = train_forest(&set, &small_config(seed)).unwrap();
        let b = train_forest(&set, &small_config(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for t in &a.trees {
            prop_assert!(t.depth() <= 6);
        }
        for p in set.rows() {
            let v = &a.predict(p.rgb()).vote_fractions;
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bootstrap_draws_n_rows_in_range(n in 1usize..500, tree in 0usize..50, seed in any::<u64>()) {
        let cfg = ForestConfig { rng_seed: seed, ..ForestConfig::default() };
        let idx = bootstrap_indices(&cfg, n, tree);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert_eq!(bootstrap_indices(&cfg, n, tree), idx);
    }

    #[test]
    fn evaluation_is_permutation_equivariant(
        pairs in prop::collection::vec((1u8..=10, 1u8..=10), 1..200),
        rot in 0usize..200,
    ) {
        let schema = LabelSchema::default();
        let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let a = evaluate(&pred, &truth, &schema).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (p2, t2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let b = evaluate(&p2, &t2, &schema).unwrap();
        prop_assert_eq!(a.per_class, b.per_class);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(bs in boxes(2..3)) {
        let (a, b) = (&bs[0], &bs[1]);
        prop_assert_eq!(iou(a, b), iou(b, a));
        prop_assert!((0.0..=1.0).contains(&iou(a, b)));
        prop_assert!((iou(a, a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_matches_oracle(bs in boxes(0..51)) {
        let got = nms(&bs, 0.7, 10);
        prop_assert_eq!(&got, &nms_oracle(&bs, 0.7, 10));
        prop_assert!(got.len() <= 10);
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                prop_assert!(a.class != b.class || iou(a, b) <= 0.7);
            }
        }
    }

    #[test]
    fn translation_commutes_with_geolocation(
        lat in 20.0f64..35.0,
        lon in 70.0f64..90.0,
        x in 0.0f64..1000.0,
        y in 0.0f64..1000.0,
        dx in -200.0f64..200.0,
        dy in -200.0f64..200.0,
    ) {
        let g = static_map_georef(GeoPoint::new(lat, lon).unwrap(), 17, 2, 1280).unwrap();
        let b = BBox::new(x, y, x + 40.0, y + 40.0, KilnClass::Fcbk, 0.9).unwrap();
        let moved = bbox_to_geo(&g, &b.translated(dx, dy), "i").unwrap().location;
        let base = bbox_to_geo(&g, &b, "i").unwrap().location;
        prop_assert!((moved.lat() - (base.lat() + dy * g.dlat_per_px)).abs() < 1e-9);
        prop_assert!((moved.lon() - (base.lon() + dx * g.dlon_per_px)).abs() < 1e-9);
    }

    #[test]
    fn groups_partition_within_radius(
        pts in prop::collection::vec((0.0f64..0.02, 0.0f64..0.02), 0..120),
        radius in 50.0f64..600.0,
    ) {
        let pts: Vec<GeoPoint> = pts.into_iter().map(|(a, b)| GeoPoint::new(24.0 + a, 88.0 + b).unwrap()).collect();
        let groups = group_candidates(&pts, radius).unwrap();
        let mut all: Vec<usize> = groups.iter().flat_map(|g| g.members.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..pts.len()).collect::<Vec<_>>());
        for g in &groups {
            for &m in &g.members {
                prop_assert!(haversine_distance(g.seed, pts[m]) <= radius);
            }
        }
    }
}

#[test]
fn bootstrap_covers_rows_across_forest() {
    let cfg = ForestConfig::default();
    let n = 200;
    let mut hit = vec![false; n];
    for t in 0..cfg.n_trees {
        for i in bootstrap_indices(&cfg, n, t) {
            hit[i] = true;
        }
    }
    assert!(hit.iter().filter(|&&h| h).count() as f64 >= 0.99 * n as f64);
}

#[test]
fn separable_two_class_set_is_learned() {
    let rows: Vec<LabeledPixel> = (0..400u32)
        .map(|i| {
            let class = 1 + (i % 2) as u8;
            let base = if class == 1 { 20 } else { 200 };
            let j = (i * 7 % 30) as u8;
            LabeledPixel { r: base + j, g: base + j / 2, b: base, class }
        })
        .collect();
    let set = LabeledPixelSet::new(rows, &LabelSchema::default()).unwrap();
    let forest = train_forest(&set, &small_config(3)).unwrap();
    let pred: Vec<u8> = set.rows().iter().map(|p| forest.predict(p.rgb()).class).collect();
    let eval = evaluate(&pred, &set.labels(), &LabelSchema::default()).unwrap();
    assert!(eval.accuracy.unwrap() >= 0.99);
    let centre = forest.predict([35, 27, 20]);
    assert_eq!(centre.class, 1);
    assert!(centre.vote_fractions[0] > 0.9);
}
