use hsc_core::data::{ClipRecord, Dataset, Dims, KeypointScheme, SceneInput, SceneParams, SegmentationGrid, SkeletonFrame, Split, TrackletSample};
use hsc_core::loss::{object_contrast, scene_contrast};
use hsc_core::model::{MemoryBank, StreamId};
use hsc_core::nn::{cosine_similarity, dot, l2_normalize, norm, AdaGradState, Matrix, Mlp2Params, Params};
use hsc_core::scene::{build_scene_feature, dbscan_cluster};
use hsc_core::score::{gaussian_smooth, micro_auc, score_clips};
use hsc_core::skeleton::{motion_featurize, rotate_keypoint, spatial_transform, AugmentConfig, KinematicTree};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

fn nonzero(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vecs(n).prop_filter("non-degenerate", |v| norm(v) > 1e-3)
}

fn unit_rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(nonzero(d).prop_map(|v| l2_normalize(&v).unwrap().0), n)
}

fn bank_from(rows: &[Vec<f64>], scenes: &[usize], classes: &[usize]) -> MemoryBank {
    MemoryBank::new(
        StreamId::Mot,
        0.9,
        Matrix::from_rows(rows).unwrap(),
        scenes.to_vec(),
        classes.to_vec(),
        (0..rows.len()).collect(),
    )
    .unwrap()
}

fn skeleton(frames: usize) -> impl Strategy<Value = Vec<SkeletonFrame>> {
    prop::collection::vec(
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y]), 17)
            .prop_map(|keypoints| SkeletonFrame { keypoints }),
        frames,
    )
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Relabels clusters in order of first appearance; noise stays -1.
fn canonical(labels: &[i32]) -> Vec<i32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

fn one_clip_dataset(objects: usize) -> Dataset {
    let mut ds = Dataset::new(
        Split::Test,
        Dims { appearance: 1, motion: 0, scene: 1 },
        KeypointScheme::coco17(),
        None,
    );
    ds.clips.push(ClipRecord {
        video_id: "v".into(),
        clip_index: 0,
        frame_count: 4,
        scene_input: SceneInput::Vector(vec![1.0]),
        scene_label: None,
        anomaly_label: Some(0),
    });
    for o in 0..objects {
        ds.samples.push(TrackletSample {
            video_id: "v".into(),
            clip_index: 0,
            object_id: o as u32,
            appearance: vec![0.0],
            skeleton: None,
            motion: None,
            object_class: "person".into(),
            action_class: None,
            anomaly_label: Some(0),
        });
    }
    ds
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalized_vectors_have_unit_norm(x in nonzero(8)) {
        let (y, _) = l2_normalize(&x).unwrap();
        prop_assert!((norm(&y) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free(a in nonzero(6), b in nonzero(6), l in 0.01..100.0f64, m in 0.01..100.0f64) {
        let s = cosine_similarity(&a, &b).unwrap();
        prop_assert!((s - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
        let la: Vec<f64> = a.iter().map(|v| v * l).collect();
        let mb: Vec<f64> = b.iter().map(|v| v * m).collect();
        prop_assert!((s - cosine_similarity(&la, &mb).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn adagrad_accumulators_grow_and_zero_lr_is_noop(seed in any::<u64>(), g in vecs(3 * 4 + 4 + 4 * 2 + 2)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Mlp2Params::init(3, 4, 2, &mut rng);
        let mut grads = p.zeros_like();
        let mut off = 0;
        for b in grads.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&g[off..off + n]);
            off += n;
        }
        let before = p.clone();
        let mut state = AdaGradState::new(&p, 1e-8);
        state.step(&mut p, &grads, 0.0).unwrap();
        prop_assert_eq!(&p, &before);
        let acc = state.accum.clone();
        state.step(&mut p, &grads, 0.1).unwrap();
        for (a, b) in acc.iter().flatten().zip(state.accum.iter().flatten()) {
            prop_assert!(*a >= 0.0 && b >= a);
        }
    }

    #[test]
    fn memory_rows_stay_unit(rows in unit_rows(5, 4), updates in prop::collection::vec((0usize..5, nonzero(4)), 1..40), m in 0.0..0.999f64) {
        let mut bank = bank_from(&rows, &[0; 5], &[0; 5]);
        bank.momentum = m;
        for (slot, x) in updates {
            let (x, _) = l2_normalize(&x).unwrap();
            bank.update(slot, &x).unwrap();
        }
        for r in bank.rows.iter_rows() {
            prop_assert!((norm(r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn retrieval_weights_form_a_distribution(rows in unit_rows(6, 3), q in nonzero(3), c in -3.0..3.0f64) {
        let bank = bank_from(&rows, &[0; 6], &[0; 6]);
        let (w, recon) = bank.retrieve(&q).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // oracle: explicit softmax with a shift
        let logits: Vec<f64> = rows.iter().map(|r| dot(r, &q) + c).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (wi, l) in w.iter().zip(&logits) {
            prop_assert!((wi - l.exp() / z).abs() < 1e-9);
        }
        for d in 0..3 {
            let expect: f64 = rows.iter().zip(&w).map(|(r, wi)| wi * r[d]).sum();
            prop_assert!((recon[d] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_contrast_ignores_row_order(
        rows in unit_rows(8, 3),
        scenes in prop::collection::vec(0usize..2, 8),
        anchor in nonzero(3),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let classes = vec![0; 8];
        let a = scene_contrast(&anchor, &bank_from(&rows, &scenes, &classes), 0, 0.5).unwrap();
        let rows_p: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let scenes_p: Vec<usize> = perm.iter().map(|&i| scenes[i]).collect();
        let b = scene_contrast(&anchor, &bank_from(&rows_p, &scenes_p, &classes), 0, 0.5).unwrap();
        match (a, b) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a.loss - b.loss).abs() < 1e-9 * a.loss.abs().max(1.0)),
            _ => prop_assert!(false, "positive sets differ"),
        }
    }

    #[test]
    fn object_contrast_ignores_other_scenes(
        rows in unit_rows(8, 3),
        other in unit_rows(8, 3),
        scenes in prop::collection::vec(0usize..2, 8),
        classes in prop::collection::vec(0usize..2, 8),
        anchor in nonzero(3),
    ) {
        let a = object_contrast(&anchor, &bank_from(&rows, &scenes, &classes), 0, 0, 0.5).unwrap();
        let mixed: Vec<Vec<f64>> = (0..8).map(|i| if scenes[i] == 0 { rows[i].clone() } else { other[i].clone() }).collect();
        let b = object_contrast(&anchor, &bank_from(&mixed, &scenes, &classes), 0, 0, 0.5).unwrap();
        prop_assert_eq!(a.map(|l| l.loss), b.map(|l| l.loss));
    }

    #[test]
    fn dbscan_is_permutation_invariant(
        centers in prop::collection::vec(0usize..4, 12..30),
        noise in prop::collection::vec(prop::collection::vec(-0.01..0.01f64, 4), 30),
        perm_seed in any::<u64>(),
    ) {
        // tight blobs around orthogonal axes leave no border ambiguity
        let points: Vec<Vec<f64>> = centers
            .iter()
            .zip(&noise)
            .map(|(&c, n)| (0..4).map(|d| if d == c { 1.0 } else { 0.0 } + n[d]).collect())
            .collect();
        let labels = dbscan_cluster(&points, 0.15, 3).unwrap();
        let mut perm: Vec<usize> = (0..points.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let labels_p = dbscan_cluster(&permuted, 0.15, 3).unwrap();
        let mut back = vec![0; points.len()];
        for (j, &i) in perm.iter().enumerate() {
            back[i] = labels_p[j];
        }
        prop_assert_eq!(canonical(&labels), canonical(&back));
    }

    #[test]
    fn scene_feature_ignores_frame_order(
        cells in prop::collection::vec(prop::collection::vec(0u32..6, 8 * 8), 2..5),
        perm_seed in any::<u64>(),
    ) {
        let params = SceneParams { num_classes: 6, foreground_classes: vec![4, 5], pool_size: 4 };
        let grids: Vec<SegmentationGrid> = cells.into_iter().map(|c| SegmentationGrid::new(8, 8, c).unwrap()).collect();
        let mut shuffled = grids.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        match (build_scene_feature(&grids, &params), build_scene_feature(&shuffled, &params)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((norm(&a.values) - 1.0).abs() < 1e-9);
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "order changed validity"),
        }
    }

    #[test]
    fn rotation_preserves_parent_distance(k in (-100.0..100.0f64, -100.0..100.0f64), p in (-100.0..100.0f64, -100.0..100.0f64), a in -10.0..10.0f64) {
        let (k, p) = ([k.0, k.1], [p.0, p.1]);
        prop_assert!((dist(rotate_keypoint(k, p, a), p) - dist(k, p)).abs() < 1e-9);
    }

    #[test]
    fn spatial_transform_preserves_bones(seq in skeleton(1), seed in any::<u64>(), wide in any::<bool>()) {
        let tree = KinematicTree::coco17();
        let mut cfg = AugmentConfig::default();
        if wide {
            cfg.angle_min = -std::f64::consts::PI;
            cfg.angle_max = std::f64::consts::PI;
        }
        let (out, _) = spatial_transform(&seq[0], &tree, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (c, p) in tree.bones() {
            prop_assert!((dist(out.keypoints[c], out.keypoints[p]) - dist(seq[0].keypoints[c], seq[0].keypoints[p])).abs() < 1e-9);
        }
    }

    #[test]
    fn motion_features_ignore_translation_and_scale(seq in skeleton(5), dx in -100.0..100.0f64, dy in -100.0..100.0f64, s in 0.1..10.0f64) {
        let tree = KinematicTree::coco17();
        let f = motion_featurize(&seq, &tree).unwrap();
        prop_assert_eq!(f.len(), tree.motion_dim());
        prop_assert_eq!(&f, &motion_featurize(&seq, &tree).unwrap());
        let moved: Vec<SkeletonFrame> = seq
            .iter()
            .map(|fr| SkeletonFrame { keypoints: fr.keypoints.iter().map(|k| [s * k[0] + dx, s * k[1] + dy]).collect() })
            .collect();
        let g = motion_featurize(&moved, &tree).unwrap();
        for (a, b) in f.iter().zip(&g) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn auc_ignores_increasing_transforms(
        scores in prop::collection::vec(-3.0..3.0f64, 4..40),
        labels_seed in any::<u64>(),
    ) {
        let n = scores.len();
        let mut labels: Vec<u8> = (0..n).map(|i| ((labels_seed >> (i % 64)) & 1) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let a = micro_auc(&scores, &labels).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + s.powi(3)).collect();
        prop_assert_eq!(a, micro_auc(&t, &labels).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn smoothing_stays_in_range(x in prop::collection::vec(-10.0..10.0f64, 1..60), sigma in 0.0..8.0f64, c in -5.0..5.0f64) {
        let y = gaussian_smooth(&x, sigma).unwrap();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        let flat = gaussian_smooth(&vec![c; x.len()], sigma).unwrap();
        prop_assert!(flat.iter().all(|&v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn adding_an_object_never_lowers_a_clip(scores in prop::collection::vec(-5.0..5.0f64, 1..10), extra in -5.0..5.0f64) {
        let n = scores.len();
        let before = score_clips(&scores[..n - 1], &one_clip_dataset(n - 1)).unwrap()[0];
        let after = score_clips(&scores, &one_clip_dataset(n)).unwrap()[0];
        if n > 1 {
            prop_assert!(after >= before);
        }
        let mut more = scores.clone();
        more.push(extra);
        prop_assert!(score_clips(&more, &one_clip_dataset(n + 1)).unwrap()[0] >= after);
    }
}
