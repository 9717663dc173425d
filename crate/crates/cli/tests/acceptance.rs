//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hsc_core::data::Dims;
use hsc_core::loss::{linear_classification, object_contrast, reconstruction, scene_contrast};
use hsc_core::model::{Banks, HscModel, MemoryBank, ModelDims, StreamId};
use hsc_core::nn::{l2_normalize, Matrix, Mlp2Params, Params};
use hsc_core::pipeline::{
    evaluate_checkpoint, run_stage1, run_stage2, MemorySize, MemorySubsample, PipelineConfig,
};
use hsc_core::scene::{dataset_scene_features, SceneClustering};
use hsc_core::score::score_dataset;
use hsc_core::skeleton::{rotate_keypoint, spatial_transform, AugmentConfig, KinematicTree};
use hsc_core::synth::{generate_mixture_dataset, GeneratedBenchmark, ScenarioConfig};
use hsc_core::train::{combined_loss, init_banks, LossSwitches, StreamItem, TrainingSet, Vocab};
use hsc_core::{Checkpoint, Dataset, Stage2Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if s < 1e-12 {
        d
    } else {
        d / s
    }
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = x[i];
            x[i] = v + H;
            let up = f(&x);
            x[i] = v - H;
            let down = f(&x);
            x[i] = v;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    l2_normalize(&uniform(n, rng)).unwrap().0
}

fn dense(p: &Mlp2Params, x: &[f64]) -> Vec<f64> {
    let layer = |w: &Matrix, b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..w.rows())
            .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum::<f64>() + b[r])
            .collect()
    };
    let h: Vec<f64> = layer(&p.w1, &p.b1, x).into_iter().map(|v| v.max(0.0)).collect();
    layer(&p.w2, &p.b2, &h)
}

fn unit_of(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Brute-force object score from raw parameters.
fn oracle_score(model: &HscModel, banks: &Banks, scene: &[f64], app: &[f64], mot: Option<&[f64]>) -> f64 {
    let stream = |s: StreamId, bank: &MemoryBank, obj: &[f64]| -> f64 {
        let m = model.stream(s);
        let input: Vec<f64> = scene.iter().chain(obj).copied().collect();
        let z = unit_of(dense(&m.encoder, &input));
        let sims: Vec<f64> = (0..bank.len()).map(|i| bank.row(i).iter().zip(&z).map(|(a, b)| a * b).sum()).collect();
        let top = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = sims.iter().map(|v| (v - top).exp()).collect();
        let zsum: f64 = e.iter().sum();
        let mix: Vec<f64> = (0..z.len())
            .map(|d| (0..bank.len()).map(|i| e[i] / zsum * bank.row(i)[d]).sum())
            .collect();
        let r = dense(&m.decoder, &mix);
        obj.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let a = stream(StreamId::App, &banks.app, app);
    match mot {
        None => a,
        Some(m) if model.binary_active => {
            let input: Vec<f64> = scene.iter().chain(m).copied().collect();
            let z = unit_of(dense(&model.mot.encoder, &input));
            let l = dense(&model.binary, &z);
            (a + 1.0 / (1.0 + (l[0] - l[1]).exp())) / 2.0
        }
        Some(m) => (a + stream(StreamId::Mot, &banks.mot, m)) / 2.0,
    }
}

/// Mann–Whitney by explicit pair enumeration, ties count half.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn agreement(pred: &[usize], truth: &[usize]) -> f64 {
    let mut best = std::collections::BTreeMap::<usize, std::collections::BTreeMap<usize, usize>>::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *best.entry(p).or_default().entry(t).or_default() += 1;
    }
    let hit: usize = best.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hit as f64 / pred.len() as f64
}

// ---------------------------------------------------------------- shared runs

fn scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    }
}

fn pipeline(seed: u64) -> PipelineConfig {
    let mut p = PipelineConfig::default();
    p.train.seed = seed;
    p.augment.seed = seed;
    p.stage2.seed = seed;
    p
}

struct SeedRun {
    bench: GeneratedBenchmark,
    full: Checkpoint,
    no_ma: Checkpoint,
    plain: Checkpoint,
    elapsed_full: Duration,
}

impl SeedRun {
    fn auc(&self, c: &Checkpoint) -> f64 {
        let s = evaluate_checkpoint(c, &self.bench.test, 2.0, false, None).unwrap();
        let a = s.auc().unwrap();
        assert_eq!(a, pairwise_auc(&s.smoothed, &s.labels), "library AUC disagrees with pair enumeration");
        a
    }
}

fn seed_run(seed: u64) -> SeedRun {
    let start = Instant::now();
    let bench = generate_mixture_dataset(&scenario(seed)).unwrap();
    let cfg = pipeline(seed);
    let (no_ma, _) = run_stage1(&bench.train, &cfg).unwrap();
    let mut full = no_ma.clone();
    run_stage2(&mut full, &bench.train, &cfg).unwrap();
    let elapsed_full = start.elapsed();
    let mut plain_cfg = pipeline(seed);
    plain_cfg.train.losses = LossSwitches::RECONSTRUCTION_ONLY;
    plain_cfg.stage2_mode = Stage2Mode::Off;
    let (plain, _) = run_stage1(&bench.train, &plain_cfg).unwrap();
    SeedRun {
        bench,
        full,
        no_ma,
        plain,
        elapsed_full,
    }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------- criteria

fn toy(seed: u64) -> (HscModel, Banks, TrainingSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        appearance: 3,
        motion: 2,
        scene: 2,
        latent: 3,
        num_scenes: 2,
        hidden: Some(4),
    };
    let mut model = HscModel::init(dims, &mut rng).unwrap();
    for s in StreamId::ALL {
        let m = model.stream_mut(s);
        m.classifier = Matrix::from_vec(2, 3, uniform(6, &mut rng)).unwrap();
        m.encoder.b1 = uniform(4, &mut rng);
        m.encoder.b2 = uniform(3, &mut rng);
        m.decoder.b1 = uniform(4, &mut rng);
    }
    let scene_features = vec![unit(2, &mut rng), unit(2, &mut rng)];
    let mut app = Vec::new();
    let mut mot = Vec::new();
    let mut slots = Vec::new();
    for i in 0..5 {
        let clip = i % 2;
        app.push(StreamItem {
            sample: i,
            clip,
            object: uniform(3, &mut rng),
            scene_label: clip,
            class_id: i % 3 % 2,
        });
        let ms = (i != 2).then(|| {
            mot.push(StreamItem {
                sample: i,
                clip,
                object: uniform(2, &mut rng),
                scene_label: clip,
                class_id: i / 3,
            });
            mot.len() - 1
        });
        slots.push((i, ms));
    }
    let set = TrainingSet {
        scene_features,
        num_scenes: 2,
        vocab: Vocab {
            app: vec!["a".into(), "b".into()],
            mot: vec!["x".into(), "y".into()],
        },
        dims: Dims {
            appearance: 3,
            motion: 2,
            scene: 2,
        },
        app,
        mot,
        slots,
    };
    let mut banks = init_banks(&model, &set, 0.9).unwrap();
    for s in StreamId::ALL {
        let b = banks.get_mut(s);
        for i in 0..b.len() {
            let r = unit(3, &mut rng);
            b.rows.row_mut(i).copy_from_slice(&r);
        }
    }
    (model, banks, set)
}

fn model_params(m: &mut HscModel) -> Vec<&mut [f64]> {
    let HscModel { app, mot, .. } = m;
    let mut v = Vec::new();
    for s in [app, mot] {
        v.extend(s.encoder.blocks_mut());
        v.extend(s.decoder.blocks_mut());
        v.extend(s.classifier.blocks_mut());
    }
    v
}

fn flat_mlp(p: &Mlp2Params) -> Vec<f64> {
    p.blocks().concat()
}

fn set_mlp(p: &mut Mlp2Params, v: &[f64]) {
    let mut o = 0;
    for b in p.blocks_mut() {
        let n = b.len();
        b.copy_from_slice(&v[o..o + n]);
        o += n;
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut check = |e: f64| {
        worst = worst.max(e);
        n += 1;
    };
    for _ in 0..25 {
        // two-layer perceptron: input and parameters
        let (i, h, o) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5));
        let mut p = Mlp2Params::init(i, h, o, &mut rng);
        p.b1 = uniform(h, &mut rng);
        let x = uniform(i, &mut rng);
        let c = uniform(o, &mut rng);
        let f = |p: &Mlp2Params, x: &[f64]| -> f64 { dense(p, x).iter().zip(&c).map(|(a, b)| a * b).sum() };
        let (_, cache) = p.forward(&x).unwrap();
        let (dx, dp) = p.backward(&cache, &c).unwrap();
        check(rel_err(&dx, &central_diff(&x, |x| f(&p, x))));
        let num = central_diff(&flat_mlp(&p), |v| {
            let mut q = p.clone();
            set_mlp(&mut q, v);
            f(&q, &x)
        });
        check(rel_err(&flat_mlp(&dp), &num));

        // normalization
        let x = uniform(5, &mut rng);
        let c = uniform(5, &mut rng);
        let (_, nc) = l2_normalize(&x).unwrap();
        let g = nc.backward(&c).unwrap();
        check(rel_err(&g, &central_diff(&x, |x| unit_of(x.to_vec()).iter().zip(&c).map(|(a, b)| a * b).sum())));

        // reconstruction and scene classification
        let t = uniform(4, &mut rng);
        let r = uniform(4, &mut rng);
        let lg = reconstruction(&t, &r).unwrap();
        check(rel_err(&lg.grad, &central_diff(&r, |r| t.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum())));
        let logits = uniform(3, &mut rng);
        let lab = rng.random_range(0..3);
        let lg = linear_classification(&logits, lab).unwrap();
        let ce = |l: &[f64]| l.iter().map(|v| v.exp()).sum::<f64>().ln() - l[lab];
        check(rel_err(&lg.grad, &central_diff(&logits, ce)));

        // contrastive terms against an independent InfoNCE
        let rows: Vec<Vec<f64>> = (0..7).map(|_| unit(3, &mut rng)).collect();
        let scenes: Vec<usize> = (0..7).map(|k| k % 2).collect();
        let classes: Vec<usize> = (0..7).map(|_| rng.random_range(0..2)).collect();
        let bank = MemoryBank::new(StreamId::App, 0.9, Matrix::from_rows(&rows).unwrap(), scenes.clone(), classes.clone(), (0..7).collect()).unwrap();
        let anchor = uniform(3, &mut rng);
        let tau = rng.random_range(0.2..1.0);
        let nce = |a: &[f64], den: &dyn Fn(usize) -> bool, pos: &dyn Fn(usize) -> bool| -> f64 {
            let an = unit_of(a.to_vec());
            let s: Vec<f64> = rows.iter().map(|r| r.iter().zip(&an).map(|(x, y)| x * y).sum::<f64>() / tau).collect();
            let z: f64 = (0..7).filter(|&k| den(k)).map(|k| s[k].exp()).sum();
            (0..7).filter(|&k| den(k) && pos(k)).map(|k| z.ln() - s[k]).sum()
        };
        let sc = scene_contrast(&anchor, &bank, 0, tau).unwrap().unwrap();
        let sc_fn = |a: &[f64]| nce(a, &|_| true, &|k| scenes[k] == 0);
        assert!((sc.loss - sc_fn(&anchor)).abs() < 1e-9 * sc.loss.max(1.0));
        check(rel_err(&sc.grad, &central_diff(&anchor, sc_fn)));
        if let Some(oc) = object_contrast(&anchor, &bank, 1, 0, tau).unwrap() {
            let oc_fn = |a: &[f64]| nce(a, &|k| scenes[k] == 1, &|k| classes[k] == 0);
            assert!((oc.loss - oc_fn(&anchor)).abs() < 1e-9 * oc.loss.max(1.0));
            check(rel_err(&oc.grad, &central_diff(&anchor, oc_fn)));
        }

        // binary head cross-entropy, parameters
        let mut head = Mlp2Params::init(3, 3, 2, &mut rng);
        head.b1 = uniform(3, &mut rng);
        let z = unit(3, &mut rng);
        let y = rng.random_range(0..2);
        let (logits, cache) = head.forward(&z).unwrap();
        let lg = linear_classification(&logits, y).unwrap();
        let (_, dh) = head.backward(&cache, &lg.grad).unwrap();
        let num = central_diff(&flat_mlp(&head), |v| {
            let mut q = head.clone();
            set_mlp(&mut q, v);
            ce_at(&dense(&q, &z), y)
        });
        check(rel_err(&flat_mlp(&dh), &num));
    }
    // full objective through both encoders, decoders and classifiers
    for seed in 0..8 {
        let (model, banks, set) = toy(seed);
        let batch: Vec<usize> = (0..set.len()).collect();
        let out = combined_loss(&model, &banks, &set, &batch, 0.5, LossSwitches::FULL).unwrap();
        let mut analytic = Vec::new();
        for g in [&out.app_grads, &out.mot_grads] {
            analytic.extend(flat_mlp(&g.encoder));
            analytic.extend(flat_mlp(&g.decoder));
            analytic.extend(g.classifier.blocks().concat());
        }
        let mut probe = model.clone();
        let flat: Vec<f64> = model_params(&mut probe).iter().flat_map(|b| b.to_vec()).collect();
        let num = central_diff(&flat, |v| {
            let mut m = model.clone();
            let mut o = 0;
            for b in model_params(&mut m) {
                let k = b.len();
                b.copy_from_slice(&v[o..o + k]);
                o += k;
            }
            combined_loss(&m, &banks, &set, &batch, 0.5, LossSwitches::FULL).unwrap().loss
        });
        check(rel_err(&analytic, &num));
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-4 && n >= 100 && t < Duration::from_secs(30),
        format!("{n} instances, worst relative error {worst:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn ce_at(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[y]
}

fn criterion_2(run: &SeedRun) -> Outcome {
    let mut test: Dataset = run.bench.test.clone();
    test.samples.truncate(200);
    let scenes = dataset_scene_features(&test).unwrap();
    let lookup = test.clip_lookup();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for ckpt in [&run.no_ma, &run.full] {
        let scores = score_dataset(&ckpt.model, &ckpt.banks, &test, &scenes).unwrap();
        for (s, got) in test.samples.iter().zip(&scores) {
            let want = oracle_score(&ckpt.model, &ckpt.banks, &scenes[lookup[&s.clip_key()]], &s.appearance, s.motion.as_deref());
            worst = worst.max((got.total - want).abs() / want.abs().max(1.0));
            count += 1;
        }
    }
    outcome(
        worst <= 1e-12 && test.samples.len() == 200,
        format!("{count} scores over 200 samples (reconstruction and binary-head paths), worst deviation {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let tree = KinematicTree::coco17();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_rot: f64 = 0.0;
    let mut worst_bone: f64 = 0.0;
    let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    for i in 0..1000 {
        let k = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let p = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        worst_rot = worst_rot.max((d(rotate_keypoint(k, p, a), p) - d(k, p)).abs());

        let frame = hsc_core::data::SkeletonFrame {
            keypoints: (0..17).map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]).collect(),
        };
        let cfg = AugmentConfig {
            p_st: rng.random_range(0.0..1.0),
            angle_min: -std::f64::consts::PI,
            angle_max: std::f64::consts::PI,
            seed: i,
            ..AugmentConfig::default()
        };
        let (out, _) = spatial_transform(&frame, &tree, &cfg, &mut rng).unwrap();
        for (c, p) in tree.bones() {
            worst_bone = worst_bone.max((d(out.keypoints[c], out.keypoints[p]) - d(frame.keypoints[c], frame.keypoints[p])).abs());
        }
    }
    outcome(
        worst_rot <= 1e-9 && worst_bone <= 1e-9,
        format!("1000 rotations, worst parent-distance drift {worst_rot:.2e}; 1000 transforms, worst bone drift {worst_bone:.2e}"),
    )
}

fn criterion_4(run: &SeedRun) -> Outcome {
    let full = run.auc(&run.full);
    let plain = run.auc(&run.plain);
    let t = run.elapsed_full;
    outcome(
        full >= 0.90 && full - plain >= 0.02 && t < Duration::from_secs(300),
        format!("seed 0: full HSC {full:.4}, plain AE {plain:.4} (gap {:.4}), training {:.1}s", full - plain, t.as_secs_f64()),
    )
}

fn criterion_5(runs: &[SeedRun]) -> Outcome {
    let full: Vec<f64> = runs.iter().map(|r| r.auc(&r.full)).collect();
    let no_ma: Vec<f64> = runs.iter().map(|r| r.auc(&r.no_ma)).collect();
    let plain: Vec<f64> = runs.iter().map(|r| r.auc(&r.plain)).collect();
    let (f, n, p) = (median(&full), median(&no_ma), median(&plain));
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        f >= n && n >= p && f - p >= 0.02,
        format!(
            "medians over {} seeds: full {f:.4} >= no-MA {n:.4} >= plain {p:.4} [full {}; no-MA {}; plain {}]",
            runs.len(),
            fmt(&full),
            fmt(&no_ma),
            fmt(&plain)
        ),
    )
}

fn criterion_6(run: &SeedRun) -> Outcome {
    let full = run.auc(&run.full);
    let aucs: Vec<f64> = (0..5)
        .map(|seed| {
            let m = MemorySubsample {
                size: MemorySize::Fraction(0.25),
                seed,
            };
            let banks = m.apply(&run.full.banks);
            assert_eq!(banks.app.len(), (run.full.banks.app.len() as f64 * 0.25).round() as usize);
            let s = evaluate_checkpoint(&run.full, &run.bench.test, 2.0, false, Some(m)).unwrap();
            pairwise_auc(&s.smoothed, &s.labels)
        })
        .collect();
    let med = median(&aucs);
    outcome(
        (med - full).abs() <= 0.02,
        format!(
            "full bank {full:.4} ({} entries), 25% bank median {med:.4} over 5 seeds, change {:+.4}",
            run.full.banks.app.len(),
            med - full
        ),
    )
}

fn criterion_7(run: &SeedRun) -> Outcome {
    let features = dataset_scene_features(&run.bench.train).unwrap();
    let c = SceneClustering::fit(&features, 0.15, 3).unwrap();
    let a = agreement(&c.labels, &run.bench.truth.train_clip_scenes);
    outcome(
        a >= 0.95 && c.num_scenes() == 2,
        format!("{} clusters, agreement {:.4} over {} training clips", c.num_scenes(), a, features.len()),
    )
}

fn hsc(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_hsc"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run hsc");
    assert!(out.status.success(), "hsc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn criterion_8() -> Outcome {
    let replay = |dir: &Path| -> (Vec<u8>, Vec<u8>, f64, String) {
        hsc(&["gen", "--seed", "3", "--run-dir", "gen"], dir);
        let before = std::fs::read(dir.join("gen/train.jsonl")).unwrap();
        hsc(&["train", "--train", "gen/train.jsonl", "--seed", "3", "--run-dir", "train"], dir);
        hsc(
            &["augment", "--train", "gen/train.jsonl", "--checkpoint", "train/model.hsc", "--seed", "3", "--run-dir", "aug"],
            dir,
        );
        let printed = hsc(&["eval", "--test", "gen/test.jsonl", "--checkpoint", "aug/model.hsc", "--run-dir", "eval"], dir);
        assert_eq!(before, std::fs::read(dir.join("gen/train.jsonl")).unwrap(), "train split modified");
        let metrics: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("eval/metrics.json")).unwrap()).unwrap();
        (
            std::fs::read(dir.join("train/model.hsc")).unwrap(),
            std::fs::read(dir.join("aug/model.hsc")).unwrap(),
            metrics["auc"].as_f64().unwrap(),
            printed.lines().next().unwrap_or_default().to_string(),
        )
    };
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = replay(a_dir.path());
    let b = replay(b_dir.path());
    let same = a.0 == b.0 && a.1 == b.1 && a.2.to_bits() == b.2.to_bits() && a.3 == b.3;
    outcome(
        same,
        format!(
            "stage-1 checkpoints {} bytes identical: {}, final checkpoints identical: {}, AUC {} vs {} ({})",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1,
            a.2,
            b.2,
            a.3
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    // cargo passes harness flags such as --list; only a plain run executes
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let runs: Vec<SeedRun> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5).map(|seed| s.spawn(move || seed_run(seed))).collect();
        handles.into_iter().map(|h| h.join().expect("seed run")).collect()
    });
    let results = [
        ("gradient suite", guarded(criterion_1)),
        ("scoring oracle equivalence", guarded(|| criterion_2(&runs[0]))),
        ("geometry invariants", guarded(criterion_3)),
        ("scene-dependent detection", guarded(|| criterion_4(&runs[0]))),
        ("ablation ordering", guarded(|| criterion_5(&runs))),
        ("memory-size robustness", guarded(|| criterion_6(&runs[0]))),
        ("scene clustering", guarded(|| criterion_7(&runs[0]))),
        ("determinism", guarded(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
