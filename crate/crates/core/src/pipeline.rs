//! End-to-end orchestration shared by the command line and the tests:
//! scene clustering, stage-one training, motion augmentation with stage two,
//! test scoring, and the diagnostic exports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Split};
use crate::error::{HscError, Result};
use crate::model::{Banks, MemoryBank, StreamId};
use crate::nn::Matrix;
use crate::scene::{assign_scene_labels, dataset_scene_features, SceneClustering, DEFAULT_EPS, DEFAULT_MIN_PTS};
use crate::score::{evaluate, ScoreSeries};
use crate::skeleton::{augment_tracklet, motion_featurize, AugmentConfig};
use crate::train::{
    pseudo_label_augmented, train_stage1, train_stage2, AugmentedMotion, EpochStats, PseudoLabels, Stage2Config,
    Stage2Stats, TrainConfig, TrainingSet, Vocab,
};

/// Motion-augmentation variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// No augmentation.
    Off,
    /// Augmented samples judged normal join the motion memory bank.
    NormalOnly,
    /// Normal and abnormal augmented samples train the binary head.
    #[default]
    NormalAndAbnormal,
}

impl Stage2Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Stage2Mode::Off),
            "ma-" | "normal_only" => Ok(Stage2Mode::NormalOnly),
            "ma-+" | "ma+-" | "normal_and_abnormal" => Ok(Stage2Mode::NormalAndAbnormal),
            other => Err(HscError::Config(format!(
                "unknown stage-2 mode {other:?} (expected off, ma-, ma-+)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub scene_eps: f64,
    pub scene_min_pts: usize,
    pub augment: AugmentConfig,
    pub stage2: Stage2Config,
    pub stage2_mode: Stage2Mode,
    /// Augmented copies drawn per original motion sample.
    pub copies_per_sample: usize,
    /// Smoothing width in clips.
    pub sigma_clips: f64,
    pub normalize_scores: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            scene_eps: DEFAULT_EPS,
            scene_min_pts: DEFAULT_MIN_PTS,
            augment: AugmentConfig::default(),
            stage2: Stage2Config::default(),
            stage2_mode: Stage2Mode::default(),
            copies_per_sample: 2,
            sigma_clips: 2.0,
            normalize_scores: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        if !(self.scene_eps > 0.0) || self.scene_min_pts == 0 {
            return Err(HscError::Config("scene eps and min_pts must be positive".into()));
        }
        if !(self.sigma_clips >= 0.0) {
            return Err(HscError::Config(format!("sigma must be >= 0, got {}", self.sigma_clips)));
        }
        Ok(())
    }
}

/// Clusters the training clips and resolves samples against the labels.
pub fn prepare_training(train: &Dataset, eps: f64, min_pts: usize) -> Result<(TrainingSet, SceneClustering)> {
    if train.split != Split::Train {
        return Err(HscError::Usage("expected a train split".into()));
    }
    let features = dataset_scene_features(train)?;
    let clustering = SceneClustering::fit(&features, eps, min_pts)?;
    let set = training_set_with(train, features, &clustering)?;
    Ok((set, clustering))
}

fn training_set_with(train: &Dataset, features: Vec<Vec<f64>>, clustering: &SceneClustering) -> Result<TrainingSet> {
    let mut labeled = train.clone();
    assign_scene_labels(&mut labeled, &features, clustering, true)?;
    TrainingSet::new(&labeled, features, clustering.num_scenes(), Vocab::from_dataset(train))
}

/// Rebuilds the training set a checkpoint was trained on.
pub fn training_set_for(train: &Dataset, ckpt: &Checkpoint) -> Result<TrainingSet> {
    let features = dataset_scene_features(train)?;
    let set = training_set_with(train, features, &ckpt.clustering)?;
    if set.vocab != ckpt.vocab || set.len() != ckpt.banks.app.len() {
        return Err(HscError::Usage("training dataset does not match the checkpoint".into()));
    }
    Ok(set)
}

/// Stage one: returns a checkpoint and per-epoch losses.
pub fn run_stage1(train: &Dataset, cfg: &PipelineConfig) -> Result<(Checkpoint, Vec<EpochStats>)> {
    cfg.validate()?;
    let (set, clustering) = prepare_training(train, cfg.scene_eps, cfg.scene_min_pts)?;
    let out = train_stage1(&set, &cfg.train)?;
    let ckpt = Checkpoint {
        model: out.model,
        banks: out.banks,
        vocab: set.vocab,
        clustering,
        config: serde_json::to_value(cfg)?,
    };
    Ok((ckpt, out.history))
}

/// Augmented copies of every training motion sample that has a skeleton.
pub fn augment_training_set(train: &Dataset, set: &TrainingSet, cfg: &AugmentConfig, copies: usize) -> Result<Vec<AugmentedMotion>> {
    cfg.validate()?;
    let tree = train.tree()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for item in &set.mot {
        let Some(seq) = &train.samples[item.sample].skeleton else {
            continue;
        };
        for _ in 0..copies {
            let (frames, record) = augment_tracklet(seq, &tree, cfg, &mut rng)?;
            if frames.len() < 2 {
                continue;
            }
            let motion = match motion_featurize(&frames, &tree) {
                Ok(m) => m,
                Err(HscError::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            };
            out.push(AugmentedMotion {
                source_sample: item.sample,
                clip: item.clip,
                motion,
                record: Some(record),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub mode: Stage2Mode,
    pub augmented: usize,
    pub abnormal: usize,
    pub threshold: f64,
    pub history: Vec<Stage2Stats>,
}

/// Stage-two summary plus every augmented sample and its pseudo label.
#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub report: Stage2Report,
    pub augmented: Vec<AugmentedMotion>,
    pub labels: Option<PseudoLabels>,
}

/// Motion augmentation plus the selected stage-two variant, applied in place.
pub fn run_stage2(ckpt: &mut Checkpoint, train: &Dataset, cfg: &PipelineConfig) -> Result<Stage2Report> {
    run_stage2_detailed(ckpt, train, cfg).map(|o| o.report)
}

pub fn run_stage2_detailed(ckpt: &mut Checkpoint, train: &Dataset, cfg: &PipelineConfig) -> Result<Stage2Outcome> {
    cfg.validate()?;
    let mut report = Stage2Report {
        mode: cfg.stage2_mode,
        augmented: 0,
        abnormal: 0,
        threshold: f64::NAN,
        history: Vec::new(),
    };
    if cfg.stage2_mode == Stage2Mode::Off {
        return Ok(Stage2Outcome {
            report,
            augmented: Vec::new(),
            labels: None,
        });
    }
    let set = training_set_for(train, ckpt)?;
    let augmented = augment_training_set(train, &set, &cfg.augment, cfg.copies_per_sample)?;
    let labels: PseudoLabels = pseudo_label_augmented(&ckpt.model, &ckpt.banks, &set, &augmented, cfg.stage2.percentile)?;
    report.augmented = augmented.len();
    report.abnormal = labels.abnormal.iter().filter(|&&a| a).count();
    report.threshold = labels.threshold;
    let slot_of = |sample: usize| set.slots[sample].1.expect("augmented samples come from motion items");
    let latent = |a: &AugmentedMotion| ckpt.model.encode(StreamId::Mot, &set.scene_features[a.clip], &a.motion);
    match cfg.stage2_mode {
        Stage2Mode::Off => unreachable!(),
        Stage2Mode::NormalOnly => {
            let bank = &ckpt.banks.mot;
            let mut rows: Vec<Vec<f64>> = bank.rows.iter_rows().map(<[f64]>::to_vec).collect();
            let mut scenes = bank.scene_labels.clone();
            let mut classes = bank.class_ids.clone();
            let mut samples = bank.sample_index.clone();
            for (a, &abnormal) in augmented.iter().zip(&labels.abnormal) {
                if abnormal {
                    continue;
                }
                let src = slot_of(a.source_sample);
                rows.push(latent(a)?);
                scenes.push(bank.scene_labels[src]);
                classes.push(bank.class_ids[src]);
                samples.push(a.source_sample);
            }
            let matrix = if rows.is_empty() {
                Matrix::zeros(0, bank.dim())
            } else {
                Matrix::from_rows(&rows)?
            };
            ckpt.banks.mot = MemoryBank::new(StreamId::Mot, bank.momentum, matrix, scenes, classes, samples)?;
        }
        Stage2Mode::NormalAndAbnormal => {
            let mut examples = Vec::with_capacity(set.mot.len() + augmented.len());
            for it in &set.mot {
                let l = ckpt.model.encode(StreamId::Mot, &set.scene_features[it.clip], &it.object)?;
                examples.push((l, false));
            }
            for (a, &abnormal) in augmented.iter().zip(&labels.abnormal) {
                examples.push((latent(a)?, abnormal));
            }
            report.history = train_stage2(&mut ckpt.model, &examples, &cfg.stage2)?;
        }
    }
    ckpt.config = serde_json::to_value(cfg)?;
    Ok(Stage2Outcome {
        report,
        augmented,
        labels: Some(labels),
    })
}

/// Trains stage one and, unless disabled, stage two.
pub fn train_system(train: &Dataset, cfg: &PipelineConfig) -> Result<(Checkpoint, Vec<EpochStats>, Stage2Report)> {
    let (mut ckpt, history) = run_stage1(train, cfg)?;
    let report = run_stage2(&mut ckpt, train, cfg)?;
    Ok((ckpt, history, report))
}

/// Scores a test split, optionally against a random subset of each bank.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    test: &Dataset,
    sigma_clips: f64,
    normalize: bool,
    memory: Option<MemorySubsample>,
) -> Result<ScoreSeries> {
    if test.split != Split::Test {
        return Err(HscError::Usage("expected a test split".into()));
    }
    let banks = match memory {
        Some(m) => m.apply(&ckpt.banks),
        None => ckpt.banks.clone(),
    };
    evaluate(&ckpt.model, &banks, test, sigma_clips, normalize)
}

/// Test-time bank reduction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MemorySize {
    Entries(usize),
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySubsample {
    pub size: MemorySize,
    pub seed: u64,
}

impl MemorySubsample {
    pub fn apply(&self, banks: &Banks) -> Banks {
        let n = |b: &MemoryBank| match self.size {
            MemorySize::Entries(k) => k,
            MemorySize::Fraction(f) => ((b.len() as f64 * f).round() as usize).max(1),
        };
        Banks {
            app: banks.app.subsample(n(&banks.app), self.seed),
            mot: banks.mot.subsample(n(&banks.mot), self.seed.wrapping_add(1)),
        }
    }
}

/// AUC per memory size, median over subsample seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub aucs: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn memory_sweep(
    ckpt: &Checkpoint,
    test: &Dataset,
    sizes: &[usize],
    seeds: &[u64],
    sigma_clips: f64,
    normalize: bool,
) -> Result<Vec<SweepPoint>> {
    sizes
        .iter()
        .map(|&size| {
            let aucs = seeds
                .iter()
                .map(|&seed| {
                    let m = MemorySubsample {
                        size: MemorySize::Entries(size),
                        seed,
                    };
                    evaluate_checkpoint(ckpt, test, sigma_clips, normalize, Some(m))?.auc()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepPoint {
                size,
                median: median(&aucs),
                aucs,
            })
        })
        .collect()
}

/// Rows: nearest-centroid scene of the sample's clip; columns: argmax of the
/// stream's linear scene classifier on the sample's latent.
pub fn scene_confusion(ckpt: &Checkpoint, ds: &Dataset, stream: StreamId) -> Result<Vec<Vec<usize>>> {
    let k = ckpt.clustering.num_scenes();
    let features = dataset_scene_features(ds)?;
    let lookup = ds.clip_lookup();
    let mut m = vec![vec![0usize; k]; k];
    for s in &ds.samples {
        let object = match stream {
            StreamId::App => &s.appearance,
            StreamId::Mot => match &s.motion {
                Some(v) => v,
                None => continue,
            },
        };
        let clip = lookup[&s.clip_key()];
        let truth = ckpt.clustering.nearest(&features[clip])?;
        let latent = ckpt.model.encode(stream, &features[clip], object)?;
        let logits = ckpt.model.classify_scene(stream, &latent)?;
        let pred = logits
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > logits[best] { i } else { best });
        m[truth][pred] += 1;
    }
    Ok(m)
}

/// `stream,slot,sample,scene,class,z0,z1,...`
pub fn memory_csv(banks: &Banks) -> String {
    let dim = banks.app.dim();
    let mut out = String::from("stream,slot,sample,scene,class");
    for i in 0..dim {
        out.push_str(&format!(",z{i}"));
    }
    out.push('\n');
    for s in StreamId::ALL {
        let b = banks.get(s);
        for i in 0..b.len() {
            out.push_str(&format!(
                "{},{},{},{},{}",
                s.name(),
                i,
                b.sample_index[i],
                b.scene_labels[i],
                b.class_ids[i]
            ));
            for v in b.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Confusion matrix as CSV with a header row of predicted labels.
pub fn confusion_csv(m: &[Vec<usize>]) -> String {
    let mut out = String::from("scene");
    for j in 0..m.len() {
        out.push_str(&format!(",pred_{j}"));
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
