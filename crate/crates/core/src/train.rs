//! Combined per-stream objective and the two training stages.
//!
//! Stage one trains both autoencoders with scene contrast, object contrast,
//! scene classification and reconstruction, keeping one momentum-updated memory
//! slot per training sample. Stage two fits the binary head on motion latents
//! of original and augmented samples while everything else stays frozen.

use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{HscError, Result};
use crate::loss::{linear_classification, object_contrast, reconstruction, scene_contrast};
use crate::model::{Banks, HscModel, MemoryBank, ModelDims, StreamId, StreamModel};
use crate::nn::{softmax, squared_distance, AdaGradState, Matrix, Mlp2Params, Params, ADAGRAD_EPS};
use crate::skeleton::AugmentRecord;

/// Which of the four per-stream terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub scene_contrast: bool,
    pub object_contrast: bool,
    pub classification: bool,
    pub reconstruction: bool,
}

impl LossSwitches {
    pub const FULL: LossSwitches = LossSwitches {
        scene_contrast: true,
        object_contrast: true,
        classification: true,
        reconstruction: true,
    };

    /// Plain autoencoders: no contrast, no scene classification.
    pub const RECONSTRUCTION_ONLY: LossSwitches = LossSwitches {
        scene_contrast: false,
        object_contrast: false,
        classification: false,
        reconstruction: true,
    };
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub momentum: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub hidden_dim: Option<usize>,
    pub seed: u64,
    pub losses: LossSwitches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.5,
            momentum: 0.9,
            lr: 0.01,
            batch_size: 64,
            epochs: 30,
            latent_dim: 64,
            hidden_dim: None,
            seed: 0,
            losses: LossSwitches::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(HscError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HscError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr > 0.0) {
            return Err(HscError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.latent_dim == 0 {
            return Err(HscError::Config("batch_size and latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Class names per stream; a class id is a position in the sorted name list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub app: Vec<String>,
    pub mot: Vec<String>,
}

/// Action class used for motion samples that carry none.
pub const UNKNOWN_ACTION: &str = "unknown";

impl Vocab {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let app: BTreeSet<&str> = ds.samples.iter().map(|s| s.object_class.as_str()).collect();
        let mot: BTreeSet<&str> = ds
            .samples
            .iter()
            .filter(|s| s.has_motion())
            .map(|s| s.action_class.as_deref().unwrap_or(UNKNOWN_ACTION))
            .collect();
        Vocab {
            app: app.into_iter().map(String::from).collect(),
            mot: mot.into_iter().map(String::from).collect(),
        }
    }

    pub fn class_id(&self, stream: StreamId, name: &str) -> Option<usize> {
        let list = match stream {
            StreamId::App => &self.app,
            StreamId::Mot => &self.mot,
        };
        list.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }
}

/// One training sample as seen by one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamItem {
    pub sample: usize,
    pub clip: usize,
    pub object: Vec<f64>,
    pub scene_label: usize,
    pub class_id: usize,
}

/// Training samples resolved against scene features and labels.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub scene_features: Vec<Vec<f64>>,
    pub num_scenes: usize,
    pub vocab: Vocab,
    pub dims: crate::data::Dims,
    /// Slot order of each bank.
    pub app: Vec<StreamItem>,
    pub mot: Vec<StreamItem>,
    /// Per dataset sample: slot in the app bank and (if any) in the mot bank.
    pub slots: Vec<(usize, Option<usize>)>,
}

impl TrainingSet {
    /// `dataset` must carry scene labels on every clip; `scene_features` is in clip order.
    pub fn new(dataset: &Dataset, scene_features: Vec<Vec<f64>>, num_scenes: usize, vocab: Vocab) -> Result<Self> {
        if dataset.split != Split::Train {
            return Err(HscError::Usage("training set must come from the train split".into()));
        }
        crate::error::check_dim("scene features", dataset.clips.len(), scene_features.len())?;
        let lookup = dataset.clip_lookup();
        let mut app = Vec::new();
        let mut mot = Vec::new();
        let mut slots = Vec::with_capacity(dataset.samples.len());
        for (i, s) in dataset.samples.iter().enumerate() {
            let clip = *lookup
                .get(&s.clip_key())
                .ok_or_else(|| HscError::Usage(format!("sample {i} has no clip")))?;
            let scene_label = dataset.clips[clip]
                .scene_label
                .ok_or_else(|| HscError::Usage(format!("clip {clip} has no scene label")))?
                as usize;
            if scene_label >= num_scenes {
                return Err(HscError::OutOfRange {
                    index: scene_label,
                    len: num_scenes,
                });
            }
            let app_class = vocab
                .class_id(StreamId::App, &s.object_class)
                .ok_or_else(|| HscError::Usage(format!("object class {} not in vocabulary", s.object_class)))?;
            let app_slot = app.len();
            app.push(StreamItem {
                sample: i,
                clip,
                object: s.appearance.clone(),
                scene_label,
                class_id: app_class,
            });
            let mot_slot = match &s.motion {
                Some(m) => {
                    let name = s.action_class.as_deref().unwrap_or(UNKNOWN_ACTION);
                    let class_id = vocab
                        .class_id(StreamId::Mot, name)
                        .ok_or_else(|| HscError::Usage(format!("action class {name} not in vocabulary")))?;
                    mot.push(StreamItem {
                        sample: i,
                        clip,
                        object: m.clone(),
                        scene_label,
                        class_id,
                    });
                    Some(mot.len() - 1)
                }
                None => None,
            };
            slots.push((app_slot, mot_slot));
        }
        Ok(TrainingSet {
            scene_features,
            num_scenes,
            vocab,
            dims: dataset.dims,
            app,
            mot,
            slots,
        })
    }

    pub fn items(&self, s: StreamId) -> &[StreamItem] {
        match s {
            StreamId::App => &self.app,
            StreamId::Mot => &self.mot,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn model_dims(&self, cfg: &TrainConfig) -> ModelDims {
        ModelDims {
            appearance: self.dims.appearance,
            motion: self.dims.motion,
            scene: self.dims.scene,
            latent: cfg.latent_dim,
            num_scenes: self.num_scenes,
            hidden: cfg.hidden_dim,
        }
    }
}

/// Banks filled with the current encodings of every training item.
pub fn init_banks(model: &HscModel, set: &TrainingSet, momentum: f64) -> Result<Banks> {
    let bank = |s: StreamId| -> Result<MemoryBank> {
        let items = set.items(s);
        let mut rows = Matrix::zeros(items.len(), model.dims.latent);
        for (i, it) in items.iter().enumerate() {
            let l = model.encode(s, &set.scene_features[it.clip], &it.object)?;
            rows.row_mut(i).copy_from_slice(&l);
        }
        MemoryBank::new(
            s,
            momentum,
            rows,
            items.iter().map(|i| i.scene_label).collect(),
            items.iter().map(|i| i.class_id).collect(),
            items.iter().map(|i| i.sample).collect(),
        )
    };
    Ok(Banks {
        app: bank(StreamId::App)?,
        mot: bank(StreamId::Mot)?,
    })
}

/// Gradient buffers shaped like one stream's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamGrads {
    pub encoder: Mlp2Params,
    pub decoder: Mlp2Params,
    pub classifier: Matrix,
}

impl StreamGrads {
    fn zeros_like(m: &StreamModel) -> Self {
        StreamGrads {
            encoder: m.encoder.zeros_like(),
            decoder: m.decoder.zeros_like(),
            classifier: Matrix::zeros(m.classifier.rows(), m.classifier.cols()),
        }
    }

    fn scale(&mut self, f: f64) {
        for b in self
            .encoder
            .blocks_mut()
            .into_iter()
            .chain(self.decoder.blocks_mut())
            .chain(self.classifier.blocks_mut())
        {
            b.iter_mut().for_each(|v| *v *= f);
        }
    }
}

/// Per-term loss sums for one stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermLosses {
    pub scene_contrast: f64,
    pub object_contrast: f64,
    pub classification: f64,
    pub reconstruction: f64,
    /// Samples that entered this stream.
    pub count: usize,
    /// Samples whose scene / object positive set was empty.
    pub skipped_scene: usize,
    pub skipped_object: usize,
}

impl TermLosses {
    pub fn total(&self) -> f64 {
        self.scene_contrast + self.object_contrast + self.classification + self.reconstruction
    }

    fn add(&mut self, o: &TermLosses) {
        self.scene_contrast += o.scene_contrast;
        self.object_contrast += o.object_contrast;
        self.classification += o.classification;
        self.reconstruction += o.reconstruction;
        self.count += o.count;
        self.skipped_scene += o.skipped_scene;
        self.skipped_object += o.skipped_object;
    }

    fn scaled(&self, f: f64) -> TermLosses {
        TermLosses {
            scene_contrast: self.scene_contrast * f,
            object_contrast: self.object_contrast * f,
            classification: self.classification * f,
            reconstruction: self.reconstruction * f,
            ..*self
        }
    }
}

/// Mean batch loss, its gradients and the fresh latents for the memory update.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// `(1/B) Σ_i (L_app(i) + L_mot(i))`
    pub loss: f64,
    /// Term sums divided by the batch size.
    pub app_terms: TermLosses,
    pub mot_terms: TermLosses,
    pub app_grads: StreamGrads,
    pub mot_grads: StreamGrads,
    /// `(stream, slot, latent)` for every encoded item.
    pub latents: Vec<(StreamId, usize, Vec<f64>)>,
}

/// All four terms for one item; accumulates parameter gradients into `grads`.
fn stream_item_loss(
    model: &HscModel,
    bank: &MemoryBank,
    stream: StreamId,
    scene: &[f64],
    item: &StreamItem,
    tau: f64,
    switches: LossSwitches,
    grads: &mut StreamGrads,
) -> Result<(TermLosses, Vec<f64>)> {
    let m = model.stream(stream);
    let (latent, cache) = model.encode_with_cache(stream, scene, &item.object)?;
    let mut d_latent = vec![0.0; latent.len()];
    let mut t = TermLosses {
        count: 1,
        ..Default::default()
    };
    if switches.scene_contrast {
        match scene_contrast(&latent, bank, item.scene_label, tau)? {
            Some(lg) => {
                t.scene_contrast = lg.loss;
                crate::nn::axpy(1.0, &lg.grad, &mut d_latent);
            }
            None => t.skipped_scene = 1,
        }
    }
    if switches.object_contrast {
        match object_contrast(&latent, bank, item.scene_label, item.class_id, tau)? {
            Some(lg) => {
                t.object_contrast = lg.loss;
                crate::nn::axpy(1.0, &lg.grad, &mut d_latent);
            }
            None => t.skipped_object = 1,
        }
    }
    if switches.classification {
        let logits = m.classifier.matvec(&latent)?;
        let lg = linear_classification(&logits, item.scene_label)?;
        t.classification = lg.loss;
        grads.classifier.add_outer(1.0, &lg.grad, &latent);
        crate::nn::axpy(1.0, &m.classifier.matvec_t(&lg.grad)?, &mut d_latent);
    }
    if switches.reconstruction {
        let (recon, dcache) = m.decoder.forward(&latent)?;
        let lg = reconstruction(&item.object, &recon)?;
        t.reconstruction = lg.loss;
        let dx = m.decoder.backward_into(&dcache, &lg.grad, &mut grads.decoder)?;
        crate::nn::axpy(1.0, &dx, &mut d_latent);
    }
    let d_raw = cache.norm.backward(&d_latent)?;
    m.encoder.backward_into(&cache.mlp, &d_raw, &mut grads.encoder)?;
    Ok((t, latent))
}

/// Mean over `batch` (dataset sample indices) of `L_app + L_mot`, with exact
/// gradients for every stage-one parameter. Memory rows are held fixed.
pub fn combined_loss(
    model: &HscModel,
    banks: &Banks,
    set: &TrainingSet,
    batch: &[usize],
    tau: f64,
    switches: LossSwitches,
) -> Result<BatchOutput> {
    if batch.is_empty() {
        return Err(HscError::Usage("empty batch".into()));
    }
    let mut app_grads = StreamGrads::zeros_like(&model.app);
    let mut mot_grads = StreamGrads::zeros_like(&model.mot);
    let mut app_terms = TermLosses::default();
    let mut mot_terms = TermLosses::default();
    let mut latents = Vec::with_capacity(batch.len() * 2);
    for &i in batch {
        let (app_slot, mot_slot) = *set
            .slots
            .get(i)
            .ok_or(HscError::OutOfRange { index: i, len: set.len() })?;
        let item = &set.app[app_slot];
        let (t, l) = stream_item_loss(
            model,
            &banks.app,
            StreamId::App,
            &set.scene_features[item.clip],
            item,
            tau,
            switches,
            &mut app_grads,
        )?;
        app_terms.add(&t);
        latents.push((StreamId::App, app_slot, l));
        if let Some(ms) = mot_slot {
            let item = &set.mot[ms];
            let (t, l) = stream_item_loss(
                model,
                &banks.mot,
                StreamId::Mot,
                &set.scene_features[item.clip],
                item,
                tau,
                switches,
                &mut mot_grads,
            )?;
            mot_terms.add(&t);
            latents.push((StreamId::Mot, ms, l));
        }
    }
    let inv = 1.0 / batch.len() as f64;
    app_grads.scale(inv);
    mot_grads.scale(inv);
    let app_terms = app_terms.scaled(inv);
    let mot_terms = mot_terms.scaled(inv);
    Ok(BatchOutput {
        loss: app_terms.total() + mot_terms.total(),
        app_terms,
        mot_terms,
        app_grads,
        mot_grads,
        latents,
    })
}

/// AdaGrad accumulators for every trainable block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub app_encoder: AdaGradState,
    pub app_decoder: AdaGradState,
    pub app_classifier: AdaGradState,
    pub mot_encoder: AdaGradState,
    pub mot_decoder: AdaGradState,
    pub mot_classifier: AdaGradState,
    pub binary: AdaGradState,
}

impl OptimizerState {
    pub fn new(model: &HscModel) -> Self {
        OptimizerState {
            app_encoder: AdaGradState::new(&model.app.encoder, ADAGRAD_EPS),
            app_decoder: AdaGradState::new(&model.app.decoder, ADAGRAD_EPS),
            app_classifier: AdaGradState::new(&model.app.classifier, ADAGRAD_EPS),
            mot_encoder: AdaGradState::new(&model.mot.encoder, ADAGRAD_EPS),
            mot_decoder: AdaGradState::new(&model.mot.decoder, ADAGRAD_EPS),
            mot_classifier: AdaGradState::new(&model.mot.classifier, ADAGRAD_EPS),
            binary: AdaGradState::new(&model.binary, ADAGRAD_EPS),
        }
    }

    fn apply(&mut self, model: &mut HscModel, out: &BatchOutput, lr: f64) -> Result<()> {
        self.app_encoder.step(&mut model.app.encoder, &out.app_grads.encoder, lr)?;
        self.app_decoder.step(&mut model.app.decoder, &out.app_grads.decoder, lr)?;
        self.app_classifier.step(&mut model.app.classifier, &out.app_grads.classifier, lr)?;
        self.mot_encoder.step(&mut model.mot.encoder, &out.mot_grads.encoder, lr)?;
        self.mot_decoder.step(&mut model.mot.decoder, &out.mot_grads.decoder, lr)?;
        self.mot_classifier.step(&mut model.mot.classifier, &out.mot_grads.classifier, lr)?;
        Ok(())
    }
}

/// Mean per-sample losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub app: TermLosses,
    pub mot: TermLosses,
}

#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub model: HscModel,
    pub banks: Banks,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochStats>,
}

/// Stage-one training on the original (unaugmented) set.
///
/// Banks start from the encodings of the freshly initialized model. Each step
/// evaluates [`combined_loss`] on a shuffled batch, applies AdaGrad, then
/// momentum-updates the slots of every batch sample with the latents from the
/// forward pass.
pub fn train_stage1(set: &TrainingSet, cfg: &TrainConfig) -> Result<Stage1Output> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(HscError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = HscModel::init(set.model_dims(cfg), &mut rng)?;
    let mut banks = init_banks(&model, set, cfg.momentum)?;
    let mut optimizer = OptimizerState::new(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut app = TermLosses::default();
        let mut mot = TermLosses::default();
        for batch in order.chunks(cfg.batch_size) {
            let out = combined_loss(&model, &banks, set, batch, cfg.tau, cfg.losses)?;
            optimizer.apply(&mut model, &out, cfg.lr)?;
            for (s, slot, latent) in &out.latents {
                banks.get_mut(*s).update(*slot, latent)?;
            }
            let b = batch.len() as f64;
            app.add(&out.app_terms.scaled(b));
            mot.add(&out.mot_terms.scaled(b));
        }
        let inv = 1.0 / set.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: (app.total() + mot.total()) * inv,
            app: app.scaled(inv),
            mot: mot.scaled(inv),
        };
        info!(
            target: "hsc::train",
            "{}",
            serde_json::to_string(&stats).unwrap_or_default()
        );
        history.push(stats);
    }
    Ok(Stage1Output {
        model,
        banks,
        optimizer,
        history,
    })
}

/// Motion-stream reconstruction score against memory:
/// `‖f − Θ(Σ w_i M_i)‖²` with `w` the softmax of latent·M.
pub fn motion_score(model: &HscModel, bank: &MemoryBank, scene: &[f64], motion: &[f64]) -> Result<f64> {
    stream_score(model, bank, StreamId::Mot, scene, motion)
}

pub(crate) fn stream_score(
    model: &HscModel,
    bank: &MemoryBank,
    stream: StreamId,
    scene: &[f64],
    object: &[f64],
) -> Result<f64> {
    let latent = model.encode(stream, scene, object)?;
    let (_, recon_latent) = bank.retrieve(&latent)?;
    let recon = model.decode(stream, &recon_latent)?;
    Ok(squared_distance(object, &recon))
}

/// Linear-interpolated percentile (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(HscError::Usage("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(HscError::Config(format!("percentile must be in [0, 100], got {p}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// An augmented motion sample ready for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedMotion {
    pub source_sample: usize,
    pub clip: usize,
    pub motion: Vec<f64>,
    /// Draws that produced it, when it came from a skeleton.
    pub record: Option<AugmentRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub threshold: f64,
    pub scores: Vec<f64>,
    /// `true` = abnormal.
    pub abnormal: Vec<bool>,
}

/// Labels augmented samples by comparing their motion score with the given
/// percentile of the original training samples' motion scores.
pub fn pseudo_label_augmented(
    model: &HscModel,
    banks: &Banks,
    set: &TrainingSet,
    augmented: &[AugmentedMotion],
    percentile_p: f64,
) -> Result<PseudoLabels> {
    if augmented.is_empty() {
        return Err(HscError::NoAugmentedSamples);
    }
    let train_scores = set
        .mot
        .iter()
        .map(|it| motion_score(model, &banks.mot, &set.scene_features[it.clip], &it.object))
        .collect::<Result<Vec<_>>>()?;
    let threshold = percentile(&train_scores, percentile_p)?;
    let scores = augmented
        .iter()
        .map(|a| motion_score(model, &banks.mot, &set.scene_features[a.clip], &a.motion))
        .collect::<Result<Vec<_>>>()?;
    let abnormal = scores.iter().map(|&s| s > threshold).collect();
    Ok(PseudoLabels {
        threshold,
        scores,
        abnormal,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            epochs: 30,
            lr: 0.01,
            batch_size: 64,
            percentile: 95.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Stats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Trains the binary head on motion latents with softmax cross-entropy.
///
/// `examples` pairs a (frozen) motion latent with its label, `true` meaning
/// abnormal. Only `model.binary` changes; afterwards the head is marked active.
pub fn train_stage2(
    model: &mut HscModel,
    examples: &[(Vec<f64>, bool)],
    cfg: &Stage2Config,
) -> Result<Vec<Stage2Stats>> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(HscError::Config("stage-2 batch_size and lr must be positive".into()));
    }
    let positives = examples.iter().filter(|e| e.1).count();
    if positives == 0 {
        return Err(HscError::SingleClass("normal"));
    }
    if positives == examples.len() {
        return Err(HscError::SingleClass("abnormal"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdaGradState::new(&model.binary, ADAGRAD_EPS);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.binary.zeros_like();
            for &i in batch {
                let (latent, abnormal) = &examples[i];
                let (logits, cache) = model.binary.forward(latent)?;
                let lg = linear_classification(&logits, *abnormal as usize)?;
                total += lg.loss;
                let p = softmax(&logits);
                correct += ((p[1] > 0.5) == *abnormal) as usize;
                model.binary.backward_into(&cache, &lg.grad, &mut grads)?;
            }
            let inv = 1.0 / batch.len() as f64;
            for b in grads.blocks_mut() {
                b.iter_mut().for_each(|v| *v *= inv);
            }
            state.step(&mut model.binary, &grads, cfg.lr)?;
        }
        let n = examples.len() as f64;
        let stats = Stage2Stats {
            epoch,
            loss: total / n,
            accuracy: correct as f64 / n,
        };
        info!(
            target: "hsc::stage2",
            "{}",
            serde_json::to_string(&stats).unwrap_or_default()
        );
        history.push(stats);
    }
    model.binary_active = true;
    Ok(history)
}
