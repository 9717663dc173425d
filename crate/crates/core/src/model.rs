//! Scene-aware encoders, object-centric decoders, classifier heads and the
//! momentum memory banks of the two streams.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, HscError, Result};
use crate::nn::{default_hidden, dot, l2_normalize, softmax, Matrix, Mlp2Cache, Mlp2Params, NormCache};

/// Appearance or motion stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamId {
    App,
    Mot,
}

impl StreamId {
    pub const ALL: [StreamId; 2] = [StreamId::App, StreamId::Mot];

    pub fn name(self) -> &'static str {
        match self {
            StreamId::App => "app",
            StreamId::Mot => "mot",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub appearance: usize,
    pub motion: usize,
    pub scene: usize,
    pub latent: usize,
    pub num_scenes: usize,
    /// Hidden width of encoders and decoders; `None` uses the mean of input and output dims.
    pub hidden: Option<usize>,
}

impl ModelDims {
    pub fn object_dim(&self, stream: StreamId) -> usize {
        match stream {
            StreamId::App => self.appearance,
            StreamId::Mot => self.motion,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.appearance == 0 || self.motion == 0 || self.scene == 0 || self.latent == 0 || self.num_scenes == 0 {
            return Err(HscError::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        if self.hidden == Some(0) {
            return Err(HscError::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder, decoder and linear scene classifier of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    /// `[scene, object] → latent`, followed by l2 normalization.
    pub encoder: Mlp2Params,
    /// `latent → object`
    pub decoder: Mlp2Params,
    /// `num_scenes × latent`
    pub classifier: Matrix,
}

/// Forward intermediates of [`HscModel::encode_with_cache`].
#[derive(Clone, Debug)]
pub struct EncodeCache {
    pub mlp: Mlp2Cache,
    pub norm: NormCache,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HscModel {
    pub dims: ModelDims,
    pub app: StreamModel,
    pub mot: StreamModel,
    /// Two-logit head on motion latents (normal, abnormal).
    pub binary: Mlp2Params,
    /// Set once the binary head has been trained; scoring then uses its
    /// probability in place of the motion reconstruction error.
    pub binary_active: bool,
}

impl HscModel {
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let stream = |obj: usize, rng: &mut R| {
            let enc_in = dims.scene + obj;
            let enc_h = dims.hidden.unwrap_or_else(|| default_hidden(enc_in, dims.latent));
            let dec_h = dims.hidden.unwrap_or_else(|| default_hidden(dims.latent, obj));
            StreamModel {
                encoder: Mlp2Params::init(enc_in, enc_h, dims.latent, rng),
                decoder: Mlp2Params::init(dims.latent, dec_h, obj, rng),
                // a linear head starts at zero: uniform class scores
                classifier: Matrix::zeros(dims.num_scenes, dims.latent),
            }
        };
        let app = stream(dims.appearance, rng);
        let mot = stream(dims.motion, rng);
        let binary = Mlp2Params::init(dims.latent, default_hidden(dims.latent, 2), 2, rng);
        Ok(HscModel {
            dims,
            app,
            mot,
            binary,
            binary_active: false,
        })
    }

    pub fn stream(&self, s: StreamId) -> &StreamModel {
        match s {
            StreamId::App => &self.app,
            StreamId::Mot => &self.mot,
        }
    }

    pub fn stream_mut(&mut self, s: StreamId) -> &mut StreamModel {
        match s {
            StreamId::App => &mut self.app,
            StreamId::Mot => &mut self.mot,
        }
    }

    /// Checks parameter shapes against `dims`.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for s in StreamId::ALL {
            let m = self.stream(s);
            m.encoder.validate()?;
            m.decoder.validate()?;
            check_dim("encoder input", self.dims.scene + self.dims.object_dim(s), m.encoder.input_dim())?;
            check_dim("encoder output", self.dims.latent, m.encoder.output_dim())?;
            check_dim("decoder input", self.dims.latent, m.decoder.input_dim())?;
            check_dim("decoder output", self.dims.object_dim(s), m.decoder.output_dim())?;
            check_dim("classifier rows", self.dims.num_scenes, m.classifier.rows())?;
            check_dim("classifier cols", self.dims.latent, m.classifier.cols())?;
        }
        self.binary.validate()?;
        check_dim("binary head input", self.dims.latent, self.binary.input_dim())?;
        check_dim("binary head output", 2, self.binary.output_dim())
    }

    pub fn encode_with_cache(
        &self,
        stream: StreamId,
        scene: &[f64],
        object: &[f64],
    ) -> Result<(Vec<f64>, EncodeCache)> {
        check_dim("scene feature", self.dims.scene, scene.len())?;
        check_dim("object feature", self.dims.object_dim(stream), object.len())?;
        let mut input = Vec::with_capacity(scene.len() + object.len());
        input.extend_from_slice(scene);
        input.extend_from_slice(object);
        let (raw, mlp) = self.stream(stream).encoder.forward(&input)?;
        let (latent, norm) = l2_normalize(&raw)?;
        Ok((latent, EncodeCache { mlp, norm }))
    }

    /// Unit-norm latent of `[scene, object]`.
    pub fn encode(&self, stream: StreamId, scene: &[f64], object: &[f64]) -> Result<Vec<f64>> {
        self.encode_with_cache(stream, scene, object).map(|(l, _)| l)
    }

    /// Reconstructs the object feature only.
    pub fn decode(&self, stream: StreamId, latent: &[f64]) -> Result<Vec<f64>> {
        check_dim("latent", self.dims.latent, latent.len())?;
        self.stream(stream).decoder.predict(latent)
    }

    pub fn classify_scene(&self, stream: StreamId, latent: &[f64]) -> Result<Vec<f64>> {
        self.stream(stream).classifier.matvec(latent)
    }

    /// Probability of the "abnormal" class from the binary head.
    pub fn binary_classify(&self, latent_mot: &[f64]) -> Result<f64> {
        check_dim("latent", self.dims.latent, latent_mot.len())?;
        let logits = self.binary.predict(latent_mot)?;
        Ok(softmax(&logits)[1])
    }
}

/// Unit-norm latent slots of one stream, one per training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub stream: StreamId,
    pub momentum: f64,
    /// `N × latent`, unit-norm rows.
    pub rows: Matrix,
    pub scene_labels: Vec<usize>,
    pub class_ids: Vec<usize>,
    /// Dataset sample behind each slot.
    pub sample_index: Vec<usize>,
}

impl MemoryBank {
    pub fn new(
        stream: StreamId,
        momentum: f64,
        rows: Matrix,
        scene_labels: Vec<usize>,
        class_ids: Vec<usize>,
        sample_index: Vec<usize>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(HscError::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        check_dim("bank scene labels", rows.rows(), scene_labels.len())?;
        check_dim("bank class ids", rows.rows(), class_ids.len())?;
        check_dim("bank sample index", rows.rows(), sample_index.len())?;
        Ok(MemoryBank {
            stream,
            momentum,
            rows,
            scene_labels,
            class_ids,
            sample_index,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    /// `row ← normalize((1 − m) · latent + m · row)`
    pub fn update(&mut self, slot: usize, latent: &[f64]) -> Result<()> {
        if slot >= self.len() {
            return Err(HscError::OutOfRange {
                index: slot,
                len: self.len(),
            });
        }
        check_dim("memory update latent", self.dim(), latent.len())?;
        let m = self.momentum;
        let mixed: Vec<f64> = latent
            .iter()
            .zip(self.rows.row(slot))
            .map(|(l, r)| (1.0 - m) * l + m * r)
            .collect();
        let (row, _) = l2_normalize(&mixed)?;
        self.rows.row_mut(slot).copy_from_slice(&row);
        Ok(())
    }

    /// Softmax weights over raw dot products and the weighted slot average.
    pub fn retrieve(&self, latent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(HscError::EmptyBank);
        }
        check_dim("retrieval latent", self.dim(), latent.len())?;
        let scores: Vec<f64> = self.rows.iter_rows().map(|r| dot(latent, r)).collect();
        let weights = softmax(&scores);
        let recon = self.rows.matvec_t(&weights)?;
        Ok((weights, recon))
    }

    /// Uniformly random subset of `size` slots (all slots if `size ≥ N`), in slot order.
    pub fn subsample(&self, size: usize, seed: u64) -> MemoryBank {
        if size >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = index::sample(&mut rng, self.len(), size).into_vec();
        keep.sort_unstable();
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| self.row(i).to_vec()).collect();
        MemoryBank {
            stream: self.stream,
            momentum: self.momentum,
            rows: Matrix::from_rows(&rows).expect("rows share the bank width"),
            scene_labels: keep.iter().map(|&i| self.scene_labels[i]).collect(),
            class_ids: keep.iter().map(|&i| self.class_ids[i]).collect(),
            sample_index: keep.iter().map(|&i| self.sample_index[i]).collect(),
        }
    }
}

/// Free-function form of [`MemoryBank::update`].
pub fn memory_update(bank: &mut MemoryBank, slot: usize, latent: &[f64]) -> Result<()> {
    bank.update(slot, latent)
}

/// Free-function form of [`MemoryBank::retrieve`].
pub fn memory_retrieve(bank: &MemoryBank, latent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    bank.retrieve(latent)
}

/// Appearance and motion banks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Banks {
    pub app: MemoryBank,
    pub mot: MemoryBank,
}

impl Banks {
    pub fn get(&self, s: StreamId) -> &MemoryBank {
        match s {
            StreamId::App => &self.app,
            StreamId::Mot => &self.mot,
        }
    }

    pub fn get_mut(&mut self, s: StreamId) -> &mut MemoryBank {
        match s {
            StreamId::App => &mut self.app,
            StreamId::Mot => &mut self.mot,
        }
    }

    pub fn subsample(&self, size: usize, seed: u64) -> Banks {
        Banks {
            app: self.app.subsample(size, seed),
            mot: self.mot.subsample(size, seed.wrapping_add(1)),
        }
    }
}
