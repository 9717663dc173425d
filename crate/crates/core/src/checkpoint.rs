//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    "HSCVAD"            6 bytes
//! version  u32
//! meta_len u32, meta           UTF-8 JSON
//! count    u32
//! count × { name_len u32, name, ndims u32, dims u64 × ndims, len u64, f64 × len }
//! ```
//!
//! Integer arrays (labels, indices) are stored as f64.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HscError, Result};
use crate::model::{Banks, HscModel, MemoryBank, ModelDims, StreamId, StreamModel};
use crate::nn::{Activation, Matrix, Mlp2Params};
use crate::scene::SceneClustering;
use crate::train::Vocab;

pub const MAGIC: &[u8; 6] = b"HSCVAD";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to score a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HscModel,
    pub banks: Banks,
    pub vocab: Vocab,
    pub clustering: SceneClustering,
    /// Free-form run configuration snapshot.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dims: ModelDims,
    binary_active: bool,
    momentum: [f64; 2],
    vocab: Vocab,
    scene_eps: f64,
    scene_min_pts: usize,
    config: serde_json::Value,
}

struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn vector(v: &[f64]) -> Tensor {
    Tensor {
        dims: vec![v.len()],
        data: v.to_vec(),
    }
}

fn matrix(m: &Matrix) -> Tensor {
    Tensor {
        dims: vec![m.rows(), m.cols()],
        data: m.as_slice().to_vec(),
    }
}

fn indices(v: &[usize]) -> Tensor {
    Tensor {
        dims: vec![v.len()],
        data: v.iter().map(|&x| x as f64).collect(),
    }
}

fn put_mlp(t: &mut BTreeMap<String, Tensor>, prefix: &str, p: &Mlp2Params) {
    t.insert(format!("{prefix}.w1"), matrix(&p.w1));
    t.insert(format!("{prefix}.b1"), vector(&p.b1));
    t.insert(format!("{prefix}.w2"), matrix(&p.w2));
    t.insert(format!("{prefix}.b2"), vector(&p.b2));
}

impl Checkpoint {
    fn tensors(&self) -> BTreeMap<String, Tensor> {
        let mut t = BTreeMap::new();
        for s in StreamId::ALL {
            let m = self.model.stream(s);
            put_mlp(&mut t, &format!("{}.encoder", s.name()), &m.encoder);
            put_mlp(&mut t, &format!("{}.decoder", s.name()), &m.decoder);
            t.insert(format!("{}.classifier", s.name()), matrix(&m.classifier));
            let b = self.banks.get(s);
            t.insert(format!("bank.{}.rows", s.name()), matrix(&b.rows));
            t.insert(format!("bank.{}.scene_labels", s.name()), indices(&b.scene_labels));
            t.insert(format!("bank.{}.class_ids", s.name()), indices(&b.class_ids));
            t.insert(format!("bank.{}.sample_index", s.name()), indices(&b.sample_index));
        }
        put_mlp(&mut t, "binary", &self.model.binary);
        let c = &self.clustering;
        let width = c.centroids.first().map_or(0, Vec::len);
        t.insert(
            "scene.centroids".into(),
            Tensor {
                dims: vec![c.centroids.len(), width],
                data: c.centroids.concat(),
            },
        );
        t.insert(
            "scene.raw_labels".into(),
            Tensor {
                dims: vec![c.raw_labels.len()],
                data: c.raw_labels.iter().map(|&l| l as f64).collect(),
            },
        );
        t.insert("scene.labels".into(), indices(&c.labels));
        t
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            dims: self.model.dims,
            binary_active: self.model.binary_active,
            momentum: [self.banks.app.momentum, self.banks.mot.momentum],
            vocab: self.vocab.clone(),
            scene_eps: self.clustering.eps,
            scene_min_pts: self.clustering.min_pts,
            config: self.config.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let tensors = self.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(HscError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(HscError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| HscError::Checkpoint(format!("metadata: {e}")))?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| HscError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndims = r.u32()? as usize;
            let dims = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            if dims.iter().product::<usize>() != len {
                return Err(HscError::Checkpoint(format!("{name}: dims {dims:?} do not match length {len}")));
            }
            let raw = r.take(len.checked_mul(8).ok_or_else(|| HscError::Checkpoint("length overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(name, Tensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(HscError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::assemble(meta, tensors)
    }

    fn assemble(meta: Meta, mut t: BTreeMap<String, Tensor>) -> Result<Self> {
        let t = &mut t;
        let mut streams = Vec::new();
        let mut banks = Vec::new();
        for s in StreamId::ALL {
            let n = s.name();
            streams.push(StreamModel {
                encoder: take_mlp(t, &format!("{n}.encoder"))?,
                decoder: take_mlp(t, &format!("{n}.decoder"))?,
                classifier: take_matrix(t, &format!("{n}.classifier"))?,
            });
            banks.push(MemoryBank::new(
                s,
                meta.momentum[s.index()],
                take_matrix(t, &format!("bank.{n}.rows"))?,
                take_indices(t, &format!("bank.{n}.scene_labels"))?,
                take_indices(t, &format!("bank.{n}.class_ids"))?,
                take_indices(t, &format!("bank.{n}.sample_index"))?,
            )?);
        }
        let binary = take_mlp(t, "binary")?;
        let centroids = take_matrix(t, "scene.centroids")?;
        let raw_labels = take_vec(t, "scene.raw_labels")?.into_iter().map(|v| v as i32).collect();
        let labels = take_indices(t, "scene.labels")?;
        if let Some(name) = t.keys().next() {
            return Err(HscError::Checkpoint(format!("unexpected tensor {name}")));
        }
        let mot = streams.pop().expect("two streams");
        let app = streams.pop().expect("two streams");
        let model = HscModel {
            dims: meta.dims,
            app,
            mot,
            binary,
            binary_active: meta.binary_active,
        };
        model.validate().map_err(|e| HscError::Checkpoint(e.to_string()))?;
        let mot_bank = banks.pop().expect("two banks");
        let app_bank = banks.pop().expect("two banks");
        Ok(Checkpoint {
            model,
            banks: Banks {
                app: app_bank,
                mot: mot_bank,
            },
            vocab: meta.vocab,
            clustering: SceneClustering {
                eps: meta.scene_eps,
                min_pts: meta.scene_min_pts,
                raw_labels,
                labels,
                centroids: centroids.iter_rows().map(<[f64]>::to_vec).collect(),
            },
            config: meta.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| HscError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| HscError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn take_matrix(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Matrix> {
    let x = t
        .remove(name)
        .ok_or_else(|| HscError::Checkpoint(format!("missing tensor {name}")))?;
    match x.dims[..] {
        [r, c] => Matrix::from_vec(r, c, x.data),
        _ => Err(HscError::Checkpoint(format!("{name}: expected a matrix"))),
    }
}

fn take_mlp(t: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Mlp2Params> {
    Ok(Mlp2Params {
        w1: take_matrix(t, &format!("{prefix}.w1"))?,
        b1: take_vec(t, &format!("{prefix}.b1"))?,
        w2: take_matrix(t, &format!("{prefix}.w2"))?,
        b2: take_vec(t, &format!("{prefix}.b2"))?,
        activation: Activation::Relu,
    })
}

fn take_vec(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Vec<f64>> {
    t.remove(name)
        .map(|x| x.data)
        .ok_or_else(|| HscError::Checkpoint(format!("missing tensor {name}")))
}

fn take_indices(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Vec<usize>> {
    take_vec(t, name)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HscError::Checkpoint(format!("{name}: {v} is not an index")))
            }
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HscError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
