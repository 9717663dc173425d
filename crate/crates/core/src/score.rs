//! Test-time scoring, clip aggregation, temporal smoothing and frame-level AUC.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HscError, Result};
use crate::model::{Banks, HscModel, StreamId};
use crate::scene::dataset_scene_features;
use crate::train::stream_score;

/// Per-object stream scores. `mot` is `None` for appearance-only samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub app: f64,
    pub mot: Option<f64>,
    pub total: f64,
}

/// `S_app`, `S_mot` (or the binary head's anomaly probability) and their mean.
pub fn score_object(
    model: &HscModel,
    banks: &Banks,
    scene: &[f64],
    appearance: &[f64],
    motion: Option<&[f64]>,
) -> Result<ObjectScore> {
    let app = stream_score(model, &banks.app, StreamId::App, scene, appearance)?;
    let mot = match motion {
        Some(m) if model.binary_active => {
            let latent = model.encode(StreamId::Mot, scene, m)?;
            Some(model.binary_classify(&latent)?)
        }
        Some(m) => Some(stream_score(model, &banks.mot, StreamId::Mot, scene, m)?),
        None => None,
    };
    let total = match mot {
        Some(m) => 0.5 * (app + m),
        None => app,
    };
    Ok(ObjectScore { app, mot, total })
}

/// Scores every sample of `ds` against the given banks; `scene_features` is in clip order.
pub fn score_dataset(
    model: &HscModel,
    banks: &Banks,
    ds: &Dataset,
    scene_features: &[Vec<f64>],
) -> Result<Vec<ObjectScore>> {
    crate::error::check_dim("scene features", ds.clips.len(), scene_features.len())?;
    let lookup = ds.clip_lookup();
    ds.samples
        .iter()
        .map(|s| {
            let clip = *lookup
                .get(&s.clip_key())
                .ok_or_else(|| HscError::Usage(format!("sample {}/{} has no clip", s.video_id, s.clip_index)))?;
            score_object(model, banks, &scene_features[clip], &s.appearance, s.motion.as_deref())
        })
        .collect()
}

/// Rescales each stream to `[0, 1]` over the given set before averaging.
/// A constant stream maps to 0.
pub fn min_max_normalize(scores: &[ObjectScore]) -> Vec<ObjectScore> {
    let range = |it: &mut dyn Iterator<Item = f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (alo, ahi) = range(&mut scores.iter().map(|s| s.app));
    let (mlo, mhi) = range(&mut scores.iter().filter_map(|s| s.mot));
    let scale = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    scores
        .iter()
        .map(|s| {
            let app = scale(s.app, alo, ahi);
            let mot = s.mot.map(|m| scale(m, mlo, mhi));
            let total = match mot {
                Some(m) => 0.5 * (app + m),
                None => app,
            };
            ObjectScore { app, mot, total }
        })
        .collect()
}

/// Clip score = max over the clip's objects, 0 for a clip without objects.
pub fn score_clips(object_scores: &[f64], ds: &Dataset) -> Result<Vec<f64>> {
    crate::error::check_dim("object scores", ds.samples.len(), object_scores.len())?;
    let by_clip = ds.samples_by_clip()?;
    Ok(by_clip
        .iter()
        .map(|objs| objs.iter().map(|&i| object_scores[i]).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))))
        .map(|m| m.unwrap_or(0.0))
        .collect())
}

/// Normalized Gaussian kernel with radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// 1-D convolution with [`gaussian_kernel`] and reflected boundaries.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(HscError::Config(format!("smoothing sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 || x.is_empty() {
        return Ok(x.to_vec());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let n = x.len() as i64;
    Ok((0..n)
        .map(|t| {
            k.iter()
                .enumerate()
                .map(|(j, w)| w * x[reflect(t + j as i64 - r, n)])
                .sum()
        })
        .collect())
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    crate::error::check_dim("labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(HscError::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(HscError::SingleClassLabels { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Area under the ROC from average ranks (Mann–Whitney U, ties count half).
pub fn micro_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block shares the mean rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One ROC operating point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for thresholds at every distinct score, highest first, starting at (0, 0).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(idx + 1).is_none_or(|&n| scores[n] != scores[k]);
        if last_of_tie {
            points.push(RocPoint {
                threshold: scores[k],
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            });
        }
    }
    Ok(points)
}

/// Trapezoid area under ROC points.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Frame-level series over the concatenated test videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    /// Clip scores in dataset clip order.
    pub clip_scores: Vec<f64>,
    /// Per frame, videos in sorted id order, clips by index.
    pub video_ids: Vec<String>,
    pub frame_index: Vec<usize>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSeries {
    /// Expands clip scores to frames and smooths each video with `σ = sigma_clips`
    /// clips, converted to frames by the video's mean clip length.
    pub fn build(ds: &Dataset, clip_scores: Vec<f64>, sigma_clips: f64) -> Result<Self> {
        crate::error::check_dim("clip scores", ds.clips.len(), clip_scores.len())?;
        let mut videos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in ds.clips.iter().enumerate() {
            videos.entry(c.video_id.as_str()).or_default().push(i);
        }
        let mut s = ScoreSeries {
            clip_scores,
            video_ids: Vec::new(),
            frame_index: Vec::new(),
            raw: Vec::new(),
            smoothed: Vec::new(),
            labels: Vec::new(),
        };
        for (video, mut clips) in videos {
            clips.sort_by_key(|&i| ds.clips[i].clip_index);
            let mut raw = Vec::new();
            for &i in &clips {
                let c = &ds.clips[i];
                let label = c
                    .anomaly_label
                    .ok_or_else(|| HscError::Usage(format!("clip {video}/{} has no anomaly label", c.clip_index)))?;
                for _ in 0..c.frame_count {
                    raw.push(s.clip_scores[i]);
                    s.labels.push(label);
                }
            }
            let frames_per_clip = raw.len() as f64 / clips.len() as f64;
            s.smoothed.extend(gaussian_smooth(&raw, sigma_clips * frames_per_clip)?);
            s.frame_index.extend(0..raw.len());
            s.video_ids.extend(std::iter::repeat_n(video.to_string(), raw.len()));
            s.raw.extend(raw);
        }
        Ok(s)
    }

    pub fn auc(&self) -> Result<f64> {
        micro_auc(&self.smoothed, &self.labels)
    }

    pub fn roc(&self) -> Result<Vec<RocPoint>> {
        roc_curve(&self.smoothed, &self.labels)
    }

    /// `frame_index,video_id,raw,smoothed,label`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("frame_index,video_id,raw,smoothed,label\n");
        for i in 0..self.raw.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.frame_index[i], self.video_ids[i], self.raw[i], self.smoothed[i], self.labels[i]
            ));
        }
        write_file(path, &out)
    }
}

/// `threshold,fpr,tpr`
pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    write_file(path.as_ref(), &out)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| HscError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| HscError::io(path, e))
}

/// Scores a test dataset end to end and returns the smoothed frame series.
pub fn evaluate(
    model: &HscModel,
    banks: &Banks,
    test: &Dataset,
    sigma_clips: f64,
    normalize: bool,
) -> Result<ScoreSeries> {
    let scenes = dataset_scene_features(test)?;
    let mut scores = score_dataset(model, banks, test, &scenes)?;
    if normalize {
        scores = min_max_normalize(&scores);
    }
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let clips = score_clips(&totals, test)?;
    ScoreSeries::build(test, clips, sigma_clips)
}
