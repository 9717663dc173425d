//! Scene features from segmentation maps, and pseudo scene labels via DBSCAN.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ClipKey, Dataset, SceneInput, SceneParams, SegmentationGrid};
use crate::error::{HscError, Result};
use crate::nn::{cosine_similarity, dot, l2_normalize};

pub const DEFAULT_EPS: f64 = 0.15;
pub const DEFAULT_MIN_PTS: usize = 3;
pub const DEFAULT_POOL_SIZE: usize = 8;

/// Unit-norm background descriptor of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFeature {
    pub values: Vec<f64>,
    pub clip: Option<ClipKey>,
}

/// `num_classes · ⌈H/pool⌉ · ⌈W/pool⌉`
pub fn scene_feature_dim(params: &SceneParams, height: usize, width: usize) -> usize {
    let pool = params.pool_size.max(1);
    params.num_classes as usize * height.div_ceil(pool) * width.div_ceil(pool)
}

/// Per-class binary maps with foreground classes zeroed, max-pooled over
/// non-overlapping `pool × pool` windows (zero padding at the edges),
/// flattened class-major, averaged over frames and l2-normalized.
pub fn build_scene_feature(grids: &[SegmentationGrid], params: &SceneParams) -> Result<SceneFeature> {
    let first = grids
        .first()
        .ok_or_else(|| HscError::Usage("scene feature needs at least one frame".into()))?;
    if params.pool_size == 0 {
        return Err(HscError::Config("pool_size must be ≥ 1".into()));
    }
    let (h, w, pool) = (first.height, first.width, params.pool_size);
    let (ph, pw) = (h.div_ceil(pool), w.div_ceil(pool));
    let cells = ph * pw;
    let dim = scene_feature_dim(params, h, w);
    let mut acc = vec![0.0; dim];
    let mut frame = vec![0.0; dim];
    for g in grids {
        g.validate()?;
        if g.height != h || g.width != w {
            return Err(HscError::Usage(format!(
                "segmentation grid {}x{} differs from first frame {h}x{w}",
                g.height, g.width
            )));
        }
        frame.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h {
            for c in 0..w {
                let class = g.get(r, c);
                if class >= params.num_classes {
                    return Err(HscError::Usage(format!(
                        "class id {class} ≥ num_classes {}",
                        params.num_classes
                    )));
                }
                if params.foreground_classes.contains(&class) {
                    continue;
                }
                frame[class as usize * cells + (r / pool) * pw + c / pool] = 1.0;
            }
        }
        for (a, f) in acc.iter_mut().zip(&frame) {
            *a += f;
        }
    }
    let n = grids.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    let (values, _) = l2_normalize(&acc).map_err(|_| {
        HscError::Degenerate("clip contains only foreground classes; scene feature is zero".into())
    })?;
    Ok(SceneFeature { values, clip: None })
}

/// Unit-norm scene feature of every clip, in clip order.
pub fn dataset_scene_features(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.clips
        .iter()
        .map(|clip| {
            let v = match &clip.scene_input {
                SceneInput::Vector(v) => l2_normalize(v)?.0,
                SceneInput::Grids(grids) => {
                    let params = ds.scene.as_ref().ok_or_else(|| {
                        HscError::Config("dataset has grids but no scene parameters".into())
                    })?;
                    build_scene_feature(grids, params)?.values
                }
            };
            Ok(v)
        })
        .collect()
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Label for points not density-reachable from any core point.
pub const NOISE: i32 = -1;

/// DBSCAN with cosine distance.
///
/// Core points have at least `min_pts` points (themselves included) within
/// `eps`. Clusters are the connected components of core points, numbered by
/// their lowest point index. A non-core point joins the cluster of its nearest
/// core neighbour (lowest index on ties), otherwise it is noise. This makes the
/// result independent of input order up to label renaming.
pub fn dbscan_cluster(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<i32>> {
    if !(eps > 0.0) {
        return Err(HscError::Config(format!("eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(HscError::Config("min_pts must be ≥ 1".into()));
    }
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&points[i], &points[j])?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            for &q in &neighbours[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = neighbours[i]
            .iter()
            .filter(|&&j| core[j])
            .min_by(|&&a, &&b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
        if let Some(&j) = nearest {
            labels[i] = labels[j];
        }
    }
    Ok(labels)
}

/// Final scene labels and per-cluster centroids fitted on the training clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneClustering {
    pub eps: f64,
    pub min_pts: usize,
    /// DBSCAN output before noise reassignment.
    pub raw_labels: Vec<i32>,
    /// Every training clip's label, noise reassigned.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl SceneClustering {
    /// Clusters training scene features. Noise points go to the nearest
    /// centroid; if DBSCAN finds no cluster at all, every clip forms one.
    pub fn fit(features: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(HscError::EmptyTrainingSet);
        }
        let raw = dbscan_cluster(features, eps, min_pts)?;
        let k = raw.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k.max(1)];
        if k == 0 {
            warn!("DBSCAN found no clusters (eps {eps}, min_pts {min_pts}); using a single scene");
            members[0] = (0..features.len()).collect();
        } else {
            for (i, &l) in raw.iter().enumerate() {
                if l >= 0 {
                    members[l as usize].push(i);
                }
            }
        }
        let centroids = members
            .iter()
            .map(|m| {
                let mut c = vec![0.0; features[0].len()];
                for &i in m {
                    for (a, b) in c.iter_mut().zip(&features[i]) {
                        *a += b;
                    }
                }
                l2_normalize(&c).map(|(v, _)| v)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = SceneClustering {
            eps,
            min_pts,
            raw_labels: raw.clone(),
            labels: Vec::new(),
            centroids,
        };
        let labels = raw
            .iter()
            .zip(features)
            .map(|(&l, f)| {
                if k > 0 && l >= 0 {
                    Ok(l as usize)
                } else {
                    out.nearest(f)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.labels = labels;
        Ok(out)
    }

    pub fn num_scenes(&self) -> usize {
        self.centroids.len()
    }

    /// Index of the most cosine-similar centroid; lowest index wins ties.
    pub fn nearest(&self, feature: &[f64]) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            crate::error::check_dim("scene centroid", c.len(), feature.len())?;
            let s = dot(c, feature) / crate::nn::norm(feature).max(crate::nn::NORM_FLOOR);
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    }
}

/// Writes pseudo scene labels into the clips of `dataset`.
///
/// With `training = true` the clips must be exactly the ones `clustering` was
/// fitted on (same order) and receive its labels; otherwise every clip gets its
/// nearest centroid.
pub fn assign_scene_labels(
    dataset: &mut Dataset,
    features: &[Vec<f64>],
    clustering: &SceneClustering,
    training: bool,
) -> Result<()> {
    crate::error::check_dim("scene features", dataset.clips.len(), features.len())?;
    if training {
        crate::error::check_dim("clustered clips", clustering.labels.len(), features.len())?;
    }
    for (i, (clip, f)) in dataset.clips.iter_mut().zip(features).enumerate() {
        let label = if training {
            clustering.labels[i]
        } else {
            clustering.nearest(f)?
        };
        clip.scene_label = Some(label as u32);
    }
    Ok(())
}

/// Fraction of items whose cluster maps (by majority vote) onto their true class.
pub fn majority_agreement(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 1.0;
    }
    let kp = predicted.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; kt]; kp];
    for (&p, &t) in predicted.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let agree: usize = counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    agree as f64 / predicted.len() as f64
}
