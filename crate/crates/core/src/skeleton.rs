//! Skeleton kinematics, rotation/cutting augmentation, and the hand-crafted
//! motion descriptor that stands in for a learned action-recognition backbone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{KeypointScheme, SkeletonFrame};
use crate::error::{HscError, Result};
use crate::nn::NORM_FLOOR;

/// COCO 17-keypoint names, in index order.
pub const COCO17_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Parent of each COCO keypoint. The left hip is the root.
pub const COCO17_PARENTS: [usize; 17] = [
    5,  // nose <- left shoulder
    0,  // left eye <- nose
    0,  // right eye <- nose
    1,  // left ear <- left eye
    2,  // right ear <- right eye
    11, // left shoulder <- left hip
    12, // right shoulder <- right hip
    5,  // left elbow
    6,  // right elbow
    7,  // left wrist
    8,  // right wrist
    11, // root
    11, // right hip <- left hip
    11, // left knee
    12, // right knee
    13, // left ankle
    14, // right ankle
];

/// Nose, eyes and ears.
pub const COCO17_HEAD: [usize; 5] = [0, 1, 2, 3, 4];

/// Parent table plus the derived child lists and a root-down traversal order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KinematicTree {
    names: Vec<String>,
    parents: Vec<usize>,
    head: Vec<bool>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    root: usize,
}

impl KinematicTree {
    pub fn new(names: Vec<String>, parents: Vec<usize>, head: &[usize]) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(HscError::Config("keypoint scheme is empty".into()));
        }
        if names.len() != n {
            return Err(HscError::Config(format!(
                "{} keypoint names for {n} parents",
                names.len()
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&k| parents[k] == k).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            _ => {
                return Err(HscError::Config(format!(
                    "kinematic tree needs exactly one root, found {}",
                    roots.len()
                )))
            }
        };
        let mut children = vec![Vec::new(); n];
        for (k, &p) in parents.iter().enumerate() {
            if p >= n {
                return Err(HscError::Config(format!("parent {p} of keypoint {k} out of range")));
            }
            if k != root {
                children[p].push(k);
            }
        }
        // breadth-first from the root; a cycle leaves nodes unreached
        let mut order = vec![root];
        let mut i = 0;
        while i < order.len() {
            let k = order[i];
            order.extend(children[k].iter().copied());
            i += 1;
        }
        if order.len() != n {
            return Err(HscError::Config("kinematic tree contains a cycle".into()));
        }
        let mut head_mask = vec![false; n];
        for &h in head {
            if h >= n {
                return Err(HscError::Config(format!("head index {h} out of range")));
            }
            head_mask[h] = true;
        }
        Ok(KinematicTree {
            names,
            parents,
            head: head_mask,
            children,
            order,
            root,
        })
    }

    pub fn coco17() -> Self {
        Self::new(
            COCO17_NAMES.iter().map(|s| s.to_string()).collect(),
            COCO17_PARENTS.to_vec(),
            &COCO17_HEAD,
        )
        .expect("built-in COCO tree is valid")
    }

    pub fn from_scheme(scheme: &KeypointScheme) -> Result<Self> {
        Self::new(scheme.names.clone(), scheme.parents.clone(), &scheme.head)
    }

    pub fn scheme(&self) -> KeypointScheme {
        KeypointScheme {
            names: self.names.clone(),
            parents: self.parents.clone(),
            head: (0..self.len()).filter(|&k| self.head[k]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, k: usize) -> usize {
        self.parents[k]
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn is_head(&self, k: usize) -> bool {
        self.head[k]
    }

    /// Root-first traversal order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// All keypoints below `k`, excluding `k`.
    pub fn descendants(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[k].clone();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.children[c].iter().copied());
        }
        out.sort_unstable();
        out
    }

    /// `(child, parent)` for every non-root keypoint, in index order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len())
            .filter(move |&k| k != self.root)
            .map(move |k| (k, self.parents[k]))
    }

    /// Dimension of [`motion_featurize`] output for this tree.
    pub fn motion_dim(&self) -> usize {
        2 * (self.len() - 1) + 2 * self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-keypoint rotation probability.
    pub p_st: f64,
    /// Per-frame drop probability.
    pub p_tc: f64,
    pub angle_min: f64,
    pub angle_max: f64,
    pub min_frames: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_st: 0.5,
            p_tc: 0.5,
            angle_min: -std::f64::consts::FRAC_PI_6,
            angle_max: std::f64::consts::FRAC_PI_6,
            min_frames: 4,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_st", self.p_st), ("p_tc", self.p_tc)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HscError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.angle_min <= self.angle_max) || !self.angle_min.is_finite() || !self.angle_max.is_finite() {
            return Err(HscError::Config(format!(
                "invalid angle range [{}, {}]",
                self.angle_min, self.angle_max
            )));
        }
        Ok(())
    }
}

/// Rotates `k` about `parent` by `alpha` using the row-vector convention
/// `(K − P) · [[cos α, sin α], [−sin α, cos α]] + P`.
pub fn rotate_keypoint(k: [f64; 2], parent: [f64; 2], alpha: f64) -> [f64; 2] {
    let (s, c) = alpha.sin_cos();
    let dx = k[0] - parent[0];
    let dy = k[1] - parent[1];
    [dx * c - dy * s + parent[0], dx * s + dy * c + parent[1]]
}

/// One selected keypoint rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationDraw {
    pub keypoint: usize,
    pub angle: f64,
}

fn check_frame(frame: &SkeletonFrame, tree: &KinematicTree) -> Result<()> {
    crate::error::check_dim("skeleton frame keypoints", tree.len(), frame.keypoints.len())
}

/// Applies rotations in the given order. Each rotation turns the keypoint and
/// its whole subtree rigidly about the keypoint's parent at its current position.
pub fn apply_rotations(
    frame: &SkeletonFrame,
    tree: &KinematicTree,
    rotations: &[RotationDraw],
) -> Result<SkeletonFrame> {
    check_frame(frame, tree)?;
    let mut pts = frame.keypoints.clone();
    for r in rotations {
        if r.keypoint >= tree.len() {
            return Err(HscError::OutOfRange {
                index: r.keypoint,
                len: tree.len(),
            });
        }
        let pivot = pts[tree.parent(r.keypoint)];
        pts[r.keypoint] = rotate_keypoint(pts[r.keypoint], pivot, r.angle);
        for d in tree.descendants(r.keypoint) {
            pts[d] = rotate_keypoint(pts[d], pivot, r.angle);
        }
    }
    Ok(SkeletonFrame { keypoints: pts })
}

/// Randomly rotates non-head keypoints, walking the tree root-down.
///
/// Every eligible keypoint consumes one uniform draw for selection, and
/// selected keypoints consume one more for the angle.
pub fn spatial_transform<R: Rng + ?Sized>(
    frame: &SkeletonFrame,
    tree: &KinematicTree,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(SkeletonFrame, Vec<RotationDraw>)> {
    check_frame(frame, tree)?;
    let mut draws = Vec::new();
    for &k in tree.order() {
        if k == tree.root() || tree.is_head(k) {
            continue;
        }
        let u: f64 = rng.random();
        if u < config.p_st {
            let angle = if config.angle_max > config.angle_min {
                rng.random_range(config.angle_min..config.angle_max)
            } else {
                config.angle_min
            };
            draws.push(RotationDraw { keypoint: k, angle });
        }
    }
    let out = apply_rotations(frame, tree, &draws)?;
    Ok((out, draws))
}

const TEMPORAL_CUT_RETRIES: usize = 16;

/// Indices of frames surviving temporal cutting.
///
/// Each frame is dropped with probability `p_tc`. If fewer than
/// `min(min_frames, len)` survive, the draw is repeated; after a bounded number
/// of retries the earliest frames are kept.
pub fn temporal_cut_indices<R: Rng + ?Sized>(len: usize, config: &AugmentConfig, rng: &mut R) -> Vec<usize> {
    let floor = config.min_frames.min(len);
    for _ in 0..TEMPORAL_CUT_RETRIES {
        let kept: Vec<usize> = (0..len)
            .filter(|_| rng.random::<f64>() >= config.p_tc)
            .collect();
        if kept.len() >= floor && !kept.is_empty() {
            return kept;
        }
    }
    (0..floor.max(1).min(len)).collect()
}

pub fn temporal_cut<R: Rng + ?Sized>(
    frames: &[SkeletonFrame],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<SkeletonFrame>, Vec<usize>)> {
    if frames.is_empty() {
        return Err(HscError::Usage("temporal cut of an empty sequence".into()));
    }
    let kept = temporal_cut_indices(frames.len(), config, rng);
    Ok((kept.iter().map(|&i| frames[i].clone()).collect(), kept))
}

/// Every random draw made while augmenting one tracklet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    /// Rotations per original frame.
    pub rotations: Vec<Vec<RotationDraw>>,
    /// Original frame indices that survived cutting.
    pub kept: Vec<usize>,
}

impl AugmentRecord {
    /// Rebuilds the augmented sequence from the original without any randomness.
    pub fn replay(&self, seq: &[SkeletonFrame], tree: &KinematicTree) -> Result<Vec<SkeletonFrame>> {
        crate::error::check_dim("replay frames", self.rotations.len(), seq.len())?;
        self.kept
            .iter()
            .map(|&i| apply_rotations(&seq[i], tree, &self.rotations[i]))
            .collect()
    }
}

/// Spatial transformation on every frame followed by temporal cutting.
pub fn augment_tracklet<R: Rng + ?Sized>(
    seq: &[SkeletonFrame],
    tree: &KinematicTree,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<SkeletonFrame>, AugmentRecord)> {
    config.validate()?;
    if seq.is_empty() {
        return Err(HscError::Usage("cannot augment an empty skeleton sequence".into()));
    }
    let mut rotated = Vec::with_capacity(seq.len());
    let mut rotations = Vec::with_capacity(seq.len());
    for f in seq {
        let (g, d) = spatial_transform(f, tree, config, rng)?;
        rotated.push(g);
        rotations.push(d);
    }
    let (frames, kept) = temporal_cut(&rotated, config, rng)?;
    Ok((frames, AugmentRecord { rotations, kept }))
}

/// Fixed-length motion descriptor of a skeleton sequence.
///
/// Layout, for a tree with `n` keypoints:
/// - `n − 1` means, then `n − 1` standard deviations, of the joint angle of every
///   non-root keypoint (unsigned bend against the parent bone in `[0, π]`,
///   absolute direction for bones hanging off the root);
/// - `n` means, then `n` maxima, of per-keypoint frame-to-frame displacement.
///
/// Coordinates are first shifted so the first frame's root is the origin and
/// divided by the mean bone length, which makes the descriptor invariant to
/// global translation and uniform scaling.
pub fn motion_featurize(seq: &[SkeletonFrame], tree: &KinematicTree) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(HscError::Degenerate(format!(
            "motion features need at least 2 frames, got {}",
            seq.len()
        )));
    }
    for f in seq {
        check_frame(f, tree)?;
    }
    let n = tree.len();
    let bones: Vec<(usize, usize)> = tree.bones().collect();
    if bones.is_empty() {
        return Err(HscError::Degenerate("tree has no bones".into()));
    }
    let total_len: f64 = seq
        .iter()
        .flat_map(|f| bones.iter().map(move |&(c, p)| dist(f.keypoints[c], f.keypoints[p])))
        .sum();
    let scale = total_len / (seq.len() * bones.len()) as f64;
    if !(scale > NORM_FLOOR) {
        return Err(HscError::Degenerate("all skeleton keypoints coincide".into()));
    }
    let origin = seq[0].keypoints[tree.root()];
    let norm_seq: Vec<Vec<[f64; 2]>> = seq
        .iter()
        .map(|f| {
            f.keypoints
                .iter()
                .map(|p| [(p[0] - origin[0]) / scale, (p[1] - origin[1]) / scale])
                .collect()
        })
        .collect();

    let t = seq.len() as f64;
    let mut angle_mean = Vec::with_capacity(bones.len());
    let mut angle_std = Vec::with_capacity(bones.len());
    for &(c, p) in &bones {
        let angles: Vec<f64> = norm_seq.iter().map(|pts| joint_angle(pts, tree, c, p)).collect();
        let mean = angles.iter().sum::<f64>() / t;
        let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / t;
        angle_mean.push(mean);
        angle_std.push(var.sqrt());
    }

    let mut disp_mean = vec![0.0; n];
    let mut disp_max = vec![0.0f64; n];
    for w in norm_seq.windows(2) {
        for k in 0..n {
            let d = dist(w[0][k], w[1][k]);
            disp_mean[k] += d;
            disp_max[k] = disp_max[k].max(d);
        }
    }
    let steps = (seq.len() - 1) as f64;
    for v in &mut disp_mean {
        *v /= steps;
    }

    let mut out = angle_mean;
    out.extend(angle_std);
    out.extend(disp_mean);
    out.extend(disp_max);
    Ok(out)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn joint_angle(pts: &[[f64; 2]], tree: &KinematicTree, c: usize, p: usize) -> f64 {
    let v = [pts[c][0] - pts[p][0], pts[c][1] - pts[p][1]];
    if p == tree.root() {
        return v[1].atan2(v[0]);
    }
    let g = tree.parent(p);
    let u = [pts[p][0] - pts[g][0], pts[p][1] - pts[g][1]];
    let cross = u[0] * v[1] - u[1] * v[0];
    let dotp = u[0] * v[0] + u[1] * v[1];
    // unsigned bend: a signed angle would wrap at ±π for folded joints
    cross.abs().atan2(dotp)
}
