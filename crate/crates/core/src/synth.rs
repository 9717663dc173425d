//! Synthetic multi-scene benchmark with planted scene-dependent anomalies.
//!
//! Every scene is a layout of Gaussian bumps over background segmentation
//! classes. Objects carry an appearance vector built from a per-(object, action)
//! prototype plus a per-scene offset, and people carry skeleton sequences driven
//! by parametric gait cycles. Test anomalies are class pairs that never occur in
//! the scene's training data but are normal in another scene.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    ClipRecord, Dataset, Dims, KeypointScheme, SceneInput, SceneParams, SegmentationGrid, SkeletonFrame, Split,
    TrackletSample,
};
use crate::error::{HscError, Result};
use crate::scene::{build_scene_feature, cosine_distance, scene_feature_dim};
use crate::skeleton::{motion_featurize, KinematicTree};

/// Background classes are `0..BACKGROUND_CLASSES`; then person, then vehicle.
pub const BACKGROUND_CLASSES: u32 = 4;
pub const PERSON_CLASS: u32 = 4;
pub const VEHICLE_CLASS: u32 = 5;

/// An (object, action) pair and its relative frequency within a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPair {
    pub object: String,
    /// `None` for objects without a skeleton (vehicles).
    pub action: Option<String>,
    pub weight: f64,
}

impl ClassPair {
    pub fn new(object: &str, action: Option<&str>, weight: f64) -> Self {
        ClassPair {
            object: object.into(),
            action: action.map(String::from),
            weight,
        }
    }

    fn key(&self) -> (String, Option<String>) {
        (self.object.clone(), self.action.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub pairs: Vec<ClassPair>,
}

/// `events` runs of `clips_per_event` consecutive anomalous test clips in `scene`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPlan {
    pub scene: usize,
    pub object: String,
    pub action: Option<String>,
    pub events: usize,
    pub clips_per_event: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scenes: Vec<SceneSpec>,
    pub train_videos_per_scene: usize,
    pub test_videos_per_scene: usize,
    pub clips_per_video: usize,
    pub test_clips_per_video: usize,
    pub frames_per_clip: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub appearance_dim: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub pool_size: usize,
    /// Per-coordinate Gaussian noise on appearance vectors.
    pub noise: f64,
    /// Norm of the per-scene appearance offset.
    pub scene_offset: f64,
    /// Keypoint jitter in bone-length units.
    pub pose_noise: f64,
    /// Per-pixel probability of a random background label.
    pub speckle: f64,
    pub anomalies: Vec<AnomalyPlan>,
}

impl Default for ScenarioConfig {
    /// Two scenes. Cyclists and runners are normal in scene 1 and planted as
    /// anomalies in scene 0, where people mostly walk and occasionally stand.
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            scenes: vec![
                SceneSpec {
                    pairs: vec![
                        ClassPair::new("person", Some("walking"), 0.85),
                        ClassPair::new("person", Some("standing"), 0.15),
                    ],
                },
                SceneSpec {
                    pairs: vec![
                        ClassPair::new("person", Some("walking"), 0.4),
                        ClassPair::new("cyclist", Some("riding"), 0.3),
                        ClassPair::new("person", Some("running"), 0.2),
                        ClassPair::new("person", Some("standing"), 0.1),
                    ],
                },
            ],
            train_videos_per_scene: 11,
            test_videos_per_scene: 4,
            clips_per_video: 8,
            test_clips_per_video: 12,
            frames_per_clip: 8,
            objects_min: 1,
            objects_max: 4,
            appearance_dim: 32,
            grid_height: 32,
            grid_width: 32,
            pool_size: 8,
            noise: 0.1,
            scene_offset: 0.3,
            pose_noise: 0.02,
            speckle: 0.001,
            anomalies: vec![
                AnomalyPlan {
                    scene: 0,
                    object: "cyclist".into(),
                    action: Some("riding".into()),
                    events: 2,
                    clips_per_event: 5,
                },
                AnomalyPlan {
                    scene: 0,
                    object: "person".into(),
                    action: Some("running".into()),
                    events: 2,
                    clips_per_event: 4,
                },
            ],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HscError::Config(m));
        if self.scenes.is_empty() {
            return bad("scenario needs at least one scene".into());
        }
        for (s, spec) in self.scenes.iter().enumerate() {
            if spec.pairs.is_empty() {
                return bad(format!("scene {s} has no class pairs"));
            }
            if spec.pairs.iter().any(|p| !(p.weight > 0.0) || !p.weight.is_finite()) {
                return bad(format!("scene {s} has a non-positive pair weight"));
            }
            let keys: BTreeSet<_> = spec.pairs.iter().map(ClassPair::key).collect();
            if keys.len() != spec.pairs.len() {
                return bad(format!("scene {s} lists a class pair twice"));
            }
        }
        if self.frames_per_clip < 2 {
            return bad("frames_per_clip must be at least 2".into());
        }
        if self.clips_per_video == 0 || self.test_clips_per_video == 0 {
            return bad("clips per video must be positive".into());
        }
        if self.objects_min > self.objects_max {
            return bad(format!("objects_min {} > objects_max {}", self.objects_min, self.objects_max));
        }
        if self.appearance_dim == 0 || self.grid_height == 0 || self.grid_width == 0 || self.pool_size == 0 {
            return bad("dimensions must be positive".into());
        }
        if !(self.noise >= 0.0) || !(self.scene_offset >= 0.0) || !(self.pose_noise >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.speckle) {
            return bad(format!("speckle must be in [0, 1], got {}", self.speckle));
        }
        let mut demand = vec![0usize; self.scenes.len()];
        for a in &self.anomalies {
            let key = (a.object.clone(), a.action.clone());
            let Some(spec) = self.scenes.get(a.scene) else {
                return bad(format!("anomaly plan refers to missing scene {}", a.scene));
            };
            if spec.pairs.iter().any(|p| p.key() == key) {
                return bad(format!(
                    "infeasible anomaly plan: {}/{} is normal in scene {}",
                    a.object,
                    a.action.as_deref().unwrap_or("-"),
                    a.scene
                ));
            }
            let elsewhere = self
                .scenes
                .iter()
                .enumerate()
                .any(|(s, sp)| s != a.scene && sp.pairs.iter().any(|p| p.key() == key));
            if !elsewhere {
                return bad(format!(
                    "anomaly {}/{} is not normal in any other scene",
                    a.object,
                    a.action.as_deref().unwrap_or("-")
                ));
            }
            if a.events == 0 || a.clips_per_event == 0 || a.clips_per_event > self.test_clips_per_video {
                return bad(format!("anomaly plan for scene {} has an invalid event size", a.scene));
            }
            demand[a.scene] += a.events * a.clips_per_event;
        }
        for (s, d) in demand.iter().enumerate() {
            if *d > self.test_videos_per_scene * self.test_clips_per_video {
                return bad(format!("scene {s} cannot host {d} anomalous clips"));
            }
        }
        Ok(())
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            num_classes: BACKGROUND_CLASSES + 2,
            foreground_classes: vec![PERSON_CLASS, VEHICLE_CLASS],
            pool_size: self.pool_size,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            appearance: self.appearance_dim,
            motion: KinematicTree::coco17().motion_dim(),
            scene: scene_feature_dim(&self.scene_params(), self.grid_height, self.grid_width),
        }
    }

    /// Every class pair that may appear anywhere, sorted.
    fn all_pairs(&self) -> Vec<(String, Option<String>)> {
        let mut set: BTreeSet<_> = self.scenes.iter().flat_map(|s| s.pairs.iter().map(ClassPair::key)).collect();
        set.extend(self.anomalies.iter().map(|a| (a.object.clone(), a.action.clone())));
        set.into_iter().collect()
    }
}

/// Generating scene and class of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub scene: usize,
    pub object: String,
    pub action: Option<String>,
    pub anomalous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub train_clip_scenes: Vec<usize>,
    pub test_clip_scenes: Vec<usize>,
    pub test_clip_labels: Vec<u8>,
    /// Frame labels in the order the evaluation concatenates them.
    pub test_frame_labels: Vec<u8>,
    pub train_samples: Vec<SampleTruth>,
    pub test_samples: Vec<SampleTruth>,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| HscError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HscError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedBenchmark {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

/// Gaussian bump per background class; pixel label is the argmax.
#[derive(Clone, Debug)]
struct Layout {
    bumps: Vec<([f64; 2], f64, f64)>,
}

impl Layout {
    fn random<R: Rng>(h: usize, w: usize, rng: &mut R) -> Self {
        let bumps = (0..BACKGROUND_CLASSES)
            .map(|_| {
                let c = [rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)];
                let width = rng.random_range(0.2..0.45) * h.max(w) as f64;
                let amp = rng.random_range(0.6..1.0);
                (c, width, amp)
            })
            .collect();
        Layout { bumps }
    }

    fn shifted(&self, dr: f64, dc: f64) -> Self {
        Layout {
            bumps: self.bumps.iter().map(|&(c, w, a)| ([c[0] + dr, c[1] + dc], w, a)).collect(),
        }
    }

    fn label(&self, r: usize, c: usize) -> u32 {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, &(ctr, w, a)) in self.bumps.iter().enumerate() {
            let d2 = (r as f64 - ctr[0]).powi(2) + (c as f64 - ctr[1]).powi(2);
            let v = a * (-d2 / (2.0 * w * w)).exp();
            if v > best.1 {
                best = (k as u32, v);
            }
        }
        best.0
    }

    fn render(&self, h: usize, w: usize) -> Vec<u32> {
        (0..h * w).map(|i| self.label(i / w, i % w)).collect()
    }
}

/// Gait parameters. Angles in radians, lengths in thigh units, frequency in cycles per frame.
#[derive(Clone, Copy, Debug)]
struct Gait {
    freq: f64,
    leg_base: f64,
    leg_amp: f64,
    knee_base: f64,
    knee_amp: f64,
    arm_base: f64,
    arm_amp: f64,
    elbow: f64,
    lean: f64,
    speed: f64,
    bounce: f64,
}

fn gait(action: &str) -> Gait {
    let d = f64::to_radians;
    match action {
        "walking" => Gait {
            freq: 0.1,
            leg_base: 0.0,
            leg_amp: d(22.0),
            knee_base: d(5.0),
            knee_amp: d(25.0),
            arm_base: 0.0,
            arm_amp: d(18.0),
            elbow: d(10.0),
            lean: d(3.0),
            speed: 0.18,
            bounce: 0.03,
        },
        "running" => Gait {
            freq: 0.18,
            leg_base: d(5.0),
            leg_amp: d(40.0),
            knee_base: d(30.0),
            knee_amp: d(60.0),
            arm_base: 0.0,
            arm_amp: d(35.0),
            elbow: d(80.0),
            lean: d(12.0),
            speed: 0.5,
            bounce: 0.15,
        },
        "riding" => Gait {
            freq: 0.15,
            leg_base: d(60.0),
            leg_amp: d(25.0),
            knee_base: d(70.0),
            knee_amp: d(30.0),
            arm_base: d(50.0),
            arm_amp: 0.0,
            elbow: d(20.0),
            lean: d(30.0),
            speed: 0.7,
            bounce: 0.0,
        },
        // standing and anything unrecognized: slight sway on the spot
        _ => Gait {
            freq: 0.05,
            leg_base: 0.0,
            leg_amp: d(2.0),
            knee_base: d(2.0),
            knee_amp: d(2.0),
            arm_base: 0.0,
            arm_amp: d(3.0),
            elbow: d(5.0),
            lean: 0.0,
            speed: 0.0,
            bounce: 0.0,
        },
    }
}

fn dir(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

fn add(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

/// One body pose in y-up body units, COCO-17 order.
fn pose(g: &Gait, phase: f64, root: [f64; 2]) -> Vec<[f64; 2]> {
    let mut k = vec![[0.0; 2]; 17];
    let torso = FRAC_PI_2 - g.lean;
    k[11] = root;
    k[12] = add(root, [1.0, 0.0], 0.4);
    k[5] = add(k[11], dir(torso), 1.6);
    k[6] = add(k[12], dir(torso), 1.6);
    for (side, hip, knee, ankle, sho, elb, wri) in [(0.0, 11, 13, 15, 5, 7, 9), (PI, 12, 14, 16, 6, 8, 10)] {
        let p = phase + side;
        let thigh = -FRAC_PI_2 + g.leg_base + g.leg_amp * p.sin();
        let bend = g.knee_base + g.knee_amp * (p + FRAC_PI_2).sin().max(0.0);
        k[knee] = add(k[hip], dir(thigh), 1.0);
        k[ankle] = add(k[knee], dir(thigh - bend), 1.0);
        let upper = -FRAC_PI_2 + g.arm_base + g.arm_amp * (p + PI).sin();
        k[elb] = add(k[sho], dir(upper), 0.8);
        k[wri] = add(k[elb], dir(upper + g.elbow), 0.7);
    }
    let neck = [(k[5][0] + k[6][0]) / 2.0, (k[5][1] + k[6][1]) / 2.0];
    k[0] = add(add(neck, dir(torso), 0.5), [1.0, 0.0], 0.1);
    k[1] = add(k[0], [0.08, 0.08], 1.0);
    k[2] = add(k[0], [-0.08, 0.08], 1.0);
    k[3] = add(k[1], [0.1, -0.02], 1.0);
    k[4] = add(k[2], [-0.1, -0.02], 1.0);
    k
}

/// Skeleton frames in image coordinates for one tracklet.
fn skeleton_sequence<R: Rng>(
    action: &str,
    scene_speed: f64,
    frames: usize,
    origin: [f64; 2],
    pose_noise: f64,
    rng: &mut R,
) -> Vec<SkeletonFrame> {
    let base = gait(action);
    let amp = rng.random_range(0.85..1.15);
    let g = Gait {
        freq: base.freq * rng.random_range(0.9..1.1),
        leg_amp: base.leg_amp * amp,
        knee_amp: base.knee_amp * amp,
        arm_amp: base.arm_amp * amp,
        speed: base.speed * scene_speed * rng.random_range(0.8..1.2),
        ..base
    };
    let phase0 = rng.random_range(0.0..TAU);
    let px_per_unit = rng.random_range(2.0..3.5);
    (0..frames)
        .map(|t| {
            let t = t as f64;
            let phase = phase0 + TAU * g.freq * t;
            let root = [g.speed * t, g.bounce * phase.sin().abs()];
            let keypoints = pose(&g, phase, root)
                .into_iter()
                .map(|p| {
                    let jx: f64 = rng.sample::<f64, _>(StandardNormal) * pose_noise;
                    let jy: f64 = rng.sample::<f64, _>(StandardNormal) * pose_noise;
                    [
                        origin[0] + px_per_unit * (p[0] + jx),
                        origin[1] - px_per_unit * (p[1] + jy),
                    ]
                })
                .collect();
            SkeletonFrame { keypoints }
        })
        .collect()
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::nn::norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Fixed per-scenario randomness: layouts, prototypes, offsets.
struct World {
    layouts: Vec<Layout>,
    prototypes: BTreeMap<(String, Option<String>), Vec<f64>>,
    offsets: BTreeMap<((String, Option<String>), usize), Vec<f64>>,
    scene_speed: Vec<f64>,
}

const LAYOUT_MIN_DISTANCE: f64 = 0.3;
const LAYOUT_ATTEMPTS: usize = 200;

impl World {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let params = cfg.scene_params();
        let (h, w) = (cfg.grid_height, cfg.grid_width);
        let clean = |l: &Layout| -> Result<Vec<f64>> {
            let g = SegmentationGrid::new(h, w, l.render(h, w))?;
            Ok(build_scene_feature(&[g], &params)?.values)
        };
        let mut layouts: Vec<Layout> = Vec::new();
        let mut feats: Vec<Vec<f64>> = Vec::new();
        for s in 0..cfg.scenes.len() {
            let mut accepted = None;
            for _ in 0..LAYOUT_ATTEMPTS {
                let l = Layout::random(h, w, &mut rng);
                let f = clean(&l)?;
                let mut far = true;
                for g in &feats {
                    if cosine_distance(&f, g)? < LAYOUT_MIN_DISTANCE {
                        far = false;
                        break;
                    }
                }
                if far {
                    accepted = Some((l, f));
                    break;
                }
            }
            let (l, f) = accepted.ok_or_else(|| {
                HscError::Config(format!("could not place scene {s} apart from the others; grid too small?"))
            })?;
            layouts.push(l);
            feats.push(f);
        }
        let pairs = cfg.all_pairs();
        let mut prototypes = BTreeMap::new();
        let mut offsets = BTreeMap::new();
        for p in &pairs {
            prototypes.insert(p.clone(), unit_vector(cfg.appearance_dim, &mut rng));
            for s in 0..cfg.scenes.len() {
                let o: Vec<f64> = unit_vector(cfg.appearance_dim, &mut rng)
                    .into_iter()
                    .map(|x| x * cfg.scene_offset)
                    .collect();
                offsets.insert((p.clone(), s), o);
            }
        }
        let scene_speed = (0..cfg.scenes.len()).map(|_| rng.random_range(0.9..1.1)).collect();
        Ok(World {
            layouts,
            prototypes,
            offsets,
            scene_speed,
        })
    }
}

struct SplitBuilder<'a> {
    cfg: &'a ScenarioConfig,
    world: &'a World,
    tree: KinematicTree,
    ds: Dataset,
    clip_scenes: Vec<usize>,
    clip_labels: Vec<u8>,
    samples: Vec<SampleTruth>,
}

impl<'a> SplitBuilder<'a> {
    fn new(cfg: &'a ScenarioConfig, world: &'a World, split: Split) -> Self {
        SplitBuilder {
            cfg,
            world,
            tree: KinematicTree::coco17(),
            ds: Dataset::new(split, cfg.dims(), KeypointScheme::coco17(), Some(cfg.scene_params())),
            clip_scenes: Vec::new(),
            clip_labels: Vec::new(),
            samples: Vec::new(),
        }
    }

    /// Appends one clip with `pairs` objects; `anomalous` flags each object.
    fn clip<R: Rng>(
        &mut self,
        video: &str,
        index: u32,
        scene: usize,
        layout: &Layout,
        objects: &[((String, Option<String>), bool)],
        rng: &mut R,
    ) -> Result<()> {
        let cfg = self.cfg;
        let (h, w) = (cfg.grid_height, cfg.grid_width);
        let t = cfg.frames_per_clip;
        let split = self.ds.split;
        let mut frames: Vec<Vec<u32>> = (0..t)
            .map(|_| {
                let mut g = layout.render(h, w);
                for px in g.iter_mut() {
                    if rng.random::<f64>() < cfg.speckle {
                        *px = rng.random_range(0..BACKGROUND_CLASSES);
                    }
                }
                g
            })
            .collect();
        let any_anomaly = objects.iter().any(|o| o.1);
        for (obj_id, (pair, anomalous)) in objects.iter().enumerate() {
            let (object, action) = pair;
            let proto = &self.world.prototypes[pair];
            let offset = &self.world.offsets[&(pair.clone(), scene)];
            let appearance: Vec<f64> = proto
                .iter()
                .zip(offset)
                .map(|(p, o)| p + o + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let row = rng.random_range(0.3..0.8) * h as f64;
            let col = rng.random_range(0.1..0.5) * w as f64;
            let (skeleton, motion) = match action {
                Some(a) => {
                    let seq = skeleton_sequence(a, self.world.scene_speed[scene], t, [col, row], cfg.pose_noise, rng);
                    let m = motion_featurize(&seq, &self.tree)?;
                    (Some(seq), Some(m))
                }
                None => (None, None),
            };
            // paint the object's footprint
            let (fh, fw, cls) = if action.is_some() { (5, 2, PERSON_CLASS) } else { (3, 4, VEHICLE_CLASS) };
            let speed = action.as_deref().map_or(0.8, |a| gait(a).speed * 2.5);
            for (f, grid) in frames.iter_mut().enumerate() {
                let c0 = (col + speed * f as f64) as usize;
                let r0 = row as usize;
                for r in r0..(r0 + fh).min(h) {
                    for c in c0.min(w)..(c0 + fw).min(w) {
                        grid[r * w + c] = cls;
                    }
                }
            }
            self.ds.samples.push(TrackletSample {
                video_id: video.into(),
                clip_index: index,
                object_id: obj_id as u32,
                appearance,
                skeleton,
                motion,
                object_class: object.clone(),
                action_class: action.clone(),
                anomaly_label: (split == Split::Test).then_some(*anomalous as u8),
            });
            self.samples.push(SampleTruth {
                scene,
                object: object.clone(),
                action: action.clone(),
                anomalous: *anomalous,
            });
        }
        let grids = frames
            .into_iter()
            .map(|g| SegmentationGrid::new(h, w, g))
            .collect::<Result<Vec<_>>>()?;
        self.ds.clips.push(ClipRecord {
            video_id: video.into(),
            clip_index: index,
            frame_count: t as u32,
            scene_input: SceneInput::Grids(grids),
            scene_label: None,
            anomaly_label: (split == Split::Test).then_some(any_anomaly as u8),
        });
        self.clip_scenes.push(scene);
        self.clip_labels.push(any_anomaly as u8);
        Ok(())
    }
}

fn draw_objects<R: Rng>(cfg: &ScenarioConfig, scene: usize, rng: &mut R) -> Result<Vec<((String, Option<String>), bool)>> {
    let pairs = &cfg.scenes[scene].pairs;
    let dist = WeightedIndex::new(pairs.iter().map(|p| p.weight))
        .map_err(|e| HscError::Config(format!("scene {scene} weights: {e}")))?;
    let n = rng.random_range(cfg.objects_min..=cfg.objects_max);
    Ok((0..n).map(|_| (pairs[dist.sample(rng)].key(), false)).collect())
}

fn video_layout<R: Rng>(world: &World, scene: usize, rng: &mut R) -> Layout {
    world.layouts[scene].shifted(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Builds the train and test splits of a scenario. Same config, same output.
pub fn generate_mixture_dataset(cfg: &ScenarioConfig) -> Result<GeneratedBenchmark> {
    cfg.validate()?;
    let world = World::new(cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut train = SplitBuilder::new(cfg, &world, Split::Train);
    for scene in 0..cfg.scenes.len() {
        for v in 0..cfg.train_videos_per_scene {
            let video = format!("s{scene:02}_train_{v:03}");
            let layout = video_layout(&world, scene, &mut rng);
            for c in 0..cfg.clips_per_video {
                let objects = draw_objects(cfg, scene, &mut rng)?;
                train.clip(&video, c as u32, scene, &layout, &objects, &mut rng)?;
            }
        }
    }

    rng.set_stream(3);
    rng.set_word_pos(0);
    let mut test = SplitBuilder::new(cfg, &world, Split::Test);
    for scene in 0..cfg.scenes.len() {
        // (video, clip) → planted pair
        let mut planted: BTreeMap<(usize, usize), (String, Option<String>)> = BTreeMap::new();
        for a in cfg.anomalies.iter().filter(|a| a.scene == scene) {
            for _ in 0..a.events {
                let mut placed = false;
                for _ in 0..1000 {
                    let v = rng.random_range(0..cfg.test_videos_per_scene);
                    let start = rng.random_range(0..=cfg.test_clips_per_video - a.clips_per_event);
                    let span: Vec<(usize, usize)> = (start..start + a.clips_per_event).map(|c| (v, c)).collect();
                    if span.iter().all(|k| !planted.contains_key(k)) {
                        for k in span {
                            planted.insert(k, (a.object.clone(), a.action.clone()));
                        }
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(HscError::Config(format!("could not place anomaly events in scene {scene}")));
                }
            }
        }
        for v in 0..cfg.test_videos_per_scene {
            let video = format!("s{scene:02}_test_{v:03}");
            let layout = video_layout(&world, scene, &mut rng);
            for c in 0..cfg.test_clips_per_video {
                let mut objects = draw_objects(cfg, scene, &mut rng)?;
                if let Some(pair) = planted.get(&(v, c)) {
                    if objects.is_empty() {
                        objects.push((pair.clone(), true));
                    } else {
                        let slot = rng.random_range(0..=objects.len());
                        objects.insert(slot, (pair.clone(), true));
                    }
                }
                test.clip(&video, c as u32, scene, &layout, &objects, &mut rng)?;
            }
        }
    }

    let mut order: Vec<usize> = (0..test.ds.clips.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&test.ds.clips[a], &test.ds.clips[b]);
        (ca.video_id.as_str(), ca.clip_index).cmp(&(cb.video_id.as_str(), cb.clip_index))
    });
    let test_frame_labels = order
        .iter()
        .flat_map(|&i| std::iter::repeat_n(test.clip_labels[i], cfg.frames_per_clip))
        .collect();
    let truth = GroundTruth {
        train_clip_scenes: train.clip_scenes,
        test_clip_scenes: test.clip_scenes,
        test_clip_labels: test.clip_labels,
        test_frame_labels,
        train_samples: train.samples,
        test_samples: test.samples,
    };
    train.ds.validate()?;
    test.ds.validate()?;
    Ok(GeneratedBenchmark {
        train: train.ds,
        test: test.ds,
        truth,
    })
}
