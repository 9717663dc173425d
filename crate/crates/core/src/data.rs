//! Dataset records and the newline-delimited JSON dataset format.
//!
//! A dataset file starts with one `header` object followed by tagged `clip`
//! and `sample` records, one JSON object per line. The book's "File formats"
//! chapter documents every field.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HscError, Result};
use crate::skeleton::KinematicTree;

pub const DATASET_FORMAT: &str = "hsc-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Feature dimensions shared by every record of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub appearance: usize,
    pub motion: usize,
    pub scene: usize,
}

/// Keypoint layout: names, parent table (root is its own parent) and head points.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointScheme {
    pub names: Vec<String>,
    pub parents: Vec<usize>,
    pub head: Vec<usize>,
}

impl KeypointScheme {
    pub fn coco17() -> Self {
        KinematicTree::coco17().scheme()
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }
}

/// How segmentation grids turn into scene features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_classes: u32,
    pub foreground_classes: Vec<u32>,
    pub pool_size: usize,
}

/// One frame of a segmentation map, row-major class ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationGrid {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u32>,
}

impl SegmentationGrid {
    pub fn new(height: usize, width: usize, classes: Vec<u32>) -> Result<Self> {
        let g = SegmentationGrid {
            height,
            width,
            classes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn filled(height: usize, width: usize, class: u32) -> Self {
        SegmentationGrid {
            height,
            width,
            classes: vec![class; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.classes[r * self.width + c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(HscError::Usage("segmentation grid must be non-empty".into()));
        }
        crate::error::check_dim("segmentation grid cells", self.height * self.width, self.classes.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneInput {
    /// One grid per frame of the clip.
    Grids(Vec<SegmentationGrid>),
    /// A precomputed scene feature of dimension `dims.scene`.
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub keypoints: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub video_id: String,
    pub clip_index: u32,
    pub frame_count: u32,
    pub scene_input: SceneInput,
    #[serde(default)]
    pub scene_label: Option<u32>,
    #[serde(default)]
    pub anomaly_label: Option<u8>,
}

impl ClipRecord {
    pub fn key(&self) -> ClipKey {
        ClipKey::new(&self.video_id, self.clip_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackletSample {
    pub video_id: String,
    pub clip_index: u32,
    pub object_id: u32,
    pub appearance: Vec<f64>,
    #[serde(default)]
    pub skeleton: Option<Vec<SkeletonFrame>>,
    #[serde(default)]
    pub motion: Option<Vec<f64>>,
    pub object_class: String,
    #[serde(default)]
    pub action_class: Option<String>,
    #[serde(default)]
    pub anomaly_label: Option<u8>,
}

impl TrackletSample {
    pub fn clip_key(&self) -> ClipKey {
        ClipKey::new(&self.video_id, self.clip_index)
    }

    /// Samples without a motion feature only take part in the appearance stream.
    pub fn has_motion(&self) -> bool {
        self.motion.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipKey {
    pub video_id: String,
    pub clip_index: u32,
}

impl ClipKey {
    pub fn new(video_id: &str, clip_index: u32) -> Self {
        ClipKey {
            video_id: video_id.to_string(),
            clip_index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub dims: Dims,
    pub keypoints: KeypointScheme,
    #[serde(default)]
    pub scene: Option<SceneParams>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Header(DatasetHeader),
    Clip(ClipRecord),
    Sample(TrackletSample),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RecordRef<'a> {
    Header(&'a DatasetHeader),
    Clip(&'a ClipRecord),
    Sample(&'a TrackletSample),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub dims: Dims,
    pub keypoints: KeypointScheme,
    pub scene: Option<SceneParams>,
    pub clips: Vec<ClipRecord>,
    pub samples: Vec<TrackletSample>,
}

impl Dataset {
    pub fn new(split: Split, dims: Dims, keypoints: KeypointScheme, scene: Option<SceneParams>) -> Self {
        Dataset {
            split,
            dims,
            keypoints,
            scene,
            clips: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            split: self.split,
            dims: self.dims,
            keypoints: self.keypoints.clone(),
            scene: self.scene.clone(),
        }
    }

    /// Map from clip key to position in `clips`.
    pub fn clip_lookup(&self) -> HashMap<ClipKey, usize> {
        self.clips
            .iter()
            .enumerate()
            .map(|(i, c)| (c.key(), i))
            .collect()
    }

    /// Sample indices grouped by clip position, in sample order.
    pub fn samples_by_clip(&self) -> Result<Vec<Vec<usize>>> {
        let lookup = self.clip_lookup();
        let mut out = vec![Vec::new(); self.clips.len()];
        for (i, s) in self.samples.iter().enumerate() {
            let c = lookup.get(&s.clip_key()).ok_or_else(|| {
                HscError::Usage(format!(
                    "sample {i} references missing clip {}#{}",
                    s.video_id, s.clip_index
                ))
            })?;
            out[*c].push(i);
        }
        Ok(out)
    }

    pub fn tree(&self) -> Result<KinematicTree> {
        KinematicTree::from_scheme(&self.keypoints)
    }

    /// Checks every record invariant plus referential integrity.
    ///
    /// Errors carry the zero-based record position counted over clips first,
    /// then samples (the order they are written in).
    pub fn validate(&self) -> Result<()> {
        self.validate_with_source("<memory>", 0)
    }

    fn validate_with_source(&self, source: &str, first_record: usize) -> Result<()> {
        let tree = self
            .tree()
            .map_err(|e| HscError::Config(format!("{source}: invalid keypoint scheme: {e}")))?;
        let err = |record: usize, message: String| HscError::Record {
            path: source.to_string(),
            record: first_record + record,
            message,
        };
        let mut seen = HashMap::new();
        for (i, clip) in self.clips.iter().enumerate() {
            validate_clip(clip, self).map_err(|m| err(i, m))?;
            if seen.insert(clip.key(), i).is_some() {
                return Err(err(i, format!("duplicate clip {}#{}", clip.video_id, clip.clip_index)));
            }
            if self.split == Split::Test && clip.anomaly_label.is_none() {
                return Err(err(i, "test clip without anomaly label".into()));
            }
        }
        for (j, s) in self.samples.iter().enumerate() {
            let rec = self.clips.len() + j;
            validate_sample(s, self, &tree).map_err(|m| err(rec, m))?;
            if !seen.contains_key(&s.clip_key()) {
                return Err(err(
                    rec,
                    format!("dangling clip reference {}#{}", s.video_id, s.clip_index),
                ));
            }
            if self.split == Split::Test && s.anomaly_label.is_none() {
                return Err(err(rec, "test sample without anomaly label".into()));
            }
        }
        Ok(())
    }
}

fn validate_clip(clip: &ClipRecord, ds: &Dataset) -> std::result::Result<(), String> {
    if clip.frame_count == 0 {
        return Err("clip frame_count must be ≥ 1".into());
    }
    if let Some(l) = clip.anomaly_label {
        if l > 1 {
            return Err(format!("anomaly label must be 0 or 1, got {l}"));
        }
    }
    match &clip.scene_input {
        SceneInput::Vector(v) => {
            if v.len() != ds.dims.scene {
                return Err(format!(
                    "scene vector has dimension {}, expected {}",
                    v.len(),
                    ds.dims.scene
                ));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err("scene vector contains non-finite values".into());
            }
        }
        SceneInput::Grids(grids) => {
            let params = ds
                .scene
                .as_ref()
                .ok_or("segmentation grids present but header has no scene parameters")?;
            if grids.len() != clip.frame_count as usize {
                return Err(format!(
                    "{} grids for a {}-frame clip",
                    grids.len(),
                    clip.frame_count
                ));
            }
            let first = &grids[0];
            for g in grids {
                g.validate().map_err(|e| e.to_string())?;
                if g.height != first.height || g.width != first.width {
                    return Err("segmentation grids differ in shape".into());
                }
                if let Some(c) = g.classes.iter().find(|&&c| c >= params.num_classes) {
                    return Err(format!("class id {c} ≥ num_classes {}", params.num_classes));
                }
            }
            let expected = crate::scene::scene_feature_dim(params, first.height, first.width);
            if expected != ds.dims.scene {
                return Err(format!(
                    "grids yield scene dimension {expected}, header says {}",
                    ds.dims.scene
                ));
            }
        }
    }
    Ok(())
}

fn validate_sample(
    s: &TrackletSample,
    ds: &Dataset,
    tree: &KinematicTree,
) -> std::result::Result<(), String> {
    if s.appearance.len() != ds.dims.appearance {
        return Err(format!(
            "appearance has dimension {}, expected {}",
            s.appearance.len(),
            ds.dims.appearance
        ));
    }
    if !s.appearance.iter().all(|x| x.is_finite()) {
        return Err("appearance contains non-finite values".into());
    }
    if let Some(m) = &s.motion {
        if m.len() != ds.dims.motion {
            return Err(format!(
                "motion has dimension {}, expected {}",
                m.len(),
                ds.dims.motion
            ));
        }
        if !m.iter().all(|x| x.is_finite()) {
            return Err("motion contains non-finite values".into());
        }
    }
    if let Some(seq) = &s.skeleton {
        for (t, f) in seq.iter().enumerate() {
            if f.keypoints.len() != tree.len() {
                return Err(format!(
                    "skeleton frame {t} has {} keypoints, scheme has {}",
                    f.keypoints.len(),
                    tree.len()
                ));
            }
            if !f.keypoints.iter().flatten().all(|x| x.is_finite()) {
                return Err(format!("skeleton frame {t} has non-finite coordinates"));
            }
        }
    }
    if let Some(l) = s.anomaly_label {
        if l > 1 {
            return Err(format!("anomaly label must be 0 or 1, got {l}"));
        }
    }
    Ok(())
}

/// Reads and validates a JSONL dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let file = File::open(path).map_err(|e| HscError::io(path, e))?;
    let reader = BufReader::new(file);
    let rec_err = |record: usize, message: String| HscError::Record {
        path: source.clone(),
        record,
        message,
    };

    let mut header: Option<DatasetHeader> = None;
    let mut clips = Vec::new();
    let mut samples = Vec::new();
    // positions (line numbers) of each clip/sample, for error reporting
    let mut lines_of = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HscError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| rec_err(lineno, format!("malformed record: {e}")))?;
        match record {
            Record::Header(h) => {
                if header.is_some() || lineno != 0 {
                    return Err(rec_err(lineno, "header must be the first and only header line".into()));
                }
                if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
                    return Err(rec_err(
                        lineno,
                        format!("unsupported dataset format {} v{}", h.format, h.version),
                    ));
                }
                header = Some(h);
            }
            Record::Clip(c) => {
                if header.is_none() {
                    return Err(rec_err(lineno, "record before header".into()));
                }
                lines_of.push(lineno);
                clips.push(c);
            }
            Record::Sample(s) => {
                if header.is_none() {
                    return Err(rec_err(lineno, "record before header".into()));
                }
                samples.push((lineno, s));
            }
        }
    }
    let header = header.ok_or_else(|| rec_err(0, "missing header".into()))?;
    let mut ds = Dataset::new(header.split, header.dims, header.keypoints, header.scene);
    ds.clips = clips;
    let sample_lines: Vec<usize> = samples.iter().map(|(l, _)| *l).collect();
    ds.samples = samples.into_iter().map(|(_, s)| s).collect();
    lines_of.extend(sample_lines);

    // re-map validation record positions onto file lines
    match ds.validate_with_source(&source, 0) {
        Ok(()) => Ok(ds),
        Err(HscError::Record {
            path,
            record,
            message,
        }) => Err(HscError::Record {
            path,
            record: lines_of.get(record).copied().unwrap_or(0),
            message,
        }),
        Err(e) => Err(e),
    }
}

/// Writes a dataset as JSONL. The output is a pure function of the dataset.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| HscError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = dataset.header();
    let mut write = |r: RecordRef<'_>| -> Result<()> {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| HscError::io(path, e))
    };
    write(RecordRef::Header(&header))?;
    for c in &dataset.clips {
        write(RecordRef::Clip(c))?;
    }
    for s in &dataset.samples {
        write(RecordRef::Sample(s))?;
    }
    w.flush().map_err(|e| HscError::io(path, e))
}
