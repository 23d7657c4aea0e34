//! Scenes, intention samples and splits, plus their on-disk layout.
//!
//! A dataset directory looks like:
//!
//! ```text
//! <dir>/scenes/<scene_id>.json     one scene graph per scene
//! <dir>/clouds/<scene_id>.json     optional point cloud per scene
//! <dir>/<split>.jsonl              one intention sample per line
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Box3D;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("sample {sample_id}: {reason}")]
    InvalidSample { sample_id: String, reason: String },
    #[error("sample {sample_id} references unknown scene {scene_id}")]
    DanglingScene { sample_id: String, scene_id: String },
    #[error("rejected input: {0}")]
    Rejected(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub instance_id: String,
    pub fine_class: String,
    pub coarse_class: String,
    #[serde(rename = "box")]
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: String,
    pub scene_type: String,
    pub objects: Vec<ObjectRecord>,
    /// Instances per fine class; always recomputed from `objects` on load.
    #[serde(default)]
    pub class_counts: BTreeMap<String, usize>,
}

impl SceneGraph {
    pub fn recount(objects: &[ObjectRecord]) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for o in objects {
            *counts.entry(o.fine_class.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn instances_of<'a>(&'a self, fine_class: &'a str) -> impl Iterator<Item = &'a ObjectRecord> {
        self.objects.iter().filter(move |o| o.fine_class == fine_class)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.instance_id.as_str()) {
                return Err(DatasetError::Validation(format!(
                    "scene {}: duplicate instance_id {}",
                    self.scene_id, o.instance_id
                )));
            }
            if o.fine_class.is_empty() {
                return Err(DatasetError::Validation(format!(
                    "scene {}: object {} has empty fine_class",
                    self.scene_id, o.instance_id
                )));
            }
        }
        if self.class_counts != Self::recount(&self.objects) {
            return Err(DatasetError::Validation(format!(
                "scene {}: class_counts disagree with objects",
                self.scene_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentionSample {
    pub sample_id: String,
    pub scene_id: String,
    pub text: String,
    pub target_fine_class: String,
    pub target_boxes: Vec<Box3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_verb_object_pairs: Option<Vec<(usize, usize)>>,
}

impl IntentionSample {
    /// Checks the sample against the scene it references.
    pub fn validate_against(&self, scene: &SceneGraph) -> Result<(), DatasetError> {
        let invalid = |reason: String| DatasetError::InvalidSample {
            sample_id: self.sample_id.clone(),
            reason,
        };
        if self.target_boxes.is_empty() {
            return Err(invalid("target_boxes is empty".into()));
        }
        for b in &self.target_boxes {
            let found = scene
                .instances_of(&self.target_fine_class)
                .any(|o| boxes_match(&o.bbox, b));
            if !found {
                return Err(invalid(format!(
                    "target box {:?} is not a {} in scene {}",
                    b, self.target_fine_class, scene.scene_id
                )));
            }
        }
        Ok(())
    }
}

fn boxes_match(a: &Box3D, b: &Box3D) -> bool {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .all(|(x, y)| (x - y).abs() <= 1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(DatasetError::Rejected(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub samples: Vec<IntentionSample>,
}

impl DatasetSplit {
    pub fn scene_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.scene_id.as_str()).collect()
    }
}

/// Per-scene point cloud; each row is `x, y, z` followed by `feature_dim` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCloud {
    pub scene_id: String,
    pub feature_dim: usize,
    pub points: Vec<Vec<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.points.iter().map(|p| [p[0], p[1], p[2]])
    }
}

/// Checks every cross-record invariant of a dataset.
pub fn validate_dataset(splits: &[DatasetSplit], scenes: &[SceneGraph]) -> Result<(), DatasetError> {
    let mut by_id = HashMap::new();
    for s in scenes {
        s.validate()?;
        if by_id.insert(s.scene_id.as_str(), s).is_some() {
            return Err(DatasetError::Validation(format!("duplicate scene {}", s.scene_id)));
        }
    }
    let mut seen_splits = BTreeSet::new();
    for split in splits {
        if !seen_splits.insert(split.name) {
            return Err(DatasetError::Validation(format!("split {} given twice", split.name)));
        }
    }
    for (i, a) in splits.iter().enumerate() {
        let sa = a.scene_ids();
        for b in &splits[i + 1..] {
            if let Some(shared) = sa.intersection(&b.scene_ids()).next() {
                return Err(DatasetError::Validation(format!(
                    "splits {} and {} share scene {shared}",
                    a.name, b.name
                )));
            }
        }
    }
    let mut sample_ids = BTreeSet::new();
    for sample in splits.iter().flat_map(|s| &s.samples) {
        if !sample_ids.insert(sample.sample_id.as_str()) {
            return Err(DatasetError::InvalidSample {
                sample_id: sample.sample_id.clone(),
                reason: "duplicate sample_id".into(),
            });
        }
        let scene = by_id
            .get(sample.scene_id.as_str())
            .ok_or_else(|| DatasetError::DanglingScene {
                sample_id: sample.sample_id.clone(),
                scene_id: sample.scene_id.clone(),
            })?;
        sample.validate_against(scene)?;
    }
    Ok(())
}

pub fn write_dataset(
    splits: &[DatasetSplit],
    scenes: &[SceneGraph],
    dir: &Path,
) -> Result<(), DatasetError> {
    validate_dataset(splits, scenes)?;
    let scene_dir = dir.join("scenes");
    fs::create_dir_all(&scene_dir).map_err(io_err(&scene_dir))?;
    for scene in scenes {
        let path = scene_dir.join(format!("{}.json", scene.scene_id));
        let body = serde_json::to_string_pretty(scene).expect("scene graphs serialize");
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    for split in splits {
        let path = dir.join(format!("{}.jsonl", split.name));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for sample in &split.samples {
            let line = serde_json::to_string(sample).expect("samples serialize");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn write_point_clouds(clouds: &[PointCloud], dir: &Path) -> Result<(), DatasetError> {
    let cloud_dir = dir.join("clouds");
    fs::create_dir_all(&cloud_dir).map_err(io_err(&cloud_dir))?;
    for cloud in clouds {
        let path = cloud_dir.join(format!("{}.json", cloud.scene_id));
        let body = serde_json::to_string(cloud).expect("clouds serialize");
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Loads the point cloud for one scene, `None` when the dataset ships none.
pub fn read_point_cloud(dir: &Path, scene_id: &str) -> Result<Option<PointCloud>, DatasetError> {
    let path = dir.join("clouds").join(format!("{scene_id}.json"));
    if !path.exists() {
        return Ok(None);
    }
    let body = fs::read_to_string(&path).map_err(io_err(&path))?;
    let cloud: PointCloud = serde_json::from_str(&body).map_err(|e| DatasetError::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if cloud.points.iter().any(|p| p.len() != 3 + cloud.feature_dim) {
        return Err(DatasetError::Validation(format!(
            "cloud {scene_id}: row width differs from 3 + feature_dim"
        )));
    }
    Ok(Some(cloud))
}

pub fn read_scene(path: &Path) -> Result<SceneGraph, DatasetError> {
    let body = fs::read_to_string(path).map_err(io_err(path))?;
    let mut scene: SceneGraph = serde_json::from_str(&body).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let counts = SceneGraph::recount(&scene.objects);
    if !scene.class_counts.is_empty() && scene.class_counts != counts {
        return Err(DatasetError::Validation(format!(
            "scene {}: stored class_counts disagree with objects",
            scene.scene_id
        )));
    }
    scene.class_counts = counts;
    scene.validate()?;
    Ok(scene)
}

pub fn read_split(path: &Path, name: SplitName) -> Result<DatasetSplit, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(DatasetSplit { name, samples })
}

/// Reads a dataset directory, verifying every invariant.
///
/// Splits whose file is absent are omitted; scenes come back sorted by id.
pub fn read_dataset(dir: &Path) -> Result<(Vec<DatasetSplit>, Vec<SceneGraph>), DatasetError> {
    let scene_dir = dir.join("scenes");
    let mut paths: Vec<PathBuf> = fs::read_dir(&scene_dir)
        .map_err(io_err(&scene_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let scenes = paths.iter().map(|p| read_scene(p)).collect::<Result<Vec<_>, _>>()?;

    let mut splits = Vec::new();
    for name in SplitName::ALL {
        let path = dir.join(format!("{name}.jsonl"));
        if path.exists() {
            splits.push(read_split(&path, name)?);
        }
    }
    validate_dataset(&splits, &scenes)?;
    Ok((splits, scenes))
}

/// Partitions samples into train/val/test by scene.
///
/// Val and test receive `floor(ratio * scenes)` scenes and train takes the
/// remainder. A split with a non-zero ratio always gets at least one scene.
pub fn split_by_scene(
    samples: &[IntentionSample],
    ratios: [f64; 3],
    rng_seed: u64,
) -> Result<[DatasetSplit; 3], DatasetError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(DatasetError::Rejected(format!("invalid ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Rejected(format!("ratios sum to {total}, not 1")));
    }
    let mut scene_ids: Vec<&str> = samples
        .iter()
        .map(|s| s.scene_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = scene_ids.len();
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(DatasetError::Rejected(format!(
            "{n} scenes cannot fill {nonzero} non-empty splits"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    scene_ids.shuffle(&mut rng);

    let share = |r: f64| {
        let c = (r * n as f64 + 1e-9).floor() as usize;
        if r > 0.0 {
            c.max(1)
        } else {
            c
        }
    };
    let n_val = share(ratios[1]);
    let n_test = share(ratios[2]);
    let n_train = n - n_val - n_test;
    if ratios[0] > 0.0 && n_train == 0 {
        return Err(DatasetError::Rejected("no scene left for train".into()));
    }

    let mut assign: HashMap<&str, SplitName> = HashMap::new();
    for (i, id) in scene_ids.iter().enumerate() {
        let name = if i < n_train {
            SplitName::Train
        } else if i < n_train + n_val {
            SplitName::Val
        } else {
            SplitName::Test
        };
        assign.insert(id, name);
    }
    let mut out = SplitName::ALL.map(|name| DatasetSplit {
        name,
        samples: Vec::new(),
    });
    for s in samples {
        let idx = match assign[s.scene_id.as_str()] {
            SplitName::Train => 0,
            SplitName::Val => 1,
            SplitName::Test => 2,
        };
        out[idx].samples.push(s.clone());
    }
    Ok(out)
}
