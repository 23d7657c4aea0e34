//! Loading a dataset directory into model-ready samples.

use std::collections::BTreeMap;
use std::path::Path;

use ig_core::dataset::{read_dataset, read_point_cloud, DatasetSplit, SceneGraph, SplitName};
use ig_core::geometry::Box3D;
use ig_core::text::{tokenize_and_tag, verb_distribution_prefix, LexiconTagger, TokenizedText};
use ig_core::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::CandidateConfig;
use crate::backbone::SceneGeometry;
use crate::config::ModelConfig;
use crate::NetError;

/// One sample with its text analysed and targets resolved.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample_id: String,
    /// Index into [`PreparedData::geometry`] and [`PreparedData::scenes`].
    pub scene: usize,
    pub text: TokenizedText,
    pub targets: Vec<Box3D>,
    /// Verb distribution over the sentence tokens (sentinel excluded).
    pub v_dist: Vec<f64>,
}

impl PreparedSample {
    /// Token count without the sentinel.
    pub fn sentence_len(&self) -> usize {
        self.text.len() - usize::from(self.text.has_sentinel)
    }
}

pub struct PreparedData {
    pub scenes: Vec<SceneGraph>,
    pub geometry: Vec<SceneGeometry>,
    pub splits: BTreeMap<SplitName, Vec<PreparedSample>>,
    /// Raw splits, kept for metric computation.
    pub raw: BTreeMap<SplitName, DatasetSplit>,
}

impl PreparedData {
    pub fn load(dir: &Path, model: &ModelConfig) -> Result<Self, NetError> {
        let (splits, scenes) = read_dataset(dir)?;
        let mut geometry = Vec::with_capacity(scenes.len());
        for scene in &scenes {
            let cloud = read_point_cloud(dir, &scene.scene_id)?
                .ok_or_else(|| NetError::Data(format!("scene {} has no point cloud", scene.scene_id)))?;
            if cloud.feature_dim != model.point_feature_dim {
                return Err(NetError::Data(format!(
                    "scene {} has {} point features, model expects {}",
                    scene.scene_id, cloud.feature_dim, model.point_feature_dim
                )));
            }
            geometry.push(SceneGeometry::build(&cloud, model).map_err(NetError::Data)?);
        }
        Self::from_parts(splits, scenes, geometry, model)
    }

    pub fn from_parts(
        splits: Vec<DatasetSplit>,
        scenes: Vec<SceneGraph>,
        geometry: Vec<SceneGeometry>,
        model: &ModelConfig,
    ) -> Result<Self, NetError> {
        let index: BTreeMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.scene_id.as_str(), i)).collect();
        let tagger = LexiconTagger::default();
        let mut prepared = BTreeMap::new();
        let mut raw = BTreeMap::new();
        for split in splits {
            let mut out = Vec::with_capacity(split.samples.len());
            for s in &split.samples {
                let scene = *index
                    .get(s.scene_id.as_str())
                    .ok_or_else(|| NetError::Data(format!("sample {} references unknown scene", s.sample_id)))?;
                let mut text = tokenize_and_tag(&s.text, &tagger)
                    .map_err(|e| NetError::Data(format!("sample {}: {e}", s.sample_id)))?;
                if let Some(gold) = &s.gold_verb_object_pairs {
                    let n = text.len() - 1;
                    if gold.iter().all(|&(v, o)| v < n && o < n) {
                        text.pairs = gold.clone();
                    }
                }
                text.truncate_to(model.max_text_len);
                let len = text.len() - 1;
                let v_dist = verb_distribution_prefix(&text.verb_positions[..len], len)
                    .map_err(|e| NetError::Data(format!("sample {}: {e}", s.sample_id)))?;
                out.push(PreparedSample {
                    sample_id: s.sample_id.clone(),
                    scene,
                    text,
                    targets: s.target_boxes.clone(),
                    v_dist,
                });
            }
            prepared.insert(split.name, out);
            raw.insert(split.name, split);
        }
        Ok(Self {
            scenes,
            geometry,
            splits: prepared,
            raw,
        })
    }

    pub fn split(&self, name: SplitName) -> Result<(&[PreparedSample], &DatasetSplit), NetError> {
        match (self.splits.get(&name), self.raw.get(&name)) {
            (Some(p), Some(r)) if !p.is_empty() => Ok((p, r)),
            _ => Err(NetError::Data(format!("split {name} is missing or empty"))),
        }
    }
}

fn jitter(b: &Box3D, cfg: &CandidateConfig, rng: &mut ChaCha8Rng) -> Box3D {
    let size = b.size();
    let mut center = b.center();
    let mut new_size = size;
    for a in 0..3 {
        let sigma = cfg.center_sigma * size[a];
        if sigma > 0.0 {
            center[a] += Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
        }
        if cfg.size_jitter > 0.0 {
            new_size[a] *= rng.random_range(1.0 - cfg.size_jitter..=1.0 + cfg.size_jitter);
        }
    }
    Box3D::new(center, new_size).expect("jittered boxes stay valid")
}

/// Jitter-oracle candidates: every target perturbed, followed by other
/// scene objects as distractors, in a seed-determined order.
pub fn oracle_candidates(targets: &[Box3D], scene: &SceneGraph, cfg: &CandidateConfig, seed: u64) -> Vec<Box3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Box3D> = targets.iter().map(|t| jitter(t, cfg, &mut rng)).collect();
    let distractors = scene
        .objects
        .iter()
        .filter(|o| !targets.iter().any(|t| t == &o.bbox))
        .take(cfg.max_distractors);
    for o in distractors {
        out.push(if cfg.jitter_distractors { jitter(&o.bbox, cfg, &mut rng) } else { o.bbox });
    }
    // shuffle so position carries no label information
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i);
        out.swap(i, j);
    }
    out
}

/// Seed of the candidate draw for one sample; `epoch` is `None` at evaluation.
pub fn candidate_seed(seed: u64, sample_id: &str, epoch: Option<usize>) -> u64 {
    match epoch {
        Some(e) => derive_seed(seed, &format!("candidates/{sample_id}/{e}")),
        None => derive_seed(0, &format!("candidates/{sample_id}")),
    }
}
