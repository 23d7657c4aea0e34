//! Dataset construction: scene graphs, object selection, intention text
//! generation and cleaning, offline scene synthesis and corpus statistics.

mod clean;
pub mod llm;
mod stats;
mod synth;
pub mod templates;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{ObjectRecord, SceneGraph};
use crate::geometry::GeometryError;

pub use clean::{clean_texts, RejectReason};
pub use llm::{LlmClient, LlmClientConfig};
pub use stats::{compute_statistics, DatasetStats};
pub use synth::{synthesize_scenes, SynthConfig, SynthOutput};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("generation failed: {message}; raw response: {raw}")]
    Generation { message: String, raw: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Builds a scene graph from raw annotations, ordered by instance id.
pub fn build_scene_graph(
    mut annotations: Vec<ObjectRecord>,
    scene_id: &str,
    scene_type: &str,
) -> Result<SceneGraph, DatagenError> {
    annotations.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    for w in annotations.windows(2) {
        if w[0].instance_id == w[1].instance_id {
            return Err(DatagenError::Validation(format!(
                "duplicate instance_id {} in scene {scene_id}",
                w[0].instance_id
            )));
        }
    }
    if let Some(o) = annotations.iter().find(|o| o.fine_class.is_empty()) {
        return Err(DatagenError::Validation(format!(
            "object {} has an empty class",
            o.instance_id
        )));
    }
    let class_counts = SceneGraph::recount(&annotations);
    Ok(SceneGraph {
        scene_id: scene_id.to_string(),
        scene_type: scene_type.to_string(),
        objects: annotations,
        class_counts,
    })
}

/// Where intention texts come from.
pub enum TextSource<'a> {
    Llm(&'a LlmClient),
    Template { rng_seed: u64, texts_per_object: usize },
}

/// Intention texts for `target_class` in `scene`.
pub fn generate_intention_texts(
    target_class: &str,
    scene: &SceneGraph,
    source: &TextSource<'_>,
) -> Result<Vec<String>, DatagenError> {
    if !scene.class_counts.contains_key(target_class) {
        return Err(DatagenError::Rejected(format!(
            "class {target_class:?} is not in scene {}",
            scene.scene_id
        )));
    }
    match source {
        TextSource::Llm(client) => client.generate(scene, target_class),
        TextSource::Template {
            rng_seed,
            texts_per_object,
        } => Ok(templates::template_texts(target_class, *texts_per_object, *rng_seed)?
            .into_iter()
            .map(|t| t.text)
            .collect()),
    }
}

/// Object selection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// A class must appear in at least this many distinct scenes.
    pub min_scene_occurrences: usize,
    /// A class is selected in a scene only with fewer instances than this.
    pub max_instances_per_scene: usize,
    /// Classes that may satisfy the same intention. When several members are
    /// present in one scene only the lexicographically first can be selected.
    pub ambiguity_groups: Vec<BTreeSet<String>>,
    pub excluded_structural_classes: BTreeSet<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            min_scene_occurrences: 4,
            max_instances_per_scene: 6,
            ambiguity_groups: Vec::new(),
            excluded_structural_classes: ["wall", "ceiling", "floor", "door", "window"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.min_scene_occurrences < 1 {
            return Err(DatagenError::Rejected("min_scene_occurrences must be >= 1".into()));
        }
        if self.max_instances_per_scene < 2 {
            return Err(DatagenError::Rejected("max_instances_per_scene must be >= 2".into()));
        }
        Ok(())
    }
}

/// Number of distinct scenes containing each fine class.
pub fn scene_occurrences(all_scenes: &[SceneGraph]) -> BTreeMap<String, usize> {
    let mut seen: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for s in all_scenes {
        for class in s.class_counts.keys() {
            seen.entry(class.clone()).or_default().insert(&s.scene_id);
        }
    }
    seen.into_iter().map(|(c, ids)| (c, ids.len())).collect()
}

/// Applies the common / non-trivial / unambiguous criteria to one scene.
///
/// Returns each selected class with all of its instances in the scene.
pub fn select_objects(
    scene: &SceneGraph,
    all_scenes: &[SceneGraph],
    cfg: &SelectionConfig,
) -> Vec<(String, Vec<ObjectRecord>)> {
    let occurrences = scene_occurrences(all_scenes);
    select_with_occurrences(scene, &occurrences, cfg)
}

pub(crate) fn select_with_occurrences(
    scene: &SceneGraph,
    occurrences: &BTreeMap<String, usize>,
    cfg: &SelectionConfig,
) -> Vec<(String, Vec<ObjectRecord>)> {
    let present: BTreeSet<&str> = scene.class_counts.keys().map(String::as_str).collect();
    // later members of an ambiguity group lose to the first one present
    let mut shadowed: BTreeSet<&str> = BTreeSet::new();
    for group in &cfg.ambiguity_groups {
        let members: Vec<&str> = group
            .iter()
            .map(String::as_str)
            .filter(|c| present.contains(c))
            .collect();
        shadowed.extend(members.iter().skip(1));
    }

    scene
        .class_counts
        .iter()
        .filter(|(class, count)| {
            occurrences.get(*class).copied().unwrap_or(0) >= cfg.min_scene_occurrences
                && **count < cfg.max_instances_per_scene
                && !cfg.excluded_structural_classes.contains(*class)
                && !shadowed.contains(class.as_str())
        })
        .map(|(class, _)| (class.clone(), scene.instances_of(class).cloned().collect()))
        .collect()
}
