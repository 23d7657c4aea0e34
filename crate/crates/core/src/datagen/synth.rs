//! Offline generator for small indoor scenes with intention samples.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::{self, SCENE_TYPES};
use super::{build_scene_graph, clean_texts, scene_occurrences, select_with_occurrences};
use super::{DatagenError, RejectReason, SelectionConfig};
use crate::dataset::{self, DatasetError, IntentionSample, ObjectRecord, PointCloud, SceneGraph};
use crate::geometry::{iou3d, sample_box_points, Box3D, SampleMode};
use crate::util::derive_seed;

const PLACEMENT_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_scenes: usize,
    /// Room size `(x, y, z)` in meters; the floor is `z = 0`.
    pub room_extent: [f64; 3],
    /// Fine classes drawn from the built-in template bank.
    pub class_catalog: Vec<String>,
    /// Inclusive range of instances per present class.
    pub instances_range: (usize, usize),
    /// Probability that a catalog class appears in a scene.
    pub class_presence: f64,
    pub points_per_object: usize,
    pub floor_points: usize,
    /// Standard deviation-like jitter on per-point color features.
    pub feature_noise: f64,
    pub texts_per_object: usize,
    pub selection: SelectionConfig,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_scenes: 32,
            room_extent: [7.0, 7.0, 3.0],
            class_catalog: templates::BANK.iter().map(|c| c.fine_class.to_string()).collect(),
            instances_range: (1, 3),
            class_presence: 0.5,
            points_per_object: 48,
            floor_points: 64,
            feature_noise: 0.05,
            texts_per_object: 6,
            selection: SelectionConfig {
                ambiguity_groups: templates::default_ambiguity_groups(),
                ..SelectionConfig::default()
            },
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub scenes: Vec<SceneGraph>,
    pub clouds: Vec<PointCloud>,
    pub samples: Vec<IntentionSample>,
    pub rejected_texts: Vec<(String, RejectReason)>,
}

impl SynthOutput {
    /// Splits by scene and writes scenes, clouds and split files to `dir`.
    pub fn write(&self, dir: &Path, ratios: [f64; 3], split_seed: u64) -> Result<(), DatasetError> {
        let splits = dataset::split_by_scene(&self.samples, ratios, split_seed)?;
        dataset::write_dataset(&splits, &self.scenes, dir)?;
        dataset::write_point_clouds(&self.clouds, dir)
    }
}

/// Synthesizes scenes, point clouds and intention samples, deterministic per seed.
pub fn synthesize_scenes(cfg: &SynthConfig) -> Result<SynthOutput, DatagenError> {
    if cfg.class_catalog.is_empty() {
        return Err(DatagenError::Rejected("class catalog is empty".into()));
    }
    let (lo, hi) = cfg.instances_range;
    if hi < 1 || lo > hi {
        return Err(DatagenError::Rejected(format!("bad instances_range {:?}", cfg.instances_range)));
    }
    if cfg.points_per_object == 0 {
        return Err(DatagenError::Rejected("points_per_object must be >= 1".into()));
    }
    cfg.selection.validate()?;
    let catalog = cfg
        .class_catalog
        .iter()
        .map(|c| {
            templates::lookup(c).ok_or_else(|| DatagenError::Rejected(format!("class {c:?} is not in the template bank")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut scenes = Vec::with_capacity(cfg.num_scenes);
    let mut clouds = Vec::with_capacity(cfg.num_scenes);
    for si in 0..cfg.num_scenes {
        let scene_id = format!("scene{si:04}");
        let scene_type = SCENE_TYPES[rng.random_range(0..SCENE_TYPES.len())];

        let mut present: Vec<usize> = (0..catalog.len())
            .filter(|_| rng.random_bool(cfg.class_presence.clamp(0.0, 1.0)))
            .collect();
        if present.is_empty() {
            present.push(rng.random_range(0..catalog.len()));
        }
        let mut placed: Vec<Box3D> = Vec::new();
        let mut objects = Vec::new();
        for ci in present {
            let template = catalog[ci];
            let count = rng.random_range(lo.max(1)..=hi);
            for _ in 0..count {
                let bbox = place_box(template.size, cfg.room_extent, &placed, &mut rng).ok_or_else(|| {
                    DatagenError::Validation(format!(
                        "could not place a {} in {scene_id} after {PLACEMENT_RETRIES} tries",
                        template.fine_class
                    ))
                })?;
                placed.push(bbox);
                objects.push(ObjectRecord {
                    instance_id: format!("{scene_id}_{:02}", objects.len()),
                    fine_class: template.fine_class.to_string(),
                    coarse_class: template.coarse_class.to_string(),
                    bbox,
                });
            }
        }
        let graph = build_scene_graph(objects, &scene_id, scene_type)?;
        clouds.push(scene_cloud(&graph, cfg, &mut rng)?);
        scenes.push(graph);
    }

    let occurrences = scene_occurrences(&scenes);
    let mut samples = Vec::new();
    let mut rejected_texts = Vec::new();
    for scene in &scenes {
        for (class, instances) in select_with_occurrences(scene, &occurrences, &cfg.selection) {
            let seed = derive_seed(cfg.rng_seed, &format!("{}/{class}", scene.scene_id));
            let generated = templates::template_texts(&class, cfg.texts_per_object, seed)?;
            let texts: Vec<String> = generated.iter().map(|t| t.text.clone()).collect();
            let banned: HashSet<String> = templates::banned_terms(&class).into_iter().collect();
            let (kept, rejected) = clean_texts(&texts, &class, &banned);
            rejected_texts.extend(rejected);
            let kept: BTreeSet<&String> = kept.iter().collect();
            let boxes: Vec<Box3D> = instances.iter().map(|o| o.bbox).collect();
            for (k, t) in generated.iter().filter(|t| kept.contains(&t.text)).enumerate() {
                samples.push(IntentionSample {
                    sample_id: format!("{}_{}_{k}", scene.scene_id, class.replace(' ', "_")),
                    scene_id: scene.scene_id.clone(),
                    text: t.text.clone(),
                    target_fine_class: class.clone(),
                    target_boxes: boxes.clone(),
                    gold_verb_object_pairs: Some(t.pairs.clone()),
                });
            }
        }
    }
    Ok(SynthOutput {
        scenes,
        clouds,
        samples,
        rejected_texts,
    })
}

/// Rejection-samples a floor position whose box overlaps nothing placed so far.
fn place_box<R: Rng>(base: [f64; 3], room: [f64; 3], placed: &[Box3D], rng: &mut R) -> Option<Box3D> {
    for _ in 0..PLACEMENT_RETRIES {
        let scale: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.9..=1.1));
        let mut size: [f64; 3] = std::array::from_fn(|i| base[i] * scale[i]);
        if rng.random_bool(0.5) {
            size.swap(0, 1);
        }
        if (0..3).any(|i| size[i] > room[i]) {
            continue;
        }
        let center = [
            rng.random_range(size[0] / 2.0..=room[0] - size[0] / 2.0),
            rng.random_range(size[1] / 2.0..=room[1] - size[1] / 2.0),
            size[2] / 2.0,
        ];
        let candidate = Box3D::new(center, size).ok()?;
        if placed.iter().all(|b| iou3d(b, &candidate) == 0.0) {
            return Some(candidate);
        }
    }
    None
}

fn scene_cloud<R: Rng>(scene: &SceneGraph, cfg: &SynthConfig, rng: &mut R) -> Result<PointCloud, DatagenError> {
    let mut points = Vec::new();
    let noise = cfg.feature_noise;
    let jitter = |c: f64, rng: &mut R| (c + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
    for o in &scene.objects {
        let color = templates::lookup(&o.fine_class).map_or([0.5; 3], |t| t.color);
        let seed = derive_seed(cfg.rng_seed, &o.instance_id);
        for p in sample_box_points(&o.bbox, cfg.points_per_object, SampleMode::Surface, seed)? {
            let mut row = p.to_vec();
            row.extend(color.iter().map(|c| jitter(*c, rng)));
            points.push(row);
        }
    }
    for _ in 0..cfg.floor_points {
        let x = rng.random_range(0.0..=cfg.room_extent[0]);
        let y = rng.random_range(0.0..=cfg.room_extent[1]);
        let mut row = vec![x, y, 0.0];
        row.extend((0..3).map(|_| jitter(0.45, rng)));
        points.push(row);
    }
    points.shuffle(rng);
    Ok(PointCloud {
        scene_id: scene.scene_id.clone(),
        feature_dim: 3,
        points,
    })
}
