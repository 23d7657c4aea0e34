//! Data side of 3D intention grounding: box geometry, scene and sample
//! records, dataset construction, text analysis and detection metrics.

pub mod datagen;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod text;
pub mod util;
