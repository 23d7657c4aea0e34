//! Axis-aligned 3D boxes: overlap, IoU, containment and point sampling.
//!
//! Boxes carry no orientation. Intersections are computed on open intervals,
//! so two boxes that only share a face have zero intersection and IoU 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box size must be strictly positive and finite, got {0:?}")]
    InvalidSize([f64; 3]),
    #[error("box center must be finite, got {0:?}")]
    InvalidCenter([f64; 3]),
    #[error("point count must be at least 1")]
    EmptySample,
}

/// An axis-aligned box given by its center and its full extent `(w, l, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box3D {
    center: [f64; 3],
    size: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    center: [f64; 3],
    size: [f64; 3],
}

impl TryFrom<RawBox> for Box3D {
    type Error = GeometryError;
    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Box3D::new(raw.center, raw.size)
    }
}

impl From<Box3D> for RawBox {
    fn from(b: Box3D) -> Self {
        RawBox {
            center: b.center,
            size: b.size,
        }
    }
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self, GeometryError> {
        if center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidCenter(center));
        }
        if size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(GeometryError::InvalidSize(size));
        }
        Ok(Self { center, size })
    }

    /// Axis-aligned unit cube centered at `center`.
    pub fn unit_cube(center: [f64; 3]) -> Self {
        Self::new(center, [1.0; 3]).expect("unit cube is valid")
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    pub fn min_corner(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] - self.size[i] / 2.0)
    }

    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] + self.size[i] / 2.0)
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Self {
            center: std::array::from_fn(|i| self.center[i] + offset[i]),
            size: self.size,
        }
    }

    /// Closed-box containment.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    /// `(center, size)` flattened into six numbers.
    pub fn to_array(&self) -> [f64; 6] {
        let c = self.center;
        let s = self.size;
        [c[0], c[1], c[2], s[0], s[1], s[2]]
    }
}

pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let (alo, ahi) = (a.min_corner(), a.max_corner());
    let (blo, bhi) = (b.min_corner(), b.max_corner());
    (0..3)
        .map(|i| (ahi[i].min(bhi[i]) - alo[i].max(blo[i])).max(0.0))
        .product()
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Surface,
    Interior,
}

/// Draws `n` points from `bbox`, deterministic for a fixed seed.
pub fn sample_box_points(
    bbox: &Box3D,
    n: usize,
    mode: SampleMode,
    rng_seed: u64,
) -> Result<Vec<[f64; 3]>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_box_points_with(bbox, n, mode, &mut rng)
}

pub fn sample_box_points_with<R: Rng>(
    bbox: &Box3D,
    n: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::EmptySample);
    }
    let c = bbox.center;
    let h: [f64; 3] = std::array::from_fn(|i| bbox.size[i] / 2.0);
    // face areas for the pair of faces normal to each axis
    let areas = [
        bbox.size[1] * bbox.size[2],
        bbox.size[0] * bbox.size[2],
        bbox.size[0] * bbox.size[1],
    ];
    let total: f64 = areas.iter().sum();

    let points = (0..n)
        .map(|_| {
            let mut p: [f64; 3] =
                std::array::from_fn(|i| c[i] + rng.random_range(-h[i]..=h[i]));
            if mode == SampleMode::Surface {
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                p[axis] = if rng.random_bool(0.5) {
                    c[axis] + h[axis]
                } else {
                    c[axis] - h[axis]
                };
            }
            p
        })
        .collect();
    Ok(points)
}
