//! Default backbones: a two-level set-abstraction point encoder, a hashed
//! token embedding with self-attention for text, and a box perceptron.

use candle_core::{Device, Result, Tensor, D};
use ig_core::dataset::PointCloud;
use ig_core::geometry::Box3D;
use ig_core::util::stable_hash;

use crate::config::ModelConfig;
use crate::nn::{residual, Attention, Builder, LayerNorm, Mlp};

/// Farthest-point sampling starting from point 0. Distance ties go to the
/// lower index. When `m` exceeds the cloud size the selection wraps around.
pub fn farthest_point_sampling(coords: &[[f64; 3]], m: usize) -> Vec<usize> {
    let n = coords.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let take = m.min(n);
    let mut chosen = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; n];
    let mut cur = 0;
    for _ in 0..take {
        chosen.push(cur);
        let c = coords[cur];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in coords.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        cur = best.1;
    }
    for i in take..m {
        chosen.push(chosen[i % take]);
    }
    chosen
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Indices of the `k` nearest points to `query`, nearest first, ties to the
/// lower index. Repeats the farthest one when fewer than `k` points exist.
pub fn k_nearest(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        sq_dist(&points[a], query)
            .total_cmp(&sq_dist(&points[b], query))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    while idx.len() < k {
        idx.push(*idx.last().expect("k_nearest needs a non-empty cloud"));
    }
    idx
}

/// Parameter-free preprocessing of one scene cloud, computed once and reused.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub scene_id: String,
    /// Point-token centers, `p` of them.
    pub centers: Vec<[f64; 3]>,
    /// `(p, group_size, 3 + f)` row-major: neighbor xyz relative to the
    /// center, then neighbor features.
    pub group_feats: Vec<f32>,
    /// `(p, token_neighbors)` indices into the centers.
    pub token_nb: Vec<u32>,
    /// `(p, token_neighbors, 3)` relative xyz of those neighbors.
    pub token_rel: Vec<f32>,
}

impl SceneGeometry {
    pub fn build(cloud: &PointCloud, cfg: &ModelConfig) -> std::result::Result<Self, String> {
        if cloud.is_empty() {
            return Err(format!("point cloud of {} is empty", cloud.scene_id));
        }
        if cloud.feature_dim != cfg.point_feature_dim {
            return Err(format!(
                "cloud {} has {} feature channels, model expects {}",
                cloud.scene_id, cloud.feature_dim, cfg.point_feature_dim
            ));
        }
        let coords: Vec<[f64; 3]> = cloud.coords().collect();
        let p = cfg.num_point_tokens;
        let centers: Vec<[f64; 3]> = farthest_point_sampling(&coords, p).into_iter().map(|i| coords[i]).collect();
        let f = cfg.point_feature_dim;
        let mut group_feats = Vec::with_capacity(p * cfg.group_size * (3 + f));
        for c in &centers {
            for j in k_nearest(&coords, c, cfg.group_size) {
                let row = &cloud.points[j];
                group_feats.extend((0..3).map(|d| (row[d] - c[d]) as f32));
                group_feats.extend(row[3..3 + f].iter().map(|v| *v as f32));
            }
        }
        let mut token_nb = Vec::with_capacity(p * cfg.token_neighbors);
        let mut token_rel = Vec::with_capacity(p * cfg.token_neighbors * 3);
        for c in &centers {
            for j in k_nearest(&centers, c, cfg.token_neighbors) {
                token_nb.push(j as u32);
                token_rel.extend((0..3).map(|d| (centers[j][d] - c[d]) as f32));
            }
        }
        Ok(Self {
            scene_id: cloud.scene_id.clone(),
            centers,
            group_feats,
            token_nb,
            token_rel,
        })
    }
}

/// Hierarchical set abstraction over precomputed [`SceneGeometry`] groups.
pub struct PointEncoder {
    local: Mlp,
    token: Mlp,
    pos: Mlp,
    group_size: usize,
    token_neighbors: usize,
    feat_dim: usize,
    hidden: usize,
}

impl PointEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.hidden_dim;
        let half = (c / 2).max(1);
        Ok(Self {
            local: b.mlp("local", &[3 + cfg.point_feature_dim, half, half])?,
            token: b.mlp("token", &[half + 3, c, c])?,
            pos: b.mlp("pos", &[3, c, c])?,
            group_size: cfg.group_size,
            token_neighbors: cfg.token_neighbors,
            feat_dim: 3 + cfg.point_feature_dim,
            hidden: c,
        })
    }

    /// Encodes a batch of scenes into `(B, p, c)` point tokens.
    pub fn forward(&self, scenes: &[&SceneGeometry], dtype: candle_core::DType, dev: &Device) -> Result<Tensor> {
        let bsz = scenes.len();
        let p = scenes[0].centers.len();
        let (g, k2) = (self.group_size, self.token_neighbors);
        let feats: Vec<f32> = scenes.iter().flat_map(|s| s.group_feats.iter().copied()).collect();
        let feats = Tensor::from_vec(feats, (bsz * p, g, self.feat_dim), dev)?.to_dtype(dtype)?;
        let local = self.local.forward(&feats)?.max_keepdim(1)?.squeeze(1)?;

        let nb: Vec<u32> = scenes
            .iter()
            .enumerate()
            .flat_map(|(bi, s)| s.token_nb.iter().map(move |j| j + (bi * p) as u32))
            .collect();
        let nb = Tensor::from_vec(nb, bsz * p * k2, dev)?;
        let gathered = local.index_select(&nb, 0)?.reshape((bsz * p, k2, local.dim(1)?))?;
        let rel: Vec<f32> = scenes.iter().flat_map(|s| s.token_rel.iter().copied()).collect();
        let rel = Tensor::from_vec(rel, (bsz * p, k2, 3), dev)?.to_dtype(dtype)?;
        let tokens = self
            .token
            .forward(&Tensor::cat(&[&gathered, &rel], D::Minus1)?)?
            .max_keepdim(1)?
            .reshape((bsz, p, self.hidden))?;
        let centers = centers_tensor(scenes, dtype, dev)?;
        tokens + self.pos.forward(&centers)?
    }
}

pub fn centers_tensor(scenes: &[&SceneGeometry], dtype: candle_core::DType, dev: &Device) -> Result<Tensor> {
    let p = scenes[0].centers.len();
    let flat: Vec<f64> = scenes.iter().flat_map(|s| s.centers.iter().flatten().copied()).collect();
    Tensor::from_vec(flat, (scenes.len(), p, 3), dev)?.to_dtype(dtype)
}

/// Hash bucket of a token for the default text backbone.
pub fn token_bucket(token: &str, buckets: usize) -> u32 {
    (stable_hash(&token.to_lowercase()) % buckets as u64) as u32
}

struct TextLayer {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ffn: Mlp,
}

/// Hashed token embedding plus learned positions and self-attention layers.
pub struct TextEncoder {
    embed: Tensor,
    positions: Tensor,
    layers: Vec<TextLayer>,
    out_norm: LayerNorm,
}

impl TextEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.hidden_dim;
        let embed = b.uniform("embed", &[cfg.vocab_buckets, c], 3f64.sqrt())?;
        let positions = b.uniform("positions", &[cfg.max_text_len, c], 0.1)?;
        let layers = (0..cfg.text_layers)
            .map(|i| {
                let mut l = b.sub(&format!("layer{i}"));
                Ok(TextLayer {
                    norm1: l.layer_norm("norm1", c)?,
                    attn: l.attention("attn", c, cfg.num_attention_heads)?,
                    norm2: l.layer_norm("norm2", c)?,
                    ffn: l.mlp("ffn", &[c, cfg.ffn_dim, c])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            positions,
            layers,
            out_norm: b.layer_norm("out_norm", c)?,
        })
    }

    /// `ids: (B, L)` bucket ids, `mask: (B, L)` validity → `(B, L, c)`.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (bsz, l) = ids.dims2()?;
        let c = self.embed.dim(1)?;
        let tok = self.embed.index_select(&ids.flatten_all()?, 0)?.reshape((bsz, l, c))?;
        let mut h = tok.broadcast_add(&self.positions.narrow(0, 0, l)?.unsqueeze(0)?)?;
        for layer in &self.layers {
            h = residual(&h, &layer.norm1, |x| layer.attn.forward(x, x, Some(mask)))?;
            h = residual(&h, &layer.norm2, |x| layer.ffn.forward(x))?;
        }
        self.out_norm.forward(&h)
    }
}

/// Two-layer perceptron on `(center, size)`.
pub struct BoxEncoder {
    mlp: Mlp,
}

impl BoxEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            mlp: b.mlp("mlp", &[6, cfg.hidden_dim, cfg.hidden_dim])?,
        })
    }

    /// `boxes: (B, b, 6)` → `(B, b, c)`.
    pub fn forward(&self, boxes: &Tensor) -> Result<Tensor> {
        self.mlp.forward(boxes)
    }
}

pub fn boxes_to_rows(boxes: &[Box3D]) -> Vec<f64> {
    boxes.iter().flat_map(|b| b.to_array()).collect()
}
