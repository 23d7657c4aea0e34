//! The grounding network: backbones, multimodal encoder, point-token query
//! selection, decoder and prediction heads.

use candle_core::{DType, Device, Result as CResult, Tensor, D};
use ig_core::geometry::Box3D;
use ig_core::text::TokenizedText;

use crate::backbone::{boxes_to_rows, centers_tensor, token_bucket, BoxEncoder, PointEncoder, SceneGeometry, TextEncoder};
use crate::config::ModelConfig;
use crate::nn::{residual, sigmoid, Attention, Builder, LayerNorm, Linear, Mlp, ParamGroup, ParamStore};
use crate::NetError;

/// One batch of raw inputs. All slices have the batch length.
pub struct ModelInput<'a> {
    pub scenes: Vec<&'a SceneGeometry>,
    pub texts: Vec<&'a TokenizedText>,
    pub candidates: Vec<&'a [Box3D]>,
}

/// Backbone outputs, padded to the longest text and candidate list.
#[derive(Clone)]
pub struct EncodedInputs {
    /// `(B, p, c)`
    pub points: Tensor,
    /// `(B, L, c)`
    pub text: Tensor,
    /// `(B, b, c)`
    pub boxes: Tensor,
    /// `(B, L)`, 1 for real tokens.
    pub text_mask: Tensor,
    /// `(B, b)`, 1 for real candidates.
    pub box_mask: Tensor,
    /// `(B, p, 3)` point-token coordinates.
    pub point_coords: Tensor,
    pub text_lens: Vec<usize>,
    pub box_counts: Vec<usize>,
    /// Set for samples whose text was cut to `max_text_len`.
    pub truncated: Vec<bool>,
}

/// Head outputs for a batch.
pub struct DecoderOutput {
    /// `(B, k, c)`
    pub queries: Tensor,
    /// `(B, k, 6)` as `(center, size)`; sizes are positive.
    pub boxes: Tensor,
    /// `(B, k, L)`
    pub verb_pos_logits: Tensor,
    /// `(B, k, d)`, paired with `text_proj` for verb alignment and scoring.
    pub query_proj: Tensor,
    /// `(B, L, d)`
    pub text_proj: Tensor,
    /// `(B, k, d)`, modulated by `verb_proj` for object alignment.
    pub query_obj_proj: Tensor,
    /// `(B, L, d)`
    pub verb_proj: Tensor,
    /// `(B, L, d)`
    pub object_proj: Tensor,
    /// `(B, b)` in `(0, 1)`.
    pub candidate_confidence: Tensor,
    /// `(B, p)`
    pub point_in_target_logits: Tensor,
    /// Selected point-token indices per sample, best first.
    pub selected: Vec<Vec<usize>>,
    pub text_lens: Vec<usize>,
    pub box_counts: Vec<usize>,
}

impl DecoderOutput {
    /// Predicted boxes of every sample, read back as f64.
    pub fn pred_boxes(&self) -> std::result::Result<Vec<Vec<Box3D>>, NetError> {
        let rows = self.boxes.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        rows.into_iter()
            .map(|sample| {
                sample
                    .into_iter()
                    .map(|r| {
                        Box3D::new([r[0], r[1], r[2]], [r[3], r[4], r[5]])
                            .map_err(|e| NetError::NonFinite(format!("predicted box: {e}")))
                    })
                    .collect()
            })
            .collect()
    }
}

struct EncoderBlock {
    p_sa: (LayerNorm, Attention),
    p_text: (LayerNorm, Attention),
    p_box: (LayerNorm, Attention),
    p_ffn: (LayerNorm, Mlp),
    b_text: (LayerNorm, Attention),
    b_ffn: (LayerNorm, Mlp),
    t_sa: (LayerNorm, Attention),
    t_point: (LayerNorm, Attention),
    t_ffn: (LayerNorm, Mlp),
}

fn attn_sub(b: &mut Builder<'_>, name: &str, cfg: &ModelConfig) -> CResult<(LayerNorm, Attention)> {
    let mut s = b.sub(name);
    Ok((
        s.layer_norm("norm", cfg.hidden_dim)?,
        s.attention("attn", cfg.hidden_dim, cfg.num_attention_heads)?,
    ))
}

fn ffn_sub(b: &mut Builder<'_>, name: &str, cfg: &ModelConfig) -> CResult<(LayerNorm, Mlp)> {
    let mut s = b.sub(name);
    Ok((
        s.layer_norm("norm", cfg.hidden_dim)?,
        s.mlp("mlp", &[cfg.hidden_dim, cfg.ffn_dim, cfg.hidden_dim])?,
    ))
}

impl EncoderBlock {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> CResult<Self> {
        Ok(Self {
            p_sa: attn_sub(b, "point_self", cfg)?,
            p_text: attn_sub(b, "point_text", cfg)?,
            p_box: attn_sub(b, "point_box", cfg)?,
            p_ffn: ffn_sub(b, "point_ffn", cfg)?,
            b_text: attn_sub(b, "box_text", cfg)?,
            b_ffn: ffn_sub(b, "box_ffn", cfg)?,
            t_sa: attn_sub(b, "text_self", cfg)?,
            t_point: attn_sub(b, "text_point", cfg)?,
            t_ffn: ffn_sub(b, "text_ffn", cfg)?,
        })
    }

    /// Each stream reads the other streams as they were at block entry.
    fn forward(&self, e: &EncodedInputs, skip_point_text: bool) -> CResult<(Tensor, Tensor, Tensor)> {
        let (tm, bm) = (Some(&e.text_mask), Some(&e.box_mask));
        let mut p = residual(&e.points, &self.p_sa.0, |x| self.p_sa.1.forward(x, x, None))?;
        if !skip_point_text {
            p = residual(&p, &self.p_text.0, |x| self.p_text.1.forward(x, &e.text, tm))?;
        }
        p = residual(&p, &self.p_box.0, |x| self.p_box.1.forward(x, &e.boxes, bm))?;
        p = residual(&p, &self.p_ffn.0, |x| self.p_ffn.1.forward(x))?;

        let mut bx = residual(&e.boxes, &self.b_text.0, |x| self.b_text.1.forward(x, &e.text, tm))?;
        bx = residual(&bx, &self.b_ffn.0, |x| self.b_ffn.1.forward(x))?;

        let mut t = residual(&e.text, &self.t_sa.0, |x| self.t_sa.1.forward(x, x, tm))?;
        t = residual(&t, &self.t_point.0, |x| self.t_point.1.forward(x, &e.points, None))?;
        t = residual(&t, &self.t_ffn.0, |x| self.t_ffn.1.forward(x))?;
        Ok((p, t, bx))
    }
}

struct DecoderBlock {
    self_attn: (LayerNorm, Attention),
    text: (LayerNorm, Attention),
    boxes: (LayerNorm, Attention),
    points: (LayerNorm, Attention),
    ffn: (LayerNorm, Mlp),
}

impl DecoderBlock {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> CResult<Self> {
        Ok(Self {
            self_attn: attn_sub(b, "self", cfg)?,
            text: attn_sub(b, "text", cfg)?,
            boxes: attn_sub(b, "box", cfg)?,
            points: attn_sub(b, "point", cfg)?,
            ffn: ffn_sub(b, "ffn", cfg)?,
        })
    }

    fn forward(&self, q: &Tensor, e: &EncodedInputs) -> CResult<Tensor> {
        let q = residual(q, &self.self_attn.0, |x| self.self_attn.1.forward(x, x, None))?;
        let q = residual(&q, &self.text.0, |x| self.text.1.forward(x, &e.text, Some(&e.text_mask)))?;
        let q = residual(&q, &self.boxes.0, |x| self.boxes.1.forward(x, &e.boxes, Some(&e.box_mask)))?;
        let q = residual(&q, &self.points.0, |x| self.points.1.forward(x, &e.points, None))?;
        residual(&q, &self.ffn.0, |x| self.ffn.1.forward(x))
    }
}

/// Point-token queries picked for the decoder.
pub struct SelectedQueries {
    /// `(B, k, c)`
    pub queries: Tensor,
    /// `(B, k, 3)` coordinates of the selected point tokens.
    pub reference: Tensor,
    /// `(B, p)` point-in-target scores.
    pub logits: Tensor,
    pub indices: Vec<Vec<usize>>,
}

pub struct IntentNet {
    cfg: ModelConfig,
    params: ParamStore,
    point_enc: PointEncoder,
    text_enc: TextEncoder,
    text_in: Linear,
    box_enc: BoxEncoder,
    enc_blocks: Vec<EncoderBlock>,
    select_head: Linear,
    query_in: Linear,
    query_pos: Mlp,
    dec_blocks: Vec<DecoderBlock>,
    dec_norm: LayerNorm,
    box_head: Mlp,
    verb_head: Mlp,
    query_proj: Linear,
    text_proj: Linear,
    query_obj_proj: Linear,
    verb_proj: Linear,
    object_proj: Linear,
    conf_head: Mlp,
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

impl IntentNet {
    /// f32 model on the CPU.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, NetError> {
        Self::with_dtype(cfg, seed, DType::F32)
    }

    pub fn with_dtype(cfg: ModelConfig, seed: u64, dtype: DType) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut params = ParamStore::new(seed, dtype, Device::Cpu);
        let c = cfg.hidden_dim;
        let d = cfg.proj_dim;
        let point_enc = PointEncoder::new(&mut params.builder("point_backbone", ParamGroup::PointBackbone), &cfg)?;
        let text_enc = TextEncoder::new(&mut params.builder("text_backbone", ParamGroup::TextBackbone), &cfg)?;
        let mut b = params.builder("net", ParamGroup::Rest);
        let text_in = b.linear("text_in", c, c)?;
        let box_enc = BoxEncoder::new(&mut b.sub("box_encoder"), &cfg)?;
        let enc_blocks = (0..cfg.encoder_layers)
            .map(|i| EncoderBlock::new(&mut b.sub(&format!("encoder{i}")), &cfg))
            .collect::<CResult<_>>()?;
        let select_head = b.linear("select_head", c, 1)?;
        let query_in = b.linear("query_in", c, c)?;
        let query_pos = b.mlp("query_pos", &[3, c, c])?;
        let dec_blocks = (0..cfg.decoder_layers)
            .map(|i| DecoderBlock::new(&mut b.sub(&format!("decoder{i}")), &cfg))
            .collect::<CResult<_>>()?;
        let dec_norm = b.layer_norm("decoder_norm", c)?;
        let box_head = b.mlp("box_head", &[c, c, 6])?;
        let verb_head = b.mlp("verb_head", &[c, c, c])?;
        let query_proj = b.linear("query_proj", c, d)?;
        let text_proj = b.linear("text_proj", c, d)?;
        let query_obj_proj = b.linear("query_obj_proj", c, d)?;
        let verb_proj = b.linear("verb_proj", c, d)?;
        let object_proj = b.linear("object_proj", c, d)?;
        let conf_head = b.mlp("confidence_head", &[c, c, 1])?;
        Ok(Self {
            cfg,
            params,
            point_enc,
            text_enc,
            text_in,
            box_enc,
            enc_blocks,
            select_head,
            query_in,
            query_pos,
            dec_blocks,
            dec_norm,
            box_head,
            verb_head,
            query_proj,
            text_proj,
            query_obj_proj,
            verb_proj,
            object_proj,
            conf_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn dtype(&self) -> DType {
        self.params.dtype()
    }

    fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn encode_modalities(&self, input: &ModelInput<'_>) -> Result<EncodedInputs, NetError> {
        let bsz = input.scenes.len();
        if bsz == 0 || input.texts.len() != bsz || input.candidates.len() != bsz {
            return Err(NetError::Rejected("batch parts have inconsistent lengths".into()));
        }
        let p = self.cfg.num_point_tokens;
        if let Some(s) = input.scenes.iter().find(|s| s.centers.len() != p) {
            return Err(NetError::Rejected(format!(
                "scene {} has {} point tokens, model expects {p}",
                s.scene_id,
                s.centers.len()
            )));
        }
        if let Some(i) = input.candidates.iter().position(|c| c.is_empty()) {
            return Err(NetError::Rejected(format!("sample {i} has zero candidate boxes")));
        }
        let (dt, dev) = (self.dtype(), self.device());

        let mut truncated = Vec::with_capacity(bsz);
        let texts: Vec<std::borrow::Cow<'_, TokenizedText>> = input
            .texts
            .iter()
            .map(|t| {
                if t.len() > self.cfg.max_text_len {
                    log::warn!("text of {} tokens truncated to {}", t.len(), self.cfg.max_text_len);
                    let mut cut = (*t).clone();
                    cut.truncate_to(self.cfg.max_text_len);
                    truncated.push(true);
                    std::borrow::Cow::Owned(cut)
                } else {
                    truncated.push(t.truncated);
                    std::borrow::Cow::Borrowed(*t)
                }
            })
            .collect();
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(NetError::Rejected(format!("sample {i} has an empty text")));
        }
        let text_lens: Vec<usize> = texts.iter().map(|t| t.len()).collect();
        let l = *text_lens.iter().max().unwrap();
        let mut ids = vec![0u32; bsz * l];
        let mut tmask = vec![0f32; bsz * l];
        for (bi, t) in texts.iter().enumerate() {
            for (j, tok) in t.tokens.iter().enumerate() {
                ids[bi * l + j] = token_bucket(tok, self.cfg.vocab_buckets);
                tmask[bi * l + j] = 1.0;
            }
        }
        let ids = Tensor::from_vec(ids, (bsz, l), dev)?;
        let text_mask = Tensor::from_vec(tmask, (bsz, l), dev)?.to_dtype(dt)?;
        let text = self.text_in.forward(&self.text_enc.forward(&ids, &text_mask)?)?;

        let box_counts: Vec<usize> = input.candidates.iter().map(|c| c.len()).collect();
        let nb = *box_counts.iter().max().unwrap();
        let mut rows = vec![0f64; bsz * nb * 6];
        let mut bmask = vec![0f32; bsz * nb];
        for (bi, cands) in input.candidates.iter().enumerate() {
            let flat = boxes_to_rows(cands);
            rows[bi * nb * 6..bi * nb * 6 + flat.len()].copy_from_slice(&flat);
            bmask[bi * nb..bi * nb + cands.len()].fill(1.0);
        }
        let rows = Tensor::from_vec(rows, (bsz, nb, 6), dev)?.to_dtype(dt)?;
        let box_mask = Tensor::from_vec(bmask, (bsz, nb), dev)?.to_dtype(dt)?;
        let boxes = self.box_enc.forward(&rows)?;

        let points = self.point_enc.forward(&input.scenes, dt, dev)?;
        let point_coords = centers_tensor(&input.scenes, dt, dev)?;
        Ok(EncodedInputs {
            points,
            text,
            boxes,
            text_mask,
            box_mask,
            point_coords,
            text_lens,
            box_counts,
            truncated,
        })
    }

    pub fn encoder_fuse(&self, e: &EncodedInputs) -> Result<EncodedInputs, NetError> {
        self.encoder_fuse_with(e, false)
    }

    /// `skip_point_text` drops the point stream's text cross-attention.
    #[doc(hidden)]
    pub fn encoder_fuse_with(&self, e: &EncodedInputs, skip_point_text: bool) -> Result<EncodedInputs, NetError> {
        let mut cur = e.clone();
        for block in &self.enc_blocks {
            let (p, t, b) = block.forward(&cur, skip_point_text)?;
            cur.points = p;
            cur.text = t;
            cur.boxes = b;
        }
        Ok(cur)
    }

    pub fn select_queries(&self, points: &Tensor, coords: &Tensor, k: usize) -> Result<SelectedQueries, NetError> {
        let (bsz, p, c) = points.dims3()?;
        if k > p {
            return Err(NetError::Rejected(format!("cannot select {k} of {p} point tokens")));
        }
        let logits = self.select_head.forward(points)?.squeeze(D::Minus1)?;
        let scores = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let indices: Vec<Vec<usize>> = scores.iter().map(|s| top_k_indices(s, k)).collect();
        let flat: Vec<u32> = indices
            .iter()
            .enumerate()
            .flat_map(|(bi, idx)| idx.iter().map(move |i| (bi * p + i) as u32))
            .collect();
        let flat = Tensor::from_vec(flat, bsz * k, self.device())?;
        let picked = points.reshape((bsz * p, c))?.index_select(&flat, 0)?.reshape((bsz, k, c))?;
        let reference = coords.reshape((bsz * p, 3))?.index_select(&flat, 0)?.reshape((bsz, k, 3))?;
        let queries = (self.query_in.forward(&picked)? + self.query_pos.forward(&reference)?)?;
        Ok(SelectedQueries {
            queries,
            reference,
            logits,
            indices,
        })
    }

    pub fn decode(&self, sel: SelectedQueries, e: &EncodedInputs) -> Result<DecoderOutput, NetError> {
        let mut q = sel.queries;
        for block in &self.dec_blocks {
            q = block.forward(&q, e)?;
        }
        let q = self.dec_norm.forward(&q)?;
        let raw = self.box_head.forward(&q)?;
        let center = (sel.reference + raw.narrow(D::Minus1, 0, 3)?)?;
        let size = raw.narrow(D::Minus1, 3, 3)?.clamp(-6.0, 3.0)?.exp()?;
        let boxes = Tensor::cat(&[&center, &size], D::Minus1)?;
        let c = self.cfg.hidden_dim as f64;
        let verb_pos_logits = self
            .verb_head
            .forward(&q)?
            .matmul(&e.text.transpose(1, 2)?.contiguous()?)?
            .affine(1.0 / c.sqrt(), 0.0)?;
        let candidate_confidence = sigmoid(&self.conf_head.forward(&e.boxes)?.squeeze(D::Minus1)?)?;
        Ok(DecoderOutput {
            boxes,
            verb_pos_logits,
            query_proj: self.query_proj.forward(&q)?,
            text_proj: self.text_proj.forward(&e.text)?,
            query_obj_proj: self.query_obj_proj.forward(&q)?,
            verb_proj: self.verb_proj.forward(&e.text)?,
            object_proj: self.object_proj.forward(&e.text)?,
            candidate_confidence,
            point_in_target_logits: sel.logits,
            selected: sel.indices,
            text_lens: e.text_lens.clone(),
            box_counts: e.box_counts.clone(),
            queries: q,
        })
    }

    pub fn forward(&self, input: &ModelInput<'_>) -> Result<DecoderOutput, NetError> {
        let e = self.encode_modalities(input)?;
        let fused = self.encoder_fuse(&e)?;
        let sel = self.select_queries(&fused.points, &fused.point_coords, self.cfg.num_queries)?;
        self.decode(sel, &fused)
    }
}
