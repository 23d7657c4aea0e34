//! Training objectives, matching and inference scoring.
//!
//! All tensor losses work per sample and in any float dtype; gradients come
//! from candle's autograd.

mod hungarian;

use candle_core::{DType, Device, Result as CResult, Tensor, D};
use ig_core::geometry::{iou3d, Box3D};
use serde::{Deserialize, Serialize};

use crate::nn::{l2_normalize_rows, log_softmax_last, logsumexp, softmax_last};

pub use hungarian::{assignment_cost, box_pair_cost, hungarian_match, linear_sum_assignment, MatchResult, MatchWeights};

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("query {0} has an empty link set")]
    EmptyLinkSet(usize),
    #[error("loss component {component} is {value}")]
    NonFinite { component: &'static str, value: f64 },
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

/// Candidate labels: 1 where a candidate's best IoU with any target exceeds the
/// threshold (strictly), else 0.
pub fn label_candidates(candidates: &[Box3D], gts: &[Box3D], iou_threshold: f64) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| {
            let best = gts.iter().map(|g| iou3d(c, g)).fold(0.0, f64::max);
            if best > iou_threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// 1 for points inside (or on) any target box.
pub fn point_in_target_labels(coords: &[[f64; 3]], gts: &[Box3D]) -> Vec<f64> {
    coords
        .iter()
        .map(|p| if gts.iter().any(|g| g.contains(*p)) { 1.0 } else { 0.0 })
        .collect()
}

/// Mean binary cross-entropy of candidate confidences against labels.
pub fn candidate_matching_loss(confidence: &Tensor, labels: &Tensor) -> CResult<Tensor> {
    let c = confidence.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let pos = (labels * c.log()?)?;
    let neg = (labels.affine(-1.0, 1.0)? * c.affine(-1.0, 1.0)?.log()?)?;
    (pos + neg)?.neg()?.mean_all()
}

/// Mean binary cross-entropy with logits, in the overflow-free form
/// `max(x, 0) − x·y + log(1 + exp(−|x|))`.
pub fn point_in_target_loss(logits: &Tensor, labels: &Tensor) -> CResult<Tensor> {
    let softplus = (logits.relu()? + (logits.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    (softplus - (logits * labels)?)?.mean_all()
}

/// Cross-entropy between each query's softmax over `logits: (k, l)` and the
/// target distribution `v_dist: (l)`, averaged over queries.
pub fn verb_position_loss(logits: &Tensor, v_dist: &Tensor) -> CResult<Tensor> {
    let lp = log_softmax_last(logits)?;
    lp.broadcast_mul(&v_dist.unsqueeze(0)?)?.sum(D::Minus1)?.neg()?.mean_all()
}

fn similarity(a: &Tensor, b: &Tensor, tau: f64) -> CResult<Tensor> {
    l2_normalize_rows(a)?.matmul(&l2_normalize_rows(b)?.t()?)?.affine(1.0 / tau, 0.0)
}

/// Row-normalized link weights `(k, l)` for the query-side term.
fn query_link_weights(links: &[Vec<usize>], l: usize, dtype: DType, dev: &Device) -> Result<Tensor, LossError> {
    let mut w = vec![0f64; links.len() * l];
    for (n, set) in links.iter().enumerate() {
        if set.is_empty() {
            return Err(LossError::EmptyLinkSet(n));
        }
        for &t in set {
            w[n * l + t] += 1.0 / set.len() as f64;
        }
    }
    Ok(Tensor::from_vec(w, (links.len(), l), dev)?.to_dtype(dtype)?)
}

/// Query-side contrastive term: mean over queries of
/// `−log( exp(mean_{t∈T_n} s[n,t]) / Σ_t exp(s[n,t]) )`.
fn query_side(sim: &Tensor, links: &[Vec<usize>]) -> Result<Tensor, LossError> {
    let (_, l) = sim.dims2()?;
    let w = query_link_weights(links, l, sim.dtype(), sim.device())?;
    let pos = (sim * w)?.sum(1)?;
    let lse = logsumexp(sim, 1)?.squeeze(1)?;
    Ok((lse - pos)?.mean_all()?)
}

/// Token-side contrastive term: mean over tokens with at least one linked
/// query of `−log( exp(mean_{q∈Q_m} s[q,m]) / Σ_q exp(s[q,m]) )`.
fn token_side(sim: &Tensor, links: &[Vec<usize>]) -> Result<Tensor, LossError> {
    let (k, l) = sim.dims2()?;
    let mut linked: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (n, set) in links.iter().enumerate() {
        for &t in set {
            if !linked[t].contains(&n) {
                linked[t].push(n);
            }
        }
    }
    let active: Vec<usize> = (0..l).filter(|t| !linked[*t].is_empty()).collect();
    let mut w = vec![0f64; k * l];
    let mut on = vec![0f64; l];
    for &t in &active {
        on[t] = 1.0;
        for &n in &linked[t] {
            w[n * l + t] = 1.0 / linked[t].len() as f64;
        }
    }
    let (dt, dev) = (sim.dtype(), sim.device());
    let w = Tensor::from_vec(w, (k, l), dev)?.to_dtype(dt)?;
    let on = Tensor::from_vec(on, l, dev)?.to_dtype(dt)?;
    let pos = (sim * w)?.sum(0)?;
    let lse = logsumexp(sim, 0)?.squeeze(0)?;
    let per_token = ((lse - pos)? * on)?;
    Ok(per_token.sum_all()?.affine(1.0 / active.len().max(1) as f64, 0.0)?)
}

/// Query-verb contrastive loss: query-side plus token-side terms.
///
/// `links[n]` lists the token indices linked to query `n` (verbs for matched
/// queries, the sentinel for unmatched ones). Inputs are L2-normalized
/// row-wise and similarities divided by `tau`.
pub fn query_verb_contrastive(
    query_proj: &Tensor,
    text_proj: &Tensor,
    links: &[Vec<usize>],
    tau: f64,
) -> Result<Tensor, LossError> {
    let sim = similarity(query_proj, text_proj, tau)?;
    Ok((query_side(&sim, links)? + token_side(&sim, links)?)?)
}

/// The query-side term alone; exposed for closed-form checks.
pub fn query_verb_contrastive_query_term(
    query_proj: &Tensor,
    text_proj: &Tensor,
    links: &[Vec<usize>],
    tau: f64,
) -> Result<Tensor, LossError> {
    query_side(&similarity(query_proj, text_proj, tau)?, links)
}

/// Modulated query-object contrastive loss.
///
/// For each `(verb, object)` pair the normalized query projections are
/// multiplied element-wise by the normalized projection of the verb token,
/// re-normalized, and aligned with the object token (matched queries) or the
/// sentinel (unmatched). Averaged over pairs; zero without pairs.
pub fn modulated_query_object_contrastive(
    query_proj: &Tensor,
    verb_proj: &Tensor,
    object_proj: &Tensor,
    pairs: &[(usize, usize)],
    matched: &[bool],
    sentinel: usize,
    tau: f64,
) -> Result<Tensor, LossError> {
    if pairs.is_empty() {
        return Ok(Tensor::zeros((), query_proj.dtype(), query_proj.device())?);
    }
    let q = l2_normalize_rows(query_proj)?;
    let v = l2_normalize_rows(verb_proj)?;
    let mut total: Option<Tensor> = None;
    for &(verb, obj) in pairs {
        let modulated = q.broadcast_mul(&v.narrow(0, verb, 1)?)?;
        let sim = similarity(&modulated, object_proj, tau)?;
        let links: Vec<Vec<usize>> = matched.iter().map(|&m| vec![if m { obj } else { sentinel }]).collect();
        let term = query_side(&sim, &links)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("pairs is non-empty").affine(1.0 / pairs.len() as f64, 0.0)?)
}

/// Box loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxLossWeights {
    pub l1: f64,
    pub iou: f64,
}

impl Default for BoxLossWeights {
    fn default() -> Self {
        Self { l1: 1.0, iou: 1.0 }
    }
}

/// Differentiable axis-aligned IoU of matching rows of `(n, 6)` box tensors.
pub fn iou_rows(a: &Tensor, b: &Tensor) -> CResult<Tensor> {
    let (ac, asz) = (a.narrow(1, 0, 3)?, a.narrow(1, 3, 3)?);
    let (bc, bsz) = (b.narrow(1, 0, 3)?, b.narrow(1, 3, 3)?);
    let (ah, bh) = (asz.affine(0.5, 0.0)?, bsz.affine(0.5, 0.0)?);
    let lo = (&ac - &ah)?.maximum(&(&bc - &bh)?)?;
    let hi = (&ac + &ah)?.minimum(&(&bc + &bh)?)?;
    let d = (hi - lo)?.relu()?;
    let prod = |t: &Tensor| -> CResult<Tensor> { t.narrow(1, 0, 1)? * t.narrow(1, 1, 1)? * t.narrow(1, 2, 1)? };
    let inter = prod(&d)?;
    let union = ((prod(&asz)? + prod(&bsz)?)? - &inter)?;
    (inter / union)?.squeeze(1)
}

/// Mean over rows of `l1·(|Δcenter|₁ + |Δsize|₁) + iou·(1 − IoU)`.
/// Returns zero for zero rows.
pub fn box_rows_loss(pred: &Tensor, gt: &Tensor, w: &BoxLossWeights) -> CResult<Tensor> {
    if pred.dim(0)? == 0 {
        return Tensor::zeros((), pred.dtype(), pred.device());
    }
    let l1 = (pred - gt)?.abs()?.sum(1)?;
    let iou_term = iou_rows(pred, gt)?.affine(-1.0, 1.0)?;
    (l1.affine(w.l1, 0.0)? + iou_term.affine(w.iou, 0.0)?)?.mean_all()
}

/// Box loss over the matched pairs of `pred_boxes: (k, 6)`.
pub fn box_regression_loss(
    assignment: &MatchResult,
    pred_boxes: &Tensor,
    gts: &[Box3D],
    w: &BoxLossWeights,
) -> CResult<Tensor> {
    let (dt, dev) = (pred_boxes.dtype(), pred_boxes.device());
    if assignment.assignment.is_empty() {
        return Tensor::zeros((), dt, dev);
    }
    let rows: Vec<u32> = assignment.assignment.iter().map(|(q, _)| *q as u32).collect();
    let n = rows.len();
    let pred = pred_boxes.index_select(&Tensor::from_vec(rows, n, dev)?, 0)?;
    let target: Vec<f64> = assignment.assignment.iter().flat_map(|(_, j)| gts[*j].to_array()).collect();
    let target = Tensor::from_vec(target, (n, 6), dev)?.to_dtype(dt)?;
    box_rows_loss(&pred, &target, w)
}

/// Loss ablations, one per removable component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop verb position prediction and query-verb alignment.
    pub no_verb_align: bool,
    /// Drop the modulated query-object alignment.
    pub no_verb2obj: bool,
    /// Drop candidate box matching.
    pub no_matchbox: bool,
    /// Replace all adaptive factors by 1.
    pub no_adapt: bool,
}

/// Largest f64 below 1.5. The sigmoid rounds to 1 for `x ≳ 37`.
const FACTOR_CAP: f64 = 1.5 - f64::EPSILON;

/// `sigmoid(x) + 0.5`; lies in `[1, 1.5)` for `x ≥ 0`.
pub fn adaptive_factor(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp()) + 0.5).min(FACTOR_CAP)
}

/// Factors `(f_vSem, f_voSem, f_box)`. Each factor is computed from the
/// already-scaled predecessor in the chain vPos → vSem → voSem → box.
pub fn cascade_factors(l_vpos: f64, l_vsem: f64, l_vosem: f64, adapt: bool) -> [f64; 3] {
    if !adapt {
        return [1.0; 3];
    }
    let f_vsem = adaptive_factor(l_vpos);
    let f_vosem = adaptive_factor(f_vsem * l_vsem);
    let f_box = adaptive_factor(f_vosem * l_vosem);
    [f_vsem, f_vosem, f_box]
}

/// Scalar loss tensors of one step.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub bce: Tensor,
    pub pts: Tensor,
    pub vpos: Tensor,
    pub vsem: Tensor,
    pub vosem: Tensor,
    pub boxes: Tensor,
}

/// Logged values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    #[serde(rename = "L_bce")]
    pub l_bce: f64,
    #[serde(rename = "L_pts")]
    pub l_pts: f64,
    #[serde(rename = "L_vPos")]
    pub l_vpos: f64,
    #[serde(rename = "L_vSem")]
    pub l_vsem: f64,
    #[serde(rename = "L_voSem")]
    pub l_vosem: f64,
    #[serde(rename = "L_box")]
    pub l_box: f64,
    #[serde(rename = "f_vSem")]
    pub f_vsem: f64,
    #[serde(rename = "f_voSem")]
    pub f_vosem: f64,
    #[serde(rename = "f_box")]
    pub f_box: f64,
    pub total: f64,
}

impl LossBundle {
    /// Recombines component values with the stored factors.
    pub fn recombine(&self) -> f64 {
        self.l_bce + self.l_pts + self.l_vpos + self.f_vsem * self.l_vsem + self.f_vosem * self.l_vosem + self.f_box * self.l_box
    }
}

fn scalar(t: &Tensor) -> CResult<f64> {
    t.to_dtype(DType::F64)?.to_scalar::<f64>()
}

/// Applies ablations and the adaptive cascade.
///
/// Factors are computed from gradient-stopped values, so the returned total
/// back-propagates as `Σ f_i ∂L_i`. `L_bce` and `L_pts` are added unscaled.
pub fn cascaded_total(terms: &LossTerms, flags: &AblationFlags) -> Result<(Tensor, LossBundle), LossError> {
    let keep = |t: &Tensor, off: bool| -> CResult<Tensor> { if off { t.zeros_like() } else { Ok(t.clone()) } };
    let bce = keep(&terms.bce, flags.no_matchbox)?;
    let vpos = keep(&terms.vpos, flags.no_verb_align)?;
    let vsem = keep(&terms.vsem, flags.no_verb_align)?;
    let vosem = keep(&terms.vosem, flags.no_verb2obj)?;
    let named = [
        ("L_bce", &bce),
        ("L_pts", &terms.pts),
        ("L_vPos", &vpos),
        ("L_vSem", &vsem),
        ("L_voSem", &vosem),
        ("L_box", &terms.boxes),
    ];
    let mut v = [0.0; 6];
    for (i, (name, t)) in named.iter().enumerate() {
        v[i] = scalar(t)?;
        if !v[i].is_finite() || v[i] < 0.0 {
            return Err(LossError::NonFinite {
                component: name,
                value: v[i],
            });
        }
    }
    let f = cascade_factors(v[2], v[3], v[4], !flags.no_adapt);
    let total = cascaded_total_with_factors(&bce, &terms.pts, &vpos, &vsem, &vosem, &terms.boxes, f)?;
    let bundle = LossBundle {
        l_bce: v[0],
        l_pts: v[1],
        l_vpos: v[2],
        l_vsem: v[3],
        l_vosem: v[4],
        l_box: v[5],
        f_vsem: f[0],
        f_vosem: f[1],
        f_box: f[2],
        total: scalar(&total)?,
    };
    Ok((total, bundle))
}

/// `bce + pts + vpos + f₀·vsem + f₁·vosem + f₂·box` with fixed factors.
pub fn cascaded_total_with_factors(
    bce: &Tensor,
    pts: &Tensor,
    vpos: &Tensor,
    vsem: &Tensor,
    vosem: &Tensor,
    boxes: &Tensor,
    f: [f64; 3],
) -> CResult<Tensor> {
    bce + pts + vpos + vsem.affine(f[0], 0.0)? + vosem.affine(f[1], 0.0)? + boxes.affine(f[2], 0.0)?
}

/// Per-query ranking score: the softmax over all tokens of query-token
/// similarity, maximized over verb positions. Falls back to the sentinel
/// when the text has no verbs.
pub fn inference_confidence(
    query_proj: &Tensor,
    text_proj: &Tensor,
    verb_indices: &[usize],
    sentinel: usize,
    tau: f64,
) -> CResult<Vec<f64>> {
    let probs = softmax_last(&similarity(query_proj, text_proj, tau)?)?
        .to_dtype(DType::F64)?
        .to_vec2::<f64>()?;
    let fallback = [sentinel];
    let cols: &[usize] = if verb_indices.is_empty() { &fallback } else { verb_indices };
    Ok(probs
        .iter()
        .map(|row| cols.iter().map(|&t| row[t]).fold(0.0, f64::max))
        .collect())
}
