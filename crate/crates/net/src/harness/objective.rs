//! Batch loss: matching, per-sample losses, batch means and the cascade.

use candle_core::{DType, Device, Tensor};
use ig_core::geometry::Box3D;

use super::config::RunConfig;
use super::data::{PreparedData, PreparedSample};
use crate::losses::{
    box_regression_loss, candidate_matching_loss, cascaded_total, hungarian_match, label_candidates,
    modulated_query_object_contrastive, point_in_target_labels, point_in_target_loss, query_verb_contrastive,
    verb_position_loss, LossBundle, LossTerms, MatchResult,
};
use crate::model::{DecoderOutput, IntentNet, ModelInput};
use crate::NetError;

/// Links per query for the query-verb contrastive loss: matched queries to
/// the verb tokens (all sentence tokens when the text has none), the rest to
/// the sentinel.
pub fn verb_links(m: &MatchResult, k: usize, text: &PreparedSample) -> Vec<Vec<usize>> {
    let n = text.sentence_len();
    let verbs: Vec<usize> = text.text.verb_indices().into_iter().filter(|&v| v < n).collect();
    let positive = if verbs.is_empty() { (0..n).collect() } else { verbs };
    (0..k)
        .map(|q| if m.is_matched(q) { positive.clone() } else { vec![n] })
        .collect()
}

fn vec_tensor(v: Vec<f64>, dtype: DType, dev: &Device) -> Result<Tensor, NetError> {
    let n = v.len();
    Ok(Tensor::from_vec(v, n, dev)?.to_dtype(dtype)?)
}

pub struct BatchLoss {
    pub total: Tensor,
    pub bundle: LossBundle,
    pub output: DecoderOutput,
}

/// Forward pass and full objective for one batch.
pub fn batch_loss(
    model: &IntentNet,
    data: &PreparedData,
    samples: &[&PreparedSample],
    candidates: &[Vec<Box3D>],
    cfg: &RunConfig,
) -> Result<BatchLoss, NetError> {
    let input = ModelInput {
        scenes: samples.iter().map(|s| &data.geometry[s.scene]).collect(),
        texts: samples.iter().map(|s| &s.text).collect(),
        candidates: candidates.iter().map(Vec::as_slice).collect(),
    };
    let out = model.forward(&input)?;
    let preds = out.pred_boxes()?;
    let k = model.config().num_queries;
    let tau = cfg.loss.temperature;
    let (dt, dev) = (out.boxes.dtype(), out.boxes.device().clone());

    let mut sums: Option<[Tensor; 6]> = None;
    for (i, s) in samples.iter().enumerate() {
        if !s.text.has_sentinel {
            return Err(NetError::Data(format!("sample {} has no sentinel token", s.sample_id)));
        }
        let l = out.text_lens[i];
        let n = s.sentence_len();
        let nb = out.box_counts[i];

        let conf = out.candidate_confidence.get(i)?.narrow(0, 0, nb)?;
        let labels = vec_tensor(label_candidates(&candidates[i], &s.targets, cfg.loss.candidate_iou), dt, &dev)?;
        let bce = candidate_matching_loss(&conf, &labels)?;

        let pts_labels = point_in_target_labels(&data.geometry[s.scene].centers, &s.targets);
        let pts = point_in_target_loss(&out.point_in_target_logits.get(i)?, &vec_tensor(pts_labels, dt, &dev)?)?;

        let m = hungarian_match(&preds[i], &s.targets, None, &cfg.loss.match_weights);

        let v_dist = vec_tensor(s.v_dist.clone(), dt, &dev)?;
        let vpos = verb_position_loss(&out.verb_pos_logits.get(i)?.narrow(1, 0, n)?, &v_dist)?;

        let links = verb_links(&m, k, s);
        let text_proj = out.text_proj.get(i)?.narrow(0, 0, l)?;
        let vsem = query_verb_contrastive(&out.query_proj.get(i)?, &text_proj, &links, tau)?;

        let matched: Vec<bool> = (0..k).map(|q| m.is_matched(q)).collect();
        let vosem = modulated_query_object_contrastive(
            &out.query_obj_proj.get(i)?,
            &out.verb_proj.get(i)?.narrow(0, 0, l)?,
            &out.object_proj.get(i)?.narrow(0, 0, l)?,
            &s.text.pairs,
            &matched,
            n,
            tau,
        )?;

        let boxes = box_regression_loss(&m, &out.boxes.get(i)?, &s.targets, &cfg.loss.box_weights)?;

        let terms = [bce, pts, vpos, vsem, vosem, boxes];
        sums = Some(match sums {
            None => terms,
            Some(acc) => {
                let mut next = acc.clone();
                for (a, t) in next.iter_mut().zip(terms) {
                    *a = (&*a + t)?;
                }
                next
            }
        });
    }
    let b = samples.len() as f64;
    let [bce, pts, vpos, vsem, vosem, boxes] = sums
        .ok_or_else(|| NetError::Rejected("empty batch".into()))?
        .map(|t| t.affine(1.0 / b, 0.0));
    let terms = LossTerms {
        bce: bce?,
        pts: pts?,
        vpos: vpos?,
        vsem: vsem?,
        vosem: vosem?,
        boxes: boxes?,
    };
    let (total, bundle) = cascaded_total(&terms, &cfg.train.ablation)?;
    Ok(BatchLoss {
        total,
        bundle,
        output: out,
    })
}
