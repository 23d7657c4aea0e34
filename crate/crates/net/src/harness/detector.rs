use std::collections::HashMap;

use ig_core::dataset::DatasetSplit;
use ig_core::eval::{Detector, EvalError, Prediction};

use super::config::RunConfig;
use super::data::{candidate_seed, oracle_candidates, PreparedData, PreparedSample};
use crate::losses::inference_confidence;
use crate::model::{IntentNet, ModelInput};
use crate::NetError;

/// Scores every decoder box of every sample, `k` predictions per sample.
pub fn predict_samples(
    model: &IntentNet,
    data: &PreparedData,
    samples: &[&PreparedSample],
    cfg: &RunConfig,
) -> Result<Vec<Prediction>, NetError> {
    let mut preds = Vec::with_capacity(samples.len() * model.config().num_queries);
    for chunk in samples.chunks(cfg.train.batch_size.max(1)) {
        let cands: Vec<_> = chunk
            .iter()
            .map(|s| {
                oracle_candidates(
                    &s.targets,
                    &data.scenes[s.scene],
                    &cfg.candidates,
                    candidate_seed(cfg.train.seed, &s.sample_id, None),
                )
            })
            .collect();
        let input = ModelInput {
            scenes: chunk.iter().map(|s| &data.geometry[s.scene]).collect(),
            texts: chunk.iter().map(|s| &s.text).collect(),
            candidates: cands.iter().map(Vec::as_slice).collect(),
        };
        let out = model.forward(&input)?;
        let boxes = out.pred_boxes()?;
        for (i, s) in chunk.iter().enumerate() {
            let l = out.text_lens[i];
            let n = s.sentence_len();
            let verbs: Vec<usize> = s.text.verb_indices().into_iter().filter(|&v| v < n).collect();
            let scores = inference_confidence(
                &out.query_proj.get(i)?,
                &out.text_proj.get(i)?.narrow(0, 0, l)?,
                &verbs,
                n,
                cfg.loss.temperature,
            )?;
            for (b, score) in boxes[i].iter().zip(scores) {
                preds.push(Prediction::new(s.sample_id.clone(), *b, score.clamp(0.0, 1.0))?);
            }
        }
    }
    Ok(preds)
}

/// [`Detector`] adapter over a trained network and its prepared data.
pub struct ModelDetector<'a> {
    model: &'a IntentNet,
    data: &'a PreparedData,
    cfg: &'a RunConfig,
    by_id: HashMap<&'a str, &'a PreparedSample>,
}

impl<'a> ModelDetector<'a> {
    pub fn new(model: &'a IntentNet, data: &'a PreparedData, cfg: &'a RunConfig) -> Self {
        let by_id = data
            .splits
            .values()
            .flatten()
            .map(|s| (s.sample_id.as_str(), s))
            .collect();
        Self { model, data, cfg, by_id }
    }
}

impl Detector for ModelDetector<'_> {
    fn predict(&mut self, split: &DatasetSplit) -> Result<Vec<Prediction>, EvalError> {
        let samples = split
            .samples
            .iter()
            .map(|s| {
                self.by_id
                    .get(s.sample_id.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::Detector(format!("sample {} was not prepared", s.sample_id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        predict_samples(self.model, self.data, &samples, self.cfg).map_err(|e| match e {
            NetError::Eval(inner) => inner,
            other => EvalError::Detector(other.to_string()),
        })
    }
}
