use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::Var;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ig_core::dataset::SplitName;
use ig_core::eval::{evaluate_predictions, MetricsReport};
use ig_core::util::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{candidate_seed, oracle_candidates, PreparedData, PreparedSample};
use super::detector::predict_samples;
use super::objective::batch_loss;
use crate::losses::{LossBundle, LossError};
use crate::model::IntentNet;
use crate::nn::ParamGroup;
use crate::NetError;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted means over the epoch's batches.
    #[serde(flatten)]
    pub losses: LossBundle,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    pub val: Option<MetricsReport>,
    pub train_metrics: Option<MetricsReport>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best evaluated epoch (the last one without a
    /// validation split).
    pub model: IntentNet,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metrics: Option<MetricsReport>,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub seconds: f64,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    epoch: usize,
    error: String,
    sample_ids: Vec<&'a str>,
    candidates: &'a [Vec<ig_core::geometry::Box3D>],
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64, NetError> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let scaled = g.affine(scale, 0.0)?;
                grads.insert(v.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}

fn split_metrics(
    model: &IntentNet,
    data: &PreparedData,
    name: SplitName,
    cfg: &RunConfig,
) -> Result<Option<MetricsReport>, NetError> {
    let Ok((samples, raw)) = data.split(name) else {
        return Ok(None);
    };
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let preds = predict_samples(model, data, &refs, cfg)?;
    Ok(Some(evaluate_predictions(&preds, raw)?))
}

fn add_weighted(acc: &mut LossBundle, b: &LossBundle, w: f64) {
    acc.l_bce += w * b.l_bce;
    acc.l_pts += w * b.l_pts;
    acc.l_vpos += w * b.l_vpos;
    acc.l_vsem += w * b.l_vsem;
    acc.l_vosem += w * b.l_vosem;
    acc.l_box += w * b.l_box;
    acc.f_vsem += w * b.f_vsem;
    acc.f_vosem += w * b.f_vosem;
    acc.f_box += w * b.f_box;
    acc.total += w * b.total;
}

/// Loads `data_dir` and trains, writing the log and checkpoints to `out_dir`.
pub fn train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    let data = PreparedData::load(data_dir, &cfg.model)?;
    train_prepared(cfg, &data, Some(out_dir))
}

/// Training on already prepared data; `out_dir = None` keeps everything in
/// memory.
pub fn train_prepared(cfg: &RunConfig, data: &PreparedData, out_dir: Option<&Path>) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    let tc = &cfg.train;
    let started = Instant::now();
    let (train_samples, _) = data.split(SplitName::Train)?;
    let model = IntentNet::new(cfg.model.clone(), tc.seed)?;

    let mut log_writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| NetError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            let path = dir.join(LOG_FILE);
            let f = File::create(&path).map_err(|source| NetError::Io { path, source })?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let save = |ck: &Checkpoint, name: &str| -> Result<(), NetError> {
        match out_dir {
            Some(dir) => ck.save(&dir.join(name)),
            None => Ok(()),
        }
    };

    let backbone_vars = model.params().vars_in(&[ParamGroup::PointBackbone]);
    let mut rest_groups = vec![ParamGroup::Rest];
    if !tc.freeze_text_encoder {
        rest_groups.push(ParamGroup::TextBackbone);
    }
    let rest_vars = model.params().vars_in(&rest_groups);
    let all_vars: Vec<Var> = backbone_vars.iter().chain(&rest_vars).cloned().collect();
    let adam = |lr: f64| ParamsAdamW {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: tc.weight_decay,
    };
    let mut opt_backbone = AdamW::new(backbone_vars, adam(tc.lr_backbone))?;
    let mut opt_rest = AdamW::new(rest_vars, adam(tc.lr_rest))?;

    let mut best = Checkpoint::capture(&model, cfg, 0, None)?;
    let mut best_ap: Option<f64> = None;
    if tc.epochs == 0 {
        save(&best, BEST_CHECKPOINT)?;
        save(&best, LAST_CHECKPOINT)?;
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_epoch: 0,
            best_metrics: None,
            epochs_run: 0,
            early_stopped: false,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let has_eval_split = data.split(tc.eval_split).is_ok();
    let mut log = Vec::new();
    let mut early_stopped = false;
    let mut epoch = 0;
    while epoch < tc.epochs {
        epoch += 1;
        let epoch_start = Instant::now();
        let scale = tc.lr_scale(epoch);
        opt_backbone.set_learning_rate(tc.lr_backbone * scale);
        opt_rest.set_learning_rate(tc.lr_rest * scale);

        let mut order: Vec<&PreparedSample> = train_samples.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &format!("order/{epoch}"))));
        let mut acc = LossBundle::default();
        for batch in order.chunks(tc.batch_size) {
            let cands: Vec<_> = batch
                .iter()
                .map(|s| {
                    oracle_candidates(
                        &s.targets,
                        &data.scenes[s.scene],
                        &cfg.candidates,
                        candidate_seed(tc.seed, &s.sample_id, Some(epoch)),
                    )
                })
                .collect();
            let step = match batch_loss(&model, data, batch, &cands, cfg) {
                Ok(s) => s,
                Err(e @ NetError::Loss(LossError::NonFinite { .. })) => {
                    let dump = NonFiniteDump {
                        epoch,
                        error: e.to_string(),
                        sample_ids: batch.iter().map(|s| s.sample_id.as_str()).collect(),
                        candidates: &cands,
                    };
                    if let Some(dir) = out_dir {
                        let path = dir.join(NONFINITE_DUMP);
                        let body = serde_json::to_string_pretty(&dump).expect("dump serializes");
                        std::fs::write(&path, body).map_err(|source| NetError::Io { path, source })?;
                    }
                    return Err(NetError::NonFinite(format!("epoch {epoch}: {e}")));
                }
                Err(e) => return Err(e),
            };
            let mut grads = step.total.backward()?;
            clip_grad_norm(&mut grads, &all_vars, tc.grad_clip)?;
            opt_backbone.step(&grads)?;
            opt_rest.step(&grads)?;
            add_weighted(&mut acc, &step.bundle, batch.len() as f64);
        }
        let n = train_samples.len() as f64;
        let mean = {
            let mut m = LossBundle::default();
            add_weighted(&mut m, &acc, 1.0 / n);
            m
        };

        let evaluate_now = epoch % tc.eval_every == 0 || epoch == tc.epochs;
        let (mut val, mut train_metrics) = (None, None);
        if evaluate_now {
            val = split_metrics(&model, data, tc.eval_split, cfg)?;
            if tc.eval_train || tc.early_stop_train_top1.is_some() {
                train_metrics = split_metrics(&model, data, SplitName::Train, cfg)?;
            }
        }
        if let Some(v) = &val {
            if best_ap.is_none_or(|b| v.ap_50 > b) {
                best_ap = Some(v.ap_50);
                best = Checkpoint::capture(&model, cfg, epoch, Some(*v))?;
                save(&best, BEST_CHECKPOINT)?;
            }
        }
        let record = EpochRecord {
            epoch,
            losses: mean,
            lr_backbone: tc.lr_backbone * scale,
            lr_rest: tc.lr_rest * scale,
            val,
            train_metrics,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: total {:.4} box {:.4} vSem {:.4}{}",
            mean.total,
            mean.l_box,
            mean.l_vsem,
            train_metrics.map_or(String::new(), |m| format!(" train top1@0.25 {:.2}", m.top1_acc_25))
        );
        if let Some(w) = log_writer.as_mut() {
            let line = serde_json::to_string(&record).expect("records serialize");
            let path = out_dir.map(|d| d.join(LOG_FILE)).unwrap_or_default();
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| NetError::Io { path, source })?;
        }
        log.push(record);
        if let (Some(th), Some(m)) = (tc.early_stop_train_top1, train_metrics) {
            if m.top1_acc_25 >= th {
                early_stopped = true;
                break;
            }
        }
        if tc.time_budget_secs.is_some_and(|b| started.elapsed().as_secs_f64() >= b) {
            log::warn!("time budget exhausted after epoch {epoch}");
            break;
        }
    }

    let last = Checkpoint::capture(&model, cfg, epoch, log.last().and_then(|r| r.val))?;
    save(&last, LAST_CHECKPOINT)?;
    let (model, best_epoch, best_metrics) = if has_eval_split && best_ap.is_some() {
        (best.restore()?, best.epoch, best.metrics)
    } else {
        save(&last, BEST_CHECKPOINT)?;
        (model, epoch, None)
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_metrics,
        epochs_run: epoch,
        early_stopped,
        seconds: started.elapsed().as_secs_f64(),
    })
}
