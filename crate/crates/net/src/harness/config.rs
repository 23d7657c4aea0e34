use std::path::Path;

use ig_core::dataset::SplitName;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::losses::{AblationFlags, BoxLossWeights, MatchWeights};
use crate::NetError;

/// Optimization schedule and loss ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the point backbone.
    pub lr_backbone: f64,
    /// Learning rate of everything else (including an unfrozen text backbone).
    pub lr_rest: f64,
    /// 1-based epoch from which both rates are multiplied by `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub freeze_text_encoder: bool,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Split used for checkpoint selection.
    pub eval_split: SplitName,
    /// Also score the training split at each evaluation.
    pub eval_train: bool,
    /// Stop once training-split Top1-Acc@0.25 (percent) reaches this value.
    pub early_stop_train_top1: Option<f64>,
    /// Stop after the first epoch that ends past this many seconds.
    pub time_budget_secs: Option<f64>,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 24,
            lr_backbone: 1e-3,
            lr_rest: 1e-4,
            lr_decay_epoch: 65,
            lr_decay_factor: 0.1,
            freeze_text_encoder: true,
            seed: 0,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            eval_every: 1,
            eval_split: SplitName::Val,
            eval_train: false,
            early_stop_train_top1: None,
            time_budget_secs: None,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if self.lr_decay_epoch > self.epochs {
            return bad("lr_decay_epoch exceeds epochs");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if !(self.lr_backbone >= 0.0 && self.lr_rest >= 0.0 && self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return bad("learning rates, weight_decay and grad_clip must be non-negative");
        }
        if self.time_budget_secs.is_some_and(|b| b.is_nan() || b < 0.0) {
            return bad("time_budget_secs must be non-negative");
        }
        Ok(())
    }

    /// Learning-rate multiplier at 1-based `epoch`.
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if self.lr_decay_epoch > 0 && epoch >= self.lr_decay_epoch {
            self.lr_decay_factor
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    /// IoU above which a candidate counts as positive.
    pub candidate_iou: f64,
    pub box_weights: BoxLossWeights,
    pub match_weights: MatchWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            candidate_iou: 0.25,
            box_weights: BoxLossWeights::default(),
            match_weights: MatchWeights::default(),
        }
    }
}

/// Jitter-oracle candidate source: perturbed ground truth plus distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    /// Center noise standard deviation as a fraction of the box size.
    pub center_sigma: f64,
    /// Sizes are scaled by a uniform factor in `1 ± size_jitter`.
    pub size_jitter: f64,
    /// Upper bound on distractor boxes taken from other scene objects.
    pub max_distractors: usize,
    /// Distractors are jittered like targets.
    pub jitter_distractors: bool,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            center_sigma: 0.05,
            size_jitter: 0.1,
            max_distractors: 32,
            jitter_distractors: true,
        }
    }
}

/// Everything a run needs, as read from one TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub candidates: CandidateConfig,
}

impl RunConfig {
    /// CPU-sized preset: small network, 200 epochs, early stop at 90% train
    /// Top1-Acc@0.25, and a decay point at the same relative position as the
    /// full schedule.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk_scale(),
            train: TrainConfig {
                epochs: 200,
                batch_size: 24,
                lr_backbone: 2e-3,
                lr_rest: 1e-3,
                lr_decay_epoch: 144,
                eval_every: 5,
                eval_train: true,
                early_stop_train_top1: Some(90.0),
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.model.validate()?;
        self.train.validate()?;
        if self.loss.temperature.is_nan() || self.loss.temperature <= 0.0 {
            return Err(NetError::Config("temperature must be positive".into()));
        }
        let c = &self.candidates;
        if !(c.center_sigma >= 0.0 && (0.0..1.0).contains(&c.size_jitter)) {
            return Err(NetError::Config("candidate jitter out of range".into()));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self, NetError> {
        let cfg: Self = toml::from_str(s).map_err(|e| NetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let body = std::fs::read_to_string(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&body)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs serialize")
    }
}
