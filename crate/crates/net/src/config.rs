use serde::{Deserialize, Serialize};

use crate::NetError;

/// Network shape. Defaults are the full-scale sizes; [`ModelConfig::desk_scale`]
/// gives a CPU-sized variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden width `c`.
    pub hidden_dim: usize,
    /// Point tokens `p` produced by the point backbone.
    pub num_point_tokens: usize,
    pub max_text_len: usize,
    /// Queries `k` selected for the decoder.
    pub num_queries: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub num_attention_heads: usize,
    pub ffn_dim: usize,
    /// Width of the contrastive projection space.
    pub proj_dim: usize,
    /// Neighbors pooled per point token in the first backbone layer.
    pub group_size: usize,
    /// Neighbors pooled per point token in the second backbone layer.
    pub token_neighbors: usize,
    /// Hash buckets of the default text backbone's token embedding.
    pub vocab_buckets: usize,
    pub text_layers: usize,
    /// Per-point feature channels after xyz (RGB for synthetic scenes).
    pub point_feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 288,
            num_point_tokens: 1024,
            max_text_len: 256,
            num_queries: 50,
            encoder_layers: 3,
            decoder_layers: 6,
            num_attention_heads: 8,
            ffn_dim: 1152,
            proj_dim: 64,
            group_size: 32,
            token_neighbors: 16,
            vocab_buckets: 4096,
            text_layers: 2,
            point_feature_dim: 3,
        }
    }
}

impl ModelConfig {
    pub fn desk_scale() -> Self {
        Self {
            hidden_dim: 64,
            num_point_tokens: 256,
            num_queries: 16,
            encoder_layers: 2,
            decoder_layers: 3,
            num_attention_heads: 4,
            ffn_dim: 128,
            proj_dim: 64,
            group_size: 16,
            token_neighbors: 8,
            vocab_buckets: 2048,
            max_text_len: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.hidden_dim == 0 || self.num_attention_heads == 0 {
            return bad("hidden_dim and num_attention_heads must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_attention_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.num_attention_heads
            ));
        }
        if self.num_queries == 0 || self.num_queries > self.num_point_tokens {
            return bad(format!(
                "num_queries {} must be in 1..={}",
                self.num_queries, self.num_point_tokens
            ));
        }
        if self.max_text_len < 2 {
            return bad("max_text_len must leave room for one word and the sentinel".into());
        }
        if self.group_size == 0 || self.token_neighbors == 0 || self.vocab_buckets == 0 {
            return bad("group_size, token_neighbors and vocab_buckets must be positive".into());
        }
        if self.token_neighbors > self.num_point_tokens {
            return bad("token_neighbors exceeds num_point_tokens".into());
        }
        if self.hidden_dim < 2 {
            return bad("hidden_dim must be at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::default().validate().unwrap();
        let d = ModelConfig::desk_scale();
        d.validate().unwrap();
        assert_eq!((d.hidden_dim, d.num_point_tokens, d.num_queries), (64, 256, 16));
        assert_eq!((d.encoder_layers, d.decoder_layers), (2, 3));
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = ModelConfig {
            hidden_dim: 65,
            ..ModelConfig::desk_scale()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            num_queries: 300,
            ..ModelConfig::desk_scale()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ModelConfig>("hidden_dim = 64\nbogus = 1").is_err());
        let c: ModelConfig = toml::from_str("hidden_dim = 64").unwrap();
        assert_eq!(c.num_queries, 50);
    }
}
