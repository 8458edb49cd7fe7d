use crate::aspectfeat::{AspectFlags, AspectLayout};
use crate::geoenc::{PeVariant, XYPosConfig};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Step-size schedule and optimizer settings for [`super::train`].
///
/// The learning rate warms up linearly over `warmup_steps` and then follows
/// a cosine decay to `lr * final_lr_frac` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub warmup_steps: usize,
    pub final_lr_frac: f64,
    pub clip_norm: f64,
    /// Restore the parameters of the epoch with the best validation F1.
    pub keep_best: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { epochs: 25, lr: 0.01, momentum: 0.9, warmup_steps: 100, final_lr_frac: 0.02, clip_norm: 1.0, keep_best: true }
    }
}

impl Schedule {
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.final_lr_frac;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub dual_layers: usize,
    pub attn_heads: usize,
    pub ffn_dim: usize,
    pub entity_encoder_depth: usize,
    pub token_encoder_depth: usize,
    pub scorer_hidden: usize,
    /// Whitespace tokens of key text kept before hashing.
    pub max_key_tokens: usize,
    pub max_segments: usize,
    /// Token budget per page; later tokens are dropped.
    pub max_tokens: usize,
    pub token_buckets: usize,
    pub xy: XYPosConfig,
    pub pe_variant: PeVariant,
    pub aspect_flags: AspectFlags,
    pub aspect_layout: AspectLayout,
    pub key_in_sequence: bool,
    pub key_in_scorer: bool,
    pub dropout: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The small model: width 128 with a 16 x 8 XY-Pos grid.
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            dual_layers: 6,
            attn_heads: 8,
            ffn_dim: 256,
            entity_encoder_depth: 1,
            token_encoder_depth: 1,
            scorer_hidden: 128,
            max_key_tokens: 50,
            max_segments: 41,
            max_tokens: 128,
            token_buckets: 2048,
            xy: XYPosConfig::small(),
            pe_variant: PeVariant::Xy,
            aspect_flags: AspectFlags::ALL,
            aspect_layout: AspectLayout::default(),
            key_in_sequence: true,
            key_in_scorer: true,
            dropout: 0.0,
            schedule: Schedule::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width 768 with the 32 x 24 grid.
    pub fn large() -> Self {
        ModelConfig { d_model: 768, ffn_dim: 3072, scorer_hidden: 768, xy: XYPosConfig::default(), ..Self::default() }
    }

    /// The default width and grid with a single fusion layer, cheap enough
    /// to train on a laptop CPU in minutes.
    pub fn small() -> Self {
        ModelConfig { dual_layers: 1, ..Self::default() }
    }

    /// A very small model for gradient checks and unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            dual_layers: 1,
            attn_heads: 2,
            ffn_dim: 12,
            entity_encoder_depth: 1,
            token_encoder_depth: 1,
            scorer_hidden: 6,
            max_tokens: 8,
            token_buckets: 16,
            xy: XYPosConfig { m: 4, n: 2 },
            aspect_layout: AspectLayout { d_v: 8, d_t: 16 },
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.attn_heads.max(1)
    }

    pub fn feature_dim(&self) -> usize {
        self.aspect_layout.total()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.attn_heads == 0 || !self.d_model.is_multiple_of(self.attn_heads) {
            return bad(format!("d_model {} must be a positive multiple of attn_heads {}", self.d_model, self.attn_heads));
        }
        if self.pe_variant == PeVariant::Xy && self.xy.d_model() != self.d_model {
            return bad(format!("xy-pos grid {}x{}={} does not match d_model {}", self.xy.m, self.xy.n, self.xy.d_model(), self.d_model));
        }
        if let Err(e) = self.xy.validate() {
            return bad(e.to_string());
        }
        if self.ffn_dim == 0 || self.scorer_hidden == 0 || self.token_buckets == 0 {
            return bad("ffn_dim, scorer_hidden and token_buckets must be positive".into());
        }
        if self.max_segments == 0 {
            return bad("max_segments must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let s = &self.schedule;
        if !(s.lr > 0.0 && s.lr.is_finite()) || !(0.0..1.0).contains(&s.momentum) || s.clip_norm < 0.0 {
            return bad("schedule needs lr > 0, momentum in [0, 1) and clip_norm >= 0".into());
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
        ModelConfig::large().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::default().dual_layers, 6);
        assert_eq!(ModelConfig::large().xy.d_model(), 768);
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig { attn_heads: 3, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { d_model: 64, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { d_model: 64, pe_variant: PeVariant::None, ..ModelConfig::default() };
        c.validate().unwrap();
    }

    #[test]
    fn schedule_shape() {
        let s = Schedule { lr: 1.0, warmup_steps: 10, final_lr_frac: 0.0, ..Schedule::default() };
        assert!((s.lr_at(0, 110) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(9, 110) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(10, 110) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(60, 110) - 0.5).abs() < 1e-12);
        assert!(s.lr_at(110, 110).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig { pe_variant: PeVariant::Linear, aspect_flags: "VTP".parse().unwrap(), ..ModelConfig::default() };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), c);
    }
}
