//! Model hyperparameters and presets.

use serde::{Deserialize, Serialize};

use crate::dom::{TagVocab, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};

/// Shared Transformer encoder shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub layernorm_eps: f64,
    pub max_len: usize,
    /// Bias on the attention key projection. It shifts every score in a row
    /// by the same amount, so softmax ignores it and its gradient is zero.
    #[serde(default = "default_true")]
    pub key_bias: bool,
}

fn default_true() -> bool {
    true
}

impl EncoderConfig {
    /// 12 layers, 768 hidden, 12 heads, 3072 FFN, length 512.
    pub fn base() -> Self {
        EncoderConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            ffn_dim: 3072,
            dropout: 0.1,
            layernorm_eps: 1e-5,
            max_len: 512,
            key_bias: true,
        }
    }

    pub fn toy() -> Self {
        EncoderConfig {
            n_layers: 2,
            hidden: 64,
            n_heads: 4,
            ffn_dim: 128,
            dropout: 0.0,
            layernorm_eps: 1e-5,
            max_len: 64,
            key_bias: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(Error::Config("layernorm_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Structure of an adaptive layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveSpec {
    /// Identity pass-through; only valid when the branch input width is the hidden size.
    Disabled,
    /// `Linear (ReLU Linear)^k`.
    Relu(usize),
}

impl AdaptiveSpec {
    pub fn linear_count(self) -> usize {
        match self {
            AdaptiveSpec::Disabled => 0,
            AdaptiveSpec::Relu(k) => k + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub encoder: EncoderConfig,
    /// Coordinate bins per layout table.
    pub coord_bins: usize,
    /// Use one x table for left/right and one y table for top/bottom.
    pub share_xy_tables: bool,
    /// Maximum XPath depth.
    pub xpath_depth: usize,
    /// Width of each per-depth tag/subscript embedding.
    pub xpath_unit: usize,
    /// Rows in each tag table (reserved tags + UNK + PAD at least).
    pub tag_table_size: usize,
    /// Rows in each subscript table; larger subscripts clamp to the last row.
    pub max_subscript: usize,
    pub adaptive: AdaptiveSpec,
    /// One adaptive layer shared by the document and web branches.
    pub symmetric_adaptive: bool,
    /// LayerNorm over the summed embedding.
    pub embed_layer_norm: bool,
    /// MLM output projection reuses the word table.
    pub tie_mlm_head: bool,
    pub init_std: f64,
}

impl ModelConfig {
    pub fn base() -> Self {
        ModelConfig {
            vocab_size: 50265,
            encoder: EncoderConfig::base(),
            coord_bins: 1024,
            share_xy_tables: false,
            xpath_depth: DEFAULT_MAX_DEPTH,
            xpath_unit: 32,
            tag_table_size: TagVocab::default().table_size(),
            max_subscript: 256,
            adaptive: AdaptiveSpec::Relu(1),
            symmetric_adaptive: false,
            embed_layer_norm: true,
            tie_mlm_head: true,
            init_std: 0.02,
        }
    }

    /// Base model with table sizes chosen to mirror the published
    /// per-component parameter accounting.
    pub fn base_compat() -> Self {
        ModelConfig {
            share_xy_tables: true,
            xpath_unit: 100,
            tag_table_size: 256,
            max_subscript: 1024,
            ..Self::base()
        }
    }

    /// Desk-scale model; `xpath_depth * xpath_unit` equals the hidden size so
    /// every adaptive variant is constructible.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            encoder: EncoderConfig::toy(),
            coord_bins: 1024,
            share_xy_tables: false,
            xpath_depth: 8,
            xpath_unit: 8,
            tag_table_size: TagVocab::default().table_size(),
            max_subscript: 32,
            adaptive: AdaptiveSpec::Relu(1),
            symmetric_adaptive: false,
            embed_layer_norm: true,
            tie_mlm_head: true,
            init_std: 0.02,
        }
    }

    pub fn preset(name: &str, vocab_size: Option<usize>) -> Result<Self> {
        let mut cfg = match name {
            "toy" => Self::toy(vocab_size.unwrap_or(0)),
            "base" => Self::base(),
            "base_compat" | "base-compat" => Self::base_compat(),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if let Some(v) = vocab_size {
            cfg.vocab_size = v;
        }
        Ok(cfg)
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden
    }

    pub fn xpath_width(&self) -> usize {
        self.xpath_depth * self.xpath_unit
    }

    pub fn layout_table_count(&self) -> usize {
        if self.share_xy_tables {
            4
        } else {
            6
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.coord_bins == 0 || self.max_subscript == 0 || self.xpath_unit == 0 {
            return Err(Error::Config("table sizes must be positive".into()));
        }
        if self.tag_table_size < 2 {
            return Err(Error::Config("tag table needs at least UNK and PAD rows".into()));
        }
        let h = self.hidden();
        let web_in = self.xpath_width();
        if self.adaptive == AdaptiveSpec::Disabled && web_in != h {
            return Err(Error::Config(format!(
                "adaptive layers disabled but XPath width {web_in} != hidden {h}"
            )));
        }
        if self.symmetric_adaptive && web_in != h {
            return Err(Error::Config(format!(
                "symmetric adaptive layers need XPath width {web_in} == hidden {h}"
            )));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::base().validate().unwrap();
        ModelConfig::base_compat().validate().unwrap();
        ModelConfig::toy(100).validate().unwrap();
        let mut c = ModelConfig::base();
        c.symmetric_adaptive = true;
        assert!(c.validate().is_err());
        c.symmetric_adaptive = false;
        c.adaptive = AdaptiveSpec::Disabled;
        assert!(c.validate().is_err());
        let mut t = ModelConfig::toy(100);
        t.adaptive = AdaptiveSpec::Disabled;
        t.symmetric_adaptive = true;
        t.validate().unwrap();
    }

    #[test]
    fn heads_must_divide_hidden() {
        let mut e = EncoderConfig::toy();
        e.n_heads = 3;
        assert!(e.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::toy(42);
        let s = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
