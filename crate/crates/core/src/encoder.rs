//! Shared Transformer encoder and masked-language-model head.

use rand::Rng;

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::layers::{Dropout, Linear, Norm};
use crate::numeric::{Group, Init, ParamId, ParamStore, Tape, Var};

/// One post-LayerNorm block: attention, residual, norm, GELU FFN, residual, norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: Norm,
}

/// Prediction head: dense, GELU, LayerNorm, projection onto the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmHead {
    pub dense: Linear,
    pub norm: Norm,
    /// `[v, H]` output weight; `None` when tied to the word table.
    pub decoder: Option<ParamId>,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
    pub head: MlmHead,
    /// Word table used by a tied head.
    pub word: ParamId,
}

impl Encoder {
    pub fn declare<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        vocab_size: usize,
        word: ParamId,
        tie_head: bool,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let g = Group::Shared;
        let eps = cfg.layernorm_eps;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("shared.encoder.{i}");
            layers.push(EncoderLayer {
                query: Linear::declare(store, &format!("{p}.attn.query"), g, h, h, std, rng)?,
                key: if cfg.key_bias {
                    Linear::declare(store, &format!("{p}.attn.key"), g, h, h, std, rng)?
                } else {
                    Linear::declare_unbiased(store, &format!("{p}.attn.key"), g, h, h, std, rng)?
                },
                value: Linear::declare(store, &format!("{p}.attn.value"), g, h, h, std, rng)?,
                output: Linear::declare(store, &format!("{p}.attn.output"), g, h, h, std, rng)?,
                attn_norm: Norm::declare(store, &format!("{p}.attn.norm"), g, h, eps, rng)?,
                ffn_in: Linear::declare(store, &format!("{p}.ffn.in"), g, h, cfg.ffn_dim, std, rng)?,
                ffn_out: Linear::declare(store, &format!("{p}.ffn.out"), g, cfg.ffn_dim, h, std, rng)?,
                ffn_norm: Norm::declare(store, &format!("{p}.ffn.norm"), g, h, eps, rng)?,
            });
        }
        let dense = Linear::declare(store, "shared.mlm.dense", g, h, h, std, rng)?;
        let norm = Norm::declare(store, "shared.mlm.norm", g, h, eps, rng)?;
        let decoder = if tie_head {
            None
        } else {
            Some(store.declare(
                "shared.mlm.decoder",
                g,
                true,
                &[vocab_size, h],
                Init::Normal { std },
                rng,
            )?)
        };
        let bias = store.declare("shared.mlm.bias", g, false, &[vocab_size], Init::Zeros, rng)?;
        Ok(Encoder {
            cfg: cfg.clone(),
            layers,
            head: MlmHead {
                dense,
                norm,
                decoder,
                bias,
            },
            word,
        })
    }

    /// Parameters in one encoder layer.
    pub fn layer_numel(h: usize, ffn: usize, key_bias: bool) -> usize {
        let unused = if key_bias { 0 } else { h };
        4 * Linear::numel(h, h) + Linear::numel(h, ffn) + Linear::numel(ffn, h) + 4 * h - unused
    }

    /// Parameters in the head, excluding a tied decoder.
    pub fn head_numel(h: usize, vocab: usize, tied: bool) -> usize {
        Linear::numel(h, h) + 2 * h + vocab + if tied { 0 } else { vocab * h }
    }

    /// Runs every layer over `x: [L, H]`; keys with `attention[j] == false`
    /// get zero weight.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        attention: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let l = tape.shape(x)[0];
        if tape.shape(x) != [l, self.cfg.hidden] {
            return Err(Error::shape("encoder_forward", tape.shape(x), &[l, self.cfg.hidden]));
        }
        if attention.len() != l {
            return Err(Error::Arity {
                what: "attention mask entries",
                expected: l,
                got: attention.len(),
            });
        }
        if !attention.iter().any(|&a| a) {
            return Err(Error::InvalidMask { row: 0 });
        }
        let mask: Vec<bool> = (0..l).flat_map(|_| attention.iter().copied()).collect();
        let mut h = x;
        for layer in &self.layers {
            h = self.layer_forward(tape, layer, h, &mask, dropout.as_deref_mut())?;
        }
        Ok(h)
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        layer: &EncoderLayer,
        x: Var,
        mask: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = layer.query.forward(tape, x)?;
        let k = layer.key.forward(tape, x)?;
        let v = layer.value.forward(tape, x)?;
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for i in 0..self.cfg.n_heads {
            let qh = tape.slice_cols(q, i * dh, dh)?;
            let kh = tape.slice_cols(k, i * dh, dh)?;
            let vh = tape.slice_cols(v, i * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.masked_softmax(scores, mask)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let mut a = layer.output.forward(tape, ctx)?;
        if let Some(d) = dropout.as_deref_mut() {
            a = d.apply(tape, a)?;
        }
        let a = tape.add(x, a)?;
        let a = layer.attn_norm.forward(tape, a)?;
        let f = layer.ffn_in.forward(tape, a)?;
        let f = tape.gelu(f);
        let mut f = layer.ffn_out.forward(tape, f)?;
        if let Some(d) = dropout {
            f = d.apply(tape, f)?;
        }
        let f = tape.add(a, f)?;
        layer.ffn_norm.forward(tape, f)
    }

    /// Vocabulary logits `[L, v]` for hidden states `[L, H]`.
    pub fn mlm_logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let head = &self.head;
        let y = head.dense.forward(tape, hidden)?;
        let y = tape.gelu(y);
        let y = head.norm.forward(tape, y)?;
        let w = tape.param(head.decoder.unwrap_or(self.word));
        let logits = tape.matmul_bt(y, w)?;
        let b = tape.param(head.bias);
        tape.add_bias(logits, b)
    }
}
