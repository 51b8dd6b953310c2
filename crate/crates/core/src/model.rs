//! The unified model: per-format embeddings feeding one shared encoder.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::config::ModelConfig;
use crate::embeddings::{AdaptiveLayer, EmbeddingTables};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::input::{Format, ModelInput};
use crate::layers::{Dropout, Norm};
use crate::numeric::{Group, ParamStore, Tape, Var};
use crate::pretrain::MlmExample;

/// Per-pass switches: dropout (training only) and adaptive-layer timing.
#[derive(Debug, Clone, Default)]
pub struct ForwardCtx {
    dropout: Option<Dropout>,
    time_adaptive: bool,
    /// Wall time spent inside adaptive layers since construction.
    pub adaptive_time: Duration,
}

impl ForwardCtx {
    /// Deterministic pass with dropout off.
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        ForwardCtx {
            dropout: (dropout > 0.0).then(|| Dropout::new(dropout, seed)),
            ..Self::default()
        }
    }

    pub fn timed(mut self) -> Self {
        self.time_adaptive = true;
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XDocModel {
    pub cfg: ModelConfig,
    pub pad_id: usize,
    pub tables: EmbeddingTables,
    pub doc_adaptive: AdaptiveLayer,
    /// Equal to `doc_adaptive` in symmetric mode.
    pub web_adaptive: AdaptiveLayer,
    pub embed_norm: Option<Norm>,
    pub encoder: Encoder,
}

impl XDocModel {
    /// Builds the model and a freshly initialized parameter store.
    /// `pad_id` is the word-table row kept at zero; `tag_pad` fills missing
    /// XPath depths.
    pub fn new<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        pad_id: usize,
        tag_pad: usize,
        rng: &mut R,
    ) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let h = cfg.hidden();
        let std = cfg.init_std;
        let tables = EmbeddingTables::declare(&mut store, cfg, pad_id, tag_pad, rng)?;
        let (doc_adaptive, web_adaptive) = if cfg.symmetric_adaptive {
            let a = AdaptiveLayer::declare(
                &mut store,
                "shared_adaptive",
                Group::SharedAdaptive,
                cfg.adaptive,
                h,
                h,
                std,
                rng,
            )?;
            (a.clone(), a)
        } else {
            let d = AdaptiveLayer::declare(&mut store, "doc.adaptive", Group::Doc, cfg.adaptive, h, h, std, rng)?;
            let w = AdaptiveLayer::declare(
                &mut store,
                "web.adaptive",
                Group::Web,
                cfg.adaptive,
                cfg.xpath_width(),
                h,
                std,
                rng,
            )?;
            (d, w)
        };
        let embed_norm = if cfg.embed_layer_norm {
            Some(Norm::declare(
                &mut store,
                "shared.embed_norm",
                Group::Shared,
                h,
                cfg.encoder.layernorm_eps,
                rng,
            )?)
        } else {
            None
        };
        let encoder = Encoder::declare(
            &mut store,
            &cfg.encoder,
            cfg.vocab_size,
            tables.word,
            cfg.tie_mlm_head,
            std,
            rng,
        )?;
        let model = XDocModel {
            cfg: cfg.clone(),
            pad_id,
            tables,
            doc_adaptive,
            web_adaptive,
            embed_norm,
            encoder,
        };
        Ok((model, store))
    }

    pub fn adaptive(&self, format: Format) -> Option<&AdaptiveLayer> {
        match format {
            Format::Plain => None,
            Format::Doc => Some(&self.doc_adaptive),
            Format::Web => Some(&self.web_adaptive),
        }
    }

    /// Zeroes the final linear map of both adaptive layers so every branch
    /// contributes nothing.
    pub fn zero_adaptive_outputs(&self, store: &mut ParamStore) {
        for layer in [&self.doc_adaptive, &self.web_adaptive] {
            if let Some(last) = layer.last() {
                store.get_mut(last.weight).value.fill(0.0);
                if let Some(b) = last.bias {
                    store.get_mut(b).value.fill(0.0);
                }
            }
        }
    }

    /// Summed format embedding before normalization: `[L, H]`.
    pub fn embed_sum(&self, tape: &mut Tape, input: &ModelInput, ctx: &mut ForwardCtx) -> Result<Var> {
        input.validate()?;
        let ids = &input.seq.ids;
        let plain = self.tables.embed_plain(tape, ids)?;
        let (prior, layer) = match input.format {
            Format::Plain => return Ok(plain),
            Format::Doc => {
                let boxes = input.boxes.as_deref().unwrap_or_default();
                (self.tables.two_d_embeddings(tape, boxes)?, &self.doc_adaptive)
            }
            Format::Web => {
                let xpaths = input.xpaths.as_deref().unwrap_or_default();
                (self.tables.xpath_embeddings(tape, xpaths)?, &self.web_adaptive)
            }
        };
        let start = ctx.time_adaptive.then(Instant::now);
        let extra = layer.forward(tape, prior)?;
        if let Some(s) = start {
            ctx.adaptive_time += s.elapsed();
        }
        tape.add(plain, extra)
    }

    /// Overall embedding fed to the encoder: sum, LayerNorm, dropout.
    pub fn embed(&self, tape: &mut Tape, input: &ModelInput, ctx: &mut ForwardCtx) -> Result<Var> {
        let mut e = self.embed_sum(tape, input, ctx)?;
        if let Some(n) = &self.embed_norm {
            e = n.forward(tape, e)?;
        }
        if let Some(d) = ctx.dropout.as_mut() {
            e = d.apply(tape, e)?;
        }
        Ok(e)
    }

    /// Contextual hidden states `[L, H]`.
    pub fn encode(&self, tape: &mut Tape, input: &ModelInput, ctx: &mut ForwardCtx) -> Result<Var> {
        let e = self.embed(tape, input, ctx)?;
        self.encoder.forward(tape, e, &input.seq.attention, ctx.dropout.as_mut())
    }

    /// Vocabulary logits `[L, v]`.
    pub fn logits(&self, tape: &mut Tape, input: &ModelInput, ctx: &mut ForwardCtx) -> Result<Var> {
        let h = self.encode(tape, input, ctx)?;
        self.encoder.mlm_logits(tape, h)
    }

    /// Mean cross-entropy over every active position of the batch, or `None`
    /// when no position carries a label.
    pub fn mlm_loss(
        &self,
        tape: &mut Tape,
        batch: &[MlmExample],
        ctx: &mut ForwardCtx,
    ) -> Result<Option<Var>> {
        let mut parts = Vec::new();
        let mut targets = Vec::new();
        let mut active = Vec::new();
        for ex in batch {
            if !ex.active.iter().any(|&a| a) {
                continue;
            }
            if ex.labels.len() != ex.input.len() || ex.active.len() != ex.input.len() {
                return Err(Error::Arity {
                    what: "labels",
                    expected: ex.input.len(),
                    got: ex.labels.len(),
                });
            }
            parts.push(self.logits(tape, &ex.input, ctx)?);
            targets.extend_from_slice(&ex.labels);
            active.extend_from_slice(&ex.active);
        }
        if parts.is_empty() {
            return Ok(None);
        }
        let logits = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)?
        };
        tape.masked_cross_entropy(logits, &targets, &active).map(Some)
    }
}
