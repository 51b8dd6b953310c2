//! Training configuration and loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AdaptiveSpec, ModelConfig};
use crate::corpus::{load_doc, load_plain, load_web, Corpora, ErrorPolicy, InputSpec};
use crate::dom::{ExtractOptions, TagVocab};
use crate::error::{Error, Result};
use crate::input::Format;
use crate::model::{ForwardCtx, XDocModel};
use crate::numeric::{ParamStore, Tape};
use crate::synthetic;
use crate::tokenizer::Vocab;

use super::checkpoint::{save_checkpoint, Checkpoint, LossPoint, ParamRecord, CHECKPOINT_VERSION};
use super::mask::{apply_mlm_mask, MaskConfig, MaskVocab, MlmExample};
use super::optim::{lr_at_step, AdamW, Decay, OptimizerState};
use super::sampler::{Sampler, SamplerConfig};
use super::derive_seed;

const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Where training text comes from. `synthetic` generates that many records
/// per format and ignores the paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub vocab: Option<PathBuf>,
    pub plain: Option<PathBuf>,
    pub doc: Option<PathBuf>,
    pub web: Option<PathBuf>,
    pub web_errors: ErrorPolicy,
    pub synthetic: Option<usize>,
    pub synthetic_seed: u64,
}

impl Default for CorpusPaths {
    fn default() -> Self {
        CorpusPaths {
            vocab: None,
            plain: None,
            doc: None,
            web: None,
            web_errors: ErrorPolicy::Abort,
            synthetic: Some(17),
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
    pub adaptive: Option<AdaptiveSpec>,
    pub symmetric_adaptive: bool,
    pub steps: u64,
    pub batch_size: usize,
    /// Plain : doc : web examples per batch.
    pub ratio: [usize; 3],
    pub lr: f64,
    pub warmup_frac: f64,
    pub decay: Decay,
    pub optimizer: AdamW,
    pub mask: MaskConfig,
    pub seed: u64,
    /// Loss rows written to the CSV every this many steps.
    pub log_every: u64,
    /// Checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub output_dir: Option<PathBuf>,
    pub corpus: CorpusPaths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "toy".into(),
            max_len: None,
            dropout: None,
            adaptive: None,
            symmetric_adaptive: false,
            steps: 200,
            batch_size: 12,
            ratio: [1, 1, 1],
            lr: 5e-5,
            warmup_frac: 0.05,
            decay: Decay::Constant,
            optimizer: AdamW::default(),
            mask: MaskConfig::default(),
            seed: 0,
            log_every: 1,
            checkpoint_every: 0,
            output_dir: None,
            corpus: CorpusPaths::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            ratio: self.ratio,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Preset with this config's overrides applied.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(&self.preset, Some(vocab_size))?;
        if let Some(l) = self.max_len {
            m.encoder.max_len = l;
        }
        if let Some(d) = self.dropout {
            m.encoder.dropout = d;
        }
        if let Some(a) = self.adaptive {
            m.adaptive = a;
        }
        m.symmetric_adaptive = self.symmetric_adaptive;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().validate()?;
        self.mask.validate()?;
        if !(self.lr >= 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("lr must be >= 0 and warmup_frac in [0, 1]".into()));
        }
        Ok(())
    }

    /// Vocabulary and converted corpora named by `corpus`.
    pub fn load_data(&self, spec_for: impl Fn(&Vocab) -> Result<InputSpec>) -> Result<(Vocab, Corpora)> {
        let tags = TagVocab::default();
        let c = &self.corpus;
        if let Some(n) = c.synthetic {
            let syn = synthetic::generate(n, c.synthetic_seed);
            let spec = spec_for(&syn.vocab)?;
            let web = syn.web_records(&tags)?;
            let corpora = Corpora::build(&syn.plain, &syn.doc, &web, &syn.vocab, &tags, &spec)?;
            return Ok((syn.vocab, corpora));
        }
        let vocab_path = c
            .vocab
            .as_ref()
            .ok_or_else(|| Error::Config("corpus.vocab is required without corpus.synthetic".into()))?;
        let vocab = Vocab::load(vocab_path)?;
        let spec = spec_for(&vocab)?;
        let plain = c.plain.as_ref().map(load_plain).transpose()?.unwrap_or_default();
        let doc = c.doc.as_ref().map(load_doc).transpose()?.unwrap_or_default();
        let web = match &c.web {
            Some(p) => {
                let load = load_web(p, &tags, &ExtractOptions::default(), c.web_errors)?;
                for e in &load.skipped {
                    eprintln!("warning: skipped {e}");
                }
                load.records
            }
            None => Vec::new(),
        };
        let corpora = Corpora::build(&plain, &doc, &web, &vocab, &tags, &spec)?;
        Ok((vocab, corpora))
    }
}

/// Model, parameters, optimizer state and data for one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: XDocModel,
    pub store: ParamStore,
    pub opt: OptimizerState,
    pub vocab: Vocab,
    pub corpora: Corpora,
    pub curve: Vec<LossPoint>,
    adamw: AdamW,
    sampler: Sampler,
    mask_vocab: MaskVocab,
}

impl Trainer {
    /// Loads data from the configured corpus and initializes a fresh model.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (vocab, corpora) = cfg.load_data(|v| Ok(InputSpec::from_model(&cfg.model_config(v.len())?)))?;
        Self::with_data(cfg, vocab, corpora)
    }

    pub fn with_data(cfg: TrainConfig, vocab: Vocab, corpora: Corpora) -> Result<Self> {
        cfg.validate()?;
        let mcfg = cfg.model_config(vocab.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_INIT]));
        let tag_pad = TagVocab::default().pad_id();
        let (model, store) = XDocModel::new(&mcfg, vocab.special().pad, tag_pad, &mut rng)?;
        let sampler = Sampler::new(cfg.sampler(), corpora.sizes())?;
        let mask_vocab = MaskVocab::from_vocab(&vocab)?;
        Ok(Trainer {
            opt: OptimizerState::new(&store),
            adamw: cfg.optimizer,
            cfg,
            model,
            store,
            vocab,
            corpora,
            curve: Vec::new(),
            sampler,
            mask_vocab,
        })
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    /// The corrupted batch used at `step`.
    pub fn batch(&mut self, step: u64) -> Vec<MlmExample> {
        self.sampler
            .batch(step)
            .into_iter()
            .enumerate()
            .map(|(k, (f, i))| {
                let seed = derive_seed(self.cfg.seed, &[STREAM_MASK, step, k as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                apply_mlm_mask(&self.corpora.get(f)[i], &self.mask_vocab, &self.cfg.mask, &mut rng)
            })
            .collect()
    }

    pub fn formats_in_batch(&self) -> Vec<Format> {
        Format::ALL
            .into_iter()
            .filter(|f| self.cfg.ratio[f.index()] > 0)
            .collect()
    }

    /// One optimizer step. Returns `None` when no position in the batch was
    /// selected for prediction; the step still counts.
    pub fn step(&mut self) -> Result<Option<LossPoint>> {
        let s = self.opt.step;
        let examples = self.batch(s);
        let lr = lr_at_step(s + 1, self.cfg.steps, self.cfg.lr, self.cfg.warmup_frac, self.cfg.decay);
        let dropout = self.model.cfg.encoder.dropout;
        let mut ctx = ForwardCtx::train(dropout, derive_seed(self.cfg.seed, &[STREAM_DROPOUT, s]));
        let mut tape = Tape::new(&self.store);
        let Some(loss) = self.model.mlm_loss(&mut tape, &examples, &mut ctx)? else {
            self.opt.step += 1;
            return Ok(None);
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NumericFault(format!("loss {value} at step {s}")));
        }
        let grads = tape.backward(loss)?;
        self.adamw.step(&mut self.store, &mut self.opt, &grads, lr)?;
        let point = LossPoint { step: s, loss: value, lr };
        self.curve.push(point);
        Ok(Some(point))
    }

    /// Trains until `cfg.steps`, writing periodic checkpoints when an output
    /// directory is set. `on_step` sees every recorded loss.
    pub fn run(&mut self, mut on_step: impl FnMut(&LossPoint)) -> Result<()> {
        while self.opt.step < self.cfg.steps {
            if let Some(p) = self.step()? {
                on_step(&p);
            }
            let done = self.opt.step;
            if let Some(dir) = &self.cfg.output_dir {
                if self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every) {
                    save_checkpoint(&self.checkpoint(), dir.join(format!("step-{done:06}.ckpt")))?;
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let params = self
            .store
            .iter()
            .map(|(id, p)| {
                let i = id.index();
                ParamRecord {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    m: self.opt.m[i].clone(),
                    v: self.opt.v[i].clone(),
                    t: self.opt.t[i],
                }
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.to_toml(),
            step: self.opt.step,
            seed: self.cfg.seed,
            curve: self.curve.clone(),
            params,
        }
    }

    /// Replaces parameters, optimizer state and loss history. Every stored
    /// parameter must appear in the checkpoint with the same shape.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.seed != self.cfg.seed {
            return Err(Error::CheckpointMismatch {
                name: "seed".into(),
                message: format!("checkpoint seed {} vs configured {}", ckpt.seed, self.cfg.seed),
            });
        }
        ckpt.load_params_into(&mut self.store)?;
        for rec in &ckpt.params {
            let i = self.store.id(&rec.name).expect("names checked").index();
            self.opt.m[i] = rec.m.clone();
            self.opt.v[i] = rec.v.clone();
            self.opt.t[i] = rec.t;
        }
        self.store.zero_grad();
        self.opt.step = ckpt.step;
        self.curve = ckpt.curve.clone();
        Ok(())
    }
}

/// `step,loss,lr` rows for every `every`-th step.
pub fn write_loss_csv(curve: &[LossPoint], every: u64) -> String {
    let mut s = String::from("step,loss,lr\n");
    for p in curve.iter().filter(|p| every <= 1 || p.step % every == 0) {
        let _ = writeln!(s, "{},{},{}", p.step, p.loss, p.lr);
    }
    s
}
