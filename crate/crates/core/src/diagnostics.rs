//! End-to-end checks over the toy model: MLM gradient check and masking
//! statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{Corpora, InputSpec};
use crate::dom::TagVocab;
use crate::error::{Error, Result};
use crate::input::Format;
use crate::model::{ForwardCtx, XDocModel};
use crate::numeric::{grad_check, CheckReport, GradCheckConfig};
use crate::pretrain::{apply_mlm_mask, derive_seed, MaskConfig, MaskStats, MaskVocab, MlmExample};
use crate::synthetic;

/// Settings for [`check_mlm_gradients`].
#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub seed: u64,
    pub formats: Vec<Format>,
    /// Examples per format in the checked batch.
    pub per_format: usize,
    /// Initialization scale; larger than the training default so that
    /// gradients sit well above finite-difference noise.
    pub init_std: f64,
    pub max_len: usize,
    pub grad: GradCheckConfig,
}

impl Default for ModelCheck {
    fn default() -> Self {
        ModelCheck {
            seed: 0,
            formats: Format::ALL.to_vec(),
            per_format: 1,
            init_std: 0.2,
            max_len: 64,
            grad: GradCheckConfig::default(),
        }
    }
}

/// Toy model over the synthetic vocabulary, plus one masked batch drawn
/// from the synthetic corpus.
pub fn toy_setup(check: &ModelCheck) -> Result<(XDocModel, crate::numeric::ParamStore, Vec<MlmExample>)> {
    let syn = synthetic::generate(check.per_format.max(1) * 2, check.seed);
    let mut cfg = ModelConfig::toy(syn.vocab.len());
    cfg.encoder.max_len = check.max_len;
    cfg.init_std = check.init_std;
    let tags = TagVocab::default();
    let spec = InputSpec::from_model(&cfg);
    let web = syn.web_records(&tags)?;
    let corpora = Corpora::build(&syn.plain, &syn.doc, &web, &syn.vocab, &tags, &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(check.seed, &[11]));
    let (model, store) = XDocModel::new(&cfg, syn.vocab.special().pad, tags.pad_id(), &mut rng)?;
    let mv = MaskVocab::from_vocab(&syn.vocab)?;
    let mask = MaskConfig {
        select_prob: 0.3,
        ..MaskConfig::default()
    };
    let mut batch = Vec::new();
    for &f in &check.formats {
        for input in corpora.get(f).iter().take(check.per_format) {
            let mut ex = apply_mlm_mask(input, &mv, &mask, &mut rng);
            if ex.n_selected() == 0 {
                ex.labels[1] = input.seq.ids[1];
                ex.active[1] = true;
            }
            batch.push(ex);
        }
    }
    Ok((model, store, batch))
}

/// Finite-difference check of the full MLM loss over every parameter that
/// the batch reaches.
pub fn check_mlm_gradients(check: &ModelCheck) -> Result<CheckReport> {
    let (model, mut store, batch) = toy_setup(check)?;
    let f = |tape: &mut crate::numeric::Tape| {
        let mut ctx = ForwardCtx::eval();
        model.mlm_loss(tape, &batch, &mut ctx)?.ok_or(Error::EmptyLoss)
    };
    grad_check(&mut store, f, &check.grad)
}

/// Masks random sequences over a vocabulary of `vocab_size` until at least
/// `min_tokens` maskable tokens have been seen.
pub fn mask_statistics(min_tokens: u64, vocab_size: usize, seed: u64, cfg: &MaskConfig) -> Result<MaskStats> {
    use crate::input::ModelInput;
    use crate::tokenizer::{EncodedSeq, SpecialIds};
    use rand::Rng;

    let special = SpecialIds {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
    };
    let mv = MaskVocab::new(special, vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = MaskStats::default();
    while stats.maskable < min_tokens {
        let n = rng.random_range(0..126);
        let content: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab_size)).collect();
        let input = ModelInput::plain(EncodedSeq::from_ids(&content, special, 128)?);
        let ex = apply_mlm_mask(&input, &mv, cfg, &mut rng);
        stats.add(&input, &ex, &special);
    }
    Ok(stats)
}
