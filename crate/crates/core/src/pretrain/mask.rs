//! Masked-language-model corruption.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::ModelInput;
use crate::tokenizer::{SpecialIds, Vocab};

/// Label value at positions that carry no target.
pub const IGNORE: usize = usize::MAX;

/// What happened to a selected token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            select_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.select_prob)
            && self.mask_frac >= 0.0
            && self.random_frac >= 0.0
            && self.mask_frac + self.random_frac <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid mask probabilities {self:?}")))
        }
    }
}

/// A corrupted input with its targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmExample {
    pub input: ModelInput,
    /// Original id at selected positions, [`IGNORE`] elsewhere.
    pub labels: Vec<usize>,
    pub active: Vec<bool>,
    /// Corruption applied at each selected position.
    pub corruption: Vec<Option<Corruption>>,
}

impl MlmExample {
    pub fn n_selected(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Source of replacement ids: uniform over non-special vocabulary entries.
#[derive(Debug, Clone)]
pub struct MaskVocab {
    pub special: SpecialIds,
    pub size: usize,
}

impl MaskVocab {
    pub fn new(special: SpecialIds, size: usize) -> Result<Self> {
        let n_special = (0..size).filter(|&i| special.contains(i)).count();
        if n_special >= size {
            return Err(Error::Config("vocabulary has no ordinary tokens".into()));
        }
        Ok(MaskVocab { special, size })
    }

    pub fn from_vocab(vocab: &Vocab) -> Result<Self> {
        Self::new(vocab.special(), vocab.len())
    }

    fn random_id<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        loop {
            let id = rng.random_range(0..self.size);
            if !self.special.contains(id) {
                return id;
            }
        }
    }
}

/// Selects each real non-special token with `select_prob`; of those, a
/// `mask_frac` share becomes `[MASK]`, a `random_frac` share a random
/// ordinary id, and the rest stay unchanged.
pub fn apply_mlm_mask<R: Rng + ?Sized>(
    input: &ModelInput,
    vocab: &MaskVocab,
    cfg: &MaskConfig,
    rng: &mut R,
) -> MlmExample {
    let n = input.len();
    let mut ids = input.seq.ids.clone();
    let mut labels = vec![IGNORE; n];
    let mut active = vec![false; n];
    let mut corruption = vec![None; n];
    for i in 0..n {
        let id = ids[i];
        if !input.seq.attention[i] || vocab.special.contains(id) {
            continue;
        }
        if rng.random::<f64>() >= cfg.select_prob {
            continue;
        }
        labels[i] = id;
        active[i] = true;
        let u = rng.random::<f64>();
        let kind = if u < cfg.mask_frac {
            Corruption::Mask
        } else if u < cfg.mask_frac + cfg.random_frac {
            Corruption::Random
        } else {
            Corruption::Keep
        };
        ids[i] = match kind {
            Corruption::Mask => vocab.special.mask,
            Corruption::Random => vocab.random_id(rng),
            Corruption::Keep => id,
        };
        corruption[i] = Some(kind);
    }
    MlmExample {
        input: input.with_ids(ids),
        labels,
        active,
        corruption,
    }
}

/// Tallies from repeated masking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub maskable: u64,
    pub selected: u64,
    pub masked: u64,
    pub random: u64,
    pub kept: u64,
    /// Selected positions holding a special token or padding.
    pub special_violations: u64,
}

impl MaskStats {
    pub fn add(&mut self, original: &ModelInput, ex: &MlmExample, special: &SpecialIds) {
        for i in 0..original.len() {
            let id = original.seq.ids[i];
            let maskable = original.seq.attention[i] && !special.contains(id);
            if maskable {
                self.maskable += 1;
            }
            if !ex.active[i] {
                continue;
            }
            if !maskable {
                self.special_violations += 1;
            }
            self.selected += 1;
            match ex.corruption[i] {
                Some(Corruption::Mask) => self.masked += 1,
                Some(Corruption::Random) => self.random += 1,
                Some(Corruption::Keep) => self.kept += 1,
                None => {}
            }
        }
    }

    pub fn selection_rate(&self) -> f64 {
        self.selected as f64 / self.maskable.max(1) as f64
    }

    /// Shares of the mask, random and keep buckets among selected tokens.
    pub fn bucket_split(&self) -> [f64; 3] {
        let s = self.selected.max(1) as f64;
        [self.masked as f64 / s, self.random as f64 / s, self.kept as f64 / s]
    }
}
