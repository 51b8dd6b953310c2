//! Ratio-exact, stateless batch composition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::Format;

use super::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Plain : doc : web.
    pub ratio: [usize; 3],
    pub batch_size: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.ratio.iter().sum();
        if total == 0 {
            return Err(Error::Config("sampling ratio is all zero".into()));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(total) {
            return Err(Error::Config(format!(
                "batch size {} is not a positive multiple of ratio sum {total}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// Examples of each format in every batch.
    pub fn counts(&self) -> [usize; 3] {
        let total: usize = self.ratio.iter().sum();
        self.ratio.map(|r| self.batch_size * r / total.max(1))
    }
}

/// Draws batches as a pure function of the step. Each format walks its own
/// seeded permutation, reshuffled every epoch; formats interleave round-robin.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    sizes: [usize; 3],
    cache: [Option<(u64, Vec<usize>)>; 3],
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, sizes: [usize; 3]) -> Result<Self> {
        cfg.validate()?;
        for f in Format::ALL {
            if cfg.ratio[f.index()] > 0 && sizes[f.index()] == 0 {
                return Err(Error::Config(format!(
                    "format {f} has ratio {} but an empty corpus",
                    cfg.ratio[f.index()]
                )));
            }
        }
        Ok(Sampler {
            cfg,
            sizes,
            cache: [None, None, None],
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn permutation(&mut self, f: Format, epoch: u64) -> &[usize] {
        let slot = &mut self.cache[f.index()];
        if slot.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.sizes[f.index()]).collect();
            let seed = derive_seed(self.cfg.seed, &[0x5a3d, f.index() as u64, epoch]);
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            *slot = Some((epoch, perm));
        }
        &slot.as_ref().expect("filled above").1
    }

    /// `(format, corpus index)` pairs for batch `step`.
    pub fn batch(&mut self, step: u64) -> Vec<(Format, usize)> {
        let counts = self.cfg.counts();
        let mut per_format: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for f in Format::ALL {
            let c = counts[f.index()];
            let n = self.sizes[f.index()] as u64;
            for j in 0..c as u64 {
                let draw = step * c as u64 + j;
                let (epoch, pos) = (draw / n, (draw % n) as usize);
                let idx = self.permutation(f, epoch)[pos];
                per_format[f.index()].push(idx);
            }
        }
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        let mut cursor = [0usize; 3];
        while out.len() < self.cfg.batch_size {
            for f in Format::ALL {
                let k = f.index();
                if cursor[k] < per_format[k].len() {
                    out.push((f, per_format[k][cursor[k]]));
                    cursor[k] += 1;
                }
            }
        }
        out
    }
}

/// One batch without keeping a cache around.
pub fn sample_batch(sizes: [usize; 3], cfg: &SamplerConfig, step: u64) -> Result<Vec<(Format, usize)>> {
    Ok(Sampler::new(*cfg, sizes)?.batch(step))
}
