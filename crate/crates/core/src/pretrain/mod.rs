//! Masked-language-model pre-training: corruption, schedule, optimizer,
//! sampling, the training loop and checkpoints.

mod checkpoint;
mod mask;
mod optim;
mod sampler;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, LossPoint, ParamRecord, CHECKPOINT_VERSION,
};
pub use mask::{
    apply_mlm_mask, Corruption, MaskConfig, MaskStats, MaskVocab, MlmExample, IGNORE,
};
pub use optim::{lr_at_step, AdamW, Decay, OptimizerState};
pub use sampler::{sample_batch, Sampler, SamplerConfig};
pub use trainer::{write_loss_csv, CorpusPaths, TrainConfig, Trainer};

/// Mixes a base seed with a path of integers into an independent stream seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
