//! Small parameter bundles shared by the embedding branches and the encoder.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{Group, Init, ParamId, ParamStore, Tape, Var};

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn declare<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.declare(
            format!("{name}.weight"),
            group,
            true,
            &[in_dim, out_dim],
            Init::Normal { std },
            rng,
        )?;
        let bias = Some(store.declare(format!("{name}.bias"), group, false, &[out_dim], Init::Zeros, rng)?);
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Linear map without the bias vector.
    pub fn declare_unbiased<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.declare(
            format!("{name}.weight"),
            group,
            true,
            &[in_dim, out_dim],
            Init::Normal { std },
            rng,
        )?;
        Ok(Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        })
    }

    pub fn numel(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// LayerNorm scale and shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps_bits: u64,
}

impl Norm {
    pub fn declare<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        dim: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let gamma = store.declare(format!("{name}.gamma"), group, false, &[dim], Init::Ones, rng)?;
        let beta = store.declare(format!("{name}.beta"), group, false, &[dim], Init::Zeros, rng)?;
        Ok(Norm {
            gamma,
            beta,
            eps_bits: eps.to_bits(),
        })
    }

    pub fn eps(&self) -> f64 {
        f64::from_bits(self.eps_bits)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, self.eps())
    }
}

/// Inverted dropout driven by its own seeded stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    rng: rand_chacha::ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        Dropout {
            p,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Zeroes each entry with probability `p` and rescales the survivors.
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.p);
        let shape = tape.shape(x).to_vec();
        let mut mask = crate::numeric::Tensor::zeros(&shape);
        for m in mask.data_mut() {
            *m = if self.rng.random::<f64>() < self.p { 0.0 } else { keep };
        }
        tape.mul_const(x, mask)
    }
}
