//! Binary snapshots: little-endian, length-prefixed, CRC32-terminated.

use std::path::Path;

use crate::error::{Error, Result};
use std::collections::HashMap;

use crate::numeric::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"XDOCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One parameter with its optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    /// The training configuration as TOML.
    pub config: String,
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    pub curve: Vec<LossPoint>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Copies parameter values into `store`. Names must match one to one and
    /// shapes must agree; nothing is written unless every check passes.
    pub fn load_params_into(&self, store: &mut ParamStore) -> Result<()> {
        let by_name: HashMap<&str, &ParamRecord> = self.params.iter().map(|r| (r.name.as_str(), r)).collect();
        for (_, p) in store.iter() {
            let rec = by_name.get(p.name.as_str()).ok_or_else(|| Error::CheckpointMismatch {
                name: p.name.clone(),
                message: "missing from checkpoint".into(),
            })?;
            if rec.value.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch {
                    name: p.name.clone(),
                    message: format!(
                        "shape {:?} in checkpoint, {:?} in model",
                        rec.value.shape(),
                        p.value.shape()
                    ),
                });
            }
        }
        if let Some(extra) = self.params.iter().find(|r| store.id(&r.name).is_none()) {
            return Err(Error::CheckpointMismatch {
                name: extra.name.clone(),
                message: "not present in the model".into(),
            });
        }
        for rec in &self.params {
            let id = store.id(&rec.name).expect("checked above");
            store.get_mut(id).value = rec.value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut w, &self.config);
        put_u64(&mut w, self.step);
        put_u64(&mut w, self.seed);
        put_u64(&mut w, self.curve.len() as u64);
        for p in &self.curve {
            put_u64(&mut w, p.step);
            put_f64(&mut w, p.loss);
            put_f64(&mut w, p.lr);
        }
        put_u64(&mut w, self.params.len() as u64);
        for p in &self.params {
            put_str(&mut w, &p.name);
            put_u64(&mut w, p.value.rank() as u64);
            for &d in p.value.shape() {
                put_u64(&mut w, d as u64);
            }
            put_u64(&mut w, p.t);
            for t in [&p.value, &p.m, &p.v] {
                for &x in t.data() {
                    put_f64(&mut w, x);
                }
            }
        }
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::CheckpointCorrupt("missing header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != crc {
            return Err(Error::CheckpointCorrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let config = r.string()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let n_curve = r.len(24)?;
        let mut curve = Vec::with_capacity(n_curve);
        for _ in 0..n_curve {
            curve.push(LossPoint {
                step: r.u64()?,
                loss: r.f64()?,
                lr: r.f64()?,
            });
        }
        let n_params = r.len(16)?;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.len(8)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let t = r.u64()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::CheckpointCorrupt(format!("oversized tensor {name}")))?;
            let mut tensor = || -> Result<Tensor> {
                let mut data = Vec::with_capacity(numel.min(r.remaining() / 8));
                for _ in 0..numel {
                    data.push(r.f64()?);
                }
                Tensor::new(shape.clone(), data)
            };
            let value = tensor()?;
            let m = tensor()?;
            let v = tensor()?;
            params.push(ParamRecord { name, value, m, v, t });
        }
        if r.pos != body.len() {
            return Err(Error::CheckpointCorrupt("trailing bytes".into()));
        }
        Ok(Checkpoint {
            version,
            config,
            step,
            seed,
            curve,
            params,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_u64(w: &mut Vec<u8>, x: u64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, x: f64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u64(w, s.len() as u64);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(Error::CheckpointCorrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// A count whose items need at least `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.remaining() / unit) as u64 {
            return Err(Error::CheckpointCorrupt(format!("implausible count {n}")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointCorrupt("name is not UTF-8".into()))
    }
}
