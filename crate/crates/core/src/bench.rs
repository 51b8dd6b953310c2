//! Wall-time split between the adaptive layers and the rest of a forward pass.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::Result;
use crate::input::ModelInput;
use crate::model::{ForwardCtx, XDocModel};
use crate::numeric::{ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeReport {
    pub batches: usize,
    pub batch_size: usize,
    /// Mean wall time of a full forward batch, milliseconds.
    pub total_ms: f64,
    /// Mean time spent inside adaptive layers per batch, milliseconds.
    pub adaptive_ms: f64,
}

impl TimeReport {
    pub fn adaptive_fraction(&self) -> f64 {
        if self.total_ms > 0.0 {
            self.adaptive_ms / self.total_ms
        } else {
            0.0
        }
    }
}

/// Runs forward passes over `inputs` in consecutive batches, timing each
/// batch end to end and the adaptive layers separately.
pub fn time_forward(
    model: &XDocModel,
    store: &ParamStore,
    inputs: &[ModelInput],
    batch_size: usize,
    batches: usize,
) -> Result<TimeReport> {
    let batch_size = batch_size.max(1);
    let mut total = Duration::ZERO;
    let mut adaptive = Duration::ZERO;
    for b in 0..batches {
        let mut ctx = ForwardCtx::eval().timed();
        let start = Instant::now();
        for k in 0..batch_size {
            if inputs.is_empty() {
                break;
            }
            let input = &inputs[(b * batch_size + k) % inputs.len()];
            let mut tape = Tape::new(store);
            model.logits(&mut tape, input, &mut ctx)?;
        }
        total += start.elapsed();
        adaptive += ctx.adaptive_time;
    }
    let n = batches.max(1) as f64;
    Ok(TimeReport {
        batches,
        batch_size,
        total_ms: total.as_secs_f64() * 1e3 / n,
        adaptive_ms: adaptive.as_secs_f64() * 1e3 / n,
    })
}
