//! Central finite-difference verification of tape gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Coordinates probed per parameter; every coordinate when the
    /// parameter is at most this large. Half are the largest analytic
    /// entries, half are drawn at random.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate, if any were checked.
    pub worst: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub loss: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(|p| !(p.max_rel_error < self.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let mark = if p.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{mark:4} {:<40} max_rel_err={:.3e} checked={} kinks_skipped={}",
                p.name, p.max_rel_error, p.checked, p.skipped_kinks
            )?;
        }
        write!(
            f,
            "{} (max {:.3e}, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Eval {
    loss: f64,
    relu: Vec<f64>,
}

fn evaluate<F>(store: &ParamStore, f: &mut F) -> Result<Eval>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let loss = tape.value(loss).item()?;
    let relu = tape.relu_inputs().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Eval { loss, relu })
}

/// Analytic gradients of `f` at the current parameter values.
pub fn analytic_gradients<F>(store: &ParamStore, f: &mut F) -> Result<(f64, Gradients)>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let value = tape.value(loss).item()?;
    Ok((value, tape.backward(loss)?))
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// `f` must be deterministic; two evaluations at the same point that do not
/// agree bit for bit produce [`Error::Determinism`].
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, cfg: &GradCheckConfig) -> Result<CheckReport>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let (_, grads) = analytic_gradients(store, &mut f)?;
    grad_check_against(store, f, &grads, cfg)
}

/// Like [`grad_check`] but against caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    store: &mut ParamStore,
    mut f: F,
    analytic: &Gradients,
    cfg: &GradCheckConfig,
) -> Result<CheckReport>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::Config(format!("grad check step must be > 0, got {}", cfg.step)));
    }
    let base = evaluate(store, &mut f)?;
    let again = evaluate(store, &mut f)?;
    if base.loss.to_bits() != again.loss.to_bits() {
        return Err(Error::Determinism {
            first: base.loss,
            second: again.loss,
        });
    }

    let h = cfg.step;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).value.len();
        let zeros;
        let grad = match analytic.get(id) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let coords = pick_coords(grad, cfg.coords_per_param, &mut rng);
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            skipped_kinks: 0,
        };
        for c in coords {
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + h;
            let plus = evaluate(store, &mut f);
            store.get_mut(id).value.data_mut()[c] = orig - h;
            let minus = evaluate(store, &mut f);
            store.get_mut(id).value.data_mut()[c] = orig;
            let (plus, minus) = (plus?, minus?);

            if near_kink(&base.relu, &plus.relu, &minus.relu, h) {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(grad[c], numeric);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            check.checked += 1;
            if check.worst.is_none() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = Some(c);
            }
        }
        params.push(check);
    }
    Ok(CheckReport {
        params,
        tolerance: cfg.tolerance,
        loss: base.loss,
    })
}

fn pick_coords(grad: &[f64], budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = grad.len();
    if n <= budget {
        return (0..n).collect();
    }
    let top = budget.div_ceil(2);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order[..top].to_vec();
    let rest = &order[top..];
    for i in sample(rng, rest.len(), budget - top) {
        picked.push(rest[i]);
    }
    picked
}

/// A coordinate sits near a ReLU kink if perturbing it moves some
/// pre-activation across zero, or moves one whose base magnitude is
/// under ten steps.
fn near_kink(base: &[f64], plus: &[f64], minus: &[f64], h: f64) -> bool {
    if base.len() != plus.len() || base.len() != minus.len() {
        return true;
    }
    base.iter().zip(plus).zip(minus).any(|((&b, &p), &m)| {
        if p == m {
            return false;
        }
        (p > 0.0) != (m > 0.0) || (p > 0.0) != (b > 0.0) || b.abs() < 10.0 * h
    })
}
