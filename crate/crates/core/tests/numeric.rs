//! Numeric core checked against independent oracles: naive loops, direct
//! formulas and central finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdoc::numeric::{
    analytic_gradients, grad_check, grad_check_against, masked_softmax, GradCheckConfig, Group,
    ParamId, ParamStore, Tape, Tensor,
};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(&[i, p]) * b.get(&[p, j]);
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Central difference of `f` with respect to one coordinate of one parameter.
fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    coord: usize,
    h: f64,
    f: &dyn Fn(&mut Tape) -> xdoc::Result<xdoc::numeric::Var>,
) -> f64 {
    let eval = |s: &ParamStore| {
        let mut t = Tape::new(s);
        let l = f(&mut t).unwrap();
        t.value(l).item().unwrap()
    };
    let orig = store.value(id).data()[coord];
    store.get_mut(id).value.data_mut()[coord] = orig + h;
    let p = eval(store);
    store.get_mut(id).value.data_mut()[coord] = orig - h;
    let m = eval(store);
    store.get_mut(id).value.data_mut()[coord] = orig;
    (p - m) / (2.0 * h)
}

#[test]
fn matmul_matches_worked_example_and_naive_loops() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
    assert_eq!(naive_matmul(&a, &b), vec![19.0, 22.0, 43.0, 50.0]);
    assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, &[5, 7]);
    let b = random_tensor(&mut rng, &[7, 3]);
    let got = a.matmul(&b).unwrap();
    for (x, y) in got.data().iter().zip(naive_matmul(&a, &b)) {
        assert!((x - y).abs() < 1e-13);
    }
}

#[test]
fn softmax_matches_exp_over_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[4, 9]).map(|v| 5.0 * v);
    let mask: Vec<bool> = (0..36).map(|i| i % 9 != 3 && i % 5 != 0).collect();
    let y = masked_softmax(&x, &mask).unwrap();
    for r in 0..4 {
        let z: f64 = (0..9)
            .filter(|&c| mask[r * 9 + c])
            .map(|c| x.get(&[r, c]).exp())
            .sum();
        for c in 0..9 {
            let want = if mask[r * 9 + c] { x.get(&[r, c]).exp() / z } else { 0.0 };
            assert!((y.get(&[r, c]) - want).abs() < 1e-12);
            if !mask[r * 9 + c] {
                assert_eq!(y.get(&[r, c]).to_bits(), 0f64.to_bits());
            }
        }
    }
}

#[test]
fn layer_norm_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[3, 6]);
    let gamma = random_tensor(&mut rng, &[6]);
    let beta = random_tensor(&mut rng, &[6]);
    let mut store = ParamStore::new();
    let g = store.insert("g", Group::Shared, false, gamma.clone()).unwrap();
    let b = store.insert("b", Group::Shared, false, beta.clone()).unwrap();
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x.clone());
    let (gv, bv) = (tape.param(g), tape.param(b));
    let y = tape.layer_norm(xv, gv, bv, 1e-5).unwrap();
    for r in 0..3 {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        for c in 0..6 {
            let want = (row[c] - mean) / (var + 1e-5).sqrt() * gamma.data()[c] + beta.data()[c];
            assert!((tape.value(y).get(&[r, c]) - want).abs() < 1e-12);
        }
    }

    // zero-mean unit-variance row is unchanged up to the eps effect
    let unit = Tensor::from_rows(&[vec![1.0, -1.0, 1.0, -1.0]]);
    let mut store = ParamStore::new();
    let g = store.insert("g", Group::Shared, false, Tensor::full(&[4], 1.0)).unwrap();
    let b = store.insert("b", Group::Shared, false, Tensor::zeros(&[4])).unwrap();
    let mut tape = Tape::new(&store);
    let xv = tape.constant(unit.clone());
    let (gv, bv) = (tape.param(g), tape.param(b));
    let y = tape.layer_norm(xv, gv, bv, 1e-5).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(unit.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn cross_entropy_matches_per_position_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random_tensor(&mut rng, &[5, 11]).map(|v| 3.0 * v);
    let targets = [3, 0, 10, 7, 7];
    let active = [true, false, true, true, false];
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let lv = tape.constant(logits.clone());
    let loss = tape.masked_cross_entropy(lv, &targets, &active).unwrap();
    let mut want = 0.0;
    for i in [0, 2, 3] {
        let row = logits.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[targets[i]].exp() / z).ln();
    }
    want /= 3.0;
    assert!((tape.value(loss).item().unwrap() - want).abs() < 1e-12);

    // strongly peaked logits give near-zero loss
    let mut peaked = Tensor::zeros(&[2, 4]);
    peaked.set(&[0, 1], 60.0);
    peaked.set(&[1, 2], 60.0);
    let mut tape = Tape::new(&store);
    let lv = tape.constant(peaked);
    let loss = tape.masked_cross_entropy(lv, &[1, 2], &[true, true]).unwrap();
    assert!(tape.value(loss).item().unwrap() < 1e-20);
}

#[test]
fn inactive_positions_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let id = store
        .insert("logits", Group::Shared, true, random_tensor(&mut rng, &[3, 4]))
        .unwrap();
    let (_, grads) = analytic_gradients(&store, &mut |t: &mut Tape| {
        let l = t.param(id);
        t.masked_cross_entropy(l, &[0, 1, 2], &[true, false, true])
    })
    .unwrap();
    assert!(grads.get(id).unwrap().row(1).iter().all(|&g| g == 0.0));
}

#[test]
fn duplicated_gather_doubles_the_gradient_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let table = store
        .insert("table", Group::Shared, true, random_tensor(&mut rng, &[5, 3]))
        .unwrap();
    let weights = random_tensor(&mut rng, &[3, 1]);
    let f = move |t: &mut Tape| {
        let tb = t.param(table);
        let rows = t.gather_rows(tb, &[3, 3])?;
        let w = t.constant(weights.clone());
        let y = t.matmul(rows, w)?;
        Ok(t.sum(y))
    };
    let (_, grads) = analytic_gradients(&store, &mut |t: &mut Tape| f(t)).unwrap();
    let g = grads.get(table).unwrap().clone();
    for c in 0..3 {
        let fd = central_difference(&mut store, table, 3 * 3 + c, 1e-6, &f);
        assert!((g.get(&[3, c]) - fd).abs() < 1e-8);
    }
    // a single lookup gives half of that
    let (_, single) = analytic_gradients(&store, &mut |t: &mut Tape| {
        let tb = t.param(table);
        let rows = t.gather_rows(tb, &[3])?;
        let w = t.constant(Tensor::full(&[3, 1], 1.0));
        let y = t.matmul(rows, w)?;
        Ok(t.sum(y))
    })
    .unwrap();
    assert_eq!(single.get(table).unwrap().row(3), &[1.0, 1.0, 1.0]);
    assert!(g.row(0).iter().all(|&x| x == 0.0));
}

#[test]
fn composed_matmul_relu_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let w1 = store.insert("w1", Group::Shared, true, random_tensor(&mut rng, &[4, 6])).unwrap();
    let w2 = store.insert("w2", Group::Shared, true, random_tensor(&mut rng, &[6, 2])).unwrap();
    let x = random_tensor(&mut rng, &[3, 4]);
    let f = move |t: &mut Tape| {
        let xv = t.constant(x.clone());
        let a = t.param(w1);
        let b = t.param(w2);
        let h = t.matmul(xv, a)?;
        let h = t.relu(h);
        let y = t.matmul(h, b)?;
        Ok(t.sum(y))
    };
    let (_, grads) = analytic_gradients(&store, &mut |t: &mut Tape| f(t)).unwrap();
    for id in [w1, w2] {
        let g = grads.get(id).unwrap().clone();
        for c in 0..g.len() {
            let fd = central_difference(&mut store, id, c, 1e-6, &f);
            let rel = (g.data()[c] - fd).abs() / g.data()[c].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-6, "{id:?}[{c}]: {} vs {fd}", g.data()[c]);
        }
    }
}

#[test]
fn linear_function_checks_to_machine_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let w = store.insert("w", Group::Shared, true, random_tensor(&mut rng, &[3, 3])).unwrap();
    let c = random_tensor(&mut rng, &[3, 3]);
    let report = grad_check(
        &mut store,
        |t| {
            let wv = t.param(w);
            let y = t.mul_const(wv, c.clone())?;
            Ok(t.sum(y))
        },
        &GradCheckConfig {
            coords_per_param: 9,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed());
    assert!(report.max_rel_error() < 1e-9, "{report}");
}

#[test]
fn corrupted_adjoint_fails_exactly_that_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let a = store.insert("a", Group::Shared, true, random_tensor(&mut rng, &[3, 4])).unwrap();
    let b = store.insert("b", Group::Shared, true, random_tensor(&mut rng, &[4, 2])).unwrap();
    let gamma = store.insert("gamma", Group::Shared, false, Tensor::full(&[2], 1.0)).unwrap();
    let beta = store.insert("beta", Group::Shared, false, Tensor::zeros(&[2])).unwrap();
    let mut f = |t: &mut Tape| {
        let (av, bv) = (t.param(a), t.param(b));
        let h = t.matmul(av, bv)?;
        let h = t.gelu(h);
        let (g, be) = (t.param(gamma), t.param(beta));
        let h = t.layer_norm(h, g, be, 1e-5)?;
        t.masked_cross_entropy(h, &[0, 1, 1], &[true, true, true])
    };
    let (_, mut grads) = analytic_gradients(&store, &mut f).unwrap();
    let cfg = GradCheckConfig {
        coords_per_param: 12,
        ..Default::default()
    };
    let clean = grad_check_against(&mut store, &mut f, &grads, &cfg).unwrap();
    assert!(clean.passed(), "{clean}");

    grads.get_mut(b).unwrap().data_mut()[5] *= 1.5;
    let report = grad_check_against(&mut store, &mut f, &grads, &cfg).unwrap();
    let failed: Vec<_> = report.failures().map(|p| p.name.as_str()).collect();
    assert_eq!(failed, vec!["b"]);
    assert_eq!(report.params[1].worst, Some(5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(
        vals in prop::collection::vec(-30.0f64..30.0, 1..40),
        keep in prop::collection::vec(any::<bool>(), 40),
    ) {
        let n = vals.len();
        let mut mask = keep[..n].to_vec();
        mask[n / 2] = true;
        let x = Tensor::vector(vals);
        let y = masked_softmax(&x, &mask).unwrap();
        prop_assert!((y.sum() - 1.0).abs() < 1e-12);
        for (v, m) in y.data().iter().zip(&mask) {
            if *m { prop_assert!(*v > 0.0) } else { prop_assert_eq!(v.to_bits(), 0u64) }
        }
    }

    #[test]
    fn gather_backward_conserves_mass(
        ids in prop::collection::vec(0usize..6, 0..20),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let t = store.insert("t", Group::Shared, true, random_tensor(&mut rng, &[6, 3])).unwrap();
        let up = random_tensor(&mut rng, &[ids.len(), 3]);
        let (_, grads) = analytic_gradients(&store, &mut |tape: &mut Tape| {
            let tv = tape.param(t);
            let rows = tape.gather_rows(tv, &ids)?;
            let y = tape.mul_const(rows, up.clone())?;
            Ok(tape.sum(y))
        }).unwrap();
        let got = grads.get(t).map_or(0.0, |g| g.sum());
        prop_assert!((got - up.sum()).abs() < 1e-12);
    }

    #[test]
    fn ops_are_bit_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tensor(&mut rng, &[4, 5]);
            let b = random_tensor(&mut rng, &[5, 4]);
            let store = ParamStore::new();
            let mut tape = Tape::new(&store);
            let (av, bv) = (tape.constant(a), tape.constant(b));
            let c = tape.matmul(av, bv).unwrap();
            let s = tape.masked_softmax(c, &[true; 16]).unwrap();
            let g = tape.gelu(s);
            tape.value(g).clone()
        };
        prop_assert!(run().bit_eq(&run()));
    }
}
