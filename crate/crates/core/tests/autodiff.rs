use proptest::prelude::*;
use udalab::autodiff::{Array, Tape, Var};
use udalab::losses::*;

/// Central-difference gradient of `f` at `x`.
fn numeric_grad(x: &Array, f: &dyn Fn(&Array) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|k| {
            let (mut up, mut down) = (x.clone(), x.clone());
            up.data_mut()[k] += h;
            down.data_mut()[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    for (a, n) in analytic.iter().zip(numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel < 1e-5, "analytic {a} numeric {n}");
    }
}

fn array(rows: usize, cols: usize) -> impl Strategy<Value = Array> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Array::new(rows, cols, d).unwrap())
}

/// `sum(log(softmax(x W)) * sigmoid(x W)) + mean(exp(row_outer(x, x W) / 4))`.
fn composite(tape: &mut Tape, x: Var, w: Var) -> Var {
    let h = tape.matmul(x, w).unwrap();
    let p = tape.softmax_rows(h);
    let lp = tape.log(p).unwrap();
    let s = tape.sigmoid(h);
    let a = tape.mul(lp, s).unwrap();
    let a = tape.sum(a);
    let o = tape.row_outer(x, h).unwrap();
    let o = tape.scale(o, 0.25);
    let e = tape.exp(o).unwrap();
    let b = tape.mean(e);
    tape.add(a, b).unwrap()
}

fn eval_composite(x: &Array, w: &Array) -> f64 {
    let mut t = Tape::new();
    let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
    let out = composite(&mut t, xv, wv);
    t.value(out).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composite_graph_matches_finite_differences(x in array(3, 2), w in array(2, 3)) {
        let mut t = Tape::new();
        let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
        let out = composite(&mut t, xv, wv);
        prop_assert!(t.is_topological());
        t.backward(out).unwrap();
        assert_close(t.grad(wv).data(), &numeric_grad(&w, &|w| eval_composite(&x, w)));
        assert_close(t.grad(xv).data(), &numeric_grad(&x, &|x| eval_composite(x, &w)));
    }

    #[test]
    fn reversal_is_identity_forward_and_negated_backward(x in array(2, 3), s in 0.0f64..3.0) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let r = t.gradient_reversal(xv, s).unwrap();
        prop_assert_eq!(t.value(r), &x);
        let sq = t.mul(r, r).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        for (g, v) in t.grad(xv).data().iter().zip(x.data()) {
            prop_assert!((g + s * 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalized_weights_have_mean_one(logits in prop::collection::vec(-20.0f64..20.0, 1..40), tau in 1.0f64..10.0) {
        let mode = WeightingMode { kind: WeightKind::Relaxed { tau }, renormalize: true };
        let w = mode.weights(&logits).unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weights_are_the_odds_ratio(logit in -30.0f64..30.0, tau in 1.0f64..8.0) {
        let s = 1.0 / (1.0 + (-logit / tau).exp());
        let w = weights_from_discriminator(&[logit], tau).unwrap()[0];
        prop_assert!((w - (1.0 - s) / s).abs() <= 1e-9 * w.max(1.0));
    }
}

#[test]
fn detached_nodes_block_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Array::new(1, 2, vec![0.3, -0.4]).unwrap());
    let d = t.detach(x);
    let y = t.mul(x, d).unwrap();
    let loss = t.sum(y);
    t.backward(loss).unwrap();
    // d(x * stop(x))/dx = stop(x)
    assert_eq!(t.grad(x).data(), &[0.3, -0.4]);
}

#[test]
fn backward_rejects_non_scalar_roots() {
    let mut t = Tape::new();
    let x = t.leaf(Array::zeros(2, 2));
    assert!(t.backward(x).is_err());
}

#[test]
fn negative_reversal_strength_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Array::zeros(1, 1));
    assert!(t.gradient_reversal(x, -1.0).is_err());
}

#[test]
fn inv_loss_matches_hand_value() {
    let mut t = Tape::new();
    let s = t.leaf(Array::column(vec![0.8, 0.6]).unwrap());
    let g = t.leaf(Array::column(vec![0.3]).unwrap());
    let l = loss_inv_weighted(&mut t, s, g, Some(&[2.0, 0.5])).unwrap();
    let want = -(2.0 * 0.8f64.ln() + 0.5 * 0.6f64.ln()) / 2.0 - (0.7f64).ln();
    assert!((t.value(l).item() - want).abs() < 1e-14);
}

#[test]
fn inv_loss_clamps_saturated_discriminators() {
    let mut t = Tape::new();
    let s = t.leaf(Array::column(vec![0.0]).unwrap());
    let g = t.leaf(Array::column(vec![1.0]).unwrap());
    let l = loss_inv(&mut t, s, g).unwrap();
    let want = -2.0 * PROB_EPS.ln();
    assert!((t.value(l).item() - want).abs() < 1e-9);
}

#[test]
fn tsf_loss_leaves_soft_labels_untouched() {
    let mut t = Tape::new();
    let dd_s = t.leaf(Array::new(1, 2, vec![0.6, 0.3]).unwrap());
    let dd_t = t.leaf(Array::new(1, 2, vec![0.2, 0.5]).unwrap());
    let g_s = t.leaf(Array::new(1, 2, vec![0.9, 0.1]).unwrap());
    let g_t = t.leaf(Array::new(1, 2, vec![0.4, 0.6]).unwrap());
    let l = loss_tsf(&mut t, dd_s, dd_t, g_s, g_t, &[1.5]).unwrap();
    let want =
        -1.5 * (0.9 * 0.6f64.ln() + 0.1 * 0.3f64.ln()) - (0.4 * 0.8f64.ln() + 0.6 * 0.5f64.ln());
    assert!((t.value(l).item() - want).abs() < 1e-14);
    t.backward(l).unwrap();
    assert!(t
        .grad(g_s)
        .data()
        .iter()
        .chain(t.grad(g_t).data())
        .all(|&v| v == 0.0));
    assert!(t.grad(dd_s).data().iter().any(|&v| v != 0.0));
}

#[test]
fn classification_loss_weights_rows() {
    let mut t = Tape::new();
    let g = t.leaf(Array::new(2, 2, vec![0.7, 0.3, 0.2, 0.8]).unwrap());
    let y = Array::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let l = loss_cls(&mut t, g, &y, &[1.0, 3.0]).unwrap();
    let want = -(0.7f64.ln() + 3.0 * 0.2f64.ln()) / 2.0;
    assert!((t.value(l).item() - want).abs() < 1e-14);
}

#[test]
fn zero_weight_sum_is_degenerate() {
    assert!(renormalize_weights(&[0.0, 0.0]).is_err());
    assert!(weights_from_discriminator(&[0.0], 0.5).is_err());
}
