mod common;

use common::{distributions, matrix, max_abs_diff};
use proptest::prelude::*;
use was::numerics::{grad_check, kl_divergence, Tape, Tensor, Var};

const TOL: f64 = 1e-4;

fn assert_grad<F: Fn(&mut Tape, Var) -> Var>(f: F, point: &Tensor) {
    let report = grad_check(f, point, TOL);
    assert!(
        report.passed,
        "max relative error {:e} at {:?}; failed {:?}",
        report.max_rel_error, report.worst_index, report.failed
    );
}

/// Pushes entries at least `gap` away from zero so kinks stay out of the
/// finite-difference stencil.
fn away_from_zero(t: &Tensor, gap: f64) -> Tensor {
    t.map(|x| if x >= 0.0 { x + gap } else { x - gap })
}

/// Scalar read-out `Σ w ⊙ x` with fixed irregular weights, so that every
/// entry of `x` influences the loss differently.
fn readout(tape: &mut Tape, x: Var) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let len: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..len).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(x, w);
    tape.sum(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_gradients(a in matrix(3, 4), b in matrix(4, 2)) {
        assert_grad(|t, x| { let b = t.constant(b.clone()); let y = t.matmul(x, b); readout(t, y) }, &a);
        assert_grad(|t, x| { let a = t.constant(a.clone()); let y = t.matmul(a, x); readout(t, y) }, &b);
    }

    #[test]
    fn elementwise_gradients(a in matrix(3, 3), b in matrix(3, 3), row in prop::collection::vec(-1.0..1.0f64, 3)) {
        let row = Tensor::vector(row);
        assert_grad(|t, x| { let b = t.constant(b.clone()); let y = t.add(x, b); readout(t, y) }, &a);
        assert_grad(|t, x| { let b = t.constant(b.clone()); let y = t.sub(b, x); readout(t, y) }, &a);
        assert_grad(|t, x| { let b = t.constant(b.clone()); let y = t.mul(x, b); readout(t, y) }, &a);
        assert_grad(|t, x| { let r = t.constant(row.clone()); let y = t.mul_row(x, r); readout(t, y) }, &a);
        assert_grad(|t, x| { let m = t.constant(a.clone()); let y = t.mul_row(m, x); readout(t, y) }, &row);
        assert_grad(|t, x| { let m = t.constant(a.clone()); let y = t.add_row(m, x); readout(t, y) }, &row);
        assert_grad(|t, x| { let y = t.scale(x, -1.7); let y = t.add_scalar(y, 0.3); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.transpose(x); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.sigmoid(x); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.relu(x); readout(t, y) }, &away_from_zero(&a, 1e-3));
    }

    #[test]
    fn reduction_and_layout_gradients(a in matrix(4, 3), b in matrix(4, 2)) {
        assert_grad(|t, x| { let y = t.row_sum(x); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.mean(x); let w = t.constant(Tensor::scalar(2.5)); let y = t.mul(y, w); t.sum(y) }, &a);
        assert_grad(|t, x| { let y = t.gather_rows(x, &[3, 0, 3]); readout(t, y) }, &a);
        assert_grad(|t, x| { let b = t.constant(b.clone()); let y = t.concat_cols(x, b); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.sigmoid(x); let y = t.add_scalar(y, 0.1); let y = t.log(y); readout(t, y) }, &a);
    }

    #[test]
    fn softmax_family_gradients(a in matrix(3, 4), temp in 0.5..2.0f64) {
        assert_grad(|t, x| { let y = t.softmax(x, temp); readout(t, y) }, &a);
        assert_grad(|t, x| { let y = t.log_softmax(x, temp); readout(t, y) }, &a);
        assert_grad(|t, x| t.cross_entropy(x, &[1, 3], &[0, 2]), &a);
    }

    #[test]
    fn distillation_loss_gradients(a in matrix(3, 4), target in distributions(3, 4), temp in 0.5..2.0f64) {
        assert_grad(|t, x| t.kl_div(&target, x, temp), &a);
        assert_grad(|t, x| { let p = t.softmax(x, 1.0); t.nll_prob(p, &[0, 3, 1], &[0, 1, 2]) }, &a);
        let labels = a.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        assert_grad(|t, x| t.bce_with_logits(x, &labels), &a);
        assert_grad(|t, x| t.squared_error(x, &target), &a);
    }

    #[test]
    fn selection_op_gradients(z in matrix(3, 4), w in distributions(3, 4), comps in distributions(12, 3)) {
        let comps = comps.reshape(&[4, 3, 3]);
        let mask = Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]]);
        assert_grad(|t, x| { let m = t.constant(mask.clone()); let y = t.weighted_softmax(x, m); readout(t, y) }, &z);
        assert_grad(|t, x| { let z = t.constant(z.clone()); let y = t.weighted_softmax(z, x); readout(t, y) }, &w);
        assert_grad(|t, x| { let y = t.mix(x, &comps); readout(t, y) }, &w);
        assert_grad(|t, x| { let y = t.sigmoid(x); let y = t.row_max_normalize(y); readout(t, y) }, &z);
    }

    #[test]
    fn softmax_rows_are_distributions(a in matrix(5, 6), temp in 0.1..5.0f64) {
        let s = a.map(|x| x * 30.0).softmax_rows(temp);
        for r in 0..s.rows() {
            prop_assert!(s.row(r).iter().all(|&p| p >= 0.0));
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_on_equality(p in distributions(1, 5), q in distributions(1, 5)) {
        let kl = kl_divergence(p.row(0), q.row(0));
        prop_assert!(kl >= 0.0);
        prop_assert!(kl_divergence(p.row(0), p.row(0)).abs() < 1e-9);
        if max_abs_diff(p.row(0), q.row(0)) > 1e-3 {
            prop_assert!(kl > 1e-9);
        }
    }
}

#[test]
fn softmax_cross_entropy_gradient_is_softmax_minus_one_hot() {
    let z = Tensor::from_rows(&[vec![0.2, -1.3, 0.7], vec![1.1, 0.0, -0.4]]);
    let mut tape = Tape::new();
    let x = tape.param(z.clone());
    let loss = tape.cross_entropy(x, &[2, 0], &[0, 1]);
    let g = tape.backward(loss).unwrap();
    let p = z.softmax_rows(1.0);
    // mean over two rows halves the per-row gradient
    let mut expected = p.map(|v| v / 2.0);
    expected.set(0, 2, expected.at(0, 2) - 0.5);
    expected.set(1, 0, expected.at(1, 0) - 0.5);
    assert!(max_abs_diff(g.get(x).unwrap().data(), expected.data()) < 1e-15);

    // and the same against central differences
    let report = grad_check(|t, x| t.cross_entropy(x, &[2, 0], &[0, 1]), &z, TOL);
    assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
}

#[test]
fn identical_computations_are_bitwise_identical() {
    let run = || {
        let a = Tensor::matrix(4, 4, (0..16).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.5).collect());
        let mut tape = Tape::new();
        let x = tape.param(a.clone());
        let y = tape.matmul(x, x);
        let y = tape.softmax(y, 1.3);
        let loss = tape.kl_div(&a.softmax_rows(1.0), y, 0.7);
        let g = tape.backward(loss).unwrap();
        (tape.value(loss).item().to_bits(), g.get(x).unwrap().to_le_bytes())
    };
    assert_eq!(run(), run());
}
