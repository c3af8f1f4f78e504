//! Central finite-difference checks for every differentiable tape operation.

use super::*;
use crate::error::Error;

const STEP: f64 = 1e-5;

/// Builds `f` on a fresh tape, projects the output onto fixed random weights,
/// and compares tape gradients against central differences for every input.
fn check<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let project = |tape: &mut Tape, out: Var| -> Var {
        let shape = tape.value(out).shape().to_vec();
        let w = Rng::new(seed ^ 0xabcd).uniform_tensor(&shape, -1.0, 1.0);
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let loss = project(&mut tape, out);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = project(&mut tape, out);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * STEP));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .data()
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt())
            .max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Rng::new(seed).uniform_tensor(shape, -1.0, 1.0)
}

#[test]
fn square_of_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.square(x);
    let grads = tape.backward(y).unwrap();
    assert_eq!(grads.get(x).data(), &[6.0]);
    assert_eq!(grads.get(y).data(), &[1.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn disconnected_parameters_get_zero() {
    let mut tape = Tape::new();
    let a = tape.param(rand(&[2, 3], 1));
    let b = tape.param(rand(&[3, 2], 2));
    let unused = tape.param(rand(&[4, 4], 3));
    let unused2 = tape.square(unused);
    let _ = tape.sum(unused2);
    let y = tape.matmul(a, b).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(unused).data().iter().all(|v| *v == 0.0));
    assert!(grads.get(a).data().iter().any(|v| *v != 0.0));
}

#[test]
fn matmul_sum_matches_finite_differences() {
    // loss = sum(W x): dloss/dW[i][j] = x[j] for every row i.
    let w = rand(&[3, 4], 10);
    let x = rand(&[4, 1], 11);
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.constant(x.clone());
    let y = tape.matmul(wv, xv).unwrap();
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap().get(wv);
    for i in 0..3 {
        for j in 0..4 {
            let mut plus = w.clone();
            plus.data_mut()[i * 4 + j] += STEP;
            let mut minus = w.clone();
            minus.data_mut()[i * 4 + j] -= STEP;
            let fd =
                (plus.matmul(&x).unwrap().sum() - minus.matmul(&x).unwrap().sum()) / (2.0 * STEP);
            let a = g.at(i, j);
            assert!((a - fd).abs() / fd.abs().max(1e-12) < 1e-6);
            assert!((a - x.data()[j]).abs() < 1e-14);
        }
    }
}

#[test]
fn elementwise_ops() {
    let x = rand(&[3, 5], 20);
    let y = rand(&[3, 5], 21);
    assert!(
        check(&[x.clone(), y.clone()], 2, |t, v| t
            .add(v[0], v[1])
            .unwrap())
            < 1e-5
    );
    assert!(
        check(&[x.clone(), y.clone()], 3, |t, v| t
            .mul(v[0], v[1])
            .unwrap())
            < 1e-5
    );
    assert!(check(&[x.clone()], 4, |t, v| t.scale(v[0], -2.5)) < 1e-5);
    assert!(check(&[x.clone()], 5, |t, v| t.square(v[0])) < 1e-5);
    assert!(check(&[x.clone()], 6, |t, v| t.gelu(v[0])) < 1e-5);
    // keep inputs away from the kink
    let shifted = Tensor::new(
        x.shape(),
        x.data()
            .iter()
            .map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v })
            .collect(),
    )
    .unwrap();
    assert!(check(&[shifted], 7, |t, v| t.relu(v[0])) < 1e-5);
    let mask: Vec<f64> = (0..15)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.25 })
        .collect();
    assert!(
        check(&[x.clone()], 8, move |t, v| t
            .mul_const(v[0], mask.clone())
            .unwrap())
            < 1e-5
    );
    assert!(
        check(&[x], 9, |t, v| {
            t.scale_shift_cols(
                v[0],
                &[1.0, 2.0, -1.0, 0.5, 3.0],
                &[0.1, 0.2, 0.3, 0.4, 0.5],
            )
            .unwrap()
        }) < 1e-5
    );
}

#[test]
fn matmul_both_sides() {
    let a = rand(&[4, 3], 30);
    let b = rand(&[3, 5], 31);
    assert!(check(&[a, b], 10, |t, v| t.matmul(v[0], v[1]).unwrap()) < 1e-5);
}

#[test]
fn broadcast_adds() {
    let x = rand(&[6, 4], 40);
    let bias = rand(&[4], 41);
    assert!(
        check(&[x.clone(), bias], 11, |t, v| t
            .add_row(v[0], v[1])
            .unwrap())
            < 1e-5
    );
    let table = rand(&[5, 4], 42);
    assert!(check(&[x, table], 12, |t, v| t.add_tiled(v[0], v[1], 3).unwrap()) < 1e-5);
}

#[test]
fn reductions_and_softmax() {
    let x = rand(&[3, 4], 50);
    assert!(check(&[x.clone()], 13, |t, v| t.softmax_rows(v[0])) < 1e-5);
    assert!(check(&[x.clone()], 14, |t, v| t.sum(v[0])) < 1e-5);
    let target = rand(&[3, 4], 51);
    assert!(check(&[x], 15, move |t, v| t.mse_loss(v[0], &target).unwrap()) < 1e-5);
}

#[test]
fn layer_norm_all_inputs() {
    let x = rand(&[4, 6], 60);
    let g = rand(&[6], 61);
    let b = rand(&[6], 62);
    assert!(
        check(&[x, g, b], 16, |t, v| t
            .layer_norm(v[0], v[1], v[2])
            .unwrap())
            < 1e-5
    );
}

#[test]
fn causal_attention_all_inputs() {
    let shape = AttentionShape {
        batch: 2,
        seq: 3,
        heads: 2,
    };
    let q = rand(&[6, 4], 70);
    let k = rand(&[6, 4], 71);
    let v = rand(&[6, 4], 72);
    let err = check(&[q, k, v], 17, move |t, x| {
        t.causal_attention(x[0], x[1], x[2], shape).unwrap()
    });
    assert!(err < 1e-5, "{err}");
}

#[test]
fn attention_probabilities_are_causal_rows() {
    let shape = AttentionShape {
        batch: 1,
        seq: 5,
        heads: 2,
    };
    let q = rand(&[5, 4], 80);
    let k = rand(&[5, 4], 81);
    let v = rand(&[5, 4], 82);
    let (_, probs) = causal_attention(&q, &k, &v, shape).unwrap();
    for h in 0..2 {
        for i in 0..5 {
            let row = &probs[(h * 5 + i) * 5..][..5];
            let total: f64 = row[..=i].iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|p| *p == 0.0));
        }
    }
}

#[test]
fn shared_subexpression_accumulates() {
    // loss = sum(x * x + x) -> dloss/dx = 2x + 1
    let x = rand(&[2, 3], 90);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.add(sq, xv).unwrap();
    let loss = tape.sum(s);
    let g = tape.backward(loss).unwrap().get(xv);
    for (gi, xi) in g.data().iter().zip(x.data()) {
        assert!((gi - (2.0 * xi + 1.0)).abs() < 1e-14);
    }
}
