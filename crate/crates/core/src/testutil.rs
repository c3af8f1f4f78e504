//! Shared fixtures for unit tests.

use crate::dataset::Normalizer;
use crate::numerics::{BoundParams, ParamSet, Tape, Var};

pub fn normalizer() -> Normalizer {
    Normalizer {
        state_mean: vec![0.3, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0],
        state_std: vec![0.1, 0.15, 0.15, 2.9, 2.9, 2.9, 2.9],
        goal_mean: vec![0.3, 0.0, 0.0],
        goal_std: vec![0.1, 0.15, 0.15],
        force_mean: vec![5.0, 4.0, 6.0, 5.5],
        force_std: vec![2.9, 2.8, 3.0, 2.7],
    }
}

/// Relative error (global 2-norm) between tape gradients of a scalar loss and
/// central differences over every parameter scalar.
pub fn param_gradcheck<F>(params: &ParamSet, loss: F) -> f64
where
    F: Fn(&mut Tape, &BoundParams) -> Var,
{
    let value = |p: &ParamSet| {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let l = loss(&mut tape, &bound);
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let l = loss(&mut tape, &bound);
    let grads = tape.backward(l).unwrap();

    let h = 1e-6;
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    let mut work = params.clone();
    for (t, var) in bound.vars().iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..analytic.len() {
            let orig = work.tensors()[t].data()[j];
            work.tensors_mut()[t].data_mut()[j] = orig + h;
            let plus = value(&work);
            work.tensors_mut()[t].data_mut()[j] = orig - h;
            let minus = value(&work);
            work.tensors_mut()[t].data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            diff += (a - n) * (a - n);
            norm_a += a * a;
            norm_n += n * n;
        }
    }
    diff.sqrt() / f64::max(norm_a.sqrt().max(norm_n.sqrt()), 1e-12)
}
