use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for every parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.first[i]) {
            return Err(Error::dim(format!(
                "parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((w, &gr), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gr;
            *vi = beta2 * *vi + (1.0 - beta2) * gr * gr;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(w: f64) -> (Vec<Tensor>, AdamState) {
        let params = vec![Tensor::scalar(w)];
        let state = AdamState::new(&params, AdamConfig::default());
        (params, state)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, mut s) = scalar_state(1.5);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s, 0.1).unwrap();
        assert_eq!(p[0].data()[0], 1.5);
    }

    #[test]
    fn one_step_descends_quadratic() {
        let (mut p, mut s) = scalar_state(1.0);
        let g = 2.0 * p[0].data()[0];
        adam_step(&mut p, &[Tensor::scalar(g)], &mut s, 0.01).unwrap();
        let w = p[0].data()[0];
        assert!(w * w < 1.0);
    }

    #[test]
    fn three_steps_match_hand_trace() {
        // f(w) = w^2 from w = 1 with lr = 0.1, stepped by hand (outside this crate).
        // Step 1 is 1 - 0.1 * 2 / (2 + 1e-8).
        let expected = [
            0.900_000_000_5,
            0.800_412_228_691_792_8,
            0.701_586_272_946_030_3,
        ];
        let (mut p, mut s) = scalar_state(1.0);
        for want in expected {
            let g = 2.0 * p[0].data()[0];
            adam_step(&mut p, &[Tensor::scalar(g)], &mut s, 0.1).unwrap();
            assert!((p[0].data()[0] - want).abs() < 1e-12);
        }
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, mut s) = scalar_state(1.0);
        let bad = Tensor::zeros(&[2]);
        assert!(matches!(
            adam_step(&mut p, &[bad], &mut s, 0.1),
            Err(Error::Dimension(_))
        ));
    }
}
