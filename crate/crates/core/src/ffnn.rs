//! Feed-forward baseline: desired tip position to tendon forces, one step
//! at a time.

use serde::{Deserialize, Serialize};

use crate::dataset::{Normalizer, Sequence, FORCE_DIM, GOAL_DIM};
use crate::error::{Error, Result};
use crate::kt::DEFAULT_FORCE_LIMIT_N;
use crate::numerics::{BoundParams, ParamId, ParamSet, Rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FfnnConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for FfnnConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 2,
        }
    }
}

impl FfnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("ffnn widths must be positive".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_width;
        (GOAL_DIM + 1) * h + (self.hidden_layers - 1) * (h + 1) * h + (h + 1) * FORCE_DIM
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnnModel {
    config: FfnnConfig,
    normalizer: Normalizer,
    force_limit_n: f64,
    params: ParamSet,
    /// (weight, bias) per layer, output layer last.
    layers: Vec<(ParamId, ParamId)>,
}

impl FfnnModel {
    pub fn new(config: FfnnConfig, normalizer: Normalizer, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        normalizer.validate()?;
        let mut params = ParamSet::new();
        let mut widths = vec![GOAL_DIM];
        widths.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
        widths.push(FORCE_DIM);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                (
                    params.linear_weight(format!("layers.{i}.weight"), w[0], w[1], rng),
                    params.linear_bias(format!("layers.{i}.bias"), w[0], w[1], rng),
                )
            })
            .collect();
        Ok(Self {
            config,
            normalizer,
            force_limit_n: DEFAULT_FORCE_LIMIT_N,
            params,
            layers,
        })
    }

    pub fn from_parts(
        config: FfnnConfig,
        normalizer: Normalizer,
        params: &ParamSet,
    ) -> Result<Self> {
        let mut model = Self::new(config, normalizer, &mut Rng::new(0))?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &FfnnConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn force_limit_n(&self) -> f64 {
        self.force_limit_n
    }

    pub fn with_force_limit(mut self, force_limit_n: f64) -> Self {
        self.force_limit_n = force_limit_n;
        self
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    #[cfg(test)]
    pub(crate) fn output_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("at least one layer")
    }

    /// Normalized goals `[rows, 3]` from a batch of windows, every step
    /// treated independently.
    pub fn inputs(sequences: &[&Sequence]) -> Result<Tensor> {
        let data: Vec<f64> = sequences
            .iter()
            .flat_map(|s| s.goals.iter().copied())
            .collect();
        Tensor::new(&[data.len() / GOAL_DIM, GOAL_DIM], data)
    }

    /// De-normalized, unclamped forces `[rows, 4]` for normalized goals.
    pub fn forward(&self, goals: &Tensor) -> Result<Tensor> {
        if goals.cols() != GOAL_DIM {
            return Err(Error::dim("ffnn input must have three columns"));
        }
        let mut x = goals.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut y = x.matmul(self.params.get(*w))?;
            let n = y.cols();
            let bias = self.params.get(*b).data();
            for row in y.data_mut().chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                    if i < last {
                        *o = o.max(0.0);
                    }
                }
            }
            x = y;
        }
        let norm = &self.normalizer;
        for row in x.data_mut().chunks_mut(FORCE_DIM) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * norm.force_std[j] + norm.force_mean[j];
            }
        }
        Ok(x)
    }

    pub fn forward_tape(&self, tape: &mut Tape, p: &BoundParams, goals: &Tensor) -> Result<Var> {
        let mut x = tape.constant(goals.clone());
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let y = tape.matmul(x, p[*w])?;
            let y = tape.add_row(y, p[*b])?;
            x = if i < last { tape.relu(y) } else { y };
        }
        let norm = &self.normalizer;
        tape.scale_shift_cols(x, &norm.force_std, &norm.force_mean)
    }

    /// Forces for a desired tip position in metres, clamped to the actuator range.
    pub fn predict(&self, desired_tip: [f64; 3]) -> Result<[f64; FORCE_DIM]> {
        let g = self.normalizer.goal(&desired_tip);
        let y = self.forward(&Tensor::new(&[1, GOAL_DIM], g.to_vec())?)?;
        Ok(std::array::from_fn(|j| {
            y.data()[j].clamp(0.0, self.force_limit_n)
        }))
    }
}
