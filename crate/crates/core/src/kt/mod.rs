//! The Kinematics Transformer: a decoder-only, causally masked transformer
//! that maps a window of (state, goal, masked action) tokens to tendon forces.

mod forward;
mod rollout;

use serde::{Deserialize, Serialize};

use crate::dataset::{Normalizer, FORCE_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamSet, Rng, Tensor};

pub use forward::{masked_attention, KtInputs};
pub use rollout::{autoregressive_rollout, Rollout, RolloutStep};

/// Actuator bound applied to predictions at inference.
pub const DEFAULT_FORCE_LIMIT_N: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtConfig {
    pub sequence_length: usize,
    pub embedding_dim: usize,
    pub layer_count: usize,
    pub head_count: usize,
    pub dropout_rate: f64,
}

impl Default for KtConfig {
    fn default() -> Self {
        Self {
            sequence_length: 25,
            embedding_dim: 128,
            layer_count: 12,
            head_count: 8,
            dropout_rate: 0.1,
        }
    }
}

impl KtConfig {
    /// Reduced model that fits a single-core training budget.
    pub fn desk_scale() -> Self {
        Self {
            embedding_dim: 64,
            layer_count: 4,
            head_count: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embedding_dim;
        if self.sequence_length == 0 || d == 0 || self.layer_count == 0 || self.head_count == 0 {
            return Err(Error::Config("kt dimensions must all be positive".into()));
        }
        if !d.is_multiple_of(self.head_count) {
            return Err(Error::Config(format!(
                "kt.embedding_dim {d} is not divisible by kt.head_count {}",
                self.head_count
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("kt.dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let d = self.embedding_dim;
        let embeddings = (STATE_DIM + 1) * d + (GOAL_DIM + 1) * d + (FORCE_DIM + 1) * d;
        let positions = self.sequence_length * d;
        // two layer norms, four d x d projections, d -> 4d -> d feed-forward
        let layer = 2 * 2 * d + 4 * (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
        let head = 2 * d + d * FORCE_DIM + FORCE_DIM;
        embeddings + positions + self.layer_count * layer + head
    }
}

fn linear(
    p: &mut ParamSet,
    rng: &mut Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    (
        p.linear_weight(format!("{name}.weight"), fan_in, fan_out, rng),
        p.linear_bias(format!("{name}.bias"), fan_in, fan_out, rng),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerIds {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct KtIds {
    pub state_w: ParamId,
    pub state_b: ParamId,
    pub goal_w: ParamId,
    pub goal_b: ParamId,
    pub action_w: ParamId,
    pub action_b: ParamId,
    pub position: ParamId,
    pub layers: Vec<LayerIds>,
    pub lnf_gamma: ParamId,
    pub lnf_beta: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KtModel {
    config: KtConfig,
    normalizer: Normalizer,
    /// Inference outputs are clamped to `[0, force_limit_n]`.
    force_limit_n: f64,
    params: ParamSet,
    ids: KtIds,
}

impl KtModel {
    /// Fresh model. Linear layers (weights and biases) and the positional
    /// table are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norms
    /// start at unit gain and zero shift.
    pub fn new(config: KtConfig, normalizer: Normalizer, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        normalizer.validate()?;
        let d = config.embedding_dim;
        let mut p = ParamSet::new();
        let (state_w, state_b) = linear(&mut p, rng, "embed.state", STATE_DIM, d);
        let (goal_w, goal_b) = linear(&mut p, rng, "embed.goal", GOAL_DIM, d);
        let (action_w, action_b) = linear(&mut p, rng, "embed.action", FORCE_DIM, d);
        let n = config.sequence_length;
        let bound = 1.0 / (n as f64).sqrt();
        let position = p.push("embed.position", rng.uniform_tensor(&[n, d], -bound, bound));
        let mut layers = Vec::with_capacity(config.layer_count);
        for l in 0..config.layer_count {
            let name = |s: &str| format!("layers.{l}.{s}");
            let ln1_gamma = p.push(name("ln1.gamma"), Tensor::full(&[d], 1.0));
            let ln1_beta = p.push(name("ln1.beta"), Tensor::zeros(&[d]));
            let (wq, bq) = linear(&mut p, rng, &name("attn.query"), d, d);
            let (wk, bk) = linear(&mut p, rng, &name("attn.key"), d, d);
            let (wv, bv) = linear(&mut p, rng, &name("attn.value"), d, d);
            let (wo, bo) = linear(&mut p, rng, &name("attn.out"), d, d);
            let ln2_gamma = p.push(name("ln2.gamma"), Tensor::full(&[d], 1.0));
            let ln2_beta = p.push(name("ln2.beta"), Tensor::zeros(&[d]));
            let (w1, b1) = linear(&mut p, rng, &name("ffn.inner"), d, 4 * d);
            let (w2, b2) = linear(&mut p, rng, &name("ffn.outer"), 4 * d, d);
            layers.push(LayerIds {
                ln1_gamma,
                ln1_beta,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_gamma,
                ln2_beta,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let lnf_gamma = p.push("final_ln.gamma", Tensor::full(&[d], 1.0));
        let lnf_beta = p.push("final_ln.beta", Tensor::zeros(&[d]));
        let (head_w, head_b) = linear(&mut p, rng, "head", d, FORCE_DIM);
        let ids = KtIds {
            state_w,
            state_b,
            goal_w,
            goal_b,
            action_w,
            action_b,
            position,
            layers,
            lnf_gamma,
            lnf_beta,
            head_w,
            head_b,
        };
        debug_assert_eq!(p.scalar_count(), config.parameter_count());
        Ok(Self {
            config,
            normalizer,
            force_limit_n: DEFAULT_FORCE_LIMIT_N,
            params: p,
            ids,
        })
    }

    /// Rebuilds a model around stored parameters, checking the layout.
    pub fn from_parts(config: KtConfig, normalizer: Normalizer, params: &ParamSet) -> Result<Self> {
        let mut model = Self::new(config, normalizer, &mut Rng::new(0))?;
        model.params.load_from(params)?;
        if model.params.scalar_count() != model.config.parameter_count() {
            return Err(Error::Format {
                what: "kt checkpoint",
                detail: "parameter count disagrees with the configuration".into(),
            });
        }
        Ok(model)
    }

    pub fn config(&self) -> &KtConfig {
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

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }
}

/// One window of tokens, already normalized. The action channel is the
/// zero mask: its forces are what the model predicts.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub states: Vec<[f64; STATE_DIM]>,
    pub goals: Vec<[f64; GOAL_DIM]>,
    pub actions: Vec<[f64; FORCE_DIM]>,
}

impl TokenBatch {
    pub fn new(states: Vec<[f64; STATE_DIM]>, goals: Vec<[f64; GOAL_DIM]>) -> Result<Self> {
        if states.len() != goals.len() {
            return Err(Error::dim(format!(
                "{} states but {} goals",
                states.len(),
                goals.len()
            )));
        }
        let actions = vec![[0.0; FORCE_DIM]; states.len()];
        Ok(Self {
            states,
            goals,
            actions,
        })
    }

    /// Builds a window from physical states `[r (m), T (N)]` and goals (m).
    pub fn from_raw(
        states: &[[f64; STATE_DIM]],
        goals: &[[f64; GOAL_DIM]],
        normalizer: &Normalizer,
    ) -> Result<Self> {
        Self::new(
            states.iter().map(|s| normalizer.state(s)).collect(),
            goals.iter().map(|g| normalizer.goal(g)).collect(),
        )
    }

    pub fn valid_length(&self) -> usize {
        self.states.len()
    }
}
