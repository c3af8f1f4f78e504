use super::{KtModel, TokenBatch};
use crate::dataset::{Sequence, FORCE_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::{
    causal_attention, gelu, layer_norm_rows, AttentionShape, BoundParams, ParamId, Rng, Tape,
    Tensor, Var,
};

/// `batch` windows of `seq` tokens packed row-major as `[batch*seq, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KtInputs {
    pub batch: usize,
    pub seq: usize,
    pub states: Tensor,
    pub goals: Tensor,
    pub actions: Tensor,
}

impl KtInputs {
    pub fn from_sequences(sequences: &[&Sequence]) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::contract("empty batch"))?;
        let seq = first.len;
        if sequences.iter().any(|s| s.len != seq) {
            return Err(Error::dim("windows in a batch must share one length"));
        }
        let rows = sequences.len() * seq;
        let cat = |f: fn(&Sequence) -> &Vec<f64>, dim| -> Result<Tensor> {
            Tensor::new(
                &[rows, dim],
                sequences
                    .iter()
                    .flat_map(|s| f(s).iter().copied())
                    .collect(),
            )
        };
        Ok(Self {
            batch: sequences.len(),
            seq,
            states: cat(|s| &s.states, STATE_DIM)?,
            goals: cat(|s| &s.goals, GOAL_DIM)?,
            actions: Tensor::zeros(&[rows, FORCE_DIM]),
        })
    }

    pub fn from_tokens(tokens: &TokenBatch) -> Result<Self> {
        let n = tokens.valid_length();
        if n == 0 || tokens.goals.len() != n || tokens.actions.len() != n {
            return Err(Error::dim("token batch channels disagree in length"));
        }
        Ok(Self {
            batch: 1,
            seq: n,
            states: Tensor::new(&[n, STATE_DIM], tokens.states.concat())?,
            goals: Tensor::new(&[n, GOAL_DIM], tokens.goals.concat())?,
            actions: Tensor::new(&[n, FORCE_DIM], tokens.actions.concat())?,
        })
    }
}

/// Causal scaled dot-product attention over one window, split into `heads`.
pub fn masked_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let shape = AttentionShape {
        batch: 1,
        seq: q.rows(),
        heads,
    };
    Ok(causal_attention(q, k, v, shape)?.0)
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = x.matmul(w)?;
    let n = y.cols();
    for row in y.data_mut().chunks_mut(n) {
        for (o, bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    Ok(y)
}

fn add(a: &mut Tensor, b: &Tensor) {
    a.add_assign(b);
}

impl KtModel {
    fn check_inputs(&self, inputs: &KtInputs) -> Result<()> {
        if inputs.seq == 0 || inputs.seq > self.config.sequence_length {
            return Err(Error::contract(format!(
                "window of {} tokens exceeds the model's {}",
                inputs.seq, self.config.sequence_length
            )));
        }
        let rows = inputs.batch * inputs.seq;
        if inputs.states.shape() != [rows, STATE_DIM]
            || inputs.goals.shape() != [rows, GOAL_DIM]
            || inputs.actions.shape() != [rows, FORCE_DIM]
        {
            return Err(Error::dim("token channels do not match batch x window"));
        }
        Ok(())
    }

    fn p(&self, id: ParamId) -> &Tensor {
        self.params.get(id)
    }

    fn embed_inputs(&self, inputs: &KtInputs) -> Result<Tensor> {
        let ids = &self.ids;
        let mut e = linear(&inputs.states, self.p(ids.state_w), self.p(ids.state_b))?;
        add(
            &mut e,
            &linear(&inputs.goals, self.p(ids.goal_w), self.p(ids.goal_b))?,
        );
        add(
            &mut e,
            &linear(&inputs.actions, self.p(ids.action_w), self.p(ids.action_b))?,
        );
        let d = e.cols();
        let table = self.p(ids.position);
        for (r, row) in e.data_mut().chunks_mut(d).enumerate() {
            for (o, t) in row.iter_mut().zip(table.row(r % inputs.seq)) {
                *o += t;
            }
        }
        Ok(e)
    }

    /// Token embeddings `e(n) = W_s s(n) + W_g r_d(n) + W_a a(n) + P[n]`,
    /// one row per step.
    pub fn embed(&self, tokens: &TokenBatch) -> Result<Tensor> {
        let inputs = KtInputs::from_tokens(tokens)?;
        self.check_inputs(&inputs)?;
        self.embed_inputs(&inputs)
    }

    /// Inference forward pass without dropout. Returns de-normalized,
    /// unclamped forces `[batch*seq, 4]` and, per layer, the attention
    /// probabilities `[batch, heads, seq, seq]`.
    pub fn forward_with_attention(&self, inputs: &KtInputs) -> Result<(Tensor, Vec<Vec<f64>>)> {
        self.check_inputs(inputs)?;
        let shape = AttentionShape {
            batch: inputs.batch,
            seq: inputs.seq,
            heads: self.config.head_count,
        };
        let mut x = self.embed_inputs(inputs)?;
        let mut probs = Vec::with_capacity(self.ids.layers.len());
        for l in &self.ids.layers {
            let h = layer_norm_rows(&x, self.p(l.ln1_gamma).data(), self.p(l.ln1_beta).data()).0;
            let q = linear(&h, self.p(l.wq), self.p(l.bq))?;
            let k = linear(&h, self.p(l.wk), self.p(l.bk))?;
            let v = linear(&h, self.p(l.wv), self.p(l.bv))?;
            let (a, pr) = causal_attention(&q, &k, &v, shape)?;
            probs.push(pr);
            add(&mut x, &linear(&a, self.p(l.wo), self.p(l.bo))?);
            let h = layer_norm_rows(&x, self.p(l.ln2_gamma).data(), self.p(l.ln2_beta).data()).0;
            let mut inner = linear(&h, self.p(l.w1), self.p(l.b1))?;
            inner.data_mut().iter_mut().for_each(|v| *v = gelu(*v).0);
            add(&mut x, &linear(&inner, self.p(l.w2), self.p(l.b2))?);
        }
        let ids = &self.ids;
        let h = layer_norm_rows(
            &x,
            self.p(ids.lnf_gamma).data(),
            self.p(ids.lnf_beta).data(),
        )
        .0;
        let mut y = linear(&h, self.p(ids.head_w), self.p(ids.head_b))?;
        let norm = &self.normalizer;
        for row in y.data_mut().chunks_mut(FORCE_DIM) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * norm.force_std[j] + norm.force_mean[j];
            }
        }
        Ok((y, probs))
    }

    pub fn forward(&self, inputs: &KtInputs) -> Result<Tensor> {
        Ok(self.forward_with_attention(inputs)?.0)
    }

    /// Forces for every position of one window, clamped to the actuator range.
    ///
    /// Position `n` predicts `T_d(n)` from tokens `0..=n`. The action
    /// channel must be the zero mask; anything else never occurs in training.
    pub fn predict_forces(&self, tokens: &TokenBatch) -> Result<Vec<[f64; FORCE_DIM]>> {
        if tokens.actions.iter().flatten().any(|a| *a != 0.0) {
            return Err(Error::contract("action channel must be zero at inference"));
        }
        let y = self.forward(&KtInputs::from_tokens(tokens)?)?;
        Ok(y.data()
            .chunks(FORCE_DIM)
            .map(|r| std::array::from_fn(|j| r[j].clamp(0.0, self.force_limit_n)))
            .collect())
    }

    /// Training forward pass on the tape: de-normalized, unclamped forces
    /// `[batch*seq, 4]`. Dropout is applied when `dropout` carries a stream.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        inputs: &KtInputs,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        self.check_inputs(inputs)?;
        let ids = &self.ids;
        let rate = self.config.dropout_rate;
        let shape = AttentionShape {
            batch: inputs.batch,
            seq: inputs.seq,
            heads: self.config.head_count,
        };
        let lin = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let y = tape.matmul(x, p[w])?;
            tape.add_row(y, p[b])
        };
        let s = tape.constant(inputs.states.clone());
        let g = tape.constant(inputs.goals.clone());
        let a = tape.constant(inputs.actions.clone());
        let es = lin(tape, s, ids.state_w, ids.state_b)?;
        let eg = lin(tape, g, ids.goal_w, ids.goal_b)?;
        let ea = lin(tape, a, ids.action_w, ids.action_b)?;
        let e = tape.add(es, eg)?;
        let e = tape.add(e, ea)?;
        let e = tape.add_tiled(e, p[ids.position], inputs.seq)?;
        let mut x = drop(tape, e, rate, dropout.as_deref_mut())?;
        for l in &ids.layers {
            let h = tape.layer_norm(x, p[l.ln1_gamma], p[l.ln1_beta])?;
            let q = lin(tape, h, l.wq, l.bq)?;
            let k = lin(tape, h, l.wk, l.bk)?;
            let v = lin(tape, h, l.wv, l.bv)?;
            let att = tape.causal_attention(q, k, v, shape)?;
            let o = lin(tape, att, l.wo, l.bo)?;
            let o = drop(tape, o, rate, dropout.as_deref_mut())?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, p[l.ln2_gamma], p[l.ln2_beta])?;
            let inner = lin(tape, h, l.w1, l.b1)?;
            let inner = tape.gelu(inner);
            let f = lin(tape, inner, l.w2, l.b2)?;
            let f = drop(tape, f, rate, dropout.as_deref_mut())?;
            x = tape.add(x, f)?;
        }
        let h = tape.layer_norm(x, p[ids.lnf_gamma], p[ids.lnf_beta])?;
        let y = lin(tape, h, ids.head_w, ids.head_b)?;
        let norm = &self.normalizer;
        tape.scale_shift_cols(y, &norm.force_std, &norm.force_mean)
    }
}

/// Inverted dropout: keep with probability `1 - rate`, rescale survivors.
pub(crate) fn drop(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask = (0..tape.value(x).len())
                .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}
