use log::warn;
use serde::{Deserialize, Serialize};

use super::{Episode, Step, FORCE_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Per-channel standardization fitted on the training partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub goal_mean: Vec<f64>,
    pub goal_std: Vec<f64>,
    pub force_mean: Vec<f64>,
    pub force_std: Vec<f64>,
}

fn moments(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for j in 0..dim {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    // A constant channel is left unscaled rather than divided by zero.
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    /// Fits on exactly the steps that `to_sequences` will window.
    pub fn fit(episodes: &[Episode], window: usize, stride: usize) -> Result<Self> {
        let steps: Vec<&Step> = episodes
            .iter()
            .flat_map(|ep| {
                window_starts(ep.len(), window, stride).flat_map(move |s| &ep.steps[s..s + window])
            })
            .collect();
        if steps.is_empty() {
            return Err(Error::contract(
                "no complete window to fit normalization on",
            ));
        }
        let states: Vec<[f64; STATE_DIM]> = steps.iter().map(|s| s.state()).collect();
        let state_rows: Vec<&[f64]> = states.iter().map(|s| &s[..]).collect();
        let goal_rows: Vec<&[f64]> = steps.iter().map(|s| &s.r_d[..]).collect();
        let force_rows: Vec<&[f64]> = steps.iter().map(|s| &s.t_a[..]).collect();
        let (state_mean, state_std) = moments(&state_rows, STATE_DIM);
        let (goal_mean, goal_std) = moments(&goal_rows, GOAL_DIM);
        let (force_mean, force_std) = moments(&force_rows, FORCE_DIM);
        Ok(Self {
            state_mean,
            state_std,
            goal_mean,
            goal_std,
            force_mean,
            force_std,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            (self.state_mean.len(), STATE_DIM),
            (self.state_std.len(), STATE_DIM),
            (self.goal_mean.len(), GOAL_DIM),
            (self.goal_std.len(), GOAL_DIM),
            (self.force_mean.len(), FORCE_DIM),
            (self.force_std.len(), FORCE_DIM),
        ];
        if dims.iter().any(|(a, b)| a != b) {
            return Err(Error::dim("normalizer channel counts"));
        }
        let all = [&self.state_std, &self.goal_std, &self.force_std];
        if all
            .iter()
            .any(|v| v.iter().any(|s| !(*s > 0.0 && s.is_finite())))
        {
            return Err(Error::contract("normalizer scales must be positive"));
        }
        Ok(())
    }

    pub fn state(&self, raw: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        std::array::from_fn(|j| (raw[j] - self.state_mean[j]) / self.state_std[j])
    }

    pub fn goal(&self, raw: &[f64; GOAL_DIM]) -> [f64; GOAL_DIM] {
        std::array::from_fn(|j| (raw[j] - self.goal_mean[j]) / self.goal_std[j])
    }
}

/// A training window: normalized inputs and raw force labels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub episode: usize,
    pub start: usize,
    pub len: usize,
    /// `len x 7`, normalized `[r, T]`.
    pub states: Vec<f64>,
    /// `len x 3`, normalized `r_d`.
    pub goals: Vec<f64>,
    /// `len x 3`, `r_d` in metres.
    pub goals_m: Vec<f64>,
    /// `len x 4`, `T_a` in newtons.
    pub targets: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SequenceSet {
    pub sequences: Vec<Sequence>,
    /// Episodes too short for a single window.
    pub skipped: usize,
}

fn window_starts(len: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    let last = if window == 0 || len < window {
        None
    } else {
        Some(len - window)
    };
    (0..)
        .step_by(stride.max(1))
        .take_while(move |s| last.is_some_and(|l| *s <= l))
}

/// Slices each episode into windows of `window` steps, `stride` apart
/// (`stride == window` gives non-overlapping windows; any remainder is
/// dropped).
pub fn to_sequences(
    episodes: &[Episode],
    window: usize,
    stride: usize,
    normalizer: &Normalizer,
) -> Result<SequenceSet> {
    if window == 0 || stride == 0 {
        return Err(Error::contract("window and stride must be positive"));
    }
    normalizer.validate()?;
    let mut out = SequenceSet::default();
    for (e, ep) in episodes.iter().enumerate() {
        if ep.len() < window {
            out.skipped += 1;
            continue;
        }
        for start in window_starts(ep.len(), window, stride) {
            let steps = &ep.steps[start..start + window];
            let mut seq = Sequence {
                episode: e,
                start,
                len: window,
                states: Vec::with_capacity(window * STATE_DIM),
                goals: Vec::with_capacity(window * GOAL_DIM),
                goals_m: Vec::with_capacity(window * GOAL_DIM),
                targets: Vec::with_capacity(window * FORCE_DIM),
            };
            for s in steps {
                seq.states.extend(normalizer.state(&s.state()));
                seq.goals.extend(normalizer.goal(&s.r_d));
                seq.goals_m.extend(s.r_d);
                seq.targets.extend(s.t_a);
            }
            out.sequences.push(seq);
        }
    }
    if out.skipped > 0 {
        warn!(
            "{} episodes shorter than the {window}-step window were skipped",
            out.skipped
        );
    }
    Ok(out)
}

/// Episode-level train/test split; the test share is `floor(n (1 - f))`.
pub fn split(
    episodes: &[Episode],
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<Episode>, Vec<Episode>)> {
    let n = episodes.len();
    if n < 2 {
        return Err(Error::contract(format!(
            "need at least 2 episodes to split, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    // The epsilon keeps e.g. 10 * 0.2 from flooring to 1.
    let test = ((n as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut test_idx = order[..test].to_vec();
    let mut train_idx = order[test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| episodes[i].clone()).collect(),
        test_idx.iter().map(|&i| episodes[i].clone()).collect(),
    ))
}
