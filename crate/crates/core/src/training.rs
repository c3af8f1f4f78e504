//! Mini-batch Adam on the per-tendon mean squared force error.

use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sequence, FORCE_DIM};
use crate::error::{Error, Result};
use crate::ffnn::FfnnModel;
use crate::kt::{KtInputs, KtModel};
use crate::numerics::{
    adam_step, AdamConfig, AdamState, BoundParams, ParamSet, Rng, Tape, Tensor, Var,
};

/// Mean over steps and tendons of the squared force error, in N².
pub fn mse_loss(predicted: &Tensor, actual: &Tensor) -> Result<f64> {
    if !predicted.same_shape(actual) || predicted.cols() != FORCE_DIM {
        return Err(Error::dim(format!(
            "prediction {:?} vs label {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    let sum: f64 = predicted
        .data()
        .iter()
        .zip(actual.data())
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// A model that can be fitted to force labels on windowed sequences.
pub trait Trainable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// De-normalized predictions `[rows, 4]` for every step of `batch`, in
    /// the same row order as the concatenated targets.
    fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &[&Sequence],
        dropout: Option<&mut Rng>,
    ) -> Result<Var>;
}

impl Trainable for KtModel {
    fn params(&self) -> &ParamSet {
        KtModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        KtModel::params_mut(self)
    }

    fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &[&Sequence],
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        self.forward_tape(tape, p, &KtInputs::from_sequences(batch)?, dropout)
    }
}

impl Trainable for FfnnModel {
    fn params(&self) -> &ParamSet {
        FfnnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        FfnnModel::params_mut(self)
    }

    fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &[&Sequence],
        _dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        self.forward_tape(tape, p, &FfnnModel::inputs(batch)?)
    }
}

fn targets(batch: &[&Sequence]) -> Result<Tensor> {
    let data: Vec<f64> = batch
        .iter()
        .flat_map(|s| s.targets.iter().copied())
        .collect();
    Tensor::new(&[data.len() / FORCE_DIM, FORCE_DIM], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs between checkpoint callbacks.
    pub checkpoint_interval: usize,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            checkpoint_interval: 10,
            shuffle: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn kt() -> Self {
        Self::default()
    }

    pub fn ffnn() -> Self {
        Self {
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config(
                "epochs, batch_size and checkpoint_interval must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training-set loss of the initial weights, dropout off.
    pub initial_loss: f64,
    pub history: Vec<LossRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    /// `epoch train_loss val_loss`, one row per epoch, for plotting.
    pub fn loss_log(&self) -> String {
        let mut out = String::from("epoch train_loss val_loss\n");
        for r in &self.history {
            let _ = writeln!(out, "{} {:.9e} {:.9e}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }
}

/// Loss over `sequences` with dropout off, averaged per element.
pub fn evaluate_loss<M: Trainable>(
    model: &M,
    sequences: &[Sequence],
    batch_size: usize,
) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    let refs: Vec<&Sequence> = sequences.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let y = model.forward_batch(&mut tape, &p, chunk, None)?;
        let t = targets(chunk)?;
        sum += mse_loss(tape.value(y), &t)? * t.len() as f64;
        count += t.len();
    }
    if count == 0 {
        return Err(Error::contract("no sequences to evaluate"));
    }
    Ok(sum / count as f64)
}

/// Runs `config.epochs` epochs of Adam and leaves the model holding the
/// weights with the lowest validation loss (training loss when `val` is
/// empty). `on_checkpoint` is called every `checkpoint_interval` epochs.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &[Sequence],
    val: &[Sequence],
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let root = Rng::new(config.seed);
    let mut shuffle = root.substream("shuffle");
    let mut dropout = root.substream("dropout");
    let mut adam = AdamState::new(model.params().tensors(), config.adam);

    let initial_loss = evaluate_loss(model, train_set, config.batch_size)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamSet)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            shuffle.shuffle(&mut order);
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sequence> = idx.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let y = model.forward_batch(&mut tape, &p, &batch, Some(&mut dropout))?;
            let t = targets(&batch)?;
            let loss = tape.mse_loss(y, &t)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = p.vars().iter().map(|v| grads.take(*v)).collect();
            adam_step(
                model.params_mut().tensors_mut(),
                &g,
                &mut adam,
                config.learning_rate,
            )?;
            sum += value * t.len() as f64;
            count += t.len();
        }
        let train_loss = sum / count as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            evaluate_loss(model, val, config.batch_size)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: val_loss,
            });
        }
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(LossRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params().clone()));
        }
        if epoch % config.checkpoint_interval == 0 {
            on_checkpoint(epoch, model)?;
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    model.params_mut().load_from(&params)?;
    Ok(TrainReport {
        initial_loss,
        history,
        best_epoch,
        best_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{to_sequences, Episode, Normalizer, Step};
    use crate::ffnn::FfnnConfig;
    use crate::kt::KtConfig;

    fn episodes(count: usize, len: usize, seed: u64) -> Vec<Episode> {
        let mut rng = Rng::new(seed);
        (0..count)
            .map(|e| {
                let (mut r, mut t) = ([0.6, 0.0, 0.0], [0.0; 4]);
                let steps = (0..len)
                    .map(|_| {
                        let t_a = [0; 4].map(|_| rng.uniform(0.0, 10.0));
                        // a smooth stand-in for the forward map
                        let r_d = [
                            0.6 - 0.02 * t_a.iter().sum::<f64>(),
                            0.02 * (t_a[0] - t_a[2]),
                            0.02 * (t_a[1] - t_a[3]),
                        ];
                        let s = Step { r, t, r_d, t_a };
                        (r, t) = (r_d, t_a);
                        s
                    })
                    .collect();
                Episode {
                    seed: e as u64,
                    steps,
                }
            })
            .collect()
    }

    fn sequences(window: usize) -> (Normalizer, Vec<Sequence>) {
        let eps = episodes(4, 12, 1);
        let norm = Normalizer::fit(&eps, window, window).unwrap();
        let set = to_sequences(&eps, window, window, &norm).unwrap();
        (norm, set.sequences)
    }

    fn tiny_kt() -> KtConfig {
        KtConfig {
            sequence_length: 4,
            embedding_dim: 8,
            layer_count: 1,
            head_count: 2,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn loss_hand_values() {
        let p = Tensor::new(&[1, 4], vec![1.0; 4]).unwrap();
        assert_eq!(mse_loss(&p, &Tensor::zeros(&[1, 4])).unwrap(), 1.0);
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        assert!(mse_loss(&p, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn loss_matches_scalar_loop_and_tape() {
        let mut rng = Rng::new(3);
        let p = rng.uniform_tensor(&[25, 4], 0.0, 10.0);
        let a = rng.uniform_tensor(&[25, 4], 0.0, 10.0);
        let mut oracle = 0.0;
        for n in 0..25 {
            let mut step = 0.0;
            for i in 0..4 {
                step += (p.at(n, i) - a.at(n, i)).powi(2);
            }
            oracle += step / 4.0;
        }
        oracle /= 25.0;
        let loss = mse_loss(&p, &a).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
        let mut tape = Tape::new();
        let v = tape.param(p);
        let l = tape.mse_loss(v, &a).unwrap();
        assert!((tape.value(l).data()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn one_step_descends() {
        let (norm, seqs) = sequences(4);
        let mut m = KtModel::new(tiny_kt(), norm, &mut Rng::new(4)).unwrap();
        let batch = &seqs[..1];
        let before = evaluate_loss(&m, batch, 64).unwrap();
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::kt()
        };
        train(&mut m, batch, &[], &config, |_, _| Ok(())).unwrap();
        assert!(evaluate_loss(&m, batch, 64).unwrap() < before);
    }

    #[test]
    fn same_seed_same_weights() {
        let (norm, seqs) = sequences(4);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::kt()
        };
        let run = || {
            let mut m = KtModel::new(
                KtConfig {
                    dropout_rate: 0.1,
                    ..tiny_kt()
                },
                norm.clone(),
                &mut Rng::new(5),
            )
            .unwrap();
            let r = train(&mut m, &seqs[..8], &seqs[8..], &config, |_, _| Ok(())).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
    }

    #[test]
    fn ffnn_fits_and_keeps_the_best_epoch() {
        let (norm, seqs) = sequences(4);
        let mut m = FfnnModel::new(
            FfnnConfig {
                hidden_width: 16,
                hidden_layers: 2,
            },
            norm,
            &mut Rng::new(6),
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 40,
            batch_size: 2,
            learning_rate: 1e-2,
            checkpoint_interval: 20,
            ..TrainConfig::ffnn()
        };
        let mut checkpoints = Vec::new();
        let report = train(&mut m, &seqs[..8], &seqs[8..], &config, |e, _| {
            checkpoints.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(checkpoints, [20, 40]);
        assert_eq!(report.history.len(), 40);
        let last = report.history.last().unwrap();
        assert!(last.train_loss < report.initial_loss / 10.0, "{report:?}");
        let best = report
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, best);
        let restored = evaluate_loss(&m, &seqs[8..], 64).unwrap();
        assert!((restored - best).abs() < 1e-12);
        assert_eq!(report.loss_log().lines().count(), 41);
    }

    #[test]
    fn nonfinite_loss_is_divergence() {
        let (norm, seqs) = sequences(4);
        let mut m = FfnnModel::new(FfnnConfig::default(), norm, &mut Rng::new(7)).unwrap();
        let config = TrainConfig {
            epochs: 2,
            learning_rate: 1e300,
            ..TrainConfig::ffnn()
        };
        let err = train(&mut m, &seqs, &[], &config, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn bad_configs_are_rejected() {
        for c in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::kt()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::kt()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
