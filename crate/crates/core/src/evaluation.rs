//! Force errors, closed-loop position errors through the forward solver, and
//! single-step inference timing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::cosserat::{
    solve_statics, LimbGeometry, MaterialProperties, SolverOptions, TendonForces,
};
use crate::dataset::{Episode, Normalizer, FORCE_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::ffnn::FfnnModel;
use crate::kt::{KtInputs, KtModel};
use crate::numerics::{ParamSet, Tensor};

/// Anything that maps an episode's goals to tendon forces.
pub trait ForcePredictor: Sync {
    /// Forces for every step. Step `n` sees the recorded states of steps
    /// `..=n` as context, never the realized outcome of its own prediction.
    fn predict_episode(&self, episode: &Episode) -> Result<Vec<[f64; FORCE_DIM]>>;

    /// One single-input inference for the last step of `context`, the unit
    /// that [`timing_benchmark`] measures.
    fn predict_last(&self, context: &Episode) -> Result<[f64; FORCE_DIM]>;
}

fn clamp(row: &[f64], limit: f64) -> [f64; FORCE_DIM] {
    std::array::from_fn(|j| row[j].clamp(0.0, limit))
}

impl ForcePredictor for KtModel {
    /// Episodes are cut into consecutive windows of the model's length, the
    /// same layout the model was trained on.
    fn predict_episode(&self, episode: &Episode) -> Result<Vec<[f64; FORCE_DIM]>> {
        let n = self.config().sequence_length;
        let norm = self.normalizer();
        let mut out = Vec::with_capacity(episode.len());
        let full = episode.len() / n * n;
        let mut run = |steps: &[crate::dataset::Step], batch: usize| -> Result<()> {
            if batch == 0 {
                return Ok(());
            }
            let rows = steps.len();
            let states = steps.iter().flat_map(|s| norm.state(&s.state())).collect();
            let goals = steps.iter().flat_map(|s| norm.goal(&s.r_d)).collect();
            let inputs = KtInputs {
                batch,
                seq: rows / batch,
                states: Tensor::new(&[rows, STATE_DIM], states)?,
                goals: Tensor::new(&[rows, GOAL_DIM], goals)?,
                actions: Tensor::zeros(&[rows, FORCE_DIM]),
            };
            let y = self.forward(&inputs)?;
            out.extend(
                y.data()
                    .chunks(FORCE_DIM)
                    .map(|r| clamp(r, self.force_limit_n())),
            );
            Ok(())
        };
        run(&episode.steps[..full], full / n)?;
        run(&episode.steps[full..], usize::from(full < episode.len()))?;
        Ok(out)
    }

    fn predict_last(&self, context: &Episode) -> Result<[f64; FORCE_DIM]> {
        let n = self.config().sequence_length;
        let tail = &context.steps[context.len().saturating_sub(n)..];
        let states: Vec<_> = tail.iter().map(|s| s.state()).collect();
        let goals: Vec<_> = tail.iter().map(|s| s.r_d).collect();
        let tokens = crate::kt::TokenBatch::from_raw(&states, &goals, self.normalizer())?;
        self.predict_forces(&tokens)?
            .pop()
            .ok_or_else(|| Error::contract("empty context"))
    }
}

impl ForcePredictor for FfnnModel {
    fn predict_episode(&self, episode: &Episode) -> Result<Vec<[f64; FORCE_DIM]>> {
        let norm = self.normalizer();
        let goals = episode
            .steps
            .iter()
            .flat_map(|s| norm.goal(&s.r_d))
            .collect();
        let y = self.forward(&Tensor::new(&[episode.len(), GOAL_DIM], goals)?)?;
        Ok(y.data()
            .chunks(FORCE_DIM)
            .map(|r| clamp(r, self.force_limit_n()))
            .collect())
    }

    fn predict_last(&self, context: &Episode) -> Result<[f64; FORCE_DIM]> {
        let last = context
            .steps
            .last()
            .ok_or_else(|| Error::contract("empty context"))?;
        self.predict(last.r_d)
    }
}

/// Returns the recorded label of any goal it has seen; a zero-error reference.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleModel {
    normalizer: Normalizer,
    table: HashMap<[u64; GOAL_DIM], [f64; FORCE_DIM]>,
}

impl OracleModel {
    pub fn new(episodes: &[Episode], normalizer: Normalizer) -> Self {
        let table = episodes
            .iter()
            .flat_map(|e| &e.steps)
            .map(|s| (s.r_d.map(f64::to_bits), s.t_a))
            .collect();
        Self { normalizer, table }
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub(crate) fn to_params(&self) -> ParamSet {
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by_key(|(k, _)| **k);
        let data = rows
            .iter()
            .flat_map(|(k, v)| k.map(f64::from_bits).into_iter().chain(v.iter().copied()))
            .collect();
        let mut p = ParamSet::new();
        p.push(
            "table",
            Tensor::new(&[rows.len(), GOAL_DIM + FORCE_DIM], data).expect("row-major table"),
        );
        p
    }

    pub(crate) fn from_params(normalizer: Normalizer, params: &ParamSet) -> Result<Self> {
        let t = params
            .iter()
            .find(|(n, _)| *n == "table")
            .map(|(_, t)| t)
            .filter(|t| t.shape().len() == 2 && t.cols() == GOAL_DIM + FORCE_DIM)
            .ok_or_else(|| Error::Format {
                what: "oracle checkpoint",
                detail: "missing a [rows, 7] table".into(),
            })?;
        let table = t
            .data()
            .chunks(GOAL_DIM + FORCE_DIM)
            .map(|r| {
                (
                    std::array::from_fn(|j| r[j].to_bits()),
                    std::array::from_fn(|j| r[GOAL_DIM + j]),
                )
            })
            .collect();
        Ok(Self { normalizer, table })
    }

    fn lookup(&self, goal: &[f64; GOAL_DIM]) -> Result<[f64; FORCE_DIM]> {
        self.table
            .get(&goal.map(f64::to_bits))
            .copied()
            .ok_or_else(|| Error::contract(format!("oracle has no label for goal {goal:?}")))
    }
}

impl ForcePredictor for OracleModel {
    fn predict_episode(&self, episode: &Episode) -> Result<Vec<[f64; FORCE_DIM]>> {
        episode.steps.iter().map(|s| self.lookup(&s.r_d)).collect()
    }

    fn predict_last(&self, context: &Episode) -> Result<[f64; FORCE_DIM]> {
        let last = context
            .steps
            .last()
            .ok_or_else(|| Error::contract("empty context"))?;
        self.lookup(&last.r_d)
    }
}

impl ForcePredictor for Model {
    fn predict_episode(&self, episode: &Episode) -> Result<Vec<[f64; FORCE_DIM]>> {
        match self {
            Model::Kt(m) => m.predict_episode(episode),
            Model::Ffnn(m) => m.predict_episode(episode),
            Model::Oracle(m) => m.predict_episode(episode),
        }
    }

    fn predict_last(&self, context: &Episode) -> Result<[f64; FORCE_DIM]> {
        match self {
            Model::Kt(m) => m.predict_last(context),
            Model::Ffnn(m) => m.predict_last(context),
            Model::Oracle(m) => m.predict_last(context),
        }
    }
}

/// Mean and population standard deviation of absolute errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStat {
    pub mae: f64,
    pub std: f64,
}

impl ErrorStat {
    fn of(abs_errors: impl Iterator<Item = f64> + Clone) -> Self {
        let n = abs_errors.clone().count() as f64;
        let mae = abs_errors.clone().sum::<f64>() / n;
        let var = abs_errors.map(|e| (e - mae).powi(2)).sum::<f64>() / n;
        Self {
            mae,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceErrors {
    /// Newtons.
    pub per_tendon: [ErrorStat; FORCE_DIM],
    pub samples: usize,
}

impl ForceErrors {
    pub fn mean_mae(&self) -> f64 {
        self.per_tendon.iter().map(|s| s.mae).sum::<f64>() / FORCE_DIM as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionErrors {
    /// Millimetres, x/y/z.
    pub per_axis: [ErrorStat; 3],
    pub solved: usize,
    pub failures: usize,
    /// Desired and achieved tip (m) for every solved step.
    #[serde(skip)]
    pub points: Vec<([f64; 3], [f64; 3])>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_us: f64,
    pub std_us: f64,
    pub iterations: usize,
}

/// Predictions for every step of every episode, episodes in parallel.
pub fn predict_all<P: ForcePredictor + ?Sized>(
    model: &P,
    episodes: &[Episode],
) -> Result<Vec<Vec<[f64; FORCE_DIM]>>> {
    episodes
        .par_iter()
        .map(|e| model.predict_episode(e))
        .collect()
}

pub fn force_errors(
    episodes: &[Episode],
    predictions: &[Vec<[f64; FORCE_DIM]>],
) -> Result<ForceErrors> {
    let pairs: Vec<(&[f64; FORCE_DIM], &[f64; FORCE_DIM])> = episodes
        .iter()
        .zip(predictions)
        .flat_map(|(e, p)| p.iter().zip(e.steps.iter().map(|s| &s.t_a)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    Ok(ForceErrors {
        per_tendon: std::array::from_fn(|i| {
            ErrorStat::of(pairs.iter().map(move |(p, a)| (p[i] - a[i]).abs()))
        }),
        samples: pairs.len(),
    })
}

pub fn force_error_benchmark<P: ForcePredictor + ?Sized>(
    model: &P,
    episodes: &[Episode],
) -> Result<ForceErrors> {
    force_errors(episodes, &predict_all(model, episodes)?)
}

/// Applies each predicted force vector through the forward solver and
/// compares the realized tip with the goal. Solver failures are counted and
/// left out of the statistics.
pub fn position_errors(
    episodes: &[Episode],
    predictions: &[Vec<[f64; FORCE_DIM]>],
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
) -> Result<PositionErrors> {
    let jobs: Vec<([f64; 3], [f64; FORCE_DIM])> = episodes
        .iter()
        .zip(predictions)
        .flat_map(|(e, p)| e.steps.iter().map(|s| s.r_d).zip(p.iter().copied()))
        .collect();
    if jobs.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let tips: Vec<Option<[f64; 3]>> = jobs
        .par_iter()
        .map(|(_, t)| {
            solve_statics(geometry, material, &TendonForces(*t), solver)
                .ok()
                .map(|c| {
                    let r = c.tip();
                    [r.x, r.y, r.z]
                })
        })
        .collect();
    let points: Vec<([f64; 3], [f64; 3])> = jobs
        .iter()
        .zip(&tips)
        .filter_map(|((goal, _), tip)| tip.map(|t| (*goal, t)))
        .collect();
    let failures = jobs.len() - points.len();
    if points.is_empty() {
        return Err(Error::contract("the solver failed on every prediction"));
    }
    Ok(PositionErrors {
        per_axis: std::array::from_fn(|a| {
            ErrorStat::of(points.iter().map(move |(g, t)| 1e3 * (t[a] - g[a]).abs()))
        }),
        solved: points.len(),
        failures,
        points,
    })
}

pub fn position_error_benchmark<P: ForcePredictor + ?Sized>(
    model: &P,
    episodes: &[Episode],
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
) -> Result<PositionErrors> {
    let predictions = predict_all(model, episodes)?;
    position_errors(episodes, &predictions, geometry, material, solver)
}

/// Wall-clock time of `iterations` single-step predictions after `warmup`
/// untimed ones, on the calling thread.
pub fn timing_benchmark<P: ForcePredictor + ?Sized>(
    model: &P,
    context: &Episode,
    iterations: usize,
    warmup: usize,
) -> Result<TimingStats> {
    if iterations == 0 {
        return Err(Error::contract("timing needs at least one iteration"));
    }
    for _ in 0..warmup {
        std::hint::black_box(model.predict_last(context)?);
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(model.predict_last(std::hint::black_box(context))?);
        samples.push(t.elapsed().as_secs_f64() * 1e6);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(TimingStats {
        mean_us: mean,
        std_us: var.sqrt(),
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub dataset_hash: String,
    pub episodes: usize,
    pub force: ForceErrors,
    pub position: Option<PositionErrors>,
    pub timing: Option<TimingStats>,
}

impl BenchmarkReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model {}  dataset {}  episodes {}  steps {}",
            self.model,
            short(&self.dataset_hash),
            self.episodes,
            self.force.samples
        );
        let _ = writeln!(out, "\ntendon force error (N)");
        let _ = writeln!(out, "{:<8} {:>8} {:>8}", "tendon", "MAE", "std");
        for (i, s) in self.force.per_tendon.iter().enumerate() {
            let _ = writeln!(out, "{:<8} {:>8.3} {:>8.3}", i + 1, s.mae, s.std);
        }
        if let Some(p) = &self.position {
            let _ = writeln!(
                out,
                "\ntip position error (mm), {} solved, {} solver failures",
                p.solved, p.failures
            );
            let _ = writeln!(out, "{:<8} {:>8} {:>8}", "axis", "MAE", "std");
            for (axis, s) in ["x", "y", "z"].iter().zip(&p.per_axis) {
                let _ = writeln!(out, "{:<8} {:>8.3} {:>8.3}", axis, s.mae, s.std);
            }
        }
        if let Some(t) = &self.timing {
            let _ = writeln!(
                out,
                "\nsingle-step inference: {:.2} ± {:.2} µs over {} runs",
                t.mean_us, t.std_us, t.iterations
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Desired-versus-achieved tip positions, metres.
pub fn scatter_csv(points: &[([f64; 3], [f64; 3])]) -> String {
    let mut out = String::from("x_d,y_d,z_d,x_a,y_a,z_a\n");
    for (d, a) in points {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            d[0], d[1], d[2], a[0], a[1], a[2]
        );
    }
    out
}
