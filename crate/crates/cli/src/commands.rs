use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use softlimb::checkpoint::{Checkpoint, Model};
use softlimb::cosserat::{solve_statics, TendonForces};
use softlimb::dataset::{
    file_sha256, generate_dataset_with_stats, read_dataset, split, summarize, to_sequences,
    write_dataset, DatasetHeader, Episode, GenerationStats, Normalizer, Step,
};
use softlimb::evaluation::{
    force_errors, position_errors, predict_all, scatter_csv, timing_benchmark, BenchmarkReport,
    OracleModel,
};
use softlimb::ffnn::FfnnModel;
use softlimb::kt::KtModel;
use softlimb::numerics::Rng;
use softlimb::training::{train as fit, TrainConfig, TrainReport, Trainable};
use softlimb::Error;

use crate::config::ToolkitConfig;
use crate::ModelKind;

/// Raised when generation needed too many redraws to be trusted.
#[derive(Debug)]
pub struct SolverFailureRate(pub GenerationStats);

impl std::error::Error for SolverFailureRate {}

impl std::fmt::Display for SolverFailureRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "the solver failed on {} of {} attempts ({:.2}%, limit 1%)",
            self.0.failures,
            self.0.solves,
            100.0 * self.0.failure_rate()
        )
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_owned(),
                source: e,
            })?;
            Ok(())
        }
        _ => Ok(()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn generate(
    config: &ToolkitConfig,
    episodes: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> anyhow::Result<()> {
    let mut gen = config.dataset.clone();
    gen.episodes = episodes.unwrap_or(gen.episodes);
    gen.steps_per_episode = steps.unwrap_or(gen.steps_per_episode);
    gen.validate()?;
    let seed = seed.unwrap_or(config.seed);
    let out = out.unwrap_or_else(|| config.paths.data.clone());

    let (data, stats) = generate_dataset_with_stats(
        &config.limb,
        &config.material,
        &config.solver,
        &gen,
        seed,
        threads,
    )?;
    if stats.failure_rate() > 0.01 {
        return Err(SolverFailureRate(stats).into());
    }
    if stats.failures > 0 {
        warn!(
            "{} of {} solves failed and were redrawn",
            stats.failures, stats.solves
        );
    }
    let header = DatasetHeader::new(&config.limb, &config.material, &config.solver, &gen, seed);
    create_parent(&out)?;
    write_dataset(&out, &header, &data)?;

    let summary = summarize(&data, config.limb.length_m)?;
    let text = format!(
        "{}\nsamples {}  episodes {}  seed {seed}  config {}\n",
        summary.to_table(),
        summary.samples,
        data.len(),
        header.config_hash
    );
    write(&sibling(&out, ".summary.txt"), &text)?;
    print!("{text}");
    info!("wrote {}", out.display());
    Ok(())
}

/// The dataset must come from the same limb, material and solver settings.
fn check_physics(config: &ToolkitConfig, header: &DatasetHeader) -> anyhow::Result<()> {
    if header.geometry != config.limb
        || header.material != config.material
        || header.solver != config.solver
    {
        return Err(Error::Config(
            "dataset was generated with limb/material/solver settings that differ from the configuration"
                .into(),
        )
        .into());
    }
    Ok(())
}

struct Partition {
    train: Vec<Episode>,
    val: Vec<Episode>,
    test: Vec<Episode>,
}

/// Episode-level train/test split, then a validation share carved out of
/// the training episodes. All streams derive from the root seed.
fn partition(config: &ToolkitConfig, episodes: &[Episode]) -> anyhow::Result<Partition> {
    let root = Rng::new(config.seed);
    let (train, test) = split(
        episodes,
        config.split.train_fraction,
        &mut root.substream("split"),
    )?;
    let (train, val) = if train.len() >= 5 {
        split(&train, 0.9, &mut root.substream("split/val"))?
    } else {
        (train, Vec::new())
    };
    Ok(Partition { train, val, test })
}

fn train_model<M: Trainable>(
    model: &mut M,
    config: &ToolkitConfig,
    part: &Partition,
    norm: &Normalizer,
    train_config: &TrainConfig,
    checkpoint: impl Fn(&M) -> anyhow::Result<()>,
) -> anyhow::Result<TrainReport> {
    let train = to_sequences(&part.train, config.window(), config.stride(), norm)?.sequences;
    let val = to_sequences(&part.val, config.window(), config.window(), norm)?.sequences;
    info!(
        "{} training windows, {} validation windows",
        train.len(),
        val.len()
    );
    let report = fit(model, &train, &val, train_config, |epoch, m| {
        info!("epoch {epoch}: writing checkpoint");
        checkpoint(m).map_err(|e| Error::Config(format!("{e:#}")))
    })?;
    Ok(report)
}

pub fn train(
    config: &ToolkitConfig,
    kind: ModelKind,
    data: Option<PathBuf>,
    out: &Path,
) -> anyhow::Result<()> {
    let data = data.unwrap_or_else(|| config.paths.data.clone());
    let (header, episodes) = read_dataset(&data)?;
    check_physics(config, &header)?;
    let dataset_hash = file_sha256(&data)?;
    let part = partition(config, &episodes)?;
    let norm = Normalizer::fit(&part.train, config.window(), config.stride())?;
    create_parent(out)?;
    let root = Rng::new(config.seed);
    let save = |model: Model, train: Option<TrainConfig>| -> anyhow::Result<()> {
        Checkpoint::new(&model, dataset_hash.clone(), config.hash(), train)
            .save(out)
            .context("saving checkpoint")
    };

    let report = match kind {
        ModelKind::Kt => {
            let mut m = KtModel::new(
                config.kt.clone(),
                norm.clone(),
                &mut root.substream("init/kt"),
            )?;
            let tc = TrainConfig {
                seed: Rng::derive_seed(config.seed, "train/kt"),
                ..config.train.kt.clone()
            };
            let report = train_model(&mut m, config, &part, &norm, &tc, |m| {
                save(Model::Kt(m.clone()), Some(tc.clone()))
            })?;
            save(Model::Kt(m), Some(tc))?;
            Some(report)
        }
        ModelKind::Ffnn => {
            let mut m = FfnnModel::new(
                config.ffnn.clone(),
                norm.clone(),
                &mut root.substream("init/ffnn"),
            )?;
            let tc = TrainConfig {
                seed: Rng::derive_seed(config.seed, "train/ffnn"),
                ..config.train.ffnn.clone()
            };
            let report = train_model(&mut m, config, &part, &norm, &tc, |m| {
                save(Model::Ffnn(m.clone()), Some(tc.clone()))
            })?;
            save(Model::Ffnn(m), Some(tc))?;
            Some(report)
        }
        ModelKind::Oracle => {
            save(Model::Oracle(OracleModel::new(&episodes, norm)), None)?;
            None
        }
    };
    if let Some(r) = report {
        write(&sibling(out, ".loss.txt"), r.loss_log())?;
        println!(
            "initial loss {:.4}  best validation loss {:.4} at epoch {}",
            r.initial_loss, r.best_val_loss, r.best_epoch
        );
    }
    info!("wrote {}", out.display());
    Ok(())
}

fn load_model(config: &ToolkitConfig, path: &Path) -> anyhow::Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(path)?;
    if ck.header.config_hash != config.hash() {
        return Err(Error::Config(format!(
            "{} was produced under config {} but the current config hashes to {}",
            path.display(),
            ck.header.config_hash,
            config.hash()
        ))
        .into());
    }
    let model = ck.to_model()?;
    Ok((ck, model))
}

pub fn eval(
    config: &ToolkitConfig,
    model_path: &Path,
    data: Option<PathBuf>,
    report_prefix: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (ck, model) = load_model(config, model_path)?;
    let report_prefix = report_prefix.unwrap_or_else(|| {
        config
            .paths
            .out_dir
            .join(format!("{}-report", model.name()))
    });
    create_parent(&report_prefix)?;
    let report_prefix = report_prefix.as_path();
    let data = data.unwrap_or_else(|| config.paths.data.clone());
    let (header, episodes) = read_dataset(&data)?;
    check_physics(config, &header)?;
    let dataset_hash = file_sha256(&data)?;
    // On the training file only the held-out split is scored.
    let test = if dataset_hash == ck.header.dataset_hash {
        partition(config, &episodes)?.test
    } else {
        episodes
    };
    let predictions = predict_all(&model, &test)?;
    let force = force_errors(&test, &predictions)?;
    let position = position_errors(
        &test,
        &predictions,
        &config.limb,
        &config.material,
        &config.solver,
    )?;
    let timing = timing_benchmark(
        &model,
        &test[0],
        config.eval.timing_iterations,
        config.eval.timing_warmup,
    )?;
    write(
        &sibling(report_prefix, ".scatter.csv"),
        scatter_csv(&position.points),
    )?;
    let report = BenchmarkReport {
        model: model.name().to_owned(),
        dataset_hash,
        episodes: test.len(),
        force,
        position: Some(position),
        timing: Some(timing),
    };
    let text = report.to_text();
    write(&sibling(report_prefix, ".txt"), &text)?;
    write(&sibling(report_prefix, ".json"), report.to_json())?;
    print!("{text}");
    Ok(())
}

pub fn bench(
    config: &ToolkitConfig,
    model_path: &Path,
    iterations: Option<usize>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (_, model) = load_model(config, model_path)?;
    let context = match data {
        Some(path) => read_dataset(&path)?
            .1
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config("dataset has no episodes".into()))?,
        None => rest_context(config)?,
    };
    let iterations = iterations.unwrap_or(config.eval.timing_iterations);
    let t = timing_benchmark(&model, &context, iterations, config.eval.timing_warmup)?;
    let text = format!(
        "{} single-step inference: {:.2} ± {:.2} µs over {} runs\n",
        model.name(),
        t.mean_us,
        t.std_us,
        t.iterations
    );
    print!("{text}");
    if let Some(out) = out {
        write(&out, serde_json::to_string_pretty(&t)?)?;
    }
    Ok(())
}

/// A full window of tokens holding the limb at rest.
fn rest_context(config: &ToolkitConfig) -> anyhow::Result<Episode> {
    let tip = solve_statics(
        &config.limb,
        &config.material,
        &TendonForces::ZERO,
        &config.solver,
    )?
    .tip();
    let r = [tip.x, tip.y, tip.z];
    let step = Step {
        r,
        t: [0.0; 4],
        r_d: r,
        t_a: [0.0; 4],
    };
    Ok(Episode {
        seed: 0,
        steps: vec![step; config.window()],
    })
}
