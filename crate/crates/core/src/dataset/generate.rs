use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Episode, Step};
use crate::cosserat::{
    solve_statics, LimbGeometry, MaterialProperties, SolverOptions, TendonForces,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// How successive label forces are drawn within an episode.
///
/// The first label of every episode is uniform on `[0, max]^4`. Under
/// `RandomWalk` each later label moves every tendon by a uniform increment
/// in `[-max_step_n, max_step_n]`, reflected at the bounds; reflection keeps
/// the uniform law invariant, so every step is marginally uniform while
/// consecutive steps stay correlated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceProcess {
    Independent,
    RandomWalk { max_step_n: f64 },
}

impl Default for ForceProcess {
    fn default() -> Self {
        ForceProcess::RandomWalk { max_step_n: 2.0 }
    }
}

impl ForceProcess {
    pub fn validate(&self, max_force_n: f64) -> Result<()> {
        if let ForceProcess::RandomWalk { max_step_n } = self {
            if !(*max_step_n > 0.0 && *max_step_n <= max_force_n) {
                return Err(Error::Config(format!(
                    "random-walk step {max_step_n} N must lie in (0, {max_force_n}]"
                )));
            }
        }
        Ok(())
    }

    pub fn draw(&self, previous: Option<&[f64; 4]>, max_force_n: f64, rng: &mut Rng) -> [f64; 4] {
        match (self, previous) {
            (ForceProcess::RandomWalk { max_step_n }, Some(prev)) => {
                let mut next = *prev;
                for t in &mut next {
                    *t = reflect(*t + rng.uniform(-max_step_n, *max_step_n), max_force_n);
                }
                next
            }
            _ => [0; 4].map(|_| rng.uniform(0.0, max_force_n)),
        }
    }

    /// Label sequence of one episode without solving, for statistics.
    pub fn sample_sequence(&self, steps: usize, max_force_n: f64, rng: &mut Rng) -> Vec<[f64; 4]> {
        let mut out: Vec<[f64; 4]> = Vec::with_capacity(steps);
        for _ in 0..steps {
            let next = self.draw(out.last(), max_force_n, rng);
            out.push(next);
        }
        out
    }
}

fn reflect(mut x: f64, max: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > max {
            x = 2.0 * max - x;
        } else {
            return x;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub max_force_n: f64,
    pub process: ForceProcess,
    /// Attempts per step when the solver fails on a drawn force vector.
    pub redraws: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            steps_per_episode: 200,
            max_force_n: 10.0,
            process: ForceProcess::default(),
            redraws: 10,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 || self.episodes == 0 {
            return Err(Error::Config(
                "episodes and steps_per_episode must be positive".into(),
            ));
        }
        if !(self.max_force_n > 0.0 && self.max_force_n.is_finite()) {
            return Err(Error::Config("tendon.max_force_n must be positive".into()));
        }
        if self.redraws == 0 {
            return Err(Error::Config("dataset.redraws must be at least 1".into()));
        }
        self.process.validate(self.max_force_n)
    }
}

/// Generates one episode from its own seed.
///
/// Step 0 starts at the rest shape with zero tension; every later state is
/// the previous label and the tip it produced.
pub fn generate_episode(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Episode> {
    config.validate()?;
    Ok(episode_with_failures(geometry, material, solver, config, seed)?.0)
}

/// Solver attempts made while generating, including redrawn ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub solves: usize,
    pub failures: usize,
}

impl GenerationStats {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.solves.max(1) as f64
    }
}

fn episode_with_failures(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(Episode, usize)> {
    let mut failures = 0;
    let mut rng = Rng::new(seed);
    let rest = solve_statics(geometry, material, &TendonForces::ZERO, solver)?.tip();
    let mut r = [rest.x, rest.y, rest.z];
    let mut t = [0.0; 4];
    let mut previous: Option<[f64; 4]> = None;
    let mut steps = Vec::with_capacity(config.steps_per_episode);

    for n in 0..config.steps_per_episode {
        let mut attempt = 0;
        let (t_a, r_d) = loop {
            let t_a = config
                .process
                .draw(previous.as_ref(), config.max_force_n, &mut rng);
            match solve_statics(geometry, material, &TendonForces(t_a), solver) {
                Ok(c) => {
                    let tip = c.tip();
                    break (t_a, [tip.x, tip.y, tip.z]);
                }
                Err(e) => {
                    attempt += 1;
                    failures += 1;
                    debug!("episode {seed} step {n}: solver failed for {t_a:?} ({e}), redrawing");
                    if attempt >= config.redraws {
                        return Err(Error::Solver {
                            forces: t_a,
                            source: Box::new(e),
                        });
                    }
                }
            }
        };
        steps.push(Step { r, t, r_d, t_a });
        r = r_d;
        t = t_a;
        previous = Some(t_a);
    }
    Ok((Episode { seed, steps }, failures))
}

/// Per-episode seed derived from the root seed, stable across thread counts.
pub fn episode_seed(root_seed: u64, index: usize) -> u64 {
    Rng::derive_seed(root_seed, &format!("dataset/episode/{index}"))
}

/// Generates `config.episodes` episodes in parallel.
///
/// `threads = None` uses rayon's default pool size.
pub fn generate_dataset(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
    config: &GeneratorConfig,
    root_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<Episode>> {
    Ok(generate_dataset_with_stats(geometry, material, solver, config, root_seed, threads)?.0)
}

/// [`generate_dataset`] that also reports how often the solver failed.
pub fn generate_dataset_with_stats(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
    config: &GeneratorConfig,
    root_seed: u64,
    threads: Option<usize>,
) -> Result<(Vec<Episode>, GenerationStats)> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    info!(
        "generating {} episodes x {} steps on {} threads",
        config.episodes,
        config.steps_per_episode,
        pool.current_num_threads()
    );
    let results: Vec<(Episode, usize)> = pool.install(|| {
        (0..config.episodes)
            .into_par_iter()
            .map(|i| {
                episode_with_failures(
                    geometry,
                    material,
                    solver,
                    config,
                    episode_seed(root_seed, i),
                )
            })
            .collect::<Result<_>>()
    })?;
    let failures: usize = results.iter().map(|r| r.1).sum();
    let stats = GenerationStats {
        // one rest solve per episode plus one per successful step
        solves: results.iter().map(|r| 1 + r.0.len()).sum::<usize>() + failures,
        failures,
    };
    Ok((results.into_iter().map(|r| r.0).collect(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_in_range() {
        assert_eq!(reflect(-1.5, 10.0), 1.5);
        assert_eq!(reflect(11.0, 10.0), 9.0);
        assert_eq!(reflect(4.0, 10.0), 4.0);
    }

    #[test]
    fn walk_steps_are_bounded() {
        let p = ForceProcess::RandomWalk { max_step_n: 2.0 };
        let seq = p.sample_sequence(1000, 10.0, &mut Rng::new(3));
        for w in seq.windows(2) {
            for i in 0..4 {
                assert!((w[1][i] - w[0][i]).abs() <= 2.0 + 1e-12);
                assert!((0.0..=10.0).contains(&w[1][i]));
            }
        }
    }

    #[test]
    fn invalid_walk_rejected() {
        let p = ForceProcess::RandomWalk { max_step_n: 0.0 };
        assert!(p.validate(10.0).is_err());
    }
}
