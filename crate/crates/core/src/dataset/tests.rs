use super::generate::episode_seed;
use super::*;
use crate::cosserat::{
    solve_statics, LimbGeometry, MaterialProperties, SolverOptions, TendonForces,
};
use crate::numerics::Rng;

fn config(steps: usize, episodes: usize) -> GeneratorConfig {
    GeneratorConfig {
        episodes,
        steps_per_episode: steps,
        ..GeneratorConfig::default()
    }
}

fn episode(steps: usize, seed: u64) -> Episode {
    generate_episode(
        &LimbGeometry::default(),
        &MaterialProperties::default(),
        &SolverOptions::default(),
        &config(steps, 1),
        seed,
    )
    .unwrap()
}

fn synthetic(len: usize, seed: u64) -> Episode {
    // Chain-consistent but solver-free, for slicing tests.
    let mut rng = Rng::new(seed);
    let mut steps = Vec::with_capacity(len);
    let (mut r, mut t) = ([0.6, 0.0, 0.0], [0.0; 4]);
    for _ in 0..len {
        let t_a = [0; 4].map(|_| rng.uniform(0.0, 10.0));
        let r_d = [0; 3].map(|_| rng.uniform(-0.3, 0.6));
        steps.push(Step { r, t, r_d, t_a });
        r = r_d;
        t = t_a;
    }
    Episode { seed, steps }
}

#[test]
fn single_step_episode_starts_at_rest() {
    let ep = episode(1, 7);
    assert_eq!(ep.len(), 1);
    assert_eq!(ep.steps[0].r, [0.6, 0.0, 0.0]);
    assert_eq!(ep.steps[0].t, [0.0; 4]);
    assert!(ep.steps[0].t_a.iter().all(|t| (0.0..10.0).contains(t)));
    ep.validate(10.0).unwrap();
}

#[test]
fn same_seed_same_episode() {
    assert_eq!(episode(12, 42), episode(12, 42));
    assert_ne!(episode(3, 42), episode(3, 43));
}

#[test]
fn chain_is_consistent_and_states_are_solver_outputs() {
    let ep = episode(30, 5);
    ep.validate(10.0).unwrap();
    for step in ep.steps.iter().step_by(7) {
        let c = solve_statics(
            &LimbGeometry::default(),
            &MaterialProperties::default(),
            &TendonForces(step.t),
            &SolverOptions::default(),
        )
        .unwrap();
        let tip = c.tip();
        assert_eq!([tip.x, tip.y, tip.z], step.r);
    }
}

#[test]
fn stored_goals_reproduce_under_the_solver() {
    let ep = episode(20, 9);
    for step in ep.steps.iter().step_by(5) {
        let c = solve_statics(
            &LimbGeometry::default(),
            &MaterialProperties::default(),
            &TendonForces(step.t_a),
            &SolverOptions::default(),
        )
        .unwrap();
        let tip = c.tip();
        assert_eq!([tip.x, tip.y, tip.z], step.r_d);
    }
}

#[test]
fn force_marginals_are_uniform() {
    let n = 10_000;
    for process in [ForceProcess::Independent, ForceProcess::default()] {
        // Thin the walk so samples are close to independent.
        let thin = if process == ForceProcess::Independent {
            1
        } else {
            100
        };
        let mut rng = Rng::new(11);
        let draws = process.sample_sequence(n * thin, 10.0, &mut rng);
        for i in 0..4 {
            let xs: Vec<f64> = draws.iter().step_by(thin).map(|t| t[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!(
                (4.5..=5.5).contains(&mean),
                "{process:?} tendon {i}: mean {mean}"
            );
            let d = uniform_ks_statistic(&xs, 0.0, 10.0);
            // alpha = 0.01 critical value
            assert!(
                d < 1.628 / (n as f64).sqrt(),
                "{process:?} tendon {i}: D = {d}"
            );
        }
    }
}

#[test]
fn ks_statistic_detects_a_skewed_sample() {
    let xs: Vec<f64> = (0..1000)
        .map(|i| (i as f64 / 1000.0).powi(2) * 10.0)
        .collect();
    assert!(uniform_ks_statistic(&xs, 0.0, 10.0) > 0.2);
}

#[test]
fn rest_only_summary() {
    let ep = Episode {
        seed: 0,
        steps: vec![Step {
            r: [0.6, 0.0, 0.0],
            t: [0.0; 4],
            r_d: [0.6, 0.0, 0.0],
            t_a: [0.0; 4],
        }],
    };
    let s = summarize(&[ep], 0.6).unwrap();
    assert_eq!(s.distance_from_base.max, 600.0);
    assert_eq!(s.distance_from_rest.max, 0.0);
    assert!(summarize(&[], 0.6).is_err());
}

#[test]
fn summary_is_ordered_and_reproducible() {
    let eps = vec![episode(25, 1), episode(25, 2)];
    let s = summarize(&eps, 0.6).unwrap();
    for (_, c) in s.columns() {
        assert!(c.min <= c.mean && c.mean <= c.max);
    }
    assert_eq!(s.distance_from_rest.min, 0.0);
    assert!(s.distance_from_base.max <= 610.0);
    assert_eq!(s, summarize(&eps, 0.6).unwrap());
    let table = s.to_table();
    assert!(table.contains("dist. from rest") && table.lines().count() == 7);
}

#[test]
fn windows_cover_whole_episodes() {
    let eps = vec![synthetic(200, 1), synthetic(24, 2)];
    let norm = Normalizer::fit(&eps, 25, 25).unwrap();
    let set = to_sequences(&eps, 25, 25, &norm).unwrap();
    assert_eq!(set.sequences.len(), 8);
    assert_eq!(set.skipped, 1);
    assert!(set.sequences.iter().all(|s| s.episode == 0 && s.len == 25));
    let starts: Vec<usize> = set.sequences.iter().map(|s| s.start).collect();
    assert_eq!(starts, (0..8).map(|k| 25 * k).collect::<Vec<_>>());

    let overlapping = to_sequences(&eps, 25, 5, &norm).unwrap();
    assert_eq!(overlapping.sequences.len(), 36);
}

#[test]
fn normalized_features_are_standardized() {
    let eps: Vec<Episode> = (0..4).map(|s| synthetic(200, s)).collect();
    let norm = Normalizer::fit(&eps, 25, 25).unwrap();
    let set = to_sequences(&eps, 25, 25, &norm).unwrap();
    for (dim, get) in [
        (
            STATE_DIM,
            (|s: &Sequence| &s.states) as fn(&Sequence) -> &Vec<f64>,
        ),
        (GOAL_DIM, |s: &Sequence| &s.goals),
    ] {
        for j in 0..dim {
            let col: Vec<f64> = set
                .sequences
                .iter()
                .flat_map(|s| get(s).chunks(dim).map(move |row| row[j]))
                .collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9, "channel {j}: mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "channel {j}: std {std}");
        }
    }
}

#[test]
fn split_sizes_and_determinism() {
    let eps: Vec<Episode> = (0..10).map(|s| synthetic(2, s)).collect();
    let (train, test) = split(&eps, 0.8, &mut Rng::new(1)).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    let again = split(&eps, 0.8, &mut Rng::new(1)).unwrap();
    assert_eq!((train.clone(), test.clone()), again);
    let seeds: std::collections::BTreeSet<u64> =
        train.iter().chain(&test).map(|e| e.seed).collect();
    assert_eq!(seeds.len(), 10);

    let (train, test) = split(&eps[..5], 0.8, &mut Rng::new(2)).unwrap();
    assert_eq!((train.len(), test.len()), (4, 1));
    assert!(split(&eps[..1], 0.8, &mut Rng::new(2)).is_err());
}

#[test]
fn parallel_generation_is_thread_count_independent() {
    let g = LimbGeometry::default();
    let m = MaterialProperties::default();
    let o = SolverOptions::default();
    let c = config(6, 4);
    let one = generate_dataset(&g, &m, &o, &c, 99, Some(1)).unwrap();
    let two = generate_dataset(&g, &m, &o, &c, 99, Some(2)).unwrap();
    assert_eq!(one, two);
    assert_eq!(one[2].seed, episode_seed(99, 2));
    let (again, stats) = generate_dataset_with_stats(&g, &m, &o, &c, 99, Some(1)).unwrap();
    assert_eq!(again, one);
    assert_eq!(stats.solves, 4 * 7 + stats.failures);
}

#[test]
fn file_round_trip_is_exact() {
    let g = LimbGeometry::default();
    let m = MaterialProperties::default();
    let o = SolverOptions::default();
    let c = config(8, 3);
    let eps = generate_dataset(&g, &m, &o, &c, 5, Some(1)).unwrap();
    let header = DatasetHeader::new(&g, &m, &o, &c, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_dataset(&path, &header, &eps).unwrap();
    let (h, back) = read_dataset(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, eps);

    let hash = file_sha256(&path).unwrap();
    assert_eq!(hash.len(), 64);
    let path2 = dir.path().join("again.jsonl");
    write_dataset(&path2, &header, &back).unwrap();
    assert_eq!(file_sha256(&path2).unwrap(), hash);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let header = DatasetHeader::new(
        &LimbGeometry::default(),
        &MaterialProperties::default(),
        &SolverOptions::default(),
        &GeneratorConfig::default(),
        0,
    );
    let path = dir.path().join("bad.jsonl");
    let mut broken = synthetic(3, 0);
    broken.steps[1].t = [1.0; 4];
    write_dataset(&path, &header, &[broken]).unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(crate::Error::Contract(_))
    ));

    std::fs::write(&path, "{\"format\": 1}\n").unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(crate::Error::Format { .. })
    ));
    assert!(matches!(
        read_dataset(&dir.path().join("missing.jsonl")),
        Err(crate::Error::Io { .. })
    ));
}
