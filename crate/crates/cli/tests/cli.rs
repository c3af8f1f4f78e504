use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3

[dataset]
episodes = 6
steps_per_episode = 30

[kt]
sequence_length = 5
embedding_dim = 8
layer_count = 1
head_count = 2

[ffnn]
hidden_width = 16

[train.kt]
epochs = 2

[train.ffnn]
epochs = 3
checkpoint_interval = 1

[eval]
timing_iterations = 10
timing_warmup = 1
"#;

fn softlimb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softlimb"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("SOFTLIMB_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = softlimb(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    ok(dir.path(), &["--config", "c.toml", "generate"]);
    dir
}

#[test]
fn generation_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &["--config", "c.toml", "generate", "--out", "again.jsonl"],
    );
    let a = std::fs::read(d.join("episodes.jsonl")).unwrap();
    let b = std::fs::read(d.join("again.jsonl")).unwrap();
    assert_eq!(a, b);

    let summary = std::fs::read_to_string(d.join("episodes.jsonl.summary.txt")).unwrap();
    assert!(summary.contains("dist. from rest"));
    assert!(summary.contains("episodes 6"));

    ok(
        d,
        &[
            "--config",
            "c.toml",
            "generate",
            "--seed",
            "4",
            "--out",
            "other.jsonl",
        ],
    );
    assert_ne!(a, std::fs::read(d.join("other.jsonl")).unwrap());
}

#[test]
fn train_eval_and_bench_round_trip() {
    let dir = workspace();
    let d = dir.path();
    for model in ["ffnn", "kt"] {
        let ck = format!("{model}.ck");
        let stdout = ok(
            d,
            &[
                "--config", "c.toml", "train", "--model", model, "--out", &ck,
            ],
        );
        assert!(stdout.contains("best validation loss"));
        let log = std::fs::read_to_string(d.join(format!("{ck}.loss.txt"))).unwrap();
        assert!(log.starts_with("epoch train_loss val_loss"));

        let report = ok(
            d,
            &[
                "--config",
                "c.toml",
                "eval",
                "--model-path",
                &ck,
                "--report",
                model,
            ],
        );
        assert!(report.contains(&format!("model {model}")));
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(d.join(format!("{model}.json"))).unwrap(),
        )
        .unwrap();
        assert!(json["force"]["per_tendon"][0]["mae"]
            .as_f64()
            .unwrap()
            .is_finite());
        assert!(d.join(format!("{model}.scatter.csv")).exists());
    }
    let bench = ok(
        d,
        &[
            "--config",
            "c.toml",
            "bench",
            "--model-path",
            "kt.ck",
            "--iterations",
            "5",
            "--out",
            "t.json",
        ],
    );
    assert!(bench.contains("single-step inference"));
    assert!(d.join("t.json").exists());
}

#[test]
fn oracle_scores_zero_error() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--config", "c.toml", "train", "--model", "oracle"]);
    ok(
        d,
        &[
            "--config",
            "c.toml",
            "eval",
            "--model-path",
            "runs/oracle.ckpt",
        ],
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("runs/oracle-report.json")).unwrap())
            .unwrap();
    for t in 0..4 {
        assert_eq!(json["force"]["per_tendon"][t]["mae"].as_f64(), Some(0.0));
    }
    for a in 0..3 {
        assert!(json["position"]["per_axis"][a]["mae"].as_f64().unwrap() < 1e-9);
    }
    assert_eq!(json["position"]["failures"].as_u64(), Some(0));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "bogus = 1\n").unwrap();
    let out = softlimb(d, &["--config", "bad.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    std::fs::write(
        d.join("heads.toml"),
        "[kt]\nembedding_dim = 10\nhead_count = 3\n",
    )
    .unwrap();
    let out = softlimb(d, &["--config", "heads.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = softlimb(d, &["--config", "missing.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_pipelines_fail_loudly() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "--config", "c.toml", "train", "--model", "oracle", "--out", "o.ck",
        ],
    );

    // Same data, but a configuration the checkpoint was not trained under.
    std::fs::write(d.join("other.toml"), CONFIG.replace("seed = 3", "seed = 4")).unwrap();
    let out = softlimb(
        d,
        &[
            "--config",
            "other.toml",
            "eval",
            "--model-path",
            "o.ck",
            "--data",
            "episodes.jsonl",
            "--report",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    // A dataset generated for a different limb.
    std::fs::write(
        d.join("long.toml"),
        format!("{CONFIG}\n[limb]\nlength_m = 0.5\n"),
    )
    .unwrap();
    let out = softlimb(
        d,
        &[
            "--config",
            "long.toml",
            "train",
            "--model",
            "ffnn",
            "--data",
            "episodes.jsonl",
            "--out",
            "f.ck",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = softlimb(
        d,
        &[
            "--config",
            "c.toml",
            "eval",
            "--model-path",
            "episodes.jsonl",
            "--report",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}
