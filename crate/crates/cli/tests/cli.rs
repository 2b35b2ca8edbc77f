//! End-to-end tests of the binary: every subcommand, the exit-code
//! contract, and byte-level reproducibility of artifacts.

use std::path::Path;
use std::process::{Command, Output};

use activeview::env::{generate_synthetic, save_manifest, FeatureStorage, SynthConfig};
use activeview::nets::ModelParams;
use activeview::pipeline::{save_checkpoint, Checkpoint, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_activeview"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

const SYNTH_SMOKE: &str = "classes = 6
groups = 2
views = 4
feature_dim = 12
train_per_class = 10
test_per_class = 10
";

const TRAIN_SMOKE: &str = "hidden_dim = 16
mlp_width = 12
stage1_epochs = 6
stage2_epochs = 3
stage3_epochs = 4
";

/// Writes smoke-scale manifests and returns the data directory path.
fn smoke_data(dir: &Path) -> std::path::PathBuf {
    let cfg_path = dir.join("synth.toml");
    std::fs::write(&cfg_path, SYNTH_SMOKE).unwrap();
    let data = dir.join("data");
    let out = run(&[
        "gen-data",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    data
}

#[test]
fn gen_data_default_corpus_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&["gen-data", "--out", out_dir.to_str().unwrap()]);
        assert_code(&out, 0);
    }
    let msg = stdout(&run(&["gen-data", "--out", a.to_str().unwrap(), "--force"]));
    assert!(msg.contains("1000 train / 800 test"), "summary: {msg}");

    // One header line plus one record line per sample.
    assert_eq!(lines(&a.join("train.manifest")), 1001);
    assert_eq!(lines(&a.join("test.manifest")), 801);
    for name in ["train.manifest", "test.manifest"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
    assert!(a.join("provenance.json").is_file());
}

#[test]
fn gen_data_rejects_bad_configs_with_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");

    std::fs::write(&cfg, "classes = 7\ngroups = 2\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let err = stderr(&out);
    assert!(err.contains("7 classes") && err.contains("2 groups"), "stderr: {err}");

    std::fs::write(&cfg, "classess = 6\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("classess"), "stderr: {}", stderr(&out));
}

#[test]
fn refuses_to_write_into_a_nonempty_directory_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path());
    let again = run(&["gen-data", "--out", data.to_str().unwrap()]);
    assert_code(&again, 2);
    assert!(stderr(&again).contains("--force"));

    let cfg = dir.path().join("synth.toml");
    let forced = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--force",
    ]);
    assert_code(&forced, 0);
}

#[test]
fn usage_errors_and_help() {
    assert_code(&run(&["no-such-command"]), 1);
    assert_code(&run(&["eval"]), 1);
    let help = run(&["--help"]);
    assert_code(&help, 0);
    let text = stdout(&help);
    for name in ["gen-data", "train", "eval", "upper-bound", "analyze-views", "exit-sweep"] {
        assert!(text.contains(name), "--help is missing {name}");
    }
}

#[test]
fn train_then_score_workflow_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path());
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, TRAIN_SMOKE).unwrap();
    let rundir = dir.path().join("run");

    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        rundir.to_str().unwrap(),
        "--eval-seeds",
        "0,1",
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("mAcc"));
    for name in ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "training_log.csv"] {
        assert!(rundir.join(name).is_file(), "missing {name}");
    }
    // All three stages appear in the log: 6 + 3 + 4 epochs plus the header.
    assert_eq!(lines(&rundir.join("training_log.csv")), 14);

    let ckpt = rundir.join("stage3.ckpt");
    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--seeds",
        "0,1",
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("w-mAcc"));
    assert_eq!(lines(&eval_dir.join("curve.csv")), 5);
    assert_eq!(lines(&eval_dir.join("metrics.csv")), 4);

    let ub_dir = dir.path().join("ub");
    let out = run(&[
        "upper-bound",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        ub_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    // Exactly one row per step.
    assert_eq!(lines(&ub_dir.join("upper_bound.csv")), 5);

    let views_dir = dir.path().join("views");
    let out = run(&[
        "analyze-views",
        "--data",
        data.to_str().unwrap(),
        "--out",
        views_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("gap"));
    // One row per view and class pair.
    assert_eq!(lines(&views_dir.join("view_matrix.csv")), 1 + 4 * 6);

    let exit_dir = dir.path().join("exit");
    let out = run(&[
        "exit-sweep",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        exit_dir.to_str().unwrap(),
        "--targets",
        "2,3",
        "--seeds",
        "0,1",
    ]);
    assert_code(&out, 0);
    // One row per requested budget.
    assert_eq!(lines(&exit_dir.join("exit_curve.csv")), 3);
}

#[test]
fn train_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path());
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, TRAIN_SMOKE).unwrap();

    let run_a = dir.path().join("run-a");
    let run_b = dir.path().join("run-b");
    for rundir in [&run_a, &run_b] {
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            rundir.to_str().unwrap(),
            "--eval-seeds",
            "0",
        ]);
        assert_code(&out, 0);
    }
    for name in ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "training_log.csv"] {
        let bytes_a = std::fs::read(run_a.join(name)).unwrap();
        let bytes_b = std::fs::read(run_b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
}

#[test]
fn ablation_flags_reshape_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path());
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, TRAIN_SMOKE).unwrap();

    let rundir = dir.path().join("random");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        rundir.to_str().unwrap(),
        "--ablation",
        "random-selection",
        "--gamma",
        "0.5",
        "--eval-seeds",
        "0",
    ]);
    assert_code(&out, 0);
    assert!(rundir.join("stage1.ckpt").is_file());
    assert!(!rundir.join("stage2.ckpt").exists(), "random selection must skip stage 2");
    assert!(rundir.join("stage3.ckpt").is_file());

    let provenance = std::fs::read_to_string(rundir.join("provenance.json")).unwrap();
    let record: serde_json::Value = serde_json::from_str(&provenance).unwrap();
    assert_eq!(record["config"]["random_selection"], serde_json::Value::Bool(true));
    assert_eq!(record["config"]["gamma"], serde_json::json!(0.5));

    let rundir = dir.path().join("joint");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        rundir.to_str().unwrap(),
        "--ablation",
        "end-to-end",
        "--eval-seeds",
        "0",
    ]);
    assert_code(&out, 0);
    assert!(rundir.join("stage0.ckpt").is_file(), "joint training writes one snapshot");
    assert!(!rundir.join("stage1.ckpt").exists());
}

#[test]
fn eval_on_an_untrained_checkpoint_sits_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = smoke_data(dir.path());

    let synth: SynthConfig = toml::from_str(SYNTH_SMOKE).unwrap();
    let (train, _) = generate_synthetic(&synth).unwrap();
    let cfg = TrainConfig { hidden_dim: 16, mlp_width: 12, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ModelParams::init(cfg.model_config(&train), &mut rng).unwrap();
    let ckpt = dir.path().join("fresh.ckpt");
    save_checkpoint(&ckpt, &Checkpoint::new(params, 1, 0, "none".into(), &rng)).unwrap();

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--mode",
        "random",
        "--seeds",
        "0,1,2",
    ]);
    assert_code(&out, 0);

    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let m_acc: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("m_acc,"))
        .unwrap()
        .parse()
        .unwrap();
    let chance = 1.0 / 6.0;
    assert!((m_acc - chance).abs() < 0.12, "untrained m_acc {m_acc} vs chance {chance}");
}

#[test]
fn non_finite_features_divergence_is_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let synth: SynthConfig = toml::from_str(SYNTH_SMOKE).unwrap();
    let (train, test) = generate_synthetic(&synth).unwrap();

    // The save path refuses non-finite features, so plant the NaN in the
    // binary sidecar afterwards; the lenient loader admits it and training
    // must then fail loudly rather than learn from garbage.
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    save_manifest(&train, &data.join("train.manifest"), FeatureStorage::Sidecar).unwrap();
    save_manifest(&test, &data.join("test.manifest"), FeatureStorage::Sidecar).unwrap();
    let sidecar = data.join("train.features.bin");
    let mut bytes = std::fs::read(&sidecar).unwrap();
    bytes[..8].copy_from_slice(&f64::NAN.to_le_bytes());
    std::fs::write(&sidecar, bytes).unwrap();

    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, TRAIN_SMOKE).unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 3);
    let err = stderr(&out);
    assert!(err.contains("stage 1, epoch 0"), "stderr: {err}");
}
