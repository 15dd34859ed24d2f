//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impsgd-bench"))
}

fn write_blob_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    let config = format!(
        r#"
[experiment]
name = "blob-smoke"
arms = ["uniform-only", "upper-bound"]
{extra}

[dataset]
kind = "blobs"
classes = 3
per_class = 60
dim = 6
spread = 1.2
seed = 5

[network]
hidden = [12]
activation = "tanh"
init_seed = 2

[train]
presample_size = 48
batch_size = 12
tau_threshold = 1.1
learning_rate = 0.05
momentum = 0.9
max_iterations = 120
seed = 9
loss = "softmax-cross-entropy"
"#
    );
    std::fs::write(&path, config).unwrap();
    path
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(|line| serde_json::from_str(line).unwrap_or_else(|e| panic!("bad JSONL line `{line}`: {e}")))
        .collect()
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn train_emits_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);

    for arm in ["uniform", "upper-bound"] {
        let lines = read_jsonl(&out_dir.join(format!("{arm}.jsonl")));
        // line 0 is the run header carrying the seed
        assert!(lines[0].get("seed").is_some() && lines[0].get("rng").is_some());
        assert_eq!(lines.len() - 1, 120, "one record per iteration for {arm}");
        for record in &lines[1..] {
            for key in ["iteration", "wall_clock_seconds", "mode", "train_loss", "tau", "forward_count", "backward_count"] {
                assert!(record.get(key).is_some(), "{arm} record missing {key}");
            }
        }
        assert!(out_dir.join(format!("{arm}-final-network.json")).exists());
    }

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    // the low threshold makes the upper-bound arm switch on this problem
    let upper = runs.iter().find(|r| r["arm"] == "upper-bound").unwrap();
    assert!(upper["switched_at_iteration"].is_u64(), "summary: {upper}");
    let uniform = runs.iter().find(|r| r["arm"] == "uniform").unwrap();
    assert!(uniform["switched_at_iteration"].is_null());
}

#[test]
fn identical_runs_are_identical_modulo_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(dir.path(), "");
    for run in ["a", "b"] {
        let output = bin()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--output")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        assert_success(&output);
    }
    for arm in ["uniform", "upper-bound"] {
        let a = read_jsonl(&dir.path().join("a").join(format!("{arm}.jsonl")));
        let b = read_jsonl(&dir.path().join("b").join(format!("{arm}.jsonl")));
        assert_eq!(a.len(), b.len());
        for (mut ra, mut rb) in a.into_iter().zip(b) {
            ra.as_object_mut().unwrap().remove("wall_clock_seconds");
            rb.as_object_mut().unwrap().remove("wall_clock_seconds");
            assert_eq!(ra, rb);
        }
    }
}

#[test]
fn seed_flag_changes_the_sampling_stream() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(dir.path(), "");
    for (run, seed) in [("a", "9"), ("b", "10")] {
        let output = bin()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--output")
            .arg(dir.path().join(run))
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert_success(&output);
    }
    let a = read_jsonl(&dir.path().join("a").join("uniform.jsonl"));
    let b = read_jsonl(&dir.path().join("b").join("uniform.jsonl"));
    let losses = |v: &[Value]| -> Vec<f64> { v[1..].iter().map(|r| r["train_loss"].as_f64().unwrap()).collect() };
    assert_ne!(losses(&a), losses(&b));
}

#[test]
fn b_sweep_produces_one_run_per_presample_size() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(dir.path(), "b_sweep = [24, 48]");
    let out_dir = dir.path().join("run");
    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);
    for name in ["uniform-B24.jsonl", "uniform-B48.jsonl", "upper-bound-B24.jsonl", "upper-bound-B48.jsonl"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn variance_probe_normalizes_uniform_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(
        dir.path(),
        "\n[probe]\npresample_size = 64\nbatch_size = 16\nresamples = 5\nevery = 60\n",
    );
    let out_dir = dir.path().join("probe");
    let output = bin()
        .args(["variance-probe", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);

    let lines = read_jsonl(&out_dir.join("variance-probe.jsonl"));
    let probes: Vec<&Value> = lines[1..].iter().collect();
    assert!(!probes.is_empty());
    // probes at iteration 60 and at the end (120)
    let iterations: Vec<u64> = probes.iter().map(|p| p["iteration"].as_u64().unwrap()).collect();
    assert!(iterations.contains(&60) && iterations.contains(&120));
    for p in &probes {
        if p["arm"] == "uniform" {
            let norm = p["normalized_distance"].as_f64().unwrap();
            assert!((norm - 1.0).abs() < 1e-9, "uniform normalized to {norm}");
        }
    }
    assert!(out_dir.join("variance-probe-summary.json").exists());
}

#[test]
fn correlate_emits_probability_triples() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_blob_config(dir.path(), "\n[correlate]\nsample_size = 64\n");
    let out_dir = dir.path().join("corr");
    let output = bin()
        .args(["correlate", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);

    let lines = read_jsonl(&out_dir.join("correlate.jsonl"));
    assert_eq!(lines.len(), 64);
    for key in ["g_loss", "g_upper", "g_gradnorm"] {
        let total: f64 = lines.iter().map(|l| l[key].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6, "{key} sums to {total}");
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("correlate-summary.json")).unwrap()).unwrap();
    for key in ["sse_loss_vs_gradnorm", "sse_upper_vs_gradnorm", "pearson_loss_vs_gradnorm", "pearson_upper_vs_gradnorm"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    // a trained network: the cheap upper bound should track the oracle better
    // than the loss does
    let p_upper = summary["pearson_upper_vs_gradnorm"].as_f64().unwrap();
    let p_loss = summary["pearson_loss_vs_gradnorm"].as_f64().unwrap();
    assert!(p_upper > p_loss, "pearson upper {p_upper} vs loss {p_loss}");
}

#[test]
fn correlate_against_untrained_checkpoint() {
    // on a fresh random network the upper bound still tracks the oracle
    // better than the loss does
    let dir = tempfile::tempdir().unwrap();
    let net = impsgd::nn::glorot_init::<f64>(&[32, 64, 3], impsgd::nn::ActivationKind::Tanh, 78).unwrap();
    let ckpt = dir.path().join("net.json");
    impsgd::serialize::save_network(&net, &ckpt).unwrap();
    let config_path = dir.path().join("untrained.toml");
    let config = format!(
        r#"
[experiment]
arms = ["upper-bound"]

[dataset]
kind = "blobs"
classes = 3
per_class = 60
dim = 32
spread = 1.2
seed = 5

[network]
hidden = [64]
activation = "tanh"
init_seed = 78

[train]
presample_size = 48
batch_size = 12
learning_rate = 0.05
max_iterations = 10
seed = 9
loss = "softmax-cross-entropy"

[correlate]
sample_size = 128
checkpoint = {ckpt:?}
"#,
        ckpt = ckpt.to_str().unwrap()
    );
    std::fs::write(&config_path, config).unwrap();
    let config = config_path;
    let out_dir = dir.path().join("corr");
    let output = bin()
        .args(["correlate", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("correlate-summary.json")).unwrap()).unwrap();
    let p_upper = summary["pearson_upper_vs_gradnorm"].as_f64().unwrap();
    let p_loss = summary["pearson_loss_vs_gradnorm"].as_f64().unwrap();
    assert!(p_upper > p_loss, "untrained: pearson upper {p_upper} vs loss {p_loss}");
}

#[test]
fn validate_passes_on_fresh_build() {
    let output = bin().arg("validate").output().unwrap();
    assert_success(&output);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("FAIL")).count(), 0, "{stdout}");
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[experiment]\narms = []\n").unwrap();
    let output = bin()
        .args(["train", "--config"])
        .arg(&path)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!output.stderr.is_empty());

    let missing = dir.path().join("nope.toml");
    let output = bin()
        .args(["train", "--config"])
        .arg(&missing)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn idx_dataset_config_trains() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("digits.toml");
    let config = format!(
        r#"
[experiment]
arms = ["upper-bound"]
eval_holdout = 297
eval_every = 50

[dataset]
kind = "idx"
images = {images:?}
labels = {labels:?}

[network]
hidden = [16]
activation = "rectifier"
init_seed = 3

[train]
presample_size = 64
batch_size = 16
learning_rate = 0.05
momentum = 0.9
max_iterations = 100
seed = 4
loss = "softmax-cross-entropy"
"#,
        images = root.join("data/digits-images-idx3-ubyte").to_str().unwrap(),
        labels = root.join("data/digits-labels-idx1-ubyte").to_str().unwrap(),
    );
    std::fs::write(&config_path, config).unwrap();
    let out_dir = dir.path().join("run");
    let output = bin()
        .args(["train", "--config"])
        .arg(&config_path)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&output);
    let lines = read_jsonl(&out_dir.join("upper-bound.jsonl"));
    // eval fields appear at the configured cadence
    let with_eval: Vec<&Value> = lines[1..].iter().filter(|r| r.get("eval_loss").is_some()).collect();
    assert_eq!(with_eval.len(), 2, "eval at iterations 50 and 100");
}
