//! End-to-end checks of the command-line interface: artifact layout, exit
//! codes, determinism of written files, and agreement between the CLI's
//! inference output and the library it wraps.

use std::path::Path;
use std::process::{Command, Output};

use blendfl::client::ModelBundle;
use blendfl::data::io::load_samples;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blendfl"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "expected success for {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn");
    (
        out.status.code().expect("no signal"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SMALL_CONFIG: &str = r#"
seeds = [5]

[synthetic]
n_samples = 80
n_classes = 3
dim_a = 4
dim_b = 3
class_separation = 3.0
noise_std = 0.5

[partition]
n_clients = 2
paired_fraction = 0.5
fragmented_fraction = 0.2
layout = "spread"
val_fraction = 0.2
test_fraction = 0.2

[model]
encoder_hidden = 5
latent_dim = 3

[protocol]
rounds = 2
lr = 0.1
batch_size = 8
"#;

fn write_config(dir: &Path, patches: &[(&str, &str)]) -> String {
    let mut text = SMALL_CONFIG.to_string();
    for (from, to) in patches {
        assert!(text.contains(from), "config patch target missing: {from}");
        text = text.replace(from, to);
    }
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn run_writes_the_advertised_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);

    let rounds = read_lines(&out.join("rounds.jsonl"));
    assert_eq!(rounds.len(), 2);
    for line in &rounds {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["protocol"], "blendfl");
    }
    for bundle in ["global", "multimodal", "unimodal_a", "unimodal_b"] {
        let path = out.join(format!("checkpoints/{bundle}.bundle"));
        assert!(path.exists(), "missing {bundle}.bundle");
        ModelBundle::load(&path).unwrap();
    }

    let summary = read_lines(&out.join("summary.csv"));
    assert_eq!(summary[0], "seed,protocol,head,auroc,auprc,rounds_to_target");
    let heads: Vec<&str> = summary[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(heads, ["multimodal", "unimodal_a", "unimodal_b"]);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out1 = tmp.path().join("one");
    let out2 = tmp.path().join("two");
    run_ok(&["run", "--config", &cfg, "--out", out1.to_str().unwrap()]);
    run_ok(&["run", "--config", &cfg, "--out", out2.to_str().unwrap()]);
    for name in ["rounds.jsonl", "summary.csv", "checkpoints/global.bundle"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn multi_seed_runs_nest_under_seed_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[("seeds = [5]", "seeds = [5, 6]")]);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);

    for seed in [5, 6] {
        assert!(out.join(format!("seed-{seed}/rounds.jsonl")).exists());
        assert!(out.join(format!("seed-{seed}/checkpoints/global.bundle")).exists());
    }
    let summary = read_lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 1 + 2 * 3);
    let seeds: Vec<&str> = summary[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["5", "5", "5", "6", "6", "6"]);
}

#[test]
fn relay_run_keeps_only_the_server_side_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[("[protocol]", "[protocol]\nprotocol = \"splitnn\"")]);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(out.join("checkpoints/server_head.net").exists());
    assert!(!out.join("checkpoints/global.bundle").exists());
    let summary = read_lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    assert!(summary[1].contains(",splitnn,multimodal,"));
}

#[test]
fn sweep_rows_cover_protocols_heads_and_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out = tmp.path().join("grid");
    run_ok(&[
        "ablate", "--config", &cfg, "--ratios", "90/10", "50/50",
        "--out", out.to_str().unwrap(),
    ]);
    let grid = read_lines(&out.join("grid.csv"));
    assert_eq!(
        grid[0],
        "protocol,ratio,n_clients,seed,head,auroc,auprc,rounds_to_target"
    );
    // Two cells, one seed: the two blended arms report three heads each and
    // the relay baseline reports one, per cell.
    assert_eq!(grid.len(), 1 + 2 * 7);
    for ratio in ["90/10", "50/50"] {
        let rows: Vec<&String> = grid[1..]
            .iter()
            .filter(|l| l.split(',').nth(1).unwrap() == ratio)
            .collect();
        assert_eq!(rows.len(), 7, "cell {ratio}");
        for protocol in ["blendfl", "fedavg", "splitnn"] {
            assert!(rows.iter().any(|l| l.starts_with(protocol)), "{ratio} {protocol}");
        }
    }
}

#[test]
fn client_sweep_scales_with_the_requested_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out = tmp.path().join("grid");
    run_ok(&[
        "ablate", "--config", &cfg, "--clients", "2", "3",
        "--out", out.to_str().unwrap(),
    ]);
    let grid = read_lines(&out.join("grid.csv"));
    assert_eq!(grid.len(), 1 + 2 * 7);
    let counts: std::collections::BTreeSet<&str> =
        grid[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(counts.into_iter().collect::<Vec<_>>(), ["2", "3"]);
}

#[test]
fn speedup_table_is_internally_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[("rounds = 2", "rounds = 15")]);
    let out = tmp.path().join("speed");
    run_ok(&[
        "speedup", "--config", &cfg, "--intervals", "1", "2",
        "--target", "0.8", "--out", out.to_str().unwrap(),
    ]);
    let table = read_lines(&out.join("speedup.csv"));
    assert_eq!(table[0], "interval,rounds_fedavg,rounds_blendavg,speedup");
    assert_eq!(table.len(), 3);
    for (line, interval) in table[1..].iter().zip(["1", "2"]) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], interval);
        match (cols[1].parse::<f64>(), cols[2].parse::<f64>()) {
            (Ok(rf), Ok(rb)) => {
                let s: f64 = cols[3].parse().unwrap();
                assert!((s - rf / rb).abs() < 1e-9, "{line}");
            }
            _ => {
                assert!(cols[1] == "unreached" || cols[2] == "unreached");
                assert_eq!(cols[3], "unreached");
            }
        }
    }
}

#[test]
fn inference_stays_local_and_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);

    let samples = tmp.path().join("samples.txt");
    std::fs::write(
        &samples,
        "0;1;0.5,0.2,0.1,0.3;0.4,0.2,0.6\n1;0;0.1,0.9,0.3,0.2;-\n2;2;-;0.7,0.1,0.2\n",
    )
    .unwrap();
    let checkpoint = out.join("checkpoints/global.bundle");
    let stdout = run_ok(&[
        "infer", "--checkpoint", checkpoint.to_str().unwrap(),
        "--samples", samples.to_str().unwrap(),
    ])
    .stdout;
    let text = String::from_utf8(stdout).unwrap();
    let records: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0]["head_used"], "multimodal");
    assert_eq!(records[1]["head_used"], "unimodal_a");
    assert_eq!(records[2]["head_used"], "unimodal_b");

    // The CLI must print exactly what the loaded checkpoint computes.
    let bundle = ModelBundle::load(&checkpoint).unwrap();
    let loaded = load_samples(&samples).unwrap();
    for (record, sample) in records.iter().zip(&loaded) {
        let (scores, _) = bundle.infer(sample).unwrap();
        let printed: Vec<f64> = record["scores"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(printed, scores);
        // Ties resolve to the lowest class index.
        let mut argmax = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[argmax] {
                argmax = i;
            }
        }
        assert_eq!(record["prediction"].as_u64().unwrap() as usize, argmax);
    }
}

#[test]
fn bad_inputs_exit_with_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();

    let bad_fraction = tmp.path().join("bad.toml");
    std::fs::write(&bad_fraction, "[partition]\npaired_fraction = 1.5\n").unwrap();
    let (code, stderr) = exit_code(&["run", "--config", bad_fraction.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("paired_fraction"), "{stderr}");

    let unknown_key = tmp.path().join("unknown.toml");
    std::fs::write(&unknown_key, "[synthetic]\nn_sample = 10\n").unwrap();
    let (code, stderr) = exit_code(&["run", "--config", unknown_key.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");

    let cfg = write_config(tmp.path(), &[]);
    let (code, stderr) = exit_code(&["speedup", "--config", &cfg, "--target", "1.2"]);
    assert_eq!(code, 2, "{stderr}");

    // An unreadable config file is a configuration problem, not a crash.
    let (code, _) = exit_code(&["run", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code, 2);

    // Failures past configuration, like an unwritable output root, exit 1.
    let cfg = write_config(tmp.path(), &[]);
    let (code, _) = exit_code(&["run", "--config", &cfg, "--out", "/dev/null/out"]);
    assert_eq!(code, 1);
}

#[test]
fn inference_rejects_mismatched_feature_widths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let out = tmp.path().join("out");
    run_ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);

    let samples = tmp.path().join("narrow.txt");
    std::fs::write(&samples, "0;1;0.5,0.2;-\n").unwrap();
    let (code, stderr) = exit_code(&[
        "infer", "--checkpoint", out.join("checkpoints/global.bundle").to_str().unwrap(),
        "--samples", samples.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{stderr}");
    assert!(!stderr.is_empty());
}
