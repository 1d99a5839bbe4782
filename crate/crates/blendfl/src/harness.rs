//! Command implementations behind the CLI binary.
//!
//! Every command returns a process exit code instead of panicking:
//! 0 success, 1 runtime failure (partial artifacts may remain on disk),
//! 2 invalid input (bad config, bad flags, incompatible files).
//!
//! Artifact layout for `run`: with a single seed, `rounds.jsonl` and
//! `checkpoints/` sit directly in the output directory; with several
//! seeds each run gets its own `seed-<n>/` subdirectory. `summary.csv`
//! always sits at the top level, one row per (seed, head).

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::client::ModelBundle;
use crate::config::ExperimentConfig;
use crate::data::io::load_samples;
use crate::error::{Error, Result};
use crate::nn::checkpoint::save_network;
use crate::protocol::{
    default_client_counts, default_ratios, measure_speedup, rounds_to_target, run_ablation_grid,
    run_protocol, AggregationRule, Fleet, GridRow, GridSpec, Protocol, ProtocolRun,
};
use crate::report::save_reports;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

fn load_config(path: &Path, out_override: Option<&Path>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(out) = out_override {
        config.output_dir = out.to_path_buf();
    }
    Ok(config)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trains the configured protocol once per seed and writes rounds.jsonl,
/// per-head checkpoints, and summary.csv.
pub fn cmd_run(config_path: &Path, out_override: Option<&Path>) -> i32 {
    let config = match load_config(config_path, out_override) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_all_seeds(&config) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    if config.seeds.len() == 1 {
        config.output_dir.clone()
    } else {
        config.output_dir.join(format!("seed-{seed}"))
    }
}

fn run_all_seeds(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let mut summary: Vec<[String; 6]> = Vec::new();
    for &seed in &config.seeds {
        let dir = seed_dir(config, seed);
        std::fs::create_dir_all(&dir)?;
        let mut fleet = Fleet::build(&config.fleet_spec(seed))?;
        let protocol_config = config.protocol_config(seed);
        let run = run_protocol(&mut fleet, &protocol_config)?;
        save_reports(&dir.join("rounds.jsonl"), &run.reports)?;
        write_checkpoints(&dir.join("checkpoints"), &run)?;
        let last = run
            .reports
            .last()
            .ok_or_else(|| Error::Run("run produced no rounds".to_string()))?;
        for (head, &auroc) in &last.test_auroc {
            summary.push([
                seed.to_string(),
                last.protocol.clone(),
                head.clone(),
                auroc.to_string(),
                fmt_opt_f64(last.test_auprc.get(head).copied()),
                fmt_opt_usize(rounds_to_target(&run.reports, head, config.target_auroc)),
            ]);
        }
    }
    let mut w = csv::Writer::from_path(config.output_dir.join("summary.csv")).map_err(csv_err)?;
    w.write_record(["seed", "protocol", "head", "auroc", "auprc", "rounds_to_target"])
        .map_err(csv_err)?;
    for row in &summary {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Run(format!("csv write failed: {e}"))
}

/// One loadable bundle per head that can run on its own, plus the full
/// global bundle. The cut-layer baseline has no client-complete model;
/// its server classifier is saved alone.
fn write_checkpoints(dir: &Path, run: &ProtocolRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(global) = &run.global {
        global.save(&dir.join("global.bundle"))?;
        let heads: [(&str, ModelBundle); 3] = [
            (
                "multimodal",
                ModelBundle {
                    f_a: global.f_a.clone(),
                    f_b: global.f_b.clone(),
                    g_m: global.g_m.clone(),
                    ..ModelBundle::default()
                },
            ),
            (
                "unimodal_a",
                ModelBundle {
                    f_a: global.f_a.clone(),
                    g_a: global.g_a.clone(),
                    ..ModelBundle::default()
                },
            ),
            (
                "unimodal_b",
                ModelBundle {
                    f_b: global.f_b.clone(),
                    g_b: global.g_b.clone(),
                    ..ModelBundle::default()
                },
            ),
        ];
        for (name, bundle) in &heads {
            if !bundle.entries().is_empty() {
                bundle.save(&dir.join(format!("{name}.bundle")))?;
            }
        }
    }
    if let Some(head) = &run.server_head {
        save_network(&dir.join("server_head.net"), head)?;
    }
    Ok(())
}

fn parse_ratio(text: &str) -> Result<(u32, u32)> {
    let bad = || {
        Error::Config(format!(
            "ratio '{text}' is not of the form PAIRED/PARTIAL, e.g. 90/10"
        ))
    };
    let (p, q) = text.split_once('/').ok_or_else(bad)?;
    Ok((
        p.trim().parse().map_err(|_| bad())?,
        q.trim().parse().map_err(|_| bad())?,
    ))
}

/// Sweeps the paired/partial mix and the fleet size over every seed and
/// protocol, writing one grid.csv row per (cell, seed, protocol, head).
/// With neither flag given, both default sweeps run; passing a flag with
/// no values disables that sweep.
pub fn cmd_ablate(
    config_path: &Path,
    ratio_args: Option<&[String]>,
    client_args: Option<&[usize]>,
    out_override: Option<&Path>,
) -> i32 {
    let config = match load_config(config_path, out_override) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let ratios = match ratio_args {
        None if client_args.is_none() => default_ratios(),
        None => Vec::new(),
        Some(args) => match args.iter().map(|a| parse_ratio(a)).collect() {
            Ok(r) => r,
            Err(e) => return fail(&e),
        },
    };
    let client_counts = match client_args {
        None if ratio_args.is_none() => default_client_counts(),
        None => Vec::new(),
        Some(args) => args.to_vec(),
    };
    let spec = GridSpec {
        fleet: config.fleet_spec(config.seeds[0]),
        protocol: config.protocol_config(config.seeds[0]),
        ratios,
        client_counts,
        seeds: config.seeds.clone(),
        target: config.target_auroc,
    };
    let rows = match run_ablation_grid(&spec) {
        Ok(rows) => rows,
        Err(e) => return fail(&e),
    };
    match write_grid(&config.output_dir, &rows) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

fn write_grid(out_dir: &Path, rows: &[GridRow]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("grid.csv")).map_err(csv_err)?;
    w.write_record([
        "protocol",
        "ratio",
        "n_clients",
        "seed",
        "head",
        "auroc",
        "auprc",
        "rounds_to_target",
    ])
    .map_err(csv_err)?;
    for row in rows {
        w.write_record([
            row.protocol.clone(),
            row.ratio.clone(),
            row.n_clients.to_string(),
            row.seed.to_string(),
            row.head.clone(),
            fmt_opt_f64(row.auroc),
            fmt_opt_f64(row.auprc),
            fmt_opt_usize(row.rounds_to_target),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Races the two aggregation rules to a validation target at each update
/// interval, writing one speedup.csv row per interval. Uses the first
/// seed; the config's round count caps each arm.
pub fn cmd_speedup(
    config_path: &Path,
    intervals: &[usize],
    target: f64,
    out_override: Option<&Path>,
) -> i32 {
    if intervals.is_empty() {
        return fail(&Error::Config("need at least one interval".to_string()));
    }
    if !(target > 0.5 && target < 1.0) {
        return fail(&Error::Config(format!(
            "target must lie in (0.5, 1.0), got {target}"
        )));
    }
    let config = match load_config(config_path, out_override) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match speedup_rows(&config, intervals, target)
        .and_then(|rows| write_speedup(&config.output_dir, &rows))
    {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

fn speedup_rows(
    config: &ExperimentConfig,
    intervals: &[usize],
    target: f64,
) -> Result<Vec<[String; 4]>> {
    let seed = config.seeds[0];
    let fleet = Fleet::build(&config.fleet_spec(seed))?;
    let mut baseline = config.protocol_config(seed);
    baseline.protocol = Protocol::Blendfl;
    baseline.aggregation = AggregationRule::FedAvg;
    let mut contender = baseline.clone();
    contender.aggregation = AggregationRule::BlendAvg;
    let max_rounds = config.protocol.rounds;
    let mut rows = Vec::new();
    for &interval in intervals {
        baseline.local_epochs_per_round = interval;
        contender.local_epochs_per_round = interval;
        let out = measure_speedup(&fleet, &baseline, &contender, target, max_rounds)?;
        let unreached = |v: Option<usize>| {
            v.map(|x| x.to_string())
                .unwrap_or_else(|| "unreached".to_string())
        };
        rows.push([
            interval.to_string(),
            unreached(out.rounds_baseline),
            unreached(out.rounds_contender),
            out.speedup
                .map(|s| s.to_string())
                .unwrap_or_else(|| "unreached".to_string()),
        ]);
    }
    Ok(rows)
}

fn write_speedup(out_dir: &Path, rows: &[[String; 4]]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("speedup.csv")).map_err(csv_err)?;
    w.write_record(["interval", "rounds_fedavg", "rounds_blendavg", "speedup"])
        .map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct InferRecord {
    id: u64,
    head_used: String,
    prediction: usize,
    scores: Vec<f64>,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Labels a sample file with a trained checkpoint, entirely locally: the
/// checkpoint picks the strongest head each sample's modalities support.
/// Output is one JSON object per line on standard output.
pub fn cmd_infer(checkpoint: &Path, samples_path: &Path) -> i32 {
    match infer_lines(checkpoint, samples_path) {
        Ok(lines) => {
            print!("{lines}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn infer_lines(checkpoint: &Path, samples_path: &Path) -> Result<String> {
    let bundle = ModelBundle::load(checkpoint)?;
    let samples = load_samples(samples_path)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no samples",
            samples_path.display()
        )));
    }
    let mut out = String::new();
    for sample in &samples {
        let (scores, head) = bundle.infer(sample)?;
        let record = InferRecord {
            id: sample.id,
            head_used: head.label().to_string(),
            prediction: argmax(&scores),
            scores,
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| {
            Error::Run(format!("prediction serialization failed: {e}"))
        })?);
        out.push('\n');
    }
    Ok(out)
}
