//! Command implementations: seeded training runs with JSONL metrics,
//! variance probes, correlation dumps, and the oracle validation suite.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde_json::json;

use impsgd::probe;
use impsgd::scoring::ScoreKind;
use impsgd::serialize;
use impsgd::trainer::{self, SamplingMode, TrainConfig};
use impsgd::validate;

use crate::config::ExperimentFile;

const PROBE_SEED_SALT: u64 = 0x5052_4f42_45;

fn open_jsonl(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_line(out: &mut impl Write, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn run_header(config: &TrainConfig) -> serde_json::Value {
    json!({
        "rng": "xoshiro256++",
        "seed": config.seed,
        "score_kind": config.score_kind.name(),
        "loss": config.loss.name(),
        "presample_size": config.presample_size,
        "batch_size": config.batch_size,
        "tau_threshold": config.tau_threshold,
        "tau_ema": config.tau_ema,
        "tau_mode": config.tau_mode.name(),
        "learning_rate": config.learning_rate,
        "momentum": config.momentum,
        "weight_decay": config.weight_decay,
        "max_iterations": config.max_iterations,
    })
}

/// `train`: one run per arm (times one per swept presample size), identical
/// data and initial network across arms, independent sampling streams.
pub fn run_train(file: &ExperimentFile, output: &Path, seed_override: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let (train_set, eval_set) = file.datasets()?;
    let network = file.network(&train_set)?;
    let arms = file.arms()?;
    let sweeps = file
        .experiment
        .b_sweep
        .clone()
        .unwrap_or_else(|| vec![file.train.presample_size]);
    let multi_b = sweeps.len() > 1;

    let mut summaries = Vec::new();
    for (arm_index, &kind) in arms.iter().enumerate() {
        for &presample in &sweeps {
            let config = file.train_config(kind, arm_index, presample, seed_override)?;
            let slug = if multi_b {
                format!("{}-B{presample}", kind.name())
            } else {
                kind.name().to_string()
            };
            let metrics_path = output.join(format!("{slug}.jsonl"));
            let mut metrics = open_jsonl(&metrics_path)?;
            write_line(&mut metrics, &run_header(&config))?;

            let checkpoint_every = file.experiment.checkpoint_every.unwrap_or(0);
            let outcome = trainer::train_observed(
                &config,
                network.clone(),
                &train_set,
                eval_set.as_ref(),
                |record, net| {
                    write_line(&mut metrics, &serde_json::to_value(record).expect("record serializes"))
                        .expect("metrics write");
                    if checkpoint_every > 0 && record.iteration % checkpoint_every == 0 {
                        let path = output.join(format!("{slug}-checkpoint-{}.json", record.iteration));
                        serialize::save_network(net, path).expect("checkpoint write");
                    }
                },
            )?;
            metrics.flush()?;
            serialize::save_network(&outcome.network, output.join(format!("{slug}-final-network.json")))?;

            let last = outcome.records.last().expect("at least one iteration");
            let switched_at = outcome
                .records
                .iter()
                .find(|r| r.mode == SamplingMode::Importance)
                .map(|r| r.iteration);
            summaries.push(json!({
                "arm": kind.name(),
                "presample_size": presample,
                "metrics_file": format!("{slug}.jsonl"),
                "final_train_loss": outcome.final_train.mean_loss,
                "final_train_error": outcome.final_train.error_rate,
                "final_eval_loss": outcome.final_eval.map(|e| e.mean_loss),
                "final_eval_error": outcome.final_eval.and_then(|e| e.error_rate),
                "final_tau": last.tau,
                "switched_at_iteration": switched_at,
                "forward_count": last.forward_count,
                "backward_count": last.backward_count,
                "cost_units": last.forward_count + 2 * last.backward_count,
            }));
            println!(
                "{slug}: final train loss {:.6e}{}",
                outcome.final_train.mean_loss,
                match switched_at {
                    Some(t) => format!(", importance sampling from iteration {t}"),
                    None => ", stayed uniform".to_string(),
                }
            );
        }
    }
    let summary_path = output.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&json!({ "name": file.experiment.name, "runs": summaries }))?)?;
    println!("summary written to {}", summary_path.display());
    Ok(())
}

fn probe_arms(file: &ExperimentFile) -> Result<Vec<ScoreKind>> {
    let mut arms = match &file.probe.arms {
        Some(names) => names
            .iter()
            .map(|n| Ok(ScoreKind::from_name(n)?))
            .collect::<Result<Vec<_>>>()?,
        None => vec![ScoreKind::Uniform, ScoreKind::Loss, ScoreKind::UpperBound, ScoreKind::GradientNorm],
    };
    if !arms.contains(&ScoreKind::Uniform) {
        arms.insert(0, ScoreKind::Uniform); // the normalization baseline
    }
    Ok(arms)
}

/// `variance-probe`: at checkpoints of a training run (or on a saved
/// network), measure the distance between resampled-batch gradients and the
/// presample gradient under each arm, normalized by the uniform arm.
pub fn run_variance_probe(file: &ExperimentFile, output: &Path, seed_override: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let (train_set, _eval) = file.datasets()?;
    let loss = file.loss_kind()?;
    let arms = probe_arms(file)?;
    let presample = file.probe.presample_size.unwrap_or(1024).min(train_set.len());
    let batch = file.probe.batch_size.unwrap_or(128).min(presample);
    let resamples = file.probe.resamples.unwrap_or(10);
    let base_seed = seed_override.unwrap_or(file.train.seed);
    let mut probe_rng = Xoshiro256PlusPlus::seed_from_u64(base_seed ^ PROBE_SEED_SALT);

    let path = output.join("variance-probe.jsonl");
    let mut out = open_jsonl(&path)?;
    write_line(
        &mut out,
        &json!({
            "rng": "xoshiro256++",
            "seed": base_seed,
            "presample_size": presample,
            "batch_size": batch,
            "resamples": resamples,
            "arms": arms.iter().map(|a| a.name()).collect::<Vec<_>>(),
        }),
    )?;

    let emit = |iteration: u64, net: &impsgd::Network64, rng: &mut Xoshiro256PlusPlus, out: &mut BufWriter<File>| -> Result<Vec<serde_json::Value>> {
        let report = probe::variance_probe(net, &train_set, loss, presample, batch, resamples, &arms, rng)?;
        let mut lines = Vec::new();
        for arm in &report {
            let line = json!({
                "iteration": iteration,
                "arm": arm.kind.name(),
                "mean_distance": arm.mean_distance,
                "normalized_distance": arm.normalized_distance,
            });
            write_line(out, &line)?;
            lines.push(line);
        }
        Ok(lines)
    };

    let final_lines = if let Some(checkpoint) = &file.probe.checkpoint {
        let network = serialize::load_network::<f64>(checkpoint)?;
        emit(0, &network, &mut probe_rng, &mut out)?
    } else {
        let config = file.train_config(ScoreKind::Uniform, 0, file.train.presample_size, seed_override)?;
        let every = file.probe.every.unwrap_or(0);
        let mut mid_err = None;
        let outcome = trainer::train_observed(&config, file.network(&train_set)?, &train_set, None, |record, net| {
            if every > 0 && record.iteration % every == 0 && record.iteration < config.max_iterations && mid_err.is_none() {
                if let Err(e) = emit(record.iteration, net, &mut probe_rng, &mut out) {
                    mid_err = Some(e);
                }
            }
        })?;
        if let Some(e) = mid_err {
            return Err(e);
        }
        emit(config.max_iterations, &outcome.network, &mut probe_rng, &mut out)?
    };
    out.flush()?;

    std::fs::write(
        output.join("variance-probe-summary.json"),
        serde_json::to_string_pretty(&json!({ "final": final_lines }))?,
    )?;
    println!("variance probe written to {}", path.display());
    Ok(())
}

/// `correlate`: dump per-sample probability triples (loss, upper-bound,
/// gradient-norm) plus SSE/correlation summaries.
pub fn run_correlate(file: &ExperimentFile, output: &Path, seed_override: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(output)?;
    let (train_set, _eval) = file.datasets()?;
    let loss = file.loss_kind()?;
    let sample_size = file.correlate.sample_size.unwrap_or(1024).min(train_set.len());
    let base_seed = seed_override.unwrap_or(file.train.seed);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(base_seed ^ PROBE_SEED_SALT);

    let network = match &file.correlate.checkpoint {
        Some(path) => serialize::load_network::<f64>(path)?,
        None => {
            let config = file.train_config(ScoreKind::Uniform, 0, file.train.presample_size, seed_override)?;
            trainer::train(&config, file.network(&train_set)?, &train_set, None)?.network
        }
    };

    let report = probe::correlation_probe(&network, &train_set, loss, sample_size, &mut rng)?;
    let path = output.join("correlate.jsonl");
    let mut out = open_jsonl(&path)?;
    for (i, triple) in report.triples.iter().enumerate() {
        write_line(
            &mut out,
            &json!({
                "index": i,
                "g_loss": triple.g_loss,
                "g_upper": triple.g_upper,
                "g_gradnorm": triple.g_gradnorm,
            }),
        )?;
    }
    out.flush()?;

    let summary = json!({
        "sample_size": report.triples.len(),
        "sse_loss_vs_gradnorm": report.sse_loss,
        "sse_upper_vs_gradnorm": report.sse_upper,
        "pearson_loss_vs_gradnorm": report.pearson_loss,
        "pearson_upper_vs_gradnorm": report.pearson_upper,
    });
    std::fs::write(output.join("correlate-summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "correlate: SSE upper {:.4e} vs loss {:.4e}; Pearson upper {:.4} vs loss {:.4}",
        report.sse_upper, report.sse_loss, report.pearson_upper, report.pearson_loss
    );
    Ok(())
}

/// `validate`: run the oracle suite, print one line per property, exit
/// nonzero on any failure.
pub fn run_validate() -> Result<bool> {
    let mut all_passed = true;
    for report in validate::run_all() {
        let verdict = if report.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} - {}", report.name, report.details);
        all_passed &= report.passed;
    }
    Ok(all_passed)
}
