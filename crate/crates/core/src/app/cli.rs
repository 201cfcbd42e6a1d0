//! `cav-detect` subcommands.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::anomaly::{inject, write_labels};
use crate::detect::DetectorBank;
use crate::eval::{
    derive_seed, format_table, grid_evaluate, run_scenario, training_innovations, write_results, write_summary, Scenario,
    ScenarioRun, INJECT_STREAM, TEST_STREAM, TRAIN_STREAM,
};
use crate::filter::write_epoch_trace;
use crate::motion::{generate_dataset, TrajectoryDataset};
use crate::{Error, Result};

use super::config::RunConfig;
use super::plot::{emit_plot, PlotKind};
use super::trace::{synth_lead_trace, write_trace};

#[derive(Debug, Parser)]
#[command(name = "cav-detect", version, about = "Sensor anomaly detection for a car-following vehicle")]
pub struct Cli {
    /// Base seed; dataset, training and injection seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a leader/follower dataset from a lead-speed CSV.
    Gen {
        /// Lead-speed CSV (`t,v`); defaults to the configured or bundled trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Use the training trace and training seed stream.
        #[arg(long)]
        train: bool,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Inject labeled sensor anomalies into a dataset.
    Inject {
        #[arg(long)]
        input: PathBuf,
        /// Set every anomaly magnitude c_i to this value.
        #[arg(long = "c")]
        setting: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Filter, detect and recover one dataset; writes the epoch trace.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Trained bank JSON for `ocsvm_idm`; trained on the fly if absent.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Train the one-class SVM bank and calibrate its switching thresholds.
    Train {
        /// Clean dataset CSV; generated from the training trace if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run the full scenario x setting x delay grid.
    Eval,
    /// ROC curve of one cell.
    Roc {
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long = "c")]
        setting: Option<f64>,
    },
    /// Write a synthetic lead-speed trace (the generator of the bundled data).
    Trace {
        #[arg(long, default_value_t = 4000)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Inject { .. } => "inject",
            Command::Run { .. } => "run",
            Command::Train { .. } => "train",
            Command::Eval => "eval",
            Command::Roc { .. } => "roc",
            Command::Trace { .. } => "trace",
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status: 0 success, 2 usage or configuration error, 1
/// runtime error.
pub fn cli_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let mut inputs: Vec<&Path> = Vec::new();
    match &cli.command {
        Command::Gen { trace, train, tau } => {
            if let Some(t) = trace {
                if *train {
                    cfg.train_trace = Some(t.clone());
                } else {
                    cfg.trace = Some(t.clone());
                }
            }
            cfg.tau = tau.unwrap_or(cfg.tau);
        }
        Command::Inject { input, setting, alpha } => {
            inputs.push(input);
            if let Some(c) = setting {
                cfg.anomaly.magnitudes = [*c; 4];
            }
            cfg.anomaly.alpha = alpha.unwrap_or(cfg.anomaly.alpha);
        }
        Command::Run { input, scenario, bank, tau } => {
            inputs.push(input);
            inputs.extend(bank.as_deref());
            cfg.scenario = scenario.unwrap_or(cfg.scenario);
            cfg.tau = tau.unwrap_or(cfg.tau);
        }
        Command::Train { input, tau } => {
            inputs.extend(input.as_deref());
            cfg.tau = tau.unwrap_or(cfg.tau);
        }
        Command::Roc { scenario, tau, setting } => {
            cfg.scenario = scenario.unwrap_or(cfg.scenario);
            cfg.tau = tau.unwrap_or(cfg.tau);
            if let Some(c) = setting {
                cfg.anomaly.magnitudes = [*c; 4];
            }
        }
        Command::Eval | Command::Trace { .. } => {}
    }
    for p in inputs {
        if !p.is_file() {
            return Err(Error::Config(format!("input file {} does not exist", p.display())));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", cfg.out.display()))))?;
    let details = match cmd {
        Command::Gen { train, .. } => gen(cfg, *train)?,
        Command::Inject { input, .. } => inject_cmd(cfg, input)?,
        Command::Run { input, bank, .. } => run_cmd(cfg, input, bank.as_deref())?,
        Command::Train { input, .. } => train_cmd(cfg, input.as_deref())?,
        Command::Eval => eval_cmd(cfg)?,
        Command::Roc { .. } => roc_cmd(cfg)?,
        Command::Trace { samples } => trace_cmd(cfg, *samples)?,
    };
    write_metadata(cfg, cmd.name(), details)
}

/// `metadata.json`: the fully resolved configuration plus values derived
/// during the run.
fn write_metadata(cfg: &RunConfig, command: &str, details: Value) -> Result<()> {
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "details": details,
    });
    let path = cfg.out.join("metadata.json");
    std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn create(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(cfg.out.join(name))?))
}

fn gen(cfg: &RunConfig, train: bool) -> Result<Value> {
    let (trace, stream) = if train { (cfg.training_trace()?, TRAIN_STREAM) } else { (cfg.test_trace()?, TEST_STREAM) };
    let seed = derive_seed(cfg.seed, stream);
    let ds = generate_dataset(&trace, &cfg.generation_at_tau(), seed)?;
    ds.write_csv(create(cfg, "dataset.csv")?)?;
    println!("wrote {} epochs to {}", ds.len(), cfg.out.join("dataset.csv").display());
    Ok(json!({ "epochs": ds.len(), "generation": ds.meta }))
}

fn inject_cmd(cfg: &RunConfig, input: &Path) -> Result<Value> {
    let clean = TrajectoryDataset::load_csv(input)?;
    let seed = derive_seed(cfg.seed, INJECT_STREAM);
    let (corrupted, labels) = inject(&clean, &cfg.anomaly, seed)?;
    corrupted.write_csv(create(cfg, "corrupted.csv")?)?;
    write_labels(&labels, create(cfg, "labels.csv")?)?;
    let flagged = (0..corrupted.len()).filter(|&k| corrupted.is_anomalous(k)).count();
    println!("{} anomalies, {flagged} of {} epochs labeled", labels.len(), corrupted.len());
    Ok(json!({ "input": input, "injection_seed": seed, "anomalies": labels.len(), "labeled_epochs": flagged }))
}

fn trained_bank(cfg: &RunConfig, input: Option<&Path>) -> Result<DetectorBank> {
    let clean = match input {
        Some(p) => TrajectoryDataset::load_csv(p)?,
        None => generate_dataset(&cfg.training_trace()?, &cfg.generation_at_tau(), derive_seed(cfg.seed, TRAIN_STREAM))?,
    };
    let pts = training_innovations(&clean, cfg.tau, &cfg.pipeline)?;
    DetectorBank::train(&pts, &cfg.bank)
}

fn bank_for(cfg: &RunConfig, file: Option<&Path>) -> Result<Option<DetectorBank>> {
    if cfg.scenario != Scenario::OcsvmIdm {
        return Ok(None);
    }
    match file {
        Some(p) => Ok(Some(DetectorBank::from_json(&std::fs::read_to_string(p)?)?)),
        None => trained_bank(cfg, None).map(Some),
    }
}

fn auc_text(run: &ScenarioRun) -> Result<(Option<f64>, String)> {
    let auc = run.auc()?;
    Ok((auc, auc.map_or_else(|| "N/A (single-class labels)".to_string(), |a| format!("{a:.4}"))))
}

fn run_cmd(cfg: &RunConfig, input: &Path, bank_file: Option<&Path>) -> Result<Value> {
    let ds = TrajectoryDataset::load_csv(input)?;
    let bank = bank_for(cfg, bank_file)?;
    let run = run_scenario(cfg.scenario, &ds, cfg.tau, &cfg.pipeline, bank.as_ref())?;
    write_epoch_trace(&run.epochs, create(cfg, "trace.csv")?)?;

    let mut w = csv::Writer::from_writer(create(cfg, "scores.csv")?);
    w.write_record(["k", "score", "label", "verdict", "x_rec", "v_rec"])?;
    for (i, e) in run.epochs.iter().enumerate() {
        w.write_record([
            e.epoch.to_string(),
            run.scores[i].to_string(),
            (run.labels[i] as u8).to_string(),
            (e.verdict as u8).to_string(),
            e.recovered.x.to_string(),
            e.recovered.v.to_string(),
        ])?;
    }
    w.flush()?;

    let pts: Vec<(f64, f64)> = run.epochs.iter().map(|e| (e.innovation.normalized[0], e.innovation.normalized[1])).collect();
    let sigma = cfg.pipeline.chi2.threshold.sqrt();
    emit_plot(&pts, PlotKind::Scatter { sigma }, &cfg.out.join("innovations.svg"))?;

    let flagged = run.verdicts().filter(|&v| v).count();
    let (auc, text) = auc_text(&run)?;
    println!("{}: {} epochs, {flagged} flagged, AUC {text}", cfg.scenario, run.epochs.len());
    Ok(json!({
        "input": input,
        "scenario": cfg.scenario,
        "epochs": run.epochs.len(),
        "flagged": flagged,
        "auc": auc,
        "bank": bank.map(|b| json!({ "bandwidth": b.bandwidth(), "gammas": b.gammas, "training_mean": b.training_mean })),
    }))
}

fn train_cmd(cfg: &RunConfig, input: Option<&Path>) -> Result<Value> {
    let bank = trained_bank(cfg, input)?;
    std::fs::write(cfg.out.join("bank.json"), bank.to_json()?)?;
    println!("bandwidth {:.4}, gammas {:?}", bank.bandwidth(), bank.gammas);
    Ok(json!({ "bandwidth": bank.bandwidth(), "gammas": bank.gammas, "training_mean": bank.training_mean }))
}

fn eval_cmd(cfg: &RunConfig) -> Result<Value> {
    let grid = cfg.grid_config();
    let report = grid_evaluate(&cfg.training_trace()?, &cfg.test_trace()?, &grid)?;
    write_results(&report, create(cfg, "results.csv")?)?;
    write_summary(&report, create(cfg, "summary.csv")?)?;
    let table = format_table(&report, &grid);
    std::fs::write(cfg.out.join("table.txt"), &table)?;
    print!("{table}");
    let failures: Vec<String> = report
        .failures()
        .map(|r| format!("{} tau={} c={} seed={}: {}", r.scenario, r.tau, r.c, r.seed, r.error.as_deref().unwrap_or("")))
        .collect();
    for f in &failures {
        eprintln!("failed cell: {f}");
    }
    let details = json!({ "cells": report.summary.len(), "failures": failures, "banks": report.banks });
    if !failures.is_empty() {
        write_metadata(cfg, "eval", details)?;
        return Err(Error::Detector(format!("{} grid cells failed; see results.csv", failures.len())));
    }
    Ok(details)
}

fn roc_cmd(cfg: &RunConfig) -> Result<Value> {
    let clean = generate_dataset(&cfg.test_trace()?, &cfg.generation_at_tau(), derive_seed(cfg.seed, TEST_STREAM))?;
    let (corrupted, _) = inject(&clean, &cfg.anomaly, derive_seed(cfg.seed, INJECT_STREAM))?;
    let bank = bank_for(cfg, None)?;
    let run = run_scenario(cfg.scenario, &corrupted, cfg.tau, &cfg.pipeline, bank.as_ref())?;
    let roc = run.roc()?.ok_or(Error::SingleClass)?;

    let mut w = csv::Writer::from_writer(create(cfg, "roc.csv")?);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &roc.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    let pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    emit_plot(&pts, PlotKind::Roc, &cfg.out.join("roc.svg"))?;
    println!("{} tau={} c={:?}: AUC {:.4}", cfg.scenario, cfg.tau, cfg.anomaly.magnitudes, roc.auc);
    Ok(json!({ "scenario": cfg.scenario, "auc": roc.auc, "positives": roc.positives, "negatives": roc.negatives }))
}

fn trace_cmd(cfg: &RunConfig, samples: usize) -> Result<Value> {
    if samples < 2 {
        return Err(Error::invalid("a trace needs at least 2 samples"));
    }
    write_trace(&synth_lead_trace(samples, cfg.seed), create(cfg, "lead.csv")?)?;
    println!("wrote {samples} samples to {}", cfg.out.join("lead.csv").display());
    Ok(json!({ "samples": samples }))
}
