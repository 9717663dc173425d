//! `hsc`: generate a synthetic benchmark, train, augment, evaluate and inspect.

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hsc_core::data::{load_dataset, save_dataset};
use hsc_core::pipeline::{
    confusion_csv, evaluate_checkpoint, memory_csv, memory_sweep, run_stage1, run_stage2_detailed, scene_confusion,
    MemorySize, MemorySubsample,
};
use hsc_core::score::write_roc_csv;
use hsc_core::synth::generate_mixture_dataset;
use hsc_core::{Checkpoint, Dataset, StreamId};

use config::RunConfig;
use run::RunDir;

#[derive(Parser)]
#[command(name = "hsc", version, about = "Scene-aware video anomaly detection on feature-level datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set pipeline.train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parent of the per-run output directories.
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
    /// Write into this directory instead of a fresh timestamped one.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Memory {
    /// Score against a random subset of this many entries per bank.
    #[arg(long, conflicts_with = "memory_fraction")]
    memory_size: Option<usize>,
    /// Score against this fraction of each bank.
    #[arg(long)]
    memory_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    memory_seed: u64,
}

impl Memory {
    fn subsample(&self) -> Result<Option<MemorySubsample>> {
        let size = match (self.memory_size, self.memory_fraction) {
            (Some(0), _) => bail!("--memory-size must be positive"),
            (Some(n), _) => MemorySize::Entries(n),
            (None, Some(f)) if f > 0.0 && f <= 1.0 => MemorySize::Fraction(f),
            (None, Some(f)) => bail!("--memory-fraction must be in (0, 1], got {f}"),
            (None, None) => return Ok(None),
        };
        Ok(Some(MemorySubsample {
            size,
            seed: self.memory_seed,
        }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test benchmark.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set scenario.seed=N`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster scenes and train the two-stream model (stage one).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        /// Shorthand for `--set pipeline.train.seed=N`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Motion augmentation and stage two on a trained checkpoint.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Shorthand for setting both augmentation and stage-two seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a test split and report the frame-level AUC.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        memory: Memory,
    },
    /// Export memory banks and confusion matrices; compare reduced memories.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test split for AUC comparisons and the test confusion matrix.
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        memory: Memory,
        /// Comma-separated bank sizes for a memory sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Subsample seeds per sweep size.
        #[arg(long, default_value_t = 5)]
        sweep_seeds: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common, seed } => {
            let mut sets = Vec::new();
            if let Some(s) = seed {
                sets.push(format!("scenario.seed={s}"));
            }
            gen(&common, &sets)
        }
        Command::Train { common, train, seed } => {
            let mut sets = Vec::new();
            if let Some(s) = seed {
                sets.push(format!("pipeline.train.seed={s}"));
            }
            train_cmd(&common, &sets, &train)
        }
        Command::Augment {
            common,
            train,
            checkpoint,
            seed,
        } => {
            let mut sets = Vec::new();
            if let Some(s) = seed {
                sets.push(format!("pipeline.augment.seed={s}"));
                sets.push(format!("pipeline.stage2.seed={s}"));
            }
            augment(&common, &sets, &train, checkpoint.as_deref())
        }
        Command::Eval {
            common,
            test,
            checkpoint,
            memory,
        } => eval(&common, &test, checkpoint.as_deref(), &memory),
        Command::Inspect {
            common,
            checkpoint,
            test,
            memory,
            sweep,
            sweep_seeds,
        } => inspect(&common, checkpoint.as_deref(), test.as_deref(), &memory, &sweep, sweep_seeds),
    }
}

fn load_config(common: &Common, extra: &[String]) -> Result<RunConfig> {
    let mut sets = common.set.clone();
    sets.extend_from_slice(extra);
    RunConfig::load(common.config.as_deref(), &sets)
}

fn open_run(command: &'static str, common: &Common, cfg: &RunConfig, inputs: &[&Path]) -> Result<RunDir> {
    let run = RunDir::create(command, &common.out_root, common.run_dir.as_deref(), cfg, inputs)?;
    log::info!("{command}: writing to {} (config {})", run.path.display(), &cfg.hash()[..12]);
    Ok(run)
}

fn require_checkpoint(path: Option<&Path>) -> Result<(&Path, Checkpoint)> {
    let Some(p) = path else {
        bail!("missing checkpoint: pass --checkpoint <FILE>");
    };
    if !p.is_file() {
        bail!("missing checkpoint: {} does not exist", p.display());
    }
    let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
    Ok((p, ckpt))
}

fn dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn gen(common: &Common, sets: &[String]) -> Result<()> {
    let cfg = load_config(common, sets)?;
    let mut run = open_run("gen", common, &cfg, &[])?;
    let bench = generate_mixture_dataset(&cfg.scenario)?;
    save_dataset(&bench.train, run.output("train.jsonl")?)?;
    save_dataset(&bench.test, run.output("test.jsonl")?)?;
    bench.truth.save(run.output("truth.json")?)?;
    let results = json!({
        "train_clips": bench.train.clips.len(),
        "train_samples": bench.train.samples.len(),
        "test_clips": bench.test.clips.len(),
        "test_samples": bench.test.samples.len(),
        "anomalous_test_clips": bench.truth.test_clip_labels.iter().filter(|&&l| l == 1).count(),
    });
    let dir = run.finish(results)?;
    println!("dataset written to {}", dir.display());
    Ok(())
}

fn train_cmd(common: &Common, sets: &[String], train_path: &Path) -> Result<()> {
    let cfg = load_config(common, sets)?;
    let train = dataset(train_path)?;
    let mut run = open_run("train", common, &cfg, &[train_path])?;
    let (ckpt, history) = run_stage1(&train, &cfg.pipeline)?;
    ckpt.save(run.output("model.hsc")?)?;
    let mut lines = String::new();
    for h in &history {
        lines.push_str(&serde_json::to_string(h)?);
        lines.push('\n');
    }
    fs::write(run.output("history.jsonl")?, lines)?;
    let results = json!({
        "scenes": ckpt.clustering.num_scenes(),
        "noise_clips": ckpt.clustering.raw_labels.iter().filter(|&&l| l < 0).count(),
        "app_bank": ckpt.banks.app.len(),
        "mot_bank": ckpt.banks.mot.len(),
        "final_loss": history.last().map(|h| h.loss),
    });
    let dir = run.finish(results)?;
    println!(
        "trained on {} samples, {} scenes; checkpoint {}",
        ckpt.banks.app.len(),
        ckpt.clustering.num_scenes(),
        dir.join("model.hsc").display()
    );
    Ok(())
}

fn augment(common: &Common, sets: &[String], train_path: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = load_config(common, sets)?;
    let (ckpt_path, mut ckpt) = require_checkpoint(checkpoint)?;
    let train = dataset(train_path)?;
    let mut run = open_run("augment", common, &cfg, &[train_path, ckpt_path])?;
    let outcome = run_stage2_detailed(&mut ckpt, &train, &cfg.pipeline)?;
    ckpt.save(run.output("model.hsc")?)?;
    let mut log = String::new();
    if let Some(labels) = &outcome.labels {
        for ((a, score), abnormal) in outcome.augmented.iter().zip(&labels.scores).zip(&labels.abnormal) {
            log.push_str(&serde_json::to_string(&json!({
                "source_sample": a.source_sample,
                "clip": a.clip,
                "score": score,
                "abnormal": abnormal,
                "record": a.record,
            }))?);
            log.push('\n');
        }
    }
    fs::write(run.output("augment.jsonl")?, log)?;
    let r = &outcome.report;
    let dir = run.finish(serde_json::to_value(r)?)?;
    println!(
        "mode {:?}: {} augmented samples, {} pseudo-abnormal (threshold {:.6}); checkpoint {}",
        r.mode,
        r.augmented,
        r.abnormal,
        r.threshold,
        dir.join("model.hsc").display()
    );
    Ok(())
}

fn eval(common: &Common, test_path: &Path, checkpoint: Option<&Path>, memory: &Memory) -> Result<()> {
    let cfg = load_config(common, &[])?;
    let (ckpt_path, ckpt) = require_checkpoint(checkpoint)?;
    let test = dataset(test_path)?;
    let sub = memory.subsample()?;
    let mut run = open_run("eval", common, &cfg, &[test_path, ckpt_path])?;
    let p = &cfg.pipeline;
    let series = evaluate_checkpoint(&ckpt, &test, p.sigma_clips, p.normalize_scores, sub)?;
    let auc = series.auc()?;
    series.write_csv(run.output("scores.csv")?)?;
    write_roc_csv(&series.roc()?, run.output("roc.csv")?)?;
    for s in StreamId::ALL {
        let m = scene_confusion(&ckpt, &test, s)?;
        fs::write(run.output(&format!("confusion_{}.csv", s.name()))?, confusion_csv(&m))?;
    }
    let results = json!({ "auc": auc, "frames": series.raw.len(), "memory": sub });
    fs::write(run.output("metrics.json")?, serde_json::to_string_pretty(&results)? + "\n")?;
    let dir = run.finish(results)?;
    println!("AUC: {auc:.4}");
    println!("results in {}", dir.display());
    Ok(())
}

fn inspect(
    common: &Common,
    checkpoint: Option<&Path>,
    test_path: Option<&Path>,
    memory: &Memory,
    sweep: &[usize],
    sweep_seeds: u64,
) -> Result<()> {
    let cfg = load_config(common, &[])?;
    let (ckpt_path, ckpt) = require_checkpoint(checkpoint)?;
    let sub = memory.subsample()?;
    if test_path.is_none() && (sub.is_some() || !sweep.is_empty()) {
        bail!("--memory-size, --memory-fraction and --sweep need --test");
    }
    let test = test_path.map(dataset).transpose()?;
    let mut inputs = vec![ckpt_path];
    inputs.extend(test_path);
    let mut run = open_run("inspect", common, &cfg, &inputs)?;
    fs::write(run.output("memory.csv")?, memory_csv(&ckpt.banks))?;
    let mut results = json!({
        "scenes": ckpt.clustering.num_scenes(),
        "app_bank": ckpt.banks.app.len(),
        "mot_bank": ckpt.banks.mot.len(),
        "binary_active": ckpt.model.binary_active,
    });
    println!(
        "scenes {}, appearance bank {}, motion bank {}, binary head {}",
        ckpt.clustering.num_scenes(),
        ckpt.banks.app.len(),
        ckpt.banks.mot.len(),
        if ckpt.model.binary_active { "on" } else { "off" }
    );
    if let Some(test) = &test {
        let p = &cfg.pipeline;
        for s in StreamId::ALL {
            let m = scene_confusion(&ckpt, test, s)?;
            fs::write(run.output(&format!("confusion_{}.csv", s.name()))?, confusion_csv(&m))?;
        }
        let full = evaluate_checkpoint(&ckpt, test, p.sigma_clips, p.normalize_scores, None)?.auc()?;
        println!("full-memory AUC: {full:.4}");
        results["auc_full"] = json!(full);
        if let Some(m) = sub {
            let banks = m.apply(&ckpt.banks);
            let auc = evaluate_checkpoint(&ckpt, test, p.sigma_clips, p.normalize_scores, Some(m))?.auc()?;
            println!(
                "subsampled AUC: {auc:.4} ({} appearance / {} motion entries, seed {}), change {:+.4}",
                banks.app.len(),
                banks.mot.len(),
                m.seed,
                auc - full
            );
            results["auc_subsample"] = json!(auc);
            results["subsample"] = json!({ "app": banks.app.len(), "mot": banks.mot.len(), "seed": m.seed });
        }
        if !sweep.is_empty() {
            let seeds: Vec<u64> = (0..sweep_seeds).collect();
            let points = memory_sweep(&ckpt, test, sweep, &seeds, p.sigma_clips, p.normalize_scores)?;
            let mut csv = String::from("size,median_auc,aucs\n");
            for pt in &points {
                let aucs: Vec<String> = pt.aucs.iter().map(f64::to_string).collect();
                csv.push_str(&format!("{},{},{}\n", pt.size, pt.median, aucs.join(";")));
                println!("memory {:>6}: median AUC {:.4}", pt.size, pt.median);
            }
            fs::write(run.output("sweep.csv")?, csv)?;
            results["sweep"] = serde_json::to_value(&points)?;
        }
    }
    let dir = run.finish(results)?;
    println!("results in {}", dir.display());
    Ok(())
}
