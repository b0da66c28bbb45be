//! `ccluster`: trains and evaluates contrastive clustering models from TOML
//! experiment configs.

mod config_file;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cc_core::data::{read_labels, write_csv, write_labels};
use cc_core::train::{assign_clusters, EpochRecord};
use cc_core::{train_with, DatasetSpec, Execution, MetricBundle, ModelParams};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config_file::ConfigFile;
use output::OutputDir;

#[derive(Parser)]
#[command(name = "ccluster", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its artifacts to the output directory.
    Run(RunArgs),
    /// Score a saved checkpoint on the configured dataset.
    Eval(EvalArgs),
    /// Compare two label files and print NMI, ACC and ARI as JSON.
    Metrics { predicted: PathBuf, truth: PathBuf },
    /// Write the configured synthetic dataset to `data.csv`.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
}

fn load_config(common: &Common) -> Result<ConfigFile> {
    let mut file = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::defaults(),
    };
    if let Some(seed) = common.seed {
        file.config.seed = seed;
    }
    if let Some(out) = &common.out {
        file.config.out_dir = Some(out.clone());
    }
    Ok(file)
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

/// `metrics.json` layout; all three are null for unlabelled data.
#[derive(Serialize)]
struct MetricsFile {
    nmi: Option<f64>,
    acc: Option<f64>,
    ari: Option<f64>,
}

fn metrics_json(metrics: Option<MetricBundle>) -> MetricsFile {
    MetricsFile {
        nmi: metrics.map(|m| m.nmi),
        acc: metrics.map(|m| m.acc),
        ari: metrics.map(|m| m.ari),
    }
}

fn write_json(out: &OutputDir, name: &str, value: &MetricsFile) -> Result<()> {
    out.write_atomic(name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn progress(r: &EpochRecord, total: usize) {
    let metrics = r
        .metrics
        .map(|m| format!(" nmi {:.4} acc {:.4} ari {:.4}", m.nmi, m.acc, m.ari))
        .unwrap_or_default();
    eprintln!(
        "epoch {}/{total} loss {:.4} (instance {:.4}, cluster {:.4}){metrics}",
        r.epoch, r.l_total, r.l_ins, r.l_clu
    );
}

fn run(args: RunArgs) -> Result<()> {
    let file = load_config(&args.common)?;
    let Some(dir) = file.config.out_dir.clone() else {
        bail!("no output directory: pass --out or set out_dir in the config");
    };
    let out = OutputDir::lock(&dir)?;
    // a failed run must not leave an older metrics file looking current
    out.remove("metrics.json")?;

    let (config, dataset) = file.resolve()?;
    let exec = execution(args.sequential);
    let outcome = train_with(&config, &dataset, exec, |r| {
        if !args.quiet {
            progress(r, config.epochs);
        }
    })?;
    let assignments = assign_clusters(
        &outcome.params,
        &dataset.samples,
        config.ablation,
        config.seed,
        exec,
    )?;
    let metrics = match &dataset.labels {
        Some(truth) => Some(MetricBundle::compute(&assignments, truth)?),
        None => None,
    };

    let echoed = toml::to_string(&outcome.config).context("serializing resolved config")?;
    out.write_atomic("config.resolved", |w| Ok(w.write_all(echoed.as_bytes())?))?;
    out.write_atomic("report.csv", |w| Ok(outcome.report.write_csv(w)?))?;
    out.write_atomic("assignments.csv", |w| {
        Ok(write_labels(&assignments, "cluster", w)?)
    })?;
    out.write_atomic("model.ckpt", |w| Ok(outcome.params.write_checkpoint(w)?))?;
    write_json(&out, "metrics.json", &metrics_json(metrics))?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let file = load_config(&args.common)?;
    let (config, dataset) = file.resolve()?;
    let bytes = std::fs::read(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let params = ModelParams::read_checkpoint(bytes.as_slice())
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    if params.config.input_dim != dataset.dim() {
        bail!(
            "checkpoint expects {} input features, dataset has {}",
            params.config.input_dim,
            dataset.dim()
        );
    }
    let Some(truth) = dataset.labels.as_deref() else {
        bail!("dataset {} has no labels to evaluate against", dataset.name);
    };
    let exec = execution(args.sequential);
    let assignments = assign_clusters(
        &params,
        &dataset.samples,
        config.ablation,
        config.seed,
        exec,
    )?;
    let value = metrics_json(Some(MetricBundle::compute(&assignments, truth)?));

    if let Some(dir) = &args.common.out {
        let out = OutputDir::lock(dir)?;
        out.write_atomic("assignments.csv", |w| {
            Ok(write_labels(&assignments, "cluster", w)?)
        })?;
        write_json(&out, "metrics.json", &value)?;
    }
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn metrics(predicted: &Path, truth: &Path) -> Result<()> {
    let pred =
        read_labels(predicted).with_context(|| format!("reading {}", predicted.display()))?;
    let truth_labels =
        read_labels(truth).with_context(|| format!("reading {}", truth.display()))?;
    let m = MetricBundle::compute(&pred, &truth_labels)?;
    println!("{}", serde_json::to_string(&metrics_json(Some(m)))?);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let file = load_config(&args.common)?;
    let Some(dir) = file.config.out_dir.clone() else {
        bail!("no output directory: pass --out or set out_dir in the config");
    };
    let mut spec = file.config.dataset.clone();
    match &mut spec {
        DatasetSpec::Blobs { seed, .. } | DatasetSpec::Moons { seed, .. } => {
            seed.get_or_insert(file.config.seed);
        }
        DatasetSpec::Csv { .. } | DatasetSpec::Idx { .. } => {
            bail!("generate needs a synthetic dataset (kind = \"blobs\" or \"moons\")")
        }
    }
    let dataset = spec.load(Path::new(".")).map_err(|e| file.locate(e))?;
    let out = OutputDir::lock(&dir)?;
    out.write_atomic("data.csv", |w| Ok(write_csv(&dataset, w)?))?;
    eprintln!(
        "wrote {} samples with {} features to {} (label column {})",
        dataset.len(),
        dataset.dim(),
        out.path("data.csv").display(),
        dataset.dim()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Eval(args) => eval(args),
        Command::Metrics { predicted, truth } => metrics(&predicted, &truth),
        Command::Generate(args) => generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
