//! Shared command implementations behind the `ig` and `datagen` binaries.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ig_core::datagen::{compute_statistics, synthesize_scenes, DatasetStats, SynthConfig};
use ig_core::dataset::{read_dataset, SplitName};
use ig_core::eval::{evaluate, evaluate_predictions, read_predictions, write_predictions, Detector, ScoredReport};
use ig_core::text::LexiconTagger;
use ig_net::harness::{run_ablation_dir, train, Checkpoint, ModelDetector, PreparedData, RunConfig};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Datagen(#[from] ig_core::datagen::DatagenError),
    #[error(transparent)]
    Dataset(#[from] ig_core::dataset::DatasetError),
    #[error(transparent)]
    Eval(#[from] ig_core::eval::EvalError),
    #[error(transparent)]
    Net(#[from] ig_net::NetError),
    #[error("text analysis failed: {0}")]
    Text(#[from] ig_core::text::TextError),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let body = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator settings; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train/val/test scene fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    pub ratios: Vec<f64>,
    /// Split seed; defaults to the generator seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = match &args.config {
        Some(p) => toml::from_str(&read_file(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    let ratios: [f64; 3] = args
        .ratios
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage("--ratios takes three values".into()))?;
    let out = synthesize_scenes(&cfg)?;
    out.write(&args.out, ratios, args.split_seed.unwrap_or(cfg.rng_seed))?;
    println!(
        "wrote {} scenes and {} samples to {} ({} generated texts rejected)",
        out.scenes.len(),
        out.samples.len(),
        args.out.display(),
        out.rejected_texts.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "stats.json")]
    pub out: PathBuf,
}

pub fn stats(args: &StatsArgs) -> Result<DatasetStats> {
    let (splits, _) = read_dataset(&args.data)?;
    let s = compute_statistics(&splits, &LexiconTagger::default())?;
    write_json(&args.out, &s)?;
    print!("{s}");
    Ok(s)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// CPU-sized network and schedule.
    Desk,
    /// Full-size network with the reference schedule.
    Full,
}

fn run_config(config: Option<&Path>, preset: Preset) -> Result<RunConfig> {
    match config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(match preset {
            Preset::Desk => RunConfig::desk(),
            Preset::Full => RunConfig::default(),
        }),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; the preset applies when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = run_config(args.config.as_deref(), args.preset)?;
    let outcome = train(&cfg, &args.data, &args.out)?;
    println!(
        "trained {} epochs in {:.1}s{}; best epoch {}",
        outcome.epochs_run,
        outcome.seconds,
        if outcome.early_stopped { " (early stop)" } else { "" },
        outcome.best_epoch
    );
    if let Some(m) = outcome.best_metrics {
        println!("{m}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: SplitName,
    /// Also dump predictions as JSONL.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<ScoredReport> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let model = ck.restore()?;
    let data = PreparedData::load(&args.data, &ck.config.model)?;
    let (_, raw) = data.split(args.split)?;
    let mut det = ModelDetector::new(&model, &data, &ck.config);
    let metrics = match &args.preds {
        Some(path) => {
            let preds = det.predict(raw)?;
            write_predictions(path, &preds)?;
            evaluate_predictions(&preds, raw)?
        }
        None => evaluate(&mut det, raw)?,
    };
    let report = ScoredReport::new(args.split.as_str(), metrics);
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    println!("{report}");
    Ok(report)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = run_config(args.config.as_deref(), args.preset)?;
    let report = run_ablation_dir(&cfg, &args.data, &args.out)?;
    print!("{}", report.to_markdown());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Prediction dump, one `{sample_id, box, score}` record per line.
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: SplitName,
}

pub fn score(args: &ScoreArgs) -> Result<ScoredReport> {
    let preds = read_predictions(&args.preds)?;
    let (splits, _) = read_dataset(&args.data)?;
    let split = splits
        .iter()
        .find(|s| s.name == args.split)
        .ok_or_else(|| CliError::Usage(format!("dataset has no {} split", args.split)))?;
    let report = ScoredReport::new(args.split.as_str(), evaluate_predictions(&preds, split)?);
    println!("{report}");
    Ok(report)
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
}

/// Prints a preset as TOML, a starting point for `--config` files.
pub fn print_config(args: &ConfigArgs) {
    print!("{}", run_config(None, args.preset).expect("presets need no I/O").to_toml());
}
