//! `wavae` command line: synthesize data, train, score, evaluate and sweep.
//!
//! Every run writes under one output root:
//!
//! ```text
//! <out>/checkpoint/model.ckpt    trained weights
//! <out>/checkpoint/config.json   resolved config, data path, CSV schema
//! <out>/reports/train.jsonl      one record per epoch
//! <out>/reports/scores.csv       per-window scores and flags
//! <out>/reports/sweep.csv        one row per sweep setting
//! <out>/metrics/metrics.json     evaluation metrics
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use wavae::augment::AugPair;
use wavae::checkpoint;
use wavae::data::{load_csv, synth, write_csv, ClassMap, CsvSchema, SynthSpec};
use wavae::detect::{self, AnomalyReport};
use wavae::objective::MiMode;
use wavae::train::{self, TrainConfig};
use wavae::vae::ReconLossKind;
use wavae::{Checkpoint, SeriesFrame};

#[derive(Parser, Debug)]
#[command(name = "wavae", version, about = "Weakly augmented VAE for time-series anomaly detection")]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = "WAVAE_OUT", default_value = "wavae-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled series to `<out>/series.csv`.
    Synth {
        /// `default` or a JSON file of generator settings.
        #[arg(long, default_value = "default")]
        spec: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the prefix of a series and save a checkpoint.
    Train(TrainArgs),
    /// Score windows with a saved checkpoint.
    Score(EvalArgs),
    /// Score the evaluation split and write metrics.
    Eval(EvalArgs),
    /// Train once per setting of each grid and tabulate the metrics.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        /// `key=v1,v2,...`; repeat to vary several keys one at a time.
        #[arg(long)]
        grid: Vec<String>,
    },
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// CSV with a header row, numeric feature columns and an integer label
    /// column. `score` and `eval` take the whole file; without it they use
    /// the evaluation split of the training data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Classes that count as anomalies, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    anomaly_classes: Option<Vec<i64>>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON file of config keys; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mi: Option<MiMode>,
    #[arg(long)]
    aug: Option<AugPair>,
    /// `mse`, `bce`, `robust1[:alpha]` or `robust2[:alpha,sigma]`.
    #[arg(long)]
    recon: Option<ReconLossKind>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    zdim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seqlen: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    eval_stride: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mi_weight: Option<f64>,
    #[arg(long)]
    disc_layers: Option<usize>,
    #[arg(long)]
    disc_hidden: Option<usize>,
    /// Use separate discriminators for the raw and augmented roles.
    #[arg(long)]
    disc_separate: bool,
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    percentile: Option<f64>,
}

/// Stored next to the weights so later commands can rebuild the pipeline.
#[derive(Serialize, Deserialize)]
struct RunConfig {
    data: PathBuf,
    schema: CsvSchema,
    train: TrainConfig,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            seed => seed, mi => mi_mode, aug => aug, recon => recon, beta => beta,
            zdim => latent, hidden => hidden, seqlen => seq_len, stride => stride,
            eval_stride => eval_stride, batch => batch, lr => lr, epochs => epochs,
            tau => tau, mi_weight => mi_weight, disc_layers => disc_layers,
            disc_hidden => disc_hidden, percentile => percentile,
        );
        cfg.disc_separate |= self.disc_separate;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn schema(classes: &Option<Vec<i64>>) -> CsvSchema {
    let mut schema = CsvSchema::default();
    if let Some(c) = classes {
        schema.class_map = ClassMap::anomalies(c.clone());
    }
    schema
}

fn required_data(args: &DataArgs) -> Result<&Path> {
    args.data.as_deref().context("--data is required")
}

fn load(path: &Path, schema: &CsvSchema) -> Result<SeriesFrame> {
    load_csv(path, schema).with_context(|| format!("loading {}", path.display()))
}

fn subdir(out: &Path, name: &str) -> Result<PathBuf> {
    let dir = out.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(out: &Path, spec: &str, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = match spec {
        "default" => SynthSpec::default(),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let series: SeriesFrame = synth(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("series.csv");
    write_csv(&path, &series)?;
    println!("wrote {} ({} points, {} channels)", path.display(), series.len(), series.channels());
    Ok(())
}

fn cmd_train(out: &Path, args: &TrainArgs) -> Result<()> {
    let cfg = args.config()?;
    let data = required_data(&args.data)?;
    let schema = schema(&args.data.anomaly_classes);
    let series = load(data, &schema)?;
    let (train_part, _) = series.split(cfg.train_fraction, cfg.split_gap())?;
    let mut trained = train::train(&cfg, &train_part)?;

    let ckpt_dir = subdir(out, "checkpoint")?;
    let ckpt = ckpt_dir.join("model.ckpt");
    checkpoint::save(&ckpt, &trained.params, trained.disc.as_ref())?;
    let run = RunConfig {
        data: fs::canonicalize(data).unwrap_or_else(|_| data.to_path_buf()),
        schema,
        train: cfg,
    };
    write_json(&ckpt_dir.join("config.json"), &run)?;
    trained.report.checkpoint = Some(ckpt.display().to_string());
    trained.report.write_jsonl(subdir(out, "reports")?.join("train.jsonl"))?;

    let last = trained.report.epochs.last().map_or(f64::NAN, |e| e.loss.total);
    println!(
        "trained {} epochs in {:.1}s, final loss {last:.6}; checkpoint {}",
        trained.report.epochs.len(),
        trained.report.wall_clock_secs,
        ckpt.display()
    );
    Ok(())
}

/// Loads the checkpoint and the series to score: the given file in full, or
/// the evaluation split of the training data.
fn restore(out: &Path, args: &EvalArgs) -> Result<(TrainConfig, Checkpoint, SeriesFrame)> {
    let ckpt_dir = out.join("checkpoint");
    let cfg_path = ckpt_dir.join("config.json");
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let run: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let mut cfg = run.train;
    if let Some(q) = args.percentile {
        cfg.percentile = q;
    }
    cfg.validate()?;
    let ckpt: Checkpoint = checkpoint::load(ckpt_dir.join("model.ckpt"))?;

    let series = match &args.data.data {
        Some(path) => {
            let mut schema = run.schema;
            if let Some(c) = &args.data.anomaly_classes {
                schema.class_map = ClassMap::anomalies(c.clone());
            }
            load(path, &schema)?
        }
        None => {
            let full = load(&run.data, &run.schema)?;
            full.split(cfg.train_fraction, cfg.split_gap())?.1
        }
    };
    ckpt.check_dims(&cfg.dims(series.channels()))?;
    Ok((cfg, ckpt, series))
}

fn cmd_score(out: &Path, args: &EvalArgs) -> Result<()> {
    let (cfg, ckpt, series) = restore(out, args)?;
    let w = train::eval_windows(&cfg, &series)?;
    let scores = detect::score(&ckpt.params, &w)?;
    let eta = detect::threshold(&scores, cfg.percentile)?;
    let flags = detect::flag(&scores, eta);
    let path = subdir(out, "reports")?.join("scores.csv");
    detect::write_scores(&path, &w.offsets, &scores, &w.labels, Some(&flags))?;
    let flagged = flags.iter().filter(|&&f| f == 1).count();
    println!("scored {} windows, {flagged} above {eta:e}; {}", scores.len(), path.display());
    Ok(())
}

fn cmd_eval(out: &Path, args: &EvalArgs) -> Result<()> {
    let (cfg, ckpt, series) = restore(out, args)?;
    let report = train::evaluate(&cfg, &ckpt.params, &series)?;
    report.write_scores(subdir(out, "reports")?.join("scores.csv"))?;
    let path = subdir(out, "metrics")?.join("metrics.json");
    write_json(&path, &metrics_json(&report))?;
    let m = &report.metrics;
    println!(
        "roc_auc {:.4} pr_auc {:.4} precision {:.4} recall {:.4} f1 {:.4} kappa {:.4}",
        m.roc_auc, m.pr_auc, m.classification.precision, m.classification.recall, m.classification.f1, m.classification.kappa
    );
    Ok(())
}

fn metrics_json(report: &AnomalyReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report.metrics).expect("metrics serialize");
    let map = v.as_object_mut().expect("metrics serialize to an object");
    map.insert("threshold".into(), report.threshold.into());
    map.insert("windows".into(), report.scores.len().into());
    v
}

fn cmd_sweep(out: &Path, args: &TrainArgs, grid: &[String]) -> Result<()> {
    let base = args.config()?;
    let grid = grid.iter().map(|g| train::parse_grid(g)).collect::<wavae::Result<Vec<_>>>()?;
    let series = load(required_data(&args.data)?, &schema(&args.data.anomaly_classes))?;
    let rows = train::sweep(&base, &grid, &series)?;
    let path = subdir(out, "reports")?.join("sweep.csv");
    train::write_sweep_csv(&path, &rows)?;
    println!("{} settings; {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, seed } => cmd_synth(&cli.out, spec, *seed),
        Command::Train(args) => cmd_train(&cli.out, args),
        Command::Score(args) => cmd_score(&cli.out, args),
        Command::Eval(args) => cmd_eval(&cli.out, args),
        Command::Sweep { train, grid } => {
            if grid.is_empty() {
                bail!("--grid is required");
            }
            cmd_sweep(&cli.out, train, grid)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wavae: {e:#}");
            ExitCode::FAILURE
        }
    }
}
