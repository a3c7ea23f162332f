//! `groundcheck`: features, training, evaluation, scoring and synthetic
//! benchmarks for token-level hallucination detection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groundcheck::classifiers::{fit_configured, load_model, save_model, Family, Hyperparams};
use groundcheck::eval::{evaluate, FamilyTrainer, Protocol, Subject};
use groundcheck::features::{build_features, bundle_labels, export_dataset, import_dataset, FeatureSpec};
use groundcheck::synth::{benchmark, generate};
use groundcheck::trace::{load_labels, read_bundle, write_bundle, write_labels};
use groundcheck::{Error, ErrorKind, LayerSelection, RunConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "groundcheck", version, about = "Token-level hallucination detection from attention traces")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log to stderr as JSON lines.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Override ads.top_x_percent.
    #[arg(long, global = true)]
    top_x: Option<f64>,
    /// Override ads.tau.
    #[arg(long, global = true)]
    tau: Option<usize>,
    /// Override cgc.top_k_percent.
    #[arg(long, global = true)]
    top_k: Option<f64>,
    /// Override features.layer_subset, e.g. `all`, `3-6` or `1,4,7`.
    #[arg(long, global = true)]
    layers: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-token ADS/CGC feature vectors from a trace bundle into CSV.
    Features {
        #[arg(long)]
        bundle: PathBuf,
        /// Label file (JSON lines); defaults to the labels stored in the bundle.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector on a feature CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        family: Option<Family>,
        /// Grid-search the configured hyperparameter grid first.
        #[arg(long, conflicts_with = "params")]
        grid: bool,
        /// JSON object overriding the family's hyperparameters.
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Tuning report path (default: `<out>.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model, or a family trained per split, on a feature CSV.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "family", required_unless_present = "family")]
        model: Option<PathBuf>,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long, value_parser = parse_protocol)]
        protocol: Option<Protocol>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every token of a bundle; labels are not needed.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic bundle plus `labels.jsonl`.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, extract, train and cross-validate on synthetic data.
    Bench {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "kfold" => Ok(Protocol::Kfold),
        "holdout" => Ok(Protocol::Holdout),
        _ => Err(format!("unknown protocol `{s}` (kfold|holdout)")),
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Error> {
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    if g.threads.is_some() {
        c.threads = g.threads;
    }
    if let Some(x) = g.top_x {
        c.ads.top_x_percent = x;
    }
    if let Some(tau) = g.tau {
        c.ads.tau = tau;
    }
    if let Some(k) = g.top_k {
        c.cgc.top_k_percent = k;
    }
    if let Some(layers) = &g.layers {
        c.features.layer_subset = layers.parse::<LayerSelection>()?;
    }
    Ok(c)
}

fn spec(c: &RunConfig) -> FeatureSpec {
    FeatureSpec {
        ads: c.ads.clone(),
        cgc: c.cgc.clone(),
        features: c.features.clone(),
    }
}

fn write_json(path: &Path, value: Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Replaces the configured parameters of `family` with `overrides` merged on top.
fn apply_params(c: &mut RunConfig, family: Family, overrides: &str) -> Result<(), Error> {
    let patch: Value = serde_json::from_str(overrides)
        .map_err(|e| Error::InvalidArgument(format!("--params is not valid JSON: {e}")))?;
    let Value::Object(patch) = patch else {
        return Err(Error::InvalidArgument("--params must be a JSON object".into()));
    };
    let mut current = serde_json::to_value(c.train.params_for(family))?;
    for (k, v) in patch {
        if k != "family" {
            current[k] = v;
        }
    }
    let merged: Hyperparams = serde_json::from_value(current)
        .map_err(|e| Error::InvalidArgument(format!("--params: {e}")))?;
    match merged {
        Hyperparams::Lr(p) => c.train.lr = p,
        Hyperparams::Mlp(p) => c.train.mlp = p,
        Hyperparams::Rf(p) => c.train.rf = p,
        Hyperparams::Gbt(p) => c.train.gbt = p,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut c = load_config(&cli.global)?;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Features { bundle, labels, out } => {
            let traces = read_bundle(&bundle)?;
            let labels = match labels {
                Some(path) => load_labels(&path)?.map,
                None => bundle_labels(&traces),
            };
            let data = build_features(&traces, &labels, &spec(&c))?;
            export_dataset(&data, &out)?;
            log::info!("wrote {} rows x {} features to {}", data.len(), data.width(), out.display());
        }
        Command::Train {
            data,
            family,
            grid,
            params,
            out,
            report,
        } => {
            let family = family.unwrap_or(c.train.family);
            if let Some(p) = params {
                apply_params(&mut c, family, &p)?;
            }
            c.train.grid_search |= grid;
            let dataset = import_dataset(&data)?;
            let (mut detector, cv) = fit_configured(&dataset, &c.train, family, c.seed)?;
            detector.feature_spec = Some(spec(&c));
            save_model(&detector, &out)?;
            let report_path = report.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".json");
                PathBuf::from(s)
            });
            write_json(
                &report_path,
                json!({
                    "family": family,
                    "hyperparams": detector.hyperparams,
                    "threshold": detector.threshold,
                    "rows": dataset.len(),
                    "class_counts": dataset.class_counts(),
                    "dropped_features": detector
                        .standardizer
                        .dropped()
                        .iter()
                        .map(|&f| &dataset.feature_names[f])
                        .collect::<Vec<_>>(),
                    "grid_search": cv,
                    "seed": c.seed,
                    "config": c.snapshot(),
                }),
            )?;
        }
        Command::Eval {
            data,
            model,
            family,
            protocol,
            folds,
            out,
        } => {
            if let Some(p) = protocol {
                c.eval.protocol = p;
            }
            if let Some(k) = folds {
                c.eval.folds = k;
            }
            let dataset = import_dataset(&data)?;
            let report = match (model, family) {
                (Some(path), _) => {
                    let detector = load_model(&path)?;
                    evaluate(&Subject::Fitted(&detector), &dataset, &c.eval, c.seed, c.snapshot())?
                }
                (None, Some(family)) => {
                    let trainer = FamilyTrainer {
                        params: c.train.params_for(family),
                        threshold: c.train.threshold,
                    };
                    evaluate(&Subject::Trained(&trainer), &dataset, &c.eval, c.seed, c.snapshot())?
                }
                (None, None) => return Err(Error::InvalidArgument("eval needs --model or --family".into())),
            };
            write_json(&out, serde_json::to_value(&report)?)?;
        }
        Command::Score { bundle, model, out } => {
            let traces = read_bundle(&bundle)?;
            let detector = load_model(&model)?;
            let scores = detector.score_traces(&traces, &spec(&c))?;
            let mut text = String::new();
            for s in &scores {
                text.push_str(&serde_json::to_string(s)?);
                text.push('\n');
            }
            fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
        }
        Command::Synth { out } => {
            let generated = generate(&c.synth, c.seed)?;
            write_bundle(&generated.traces, &out, "synthetic")?;
            write_labels(&generated.labels, &out.join("labels.jsonl"))?;
            log::info!("wrote {} synthetic tokens to {}", generated.traces.len(), out.display());
        }
        Command::Bench { out } => {
            let report = benchmark(&c)?;
            log::info!("benchmark AUC {:.4} F1 {:.4}", report.metrics.auc, report.metrics.f1);
            write_json(&out, serde_json::to_value(&report)?)?;
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::MissingInput => 3,
        ErrorKind::Format => 4,
        ErrorKind::Degenerate => 5,
        ErrorKind::Internal => 6,
    }
}

fn init_logging(json_logs: bool, verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default));
    if json_logs {
        builder.format(|buf, record| {
            let line = json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.json_logs, cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let diag = json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{diag}");
            ExitCode::from(exit_code(kind))
        }
    }
}
