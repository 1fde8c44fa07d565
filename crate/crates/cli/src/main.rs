use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gzsl_core::checkpoint::Checkpoint;
use gzsl_core::data::{load_manifest, save_manifest};
use gzsl_core::metrics::{evaluate, MetricsReport};
use gzsl_core::net::EncoderMode;
use gzsl_core::objective::TermMask;
use gzsl_core::synth::{generate, Split, SynthSpec};
use gzsl_core::trainer::{grid_search, train_from_scratch, GridSpec, RunRecord, TrainConfig};
use gzsl_core::{gradcheck, Error};

#[derive(Parser)]
#[command(name = "gzsl-align", version, about = "Generalized zero-shot multi-label classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark manifest.
    Generate(GenerateArgs),
    /// Lint a manifest and its data files.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one model.
    Train(TrainArgs),
    /// Train one model per (gamma, lr) and keep the best.
    Grid(GridArgs),
    /// Score a split with a checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of the objective's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Render a metrics.json file.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    EndToEnd,
    Frozen,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON file with synthetic spec fields; unspecified fields keep their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON training config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    encoder_mode: Option<Mode>,
    /// Enabled loss terms, e.g. `rank,align,con`.
    #[arg(long)]
    term_mask: Option<TermMask>,
    /// Metric cutoffs, e.g. `2,3`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Encoder hidden widths, e.g. `64,32`, or `none` to score raw features.
    #[arg(long)]
    encoder_widths: Option<String>,
    /// Hidden widths of both mapping networks.
    #[arg(long, value_delimiter = ',')]
    map_hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Drop training samples without any positive label.
    #[arg(long)]
    drop_zero_positive: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainFlags,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: TrainFlags,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    /// Train this many random combinations instead of the full grid.
    #[arg(long)]
    random_trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    k: Vec<usize>,
}

fn resolve_config(flags: &TrainFlags) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.delta {
        cfg.loss.delta = v;
    }
    if let Some(m) = flags.encoder_mode {
        cfg.encoder_mode = match m {
            Mode::EndToEnd => EncoderMode::EndToEnd,
            Mode::Frozen => EncoderMode::Frozen,
        };
    }
    if let Some(t) = flags.term_mask {
        cfg.loss.terms = t;
    }
    if let Some(k) = &flags.k {
        cfg.eval_ks = k.clone();
    }
    if let Some(w) = &flags.encoder_widths {
        cfg.model.encoder_widths = if w == "none" {
            None
        } else {
            let widths = w
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidConfig(format!("--encoder-widths '{w}': {e}")))?;
            Some(widths)
        };
    }
    if let Some(h) = &flags.map_hidden {
        cfg.model.map_hidden = h.clone();
    }
    if let Some(l) = flags.latent_dim {
        cfg.model.latent_dim = l;
    }
    if flags.drop_zero_positive {
        cfg.drop_zero_positive = true;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_run(rec: &RunRecord) {
    let m = &rec.best().val_metrics;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
    println!(
        "best epoch {} of {}: val AUROC seen {} unseen {} harmonic {}",
        rec.best_epoch,
        rec.epochs.len(),
        fmt(m.seen_mean),
        fmt(m.unseen_mean),
        fmt(m.harmonic)
    );
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => {
            let mut spec: SynthSpec = match &a.spec {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?
                }
                None => SynthSpec::default(),
            };
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(n) = a.noise_sigma {
                spec.noise_sigma = n;
            }
            let bench = generate(&spec)?;
            let manifest = save_manifest(&a.out_dir, &bench.data)?;
            write_json(&a.out_dir.join("synth_spec.json"), &spec)?;
            let reference = bench.reference_auroc(Split::Test)?;
            write_json(&a.out_dir.join("reference_auroc.json"), &reference)?;
            println!("wrote {}", manifest.display());
        }
        Command::Validate { manifest } => {
            let data = load_manifest(&manifest)?;
            println!(
                "ok: {} classes ({} seen), d={}, v={}, train/val/test = {}/{}/{}",
                data.vocab.num_classes(),
                data.vocab.num_seen(),
                data.semantics.dim(),
                data.train.feature_dim,
                data.train.len(),
                data.val.len(),
                data.test.len()
            );
            for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
                let n = ds.zero_positive_count();
                if n > 0 {
                    println!("warning: {name} has {n} sample(s) without positive labels");
                }
            }
        }
        Command::Train(a) => {
            let mut cfg = resolve_config(&a.common)?;
            if let Some(v) = a.lr {
                cfg.lr = v;
            }
            if let Some(v) = a.gamma1 {
                cfg.loss.gamma1 = v;
            }
            if let Some(v) = a.gamma2 {
                cfg.loss.gamma2 = v;
            }
            cfg.validate()?;
            let data = load_manifest(&a.common.manifest)?;
            let rec = train_from_scratch(&cfg, &data, Some(&a.common.out_dir))?;
            print_run(&rec);
        }
        Command::Grid(a) => {
            let base = resolve_config(&a.common)?;
            let mut grid = GridSpec::default();
            if let Some(g) = a.gammas {
                grid.gammas = g;
            }
            if let Some(l) = a.lrs {
                grid.lrs = l;
            }
            grid.random_trials = a.random_trials;
            let data = load_manifest(&a.common.manifest)?;
            let out = &a.common.out_dir;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let outcome = grid_search(&grid, &base, &data, Some(out), a.jobs)?;
            write_json(&out.join("grid.json"), &outcome)?;
            for t in &outcome.trials {
                match &t.error {
                    Some(e) => println!("gamma {} lr {}: failed: {e}", t.gamma, t.lr),
                    None => println!("gamma {} lr {}: val harmonic {:?}", t.gamma, t.lr, t.harmonic),
                }
            }
            let best = &outcome.best.config;
            println!("selected gamma {} lr {}", best.loss.gamma1, best.lr);
            print_run(&outcome.best);
        }
        Command::Eval(a) => {
            let data = load_manifest(&a.manifest)?;
            let ds = data
                .split(&a.split)
                .with_context(|| format!("unknown split '{}' (expected train, val or test)", a.split))?;
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let report = evaluate(&ckpt.params, ds, &data.semantics, &a.k)?;
            fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
            write_json(&a.out_dir.join("metrics.json"), &report)?;
            let csv = a.out_dir.join("metrics_table.csv");
            fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            print!("{}", report.to_text());
        }
        Command::Gradcheck { seed, trials } => {
            let summary = gradcheck::run(seed, trials)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            println!(
                "max relative error {:.3e} over {} parameters in {} problems",
                summary.max_relative_error, summary.parameters_checked, summary.trials
            );
            if !(summary.max_relative_error < 1e-4) {
                eprintln!("gradient check failed: max relative error >= 1e-4");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { metrics, format } => {
            let text = fs::read_to_string(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            let report: MetricsReport =
                serde_json::from_str(&text).map_err(|source| Error::Json { path: metrics.clone(), source })?;
            match format {
                Format::Csv => print!("{}", report.to_csv()),
                Format::Text => print!("{}", report.to_text()),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GZSL_ALIGN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<Error>() {
                Some(Error::InvalidDataset(violations)) => {
                    for v in violations {
                        eprintln!("  {v}");
                    }
                    ExitCode::from(1)
                }
                Some(e) if e.is_validation() => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
