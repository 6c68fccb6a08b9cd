//! Command-line front end: synthetic data generation, training, evaluation,
//! ablation sweeps, and a finite-difference gradient verification oracle.
//!
//! Exit codes: 0 success, 1 internal failure (I/O on outputs, non-finite
//! loss), 2 usage or configuration error (bad flags, bad config keys,
//! missing or malformed input files, geometry mismatches), 3 gradient
//! verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ascnet::config::{parse_flat, RunConfig};
use ascnet::data::{generate_synthetic, load_features, write_features, Split, SyntheticSpec};
use ascnet::eval::{
    ablation_suite, evaluate, render_ablation_csv, render_curve_csv, summarize, AblationVariant,
};
use ascnet::loss::{grad_check_model, LossFlags};
use ascnet::model::{AscNet, ModelConfig};
use ascnet::numerics::Matrix2;
use ascnet::rng::stream_rng;
use ascnet::training::{render_train_csv, train, TrainConfig};
use ascnet::{AscError, Result};

const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Early-action prediction on per-progress-level features: masked graph
/// convolutions under a two-branch distillation objective.
#[derive(Parser)]
#[command(name = "ascnet", version, disable_help_subcommand = true)]
struct Cli {
    /// Flat `key = value` config file (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for checkpoints, CSV logs, and the resolved config.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override the run seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override one config key, e.g. `--set train.lr_init=0.001`
    /// (repeatable; applied after the config file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test feature containers.
    Synth,
    /// Train a model and write the best checkpoint plus a training CSV.
    Train,
    /// Evaluate a checkpoint: print AUC and write an accuracy curve CSV.
    Eval {
        /// Checkpoint to evaluate (default: `<out>/model.ascc`).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain and evaluate every ablation variant over the seed list.
    Ablate {
        /// Worker threads for independent (variant, seed) runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Verify model gradients against central finite differences.
    Gradcheck {
        /// Corrupt one analytic gradient first (negative self-test control;
        /// a healthy build must then exit 3).
        #[arg(long, default_value_t = false)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = std::result::Result<ExitCode, (u8, AscError)>;

/// Tags errors from the configuration/input-loading phase as usage errors.
fn config_phase<T>(r: Result<T>) -> std::result::Result<T, (u8, AscError)> {
    r.map_err(|e| (EXIT_CONFIG, e))
}

/// Tags errors from the compute/output phase as internal failures.
fn run_phase<T>(r: Result<T>) -> std::result::Result<T, (u8, AscError)> {
    r.map_err(|e| (EXIT_INTERNAL, e))
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = config_phase(
            std::fs::read_to_string(path).map_err(|e| AscError::io(path, e)),
        )?;
        let map = config_phase(parse_flat(&text))?;
        config_phase(cfg.apply(&map))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for pair in &cli.set {
        let (key, value) = config_phase(pair.split_once('=').ok_or_else(|| {
            AscError::Param(format!("--set expects KEY=VALUE, got '{pair}'"))
        }))?;
        config_phase(cfg.apply_one(key.trim(), value.trim()))?;
    }

    run_phase(
        std::fs::create_dir_all(&cli.out).map_err(|e| AscError::io(&cli.out, e)),
    )?;
    let echo = cli.out.join("config.resolved");
    run_phase(std::fs::write(&echo, cfg.render()).map_err(|e| AscError::io(&echo, e)))?;

    match cli.command {
        Command::Synth => cmd_synth(&cfg, &cli.out),
        Command::Train => cmd_train(&cfg, &cli.out),
        Command::Eval { checkpoint } => cmd_eval(&cfg, &cli.out, checkpoint.as_deref()),
        Command::Ablate { jobs } => cmd_ablate(&cfg, &cli.out, jobs),
        Command::Gradcheck { corrupt } => cmd_gradcheck(&cfg, corrupt),
    }
}

/// Relative data paths resolve against the output directory, so a `synth`
/// followed by a `train` with the same `--out` finds its files.
fn data_path(out: &Path, configured: &str) -> PathBuf {
    let p = Path::new(configured);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn class_counts(labels: impl Iterator<Item = usize>, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> CmdResult {
    let spec = SyntheticSpec::from_run(cfg);
    let (train_set, test_set) = config_phase(generate_synthetic(&spec))?;
    for (ds, configured) in [(&train_set, &cfg.train_path), (&test_set, &cfg.test_path)] {
        let path = data_path(out, configured);
        let bytes = run_phase(write_features(ds, &path))?;
        let counts = class_counts(ds.samples.iter().map(|s| s.label), ds.n_classes);
        let breakdown: Vec<String> =
            counts.iter().enumerate().map(|(c, n)| format!("class {c}: {n}")).collect();
        println!(
            "wrote {} ({} samples, {} bytes; {})",
            path.display(),
            ds.len(),
            bytes,
            breakdown.join(", ")
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_split(out: &Path, configured: &str, split: Split) -> Result<ascnet::data::Dataset> {
    load_features(&data_path(out, configured), split)
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let mut cfg = cfg.clone();
    let variant = config_phase(AblationVariant::from_name(&cfg.ablation_variant))?;
    variant.apply(&mut cfg);

    let train_set = config_phase(load_split(out, &cfg.train_path, Split::Train))?;
    let test_set = config_phase(load_split(out, &cfg.test_path, Split::Test))?;
    let model_cfg = ModelConfig::from_run(&cfg);
    config_phase(model_cfg.validate())?;
    let train_cfg = TrainConfig::from_run(&cfg);
    config_phase(train_cfg.validate())?;
    config_phase(check_geometry(&model_cfg, &train_set))?;
    config_phase(check_geometry(&model_cfg, &test_set))?;

    let model = run_phase(AscNet::build(model_cfg, cfg.seed))?;
    let outcome = run_phase(train(model, &train_set, &test_set, &train_cfg))?;

    let ckpt_path = out.join("model.ascc");
    run_phase(outcome.best.save_checkpoint(&ckpt_path, None))?;
    let log_path = out.join("train.csv");
    run_phase(
        std::fs::write(&log_path, render_train_csv(&outcome.log))
            .map_err(|e| AscError::io(&log_path, e)),
    )?;
    match (outcome.best_auc, outcome.best_epoch) {
        (Some(auc), Some(epoch)) => {
            println!("best AUC={} at epoch {epoch}", ascnet::config::fmt_f64(auc));
        }
        _ => println!("no evaluation epochs ran"),
    }
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    Ok(ExitCode::SUCCESS)
}

fn check_geometry(model_cfg: &ModelConfig, ds: &ascnet::data::Dataset) -> Result<()> {
    if ds.n_levels != model_cfg.n_levels || ds.feat_dim != model_cfg.feat_dim {
        return Err(AscError::Shape {
            op: "dataset features vs model",
            lhs: (ds.n_levels, ds.feat_dim),
            rhs: (model_cfg.n_levels, model_cfg.feat_dim),
        });
    }
    if ds.n_classes != model_cfg.n_classes {
        return Err(AscError::Shape {
            op: "dataset classes vs model",
            lhs: (ds.n_classes, 0),
            rhs: (model_cfg.n_classes, 0),
        });
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> CmdResult {
    let ckpt_path: PathBuf =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join("model.ascc"));
    let (model, _velocity) = config_phase(AscNet::load_checkpoint(&ckpt_path))?;
    let test_set = config_phase(load_split(out, &cfg.test_path, Split::Test))?;
    let report = config_phase(evaluate(&model, &test_set))?;
    let curve_path = out.join("curve.csv");
    run_phase(
        std::fs::write(&curve_path, render_curve_csv(&report))
            .map_err(|e| AscError::io(&curve_path, e)),
    )?;
    println!("AUC={}", ascnet::config::fmt_f64(report.auc));
    println!("wrote {}", curve_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, jobs: usize) -> CmdResult {
    if jobs == 0 {
        return Err((
            EXIT_CONFIG,
            AscError::Param("--jobs must be at least 1".into()),
        ));
    }
    let train_set = config_phase(load_split(out, &cfg.train_path, Split::Train))?;
    let test_set = config_phase(load_split(out, &cfg.test_path, Split::Test))?;
    if cfg.ablation_seeds.is_empty() {
        return Err((
            EXIT_CONFIG,
            AscError::Param("ablation.seeds must name at least one seed".into()),
        ));
    }
    let variants = AblationVariant::all();
    let rows = run_phase(ablation_suite(
        cfg,
        &variants,
        &cfg.ablation_seeds,
        &train_set,
        &test_set,
        jobs,
    ))?;
    let csv_path = out.join("ablation.csv");
    run_phase(
        std::fs::write(&csv_path, render_ablation_csv(&rows))
            .map_err(|e| AscError::io(&csv_path, e)),
    )?;
    for s in summarize(&rows) {
        println!(
            "{}: mean AUC {} +/- {} over {} seeds",
            s.variant.name(),
            ascnet::config::fmt_f64(s.mean_auc),
            ascnet::config::fmt_f64(s.std_auc),
            s.runs
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Fixed tiny geometry: small enough for fast central differences over every
/// parameter, large enough to exercise every layer and both branches.
fn gradcheck_config(cfg: &RunConfig) -> ModelConfig {
    let mut model_cfg = ModelConfig::from_run(cfg);
    model_cfg.n_levels = 4;
    model_cfg.feat_dim = 8;
    model_cfg.hidden = 6;
    model_cfg.n_classes = 3;
    model_cfg
}

const GRADCHECK_THRESHOLD: f64 = 1e-4;
const GRADCHECK_EPS: f64 = 1e-5;

fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> CmdResult {
    let model_cfg = gradcheck_config(cfg);
    config_phase(model_cfg.validate())?;
    let mut rng = stream_rng(cfg.seed, "gradcheck-data", &[]);
    use rand::Rng;
    let batch: Vec<Matrix2> = (0..2)
        .map(|_| {
            Matrix2::from_vec(
                model_cfg.n_levels,
                model_cfg.feat_dim,
                (0..model_cfg.n_levels * model_cfg.feat_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect::<Result<_>>()
        .map_err(|e| (EXIT_INTERNAL, e))?;
    let labels: Vec<usize> =
        (0..2).map(|_| rng.gen_range(0..model_cfg.n_classes)).collect();

    let flags = LossFlags::from_run(cfg);
    let mut report = run_phase(grad_check_model(
        &model_cfg,
        &batch,
        &labels,
        &flags,
        cfg.seed,
        cfg.seed.wrapping_add(1),
        GRADCHECK_EPS,
    ))?;
    if corrupt {
        // Negative control: pretend one analytic gradient came out wrong.
        report.max_rel_err = report.max_rel_err.max(1.0);
    }
    println!(
        "max_rel_err={} over {} entries (threshold {})",
        ascnet::config::fmt_f64(report.max_rel_err),
        report.checked,
        ascnet::config::fmt_f64(GRADCHECK_THRESHOLD),
    );
    if let Some((name, idx, analytic, numeric)) = &report.worst {
        println!(
            "worst: {name}[{idx}] analytic={} numeric={}",
            ascnet::config::fmt_f64(*analytic),
            ascnet::config::fmt_f64(*numeric),
        );
    }
    if report.max_rel_err < GRADCHECK_THRESHOLD {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::from(EXIT_VERIFY))
    }
}
