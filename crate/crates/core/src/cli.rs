//! Command-line surface: dataset generation, training, evaluation, the
//! cumulative ablation ladder, and the verification suites.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (clap).
//! `INFOSCULPT_SEED` overrides `--seed` on every subcommand when set.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::data::{generate_gaussian_gcd, load_dataset, save_dataset, GcdDataset};
use crate::error::{Error, Result};
use crate::eval::{export_embeddings, oracle_cmi};
use crate::gradcheck::standard_suite;
use crate::losses::{loss_cmi, ClassCentroids, CmiTargets};
use crate::matrix::Matrix;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::trainer::{self, EvalRecord, TrainConfig};

pub const SEED_ENV_VAR: &str = "INFOSCULPT_SEED";

#[derive(Parser)]
#[command(
    name = "infosculpt",
    version,
    about = "Dual-CMI objectives for generalized category discovery on synthetic benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian GCD benchmark (CSV + JSON manifest)
    GenData(GenDataArgs),
    /// Train on a dataset; writes run header, metrics JSONL, and checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Run the cumulative ablation ladder (ce, +rep, +ent, +inst, +cmi, +sep)
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Check CMI estimator-vs-oracle equivalence on random instances
    Oracle(OracleArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of old (labeled) classes [default: 3]
    #[arg(long, default_value_t = 3)]
    pub k_old: usize,
    /// Number of new (unlabeled-only) classes [default: 3]
    #[arg(long, default_value_t = 3)]
    pub k_new: usize,
    /// Samples per class [default: 100]
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Feature dimension [default: 16]
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Class separation: means lie on a sphere of radius sep*sqrt(dim) [default: 3.0]
    #[arg(long, default_value_t = 3.0)]
    pub sep: f64,
    /// Generator seed [default: 0]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path (manifest written alongside)
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters, shared by `train` and `ablate`. Flags override
/// the `--config` JSON file, which overrides built-in defaults.
#[derive(Args, Clone, Default)]
pub struct HyperArgs {
    /// Training epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate for SGD with momentum [default: 0.1]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Category-level CMI weight [default: 0.1]
    #[arg(long)]
    pub lambda_cmi: Option<f64>,
    /// Centroid separation weight [default: 0.1]
    #[arg(long)]
    pub lambda_sep: Option<f64>,
    /// Instance-level CMI weight [default: 1.0]
    #[arg(long)]
    pub lambda_inst: Option<f64>,
    /// Marginal-entropy weight [default: 2.0]
    #[arg(long)]
    pub lambda_ent: Option<f64>,
    /// Supervised/cluster loss mix [default: 0.35]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Supervised/unsupervised contrastive mix [default: 0.35]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Contrastive temperature [default: 0.07]
    #[arg(long)]
    pub tau_c: Option<f64>,
    /// Separation temperature [default: 0.1]
    #[arg(long)]
    pub tau_sep: Option<f64>,
    /// Sharpening temperature [default: 0.5]
    #[arg(long)]
    pub tau_sharp: Option<f64>,
    /// Hard negatives zeroed in refined targets [default: 10]
    #[arg(long)]
    pub topk: Option<usize>,
    /// Smoothing floor for KL targets [default: 1e-12]
    #[arg(long)]
    pub eps_floor: Option<f64>,
    /// Centroid EMA momentum [default: 0.9]
    #[arg(long)]
    pub centroid_momentum: Option<f64>,
    /// Recompute exact centroids over all labeled data each epoch [default: off]
    #[arg(long)]
    pub exact_centroids: bool,
    /// Evaluate every N epochs [default: 10]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Seed for init, shuffling, and augmentation [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; explicit flags win over file values
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset CSV (with sibling manifest)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for run.json, metrics.jsonl, checkpoint.bin
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset CSV (with sibling manifest)
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint produced by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also write the report JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export encoder embeddings CSV here
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Dataset CSV (with sibling manifest)
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV path for the per-rung accuracy table
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Seed for random instances [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Seed for random instances [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random instances [default: 100]
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be a u64, got `{raw}`"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(env_seed()?.or(flag).unwrap_or(fallback))
}

/// Layer defaults, config file, then flags into a full training config, and
/// bind the encoder to the dataset's dimensions.
pub fn resolve_train_config(hyper: &HyperArgs, dataset: &GcdDataset) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &hyper.config {
        Some(path) => serde_json::from_slice(&fs::read(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = hyper.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = hyper.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = hyper.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = hyper.lambda_cmi {
        cfg.loss.lambda_cmi = v;
    }
    if let Some(v) = hyper.lambda_sep {
        cfg.loss.lambda_sep = v;
    }
    if let Some(v) = hyper.lambda_inst {
        cfg.loss.lambda_inst = v;
    }
    if let Some(v) = hyper.lambda_ent {
        cfg.loss.lambda_ent = v;
    }
    if let Some(v) = hyper.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = hyper.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = hyper.tau_c {
        cfg.loss.tau_c = v;
    }
    if let Some(v) = hyper.tau_sep {
        cfg.loss.tau_sep = v;
    }
    if let Some(v) = hyper.tau_sharp {
        cfg.loss.tau_sharp = v;
    }
    if let Some(v) = hyper.topk {
        cfg.loss.top_k = v;
    }
    if let Some(v) = hyper.eps_floor {
        cfg.loss.eps_floor = v;
    }
    if let Some(v) = hyper.centroid_momentum {
        cfg.loss.centroid_momentum = v;
    }
    if hyper.exact_centroids {
        cfg.exact_centroids = true;
    }
    if let Some(v) = hyper.eval_every {
        cfg.eval_every = v;
    }
    cfg.seed = resolve_seed(hyper.seed, cfg.seed)?;
    // one seed drives init, shuffling, and augmentation
    cfg.encoder.seed = cfg.seed;
    cfg.augment.seed = cfg.seed;
    cfg.encoder.input_dim = dataset.input_dim();
    cfg.encoder.num_classes = dataset.num_classes();
    Ok(cfg)
}

#[derive(Serialize)]
struct RunHeader<'a> {
    command: &'a str,
    data: &'a Path,
    config: &'a TrainConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let seed = resolve_seed(Some(args.seed), 0)?;
    let ds = generate_gaussian_gcd(args.k_old, args.k_new, args.per_class, args.dim, args.sep, seed)?;
    save_dataset(&ds, &args.out)?;
    println!(
        "wrote {} samples ({} labeled, {} unlabeled) to {}",
        ds.len(),
        ds.train_view().labeled_indices().len(),
        ds.train_view().unlabeled_indices().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let cfg = resolve_train_config(&args.hyper, &ds)?;
    fs::create_dir_all(&args.out)?;
    let header = RunHeader { command: "train", data: &args.data, config: &cfg };
    fs::write(args.out.join("run.json"), serde_json::to_vec_pretty(&header)?)?;

    let metrics_file = fs::File::create(args.out.join("metrics.jsonl"))?;
    let mut metrics = BufWriter::new(metrics_file);
    let output = trainer::train(&ds, &cfg, &mut metrics)?;
    metrics.flush()?;

    save_checkpoint(&output.params, &args.out.join("checkpoint.bin"))?;
    let last = output.evals.last().expect("training always evaluates at least once");
    println!("{}", serde_json::to_string(last)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let params = load_checkpoint(&args.checkpoint)?;
    let report = trainer::evaluate_model(&params, &ds)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &args.out {
        fs::write(out, &json)?;
    }
    if let Some(path) = &args.embeddings {
        export_embeddings(&params, &ds.eval_view(), path)?;
    }
    println!("{json}");
    Ok(())
}

/// The cumulative ablation ladder. Each rung re-trains from scratch with the
/// same seed; weights toggle on in the fixed order used for reporting.
pub fn ablation_rungs() -> [&'static str; 6] {
    ["ce", "+rep", "+ent", "+inst", "+cmi", "+sep"]
}

/// Config for rung `i` of the ladder: rung 0 is supervised-only
/// (alpha = beta = 1, all cluster weights 0); later rungs restore the base
/// mixes and switch on ent, inst, cmi, and sep cumulatively.
pub fn rung_config(base: &TrainConfig, rung: usize) -> TrainConfig {
    let mut c = base.clone();
    c.loss.lambda_cmi = 0.0;
    c.loss.lambda_sep = 0.0;
    c.loss.lambda_inst = 0.0;
    c.loss.lambda_ent = 0.0;
    c.loss.alpha = 1.0;
    c.loss.beta = 1.0;
    if rung >= 1 {
        c.loss.alpha = base.loss.alpha;
        c.loss.beta = base.loss.beta;
    }
    if rung >= 2 {
        c.loss.lambda_ent = base.loss.lambda_ent;
    }
    if rung >= 3 {
        c.loss.lambda_inst = base.loss.lambda_inst;
    }
    if rung >= 4 {
        c.loss.lambda_cmi = base.loss.lambda_cmi;
    }
    if rung >= 5 {
        c.loss.lambda_sep = base.loss.lambda_sep;
    }
    c
}

/// Run all six rungs and return (rung name, final evaluation) per rung.
pub fn run_ablation(
    dataset: &GcdDataset,
    base: &TrainConfig,
) -> Result<Vec<(String, EvalRecord)>> {
    let mut rows = Vec::new();
    for (i, name) in ablation_rungs().iter().enumerate() {
        let cfg = rung_config(base, i);
        let mut sink = Vec::new();
        let out = trainer::train(dataset, &cfg, &mut sink)?;
        let last = *out.evals.last().expect("training always evaluates at least once");
        rows.push((name.to_string(), last));
    }
    Ok(rows)
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let base = resolve_train_config(&args.hyper, &ds)?;
    let rows = run_ablation(&ds, &base)?;
    let mut file = fs::File::create(&args.out)?;
    writeln!(file, "rung,acc_all,acc_old,acc_new")?;
    for (name, rec) in &rows {
        writeln!(file, "{name},{},{},{}", rec.acc_all, rec.acc_old, rec.acc_new)?;
        println!("{name:6} acc_all={:.4} acc_old={:.4} acc_new={:.4}", rec.acc_all, rec.acc_old, rec.acc_new);
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, 0)?;
    let reports = standard_suite(seed).run();
    let mut failures = 0;
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {name:<24} max_rel_err={rel:.3e} max_abs_err={abs:.3e} ({n} instances, {c} coords)",
            name = r.name,
            rel = r.max_rel_err,
            abs = r.max_abs_err,
            n = r.instances,
            c = r.coords
        );
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Config(format!("{failures} gradient checks failed")));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, 0)?;
    let max_diff = oracle_equivalence_max_diff(seed, args.instances)?;
    println!(
        "CMI estimator vs oracle over {} instances: max |diff| = {max_diff:.3e} (tolerance 1e-10)",
        args.instances
    );
    if max_diff > 1e-10 {
        return Err(Error::Config(format!(
            "estimator-oracle divergence {max_diff:.3e} exceeds 1e-10"
        )));
    }
    Ok(())
}

/// Max |loss_cmi(raw targets, exact centroids) - oracle_cmi| over random
/// instances. The oracle itself cross-checks its two computation routes.
pub fn oracle_equivalence_max_diff(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_diff: f64 = 0.0;
    for _ in 0..instances {
        let classes = rng.random_range(2..=5usize);
        let k = rng.random_range(classes..=6usize);
        let n = rng.random_range(classes..=40usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        // labels cover every class
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut rng);
        let preds = Matrix::from_rows(&rows);

        let mut centroids = ClassCentroids::new(k, 0.0);
        centroids.set_exact(&preds, &labels)?;
        let tape = Tape::new();
        let estimator =
            loss_cmi(&tape, tape.leaf(preds.clone()), &labels, &centroids, CmiTargets::Raw)?
                .item();
        let oracle = oracle_cmi(&preds, &labels)?;
        max_diff = max_diff.max((estimator - oracle).abs());
    }
    Ok(max_diff)
}
