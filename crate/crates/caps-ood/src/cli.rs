//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use caps_ood_core::caps::{
    affinity_stats, build_caps, cap_cosine_matrix, jaccard_matrix, mean_off_diagonal,
    profile_export, DEFAULT_CORE_FRACTION,
};
use caps_ood_core::epd::{Metric, ScoreConfig, DEFAULT_EPSILON, DEFAULT_HEAD_FRACTION};
use caps_ood_core::linalg::AdamParams;
use caps_ood_core::sae::{train, TrainConfig};
use caps_ood_core::synth::{gen_id, gen_ood, IdSplit, OodMode, SynthConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info, LevelFilter};

use crate::capfile::{load_caps, save_caps};
use crate::checkpoint::{load_model, save_model};
use crate::emb1::{read_embeddings, write_embeddings};
use crate::export::{affinity_csv, matrix_csv, profile_csv, scores_csv, write_csv};
use crate::manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry, Role};
use crate::pipeline::{evaluate, load_entry, write_report, Detector};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "caps-ood",
    version,
    about = "Sparse-autoencoder class activation profiles for out-of-distribution detection"
)]
pub struct Cli {
    /// Random seed (gen-synth: overrides the config seed; train: initialization and shuffling)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for scoring; defaults to all cores
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity written to stderr
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    pub log_level: LogLevel,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Off => LevelFilter::Off,
            LogLevel::Error => LevelFilter::Error,
            LogLevel::Warn => LevelFilter::Warn,
            LogLevel::Info => LevelFilter::Info,
            LogLevel::Debug => LevelFilter::Debug,
            LogLevel::Trace => LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and its manifest
    GenSynth(GenSynthArgs),
    /// Train a Top-k SAE on the manifest's id_train split
    Train(TrainArgs),
    /// Build class activation profiles from the id_train split
    Caps(CapsArgs),
    /// Score one embedding file
    Score(ScoreArgs),
    /// Evaluate AUROC / FPR95 over a manifest
    Eval(EvalArgs),
    /// Export CAP analyses as CSV
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// JSON synthetic config; unspecified fields take defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Latent width [default: 10 x D_in]
    #[arg(long)]
    pub d_latent: Option<usize>,
    /// Active latents per sample [default: 8 if D_in <= 64, else 128]
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Minibatch size [default: 256 if D_in <= 64, else 4096]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Auxiliary loss weight
    #[arg(long, default_value_t = 1.0 / 32.0)]
    pub alpha: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Dead latents used by the auxiliary loss [default: 2k]
    #[arg(long)]
    pub k_aux: Option<usize>,
    /// Samples without firing before a latent counts as dead [default: max(10 x batch, n)]
    #[arg(long)]
    pub dead_window: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CapsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Core-set fraction
    #[arg(long, default_value_t = DEFAULT_CORE_FRACTION)]
    pub q: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    #[arg(long, value_enum, default_value_t = MetricArg::Epd)]
    pub metric: MetricArg,
    /// Head fraction used for scoring
    #[arg(long, default_value_t = DEFAULT_HEAD_FRACTION)]
    pub p: f64,
    /// Profile smoothing constant
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

impl ScoringArgs {
    fn config(&self) -> Result<ScoreConfig> {
        let cfg = ScoreConfig {
            p: self.p,
            epsilon: self.epsilon,
            metric: self.metric.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Epd,
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Epd => Metric::Epd,
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub caps: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub caps: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// report.json path; a CSV with the same stem is written beside it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    /// Pairwise Jaccard similarity of core sets
    Jaccard,
    /// Pairwise cosine similarity of CAPs
    Cosine,
    /// Per-sample matched / other core-set means (needs --model, --data)
    Affinity,
    /// Head profile of one class vs. the routed samples (needs --model, --data, --class)
    Profile,
    /// Raw CAP matrix
    Matrix,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub caps: PathBuf,
    #[arg(value_enum)]
    pub analysis: Analysis,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class for the profile analysis
    #[arg(long)]
    pub class: Option<usize>,
    /// Head fraction for the profile analysis
    #[arg(long, default_value_t = DEFAULT_HEAD_FRACTION)]
    pub p: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.log_level);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(level: LogLevel) {
    let _ = env_logger::Builder::new()
        .filter_level(level.into())
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be >= 1".into()));
        }
        // fails only if a pool already exists (repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    info!(
        "global: seed={:?} threads={:?} log_level={:?}",
        cli.seed, cli.threads, cli.log_level
    );
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed.unwrap_or(DEFAULT_SEED)),
        Command::Caps(a) => caps_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
    }
}

fn gen_synth(a: &GenSynthArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    info!("gen-synth: {}", serde_json::to_string(&cfg)?);
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let mut entries = Vec::new();
    let mut emit = |file: &str,
                    role: Role,
                    ds: caps_ood_core::dataset::EmbeddingDataset,
                    notes: Option<&str>| {
        let name = file.trim_end_matches(".emb1").to_string();
        info!("writing {file}: {} x {}", ds.len(), ds.dim());
        write_embeddings(&ds, a.out_dir.join(file))?;
        entries.push(ManifestEntry {
            name,
            path: PathBuf::from(file),
            role,
            notes: notes.map(str::to_string),
        });
        Ok::<_, Error>(())
    };
    emit(
        "id_train.emb1",
        Role::IdTrain,
        gen_id(&cfg, IdSplit::Train)?,
        None,
    )?;
    emit(
        "id_test.emb1",
        Role::IdTest,
        gen_id(&cfg, IdSplit::Test)?,
        None,
    )?;
    for mode in OodMode::ALL {
        let file = format!("ood_{mode}.emb1");
        emit(&file, Role::Ood, gen_ood(&cfg, mode)?, Some(mode.as_str()))?;
    }
    let manifest = DatasetManifest {
        entries,
        base_dir: a.out_dir.clone(),
    };
    save_manifest(&manifest, a.out_dir.join("manifest.json"))
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<()> {
    for (flag, v) in [
        ("--d-latent", a.d_latent),
        ("--k", a.k),
        ("--batch", a.batch),
    ] {
        if v == Some(0) {
            return Err(Error::Usage(format!("{flag} must be >= 1")));
        }
    }
    let manifest = load_manifest(&a.manifest)?;
    let ds = load_entry(&manifest, manifest.id_train())?;
    let mut cfg = TrainConfig::for_input_dim(ds.dim());
    if let Some(v) = a.d_latent {
        cfg.d_latent = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    cfg.epochs = a.epochs;
    cfg.alpha = a.alpha;
    cfg.adam = AdamParams {
        lr: a.lr,
        ..AdamParams::default()
    };
    cfg.k_aux = a.k_aux;
    cfg.dead_window = a.dead_window;
    cfg.seed = seed;
    cfg.validate()?;
    info!(
        "train: n={} d_in={} d_latent={} k={} epochs={} batch={} alpha={} lr={} k_aux={} dead_window={} seed={}",
        ds.len(),
        ds.dim(),
        cfg.d_latent,
        cfg.k,
        cfg.epochs,
        cfg.batch_size,
        cfg.alpha,
        cfg.adam.lr,
        cfg.effective_k_aux(),
        cfg.effective_dead_window(ds.len()),
        cfg.seed
    );
    let report = train(&ds, &cfg)?;
    for s in &report.history {
        debug!(
            "epoch {}: total {:.6} recon {:.6} aux {:.6} dead {}",
            s.epoch, s.total, s.recon, s.aux, s.dead_latents
        );
    }
    if let Some(last) = report.history.last() {
        info!(
            "recon {:.6} -> {:.6}, dead latents {}",
            report.initial_recon, last.recon, last.dead_latents
        );
    }
    save_model(&report.model, &report.normalizer, &a.out)
}

fn caps_cmd(a: &CapsArgs) -> Result<()> {
    if !(a.q > 0.0 && a.q <= 1.0) {
        return Err(Error::Usage("--q must lie in (0, 1]".into()));
    }
    info!(
        "caps: model={} manifest={} q={}",
        a.model.display(),
        a.manifest.display(),
        a.q
    );
    let (model, normalizer) = load_model(&a.model)?;
    let manifest = load_manifest(&a.manifest)?;
    let ds = load_entry(&manifest, manifest.id_train())?;
    let table = build_caps(&model, &normalizer, &ds, a.q)?;
    let jac = jaccard_matrix(&table);
    info!(
        "{} classes, core sets of {} latents, mean off-diagonal Jaccard {:.4}",
        table.classes(),
        table.core_set(0).len(),
        mean_off_diagonal(&jac)
    );
    save_caps(&table, &a.out)
}

fn score_cmd(a: &ScoreArgs) -> Result<()> {
    let config = a.scoring.config()?;
    info!("score: data={} {:?}", a.data.display(), config);
    let (model, normalizer) = load_model(&a.model)?;
    let caps = load_caps(&a.caps)?;
    let ds = read_embeddings(&a.data)?;
    let detector = Detector {
        model: &model,
        normalizer: &normalizer,
        caps: &caps,
        config,
    };
    write_csv(&scores_csv(&detector.score(&ds)?), &a.out)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let config = a.scoring.config()?;
    info!("eval: manifest={} {:?}", a.manifest.display(), config);
    let (model, normalizer) = load_model(&a.model)?;
    let caps = load_caps(&a.caps)?;
    let manifest = load_manifest(&a.manifest)?;
    let detector = Detector {
        model: &model,
        normalizer: &normalizer,
        caps: &caps,
        config,
    };
    let report = evaluate(&manifest, &detector)?;
    for d in &report.datasets {
        info!("{}: AUROC {:.4} FPR95 {:.4}", d.name, d.auroc, d.fpr95);
    }
    info!(
        "average: AUROC {:.4} FPR95 {:.4}",
        report.average.auroc, report.average.fpr95
    );
    write_report(&report, &a.out)
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, analysis: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Usage(format!("{analysis} analysis requires {flag}")))
}

fn analyze_cmd(a: &AnalyzeArgs) -> Result<()> {
    info!(
        "analyze: {:?} caps={} model={:?} data={:?} class={:?} p={}",
        a.analysis,
        a.caps.display(),
        a.model,
        a.data,
        a.class,
        a.p
    );
    let csv = match a.analysis {
        Analysis::Jaccard => matrix_csv(&jaccard_matrix(&load_caps(&a.caps)?), "c"),
        Analysis::Cosine => matrix_csv(&cap_cosine_matrix(&load_caps(&a.caps)?)?, "c"),
        Analysis::Matrix => matrix_csv(load_caps(&a.caps)?.caps(), "z"),
        Analysis::Affinity => {
            let model_path = require(&a.model, "--model", "affinity")?;
            let data_path = require(&a.data, "--data", "affinity")?;
            let table = load_caps(&a.caps)?;
            let (model, normalizer) = load_model(model_path)?;
            let ds = read_embeddings(data_path)?;
            affinity_csv(&affinity_stats(&table, &model, &normalizer, &ds)?)
        }
        Analysis::Profile => {
            let model_path = require(&a.model, "--model", "profile")?;
            let data_path = require(&a.data, "--data", "profile")?;
            let class = a
                .class
                .ok_or_else(|| Error::Usage("profile analysis requires --class".into()))?;
            if !(a.p > 0.0 && a.p <= 1.0) {
                return Err(Error::Usage("--p must lie in (0, 1]".into()));
            }
            let table = load_caps(&a.caps)?;
            let (model, normalizer) = load_model(model_path)?;
            let ds = read_embeddings(data_path)?;
            profile_csv(&profile_export(
                &table,
                &model,
                &normalizer,
                &ds,
                class,
                a.p,
            )?)
        }
    };
    write_csv(&csv, &a.out)
}
