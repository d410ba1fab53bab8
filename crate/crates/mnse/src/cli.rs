//! The `mnse` command line.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and input validation
//! errors, 2 for runtime failures (file system, numerical breakdown, or a
//! `validate` run whose Monte Carlo check fails).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mnse_core::bounds::{monte_carlo_with_model, MonteCarloOptions};
use mnse_core::dataset::{generate_synthetic, MultiModalDataset, SyntheticSource};
use mnse_core::graphs::LaplacianSet;
use mnse_core::optimizer::{build_a, reference_scale, stacked_inverse_square, train, EmbeddingModel};
use mnse_core::DMatrix;

use crate::config::{ConfigError, RunConfig};
use crate::io::{matrix_csv, read_dataset, write_atomic, write_dataset, IoError};
use crate::report::{render, BoundsReport, ClassificationReport, RetrievalReport};
use crate::{batch, model_file};

/// Name of the generator settings file inside a dataset directory.
pub const SYNTH_FILE: &str = "synth.cfg";

#[derive(Debug, Parser)]
#[command(name = "mnse", version, about = "Supervised multi-modal nonlinear embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-modal dataset.
    Gen(GenArgs),
    /// Split a dataset into stratified train and test directories.
    Split(SplitArgs),
    /// Train an embedding model.
    Train(TrainArgs),
    /// Evaluate a trained model.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Audit the generalization bounds and check them by Monte Carlo.
    Validate(ValidateArgs),
    /// Export the objective matrices as CSV for debugging.
    DumpMatrices(DumpArgs),
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Nearest-neighbour classification error per modality.
    Classify(ClassifyArgs),
    /// Cross-modal retrieval precision, recall and MAP.
    Retrieve(RetrieveArgs),
}

/// Objective settings shared by every command that trains.
#[derive(Debug, Args)]
struct TrainingFlags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    mu1: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    mu2: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    mu3: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    mu4: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    mu5: Option<String>,
    /// Embedding dimension, or `auto` for classes − 1.
    #[arg(long, allow_negative_numbers = true)]
    dim: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    max_iters: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<String>,
}

impl TrainingFlags {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        [
            ("mu1", &self.mu1),
            ("mu2", &self.mu2),
            ("mu3", &self.mu3),
            ("mu4", &self.mu4),
            ("mu5", &self.mu5),
            ("dim", &self.dim),
            ("max_iters", &self.max_iters),
            ("tol", &self.tol),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }

    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = load_config(self.config.as_deref())?;
        for (key, value) in self.overrides() {
            cfg.set(key, value)?;
        }
        cfg.validate_training()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    seed: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    classes: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    modalities: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    per_class: Option<String>,
    /// Comma-separated feature dimension of each modality.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    separation: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    noise: Option<String>,
    /// identity, affine or cubic.
    #[arg(long)]
    warp: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    cross_noise: Option<String>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Receives `train/` and `test/` subdirectories.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of each class that goes to the training side.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Where to write the model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test dataset directory.
    #[arg(long, alias = "data")]
    test: PathBuf,
    /// all or own.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, alias = "data")]
    test: PathBuf,
    /// euclidean or cosine.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// A generated dataset directory (must contain `synth.cfg`).
    #[arg(long)]
    data: PathBuf,
    /// Use this model instead of training one on `--data`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    trials: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<String>,
    /// Estimate the ball measure from a fresh pool of this many draws per class.
    #[arg(long, allow_negative_numbers = true)]
    pool: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving the CSV files.
    #[arg(long)]
    out: PathBuf,
    /// Take the kernel scales from this model instead of the initial ones.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Invalid(String),
    /// Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<mnse_core::Error> for CliError {
    fn from(e: mnse_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => CliError::Runtime(e.to_string()),
            IoError::Dataset(inner) => inner.into(),
            IoError::Parse { .. } | IoError::Config(_) => CliError::Invalid(e.to_string()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            RunConfig::from_text(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(path: &Path) -> Result<EmbeddingModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    model_file::from_json(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Writes `text` to `out`, or to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

fn report_text<T: serde::Serialize>(report: &T) -> Result<String, CliError> {
    render(report).map_err(CliError::Runtime)
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    let flags = [
        ("seed", &a.seed),
        ("classes", &a.classes),
        ("modalities", &a.modalities),
        ("per_class", &a.per_class),
        ("dims", &a.dims),
        ("separation", &a.separation),
        ("noise", &a.noise),
        ("warp", &a.warp),
        ("cross_noise", &a.cross_noise),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    // A changed modality count without explicit dims keeps the default width.
    if a.dims.is_none() && cfg.synth.dims.len() != cfg.synth.num_modalities {
        let width = cfg.synth.dims.first().copied().unwrap_or(4);
        cfg.synth.dims = vec![width; cfg.synth.num_modalities];
    }
    cfg.validate_synth()?;
    let ds = generate_synthetic(&cfg.synth)?;
    write_dataset(&a.out, &ds)?;
    write_atomic(&a.out.join(SYNTH_FILE), cfg.synth_text().as_bytes())?;
    log::info!(
        "wrote {} samples in {} modalities to {}",
        ds.sample_ids().len(),
        ds.num_modalities(),
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<(), CliError> {
    let ds = read_dataset(&a.data)?;
    let (train_set, test_set) = ds.split(a.fraction, a.seed)?;
    let synth = fs::read(a.data.join(SYNTH_FILE)).ok();
    for (name, part) in [("train", &train_set), ("test", &test_set)] {
        let dir = a.out.join(name);
        write_dataset(&dir, part)?;
        if let Some(bytes) = &synth {
            write_atomic(&dir.join(SYNTH_FILE), bytes)?;
        }
    }
    Ok(())
}

fn train_on(data: &Path, cfg: &RunConfig) -> Result<(MultiModalDataset, EmbeddingModel), CliError> {
    let ds = read_dataset(data)?;
    let model = train(&ds, &cfg.hyper)?;
    let trace = model.trace();
    log::info!(
        "trained d = {} in {} iterations, final objective {:.6e}",
        model.dim(),
        trace.entries.len(),
        trace.values().last().copied().unwrap_or(f64::NAN)
    );
    Ok((ds, model))
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = a.training.load()?;
    let (_, model) = train_on(&a.data, &cfg)?;
    let text = model_file::to_json(&model).map_err(CliError::Runtime)?;
    Ok(write_atomic(&a.model, text.as_bytes())?)
}

fn cmd_classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(mode) = &a.mode {
        cfg.set("mode", mode)?;
    }
    let model = load_model(&a.model)?;
    let test = read_dataset(&a.test)?;
    let rates = batch::misclassification(&model, &test, cfg.mode)?;
    let sizes = test.modalities().iter().map(|m| m.len()).collect();
    let report = ClassificationReport::new(cfg.mode, sizes, &rates);
    emit(a.out.as_deref(), &report_text(&report)?)
}

/// Query/target modality pairs evaluated by `eval retrieve`.
fn directions(num_modalities: usize) -> Vec<(usize, usize)> {
    if num_modalities == 1 {
        return vec![(0, 0)];
    }
    (0..num_modalities)
        .flat_map(|v| (0..num_modalities).filter(move |&u| u != v).map(move |u| (v, u)))
        .collect()
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(metric) = &a.metric {
        cfg.set("metric", metric)?;
    }
    if let Some(k) = &a.k {
        cfg.set("k", k)?;
    }
    cfg.validate_training()?;
    let model = load_model(&a.model)?;
    let test = read_dataset(&a.test)?;
    let pairs = directions(model.num_modalities());
    let smallest_target = pairs.iter().map(|&(_, u)| model.modality(u).len()).min().unwrap_or(0);
    let k = cfg.k.unwrap_or(10.min(smallest_target));
    let summaries = pairs
        .iter()
        .map(|&(v, u)| batch::retrieval(&model, &test, v, u, k, cfg.metric))
        .collect::<Result<Vec<_>, _>>()?;
    emit(a.out.as_deref(), &report_text(&RetrievalReport::new(k, &summaries))?)
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), CliError> {
    let mut cfg = a.training.load()?;
    for (key, value) in [("trials", &a.trials), ("k", &a.k), ("pool", &a.pool)] {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate_training()?;
    let synth_path = a.data.join(SYNTH_FILE);
    let synth_text = fs::read_to_string(&synth_path).map_err(|e| {
        CliError::Invalid(format!(
            "{}: {e}; validate needs a dataset produced by `mnse gen`",
            synth_path.display()
        ))
    })?;
    let synth = RunConfig::from_text(&synth_text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", synth_path.display())))?
        .synth;
    synth.validate()?;
    let (ds, model) = match &a.model {
        Some(path) => (read_dataset(&a.data)?, load_model(path)?),
        None => train_on(&a.data, &cfg)?,
    };
    let opts = MonteCarloOptions {
        trials: cfg.trials,
        k: cfg.k,
        pool: cfg.pool,
        grids: None,
    };
    let report = monte_carlo_with_model(&model, &ds, &SyntheticSource::new(&synth)?, &opts)?;
    emit(a.out.as_deref(), &report_text(&BoundsReport::new(&report))?)?;
    match &report.monte_carlo {
        Some(mc) if !mc.passed => Err(CliError::Runtime(format!(
            "empirical correct-classification rate {:.6} is below the floor threshold {:.6}",
            mc.min_correct_rate, mc.threshold
        ))),
        _ => Ok(()),
    }
}

fn cmd_dump(a: &DumpArgs) -> Result<(), CliError> {
    let cfg = a.training.load()?;
    let ds = read_dataset(&a.data)?;
    let features: Vec<&DMatrix<f64>> = ds.modalities().iter().map(|m| m.features()).collect();
    let sigma = match &a.model {
        Some(path) => load_model(path)?.sigma(),
        None => cfg
            .hyper
            .initial_sigma
            .clone()
            .unwrap_or_else(|| features.iter().map(|x| reference_scale(x)).collect()),
    };
    let lap = LaplacianSet::build(&ds, cfg.hyper.theta.as_deref())?;
    let psi = stacked_inverse_square(&features, &sigma, &cfg.hyper.jitter)?;
    let a_mat = build_a(&lap, &psi, &cfg.hyper.weights)?;
    let files = [
        ("A.csv", &a_mat),
        ("Lw.csv", &lap.within),
        ("Lb.csv", &lap.between),
        ("Lcw.csv", &lap.cross_within),
        ("Lcb.csv", &lap.cross_between),
        ("Psi_inv_sq.csv", &psi),
    ];
    for (name, m) in files {
        write_atomic(&a.out.join(name), matrix_csv(m).as_bytes())?;
    }
    let mut order = String::from("row,modality,id\n");
    for (row, (v, id)) in lap.order.iter().enumerate() {
        let _ = writeln!(order, "{row},{},{id}", v + 1);
    }
    Ok(write_atomic(&a.out.join("order.csv"), order.as_bytes())?)
}

/// Parses and executes one command line (program name first).
pub fn execute<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if e.use_stderr() {
            CliError::Invalid(e.to_string())
        } else {
            // --help and --version
            print!("{e}");
            CliError::Invalid(String::new())
        }
    });
    let cli = match cli {
        Ok(c) => c,
        Err(CliError::Invalid(m)) if m.is_empty() => return Ok(()),
        Err(e) => return Err(e),
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(EvalCommand::Classify(a)) => cmd_classify(a),
        Command::Eval(EvalCommand::Retrieve(a)) => cmd_retrieve(a),
        Command::Validate(a) => cmd_validate(a),
        Command::DumpMatrices(a) => cmd_dump(a),
    }
}

/// Runs a command line and returns the process exit code, printing any
/// error to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.message().trim_end();
            if msg.starts_with("error:") {
                eprintln!("{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_cover_every_ordered_pair() {
        assert_eq!(directions(1), vec![(0, 0)]);
        assert_eq!(directions(3).len(), 6);
        assert!(directions(2).contains(&(1, 0)));
    }

    #[test]
    fn bad_flags_exit_with_one() {
        assert_eq!(run(["mnse", "train", "--bogus"]), 1);
        assert_eq!(run(["mnse"]), 1);
        assert_eq!(run(["mnse", "--help"]), 0);
    }
}
