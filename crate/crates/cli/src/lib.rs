//! The `tflm` command line: train a model from an annotated corpus, rank the
//! lines of a program, run leave-one-out evaluation, and write synthetic
//! corpora.
//!
//! Each subcommand is a plain function writing its standard output to a
//! caller-supplied sink, so the binary and the tests share one code path.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use tflm_core::corpus::{builtin_generator, generate_synthetic_corpus, write_corpus, SynthOptions};
use tflm_core::evaluation::{cross_validate, localize, EvalConfig, EvaluationError};
use tflm_core::learning::{train_model, LearningError, ModelTemplate, TrainingConfig};
use tflm_core::tflm::{validate_spec, SpecDocumentError, TflmError, TflmSpec};
use tflm_core::{load_corpus, parse_program, AnnotatedProgram, CorpusError, CoverageMatrix};

#[derive(Debug, Parser)]
#[command(
    name = "tflm",
    version,
    about = "Grammar-indexed fault localization models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on every program in a corpus.
    Train(TrainArgs),
    /// Rank the lines of one program; prints rank,line,score CSV.
    Localize(LocalizeArgs),
    /// Leave-one-version-out comparison against Tarantula and SBI.
    Evaluate(EvaluateArgs),
    /// Sample a corpus from a generator model.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Subclasses per nonterminal.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Hard-EM iteration cap.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub coverage: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 4)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// FS distribution CSV path.
    #[arg(long)]
    pub cdf: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Generator model JSON, or `builtin`.
    #[arg(long, default_value = "builtin")]
    pub generator: String,
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    #[arg(long, default_value_t = 30)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives sources, coverage, manifest.json and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model {}: {source}", path.display())]
    ModelFile {
        path: PathBuf,
        #[source]
        source: SpecDocumentError,
    },
    #[error("model {}: {source}", path.display())]
    InvalidModel {
        path: PathBuf,
        #[source]
        source: TflmError,
    },
    #[error("{}: {source}", path.display())]
    Syntax {
        path: PathBuf,
        #[source]
        source: tflm_core::frontend::ParseError,
    },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("writing output: {0}")]
    Output(#[source] std::io::Error),
}

impl CliError {
    /// 2 for bad input or usage, 3 for failures inside the model code.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Learning(LearningError::EmptyCorpus | LearningError::BadConfig(_)) => 2,
            CliError::Learning(_) => 3,
            CliError::Evaluation(
                EvaluationError::InsufficientVersions(_) | EvaluationError::EmptyRange { .. },
            ) => 2,
            CliError::Evaluation(_) => 3,
            CliError::Corpus(CorpusError::Model(_)) => 3,
            CliError::Output(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn load_model(path: &Path) -> Result<TflmSpec, CliError> {
    let spec = TflmSpec::from_json(&read(path)?).map_err(|source| CliError::ModelFile {
        path: path.to_path_buf(),
        source,
    })?;
    validate_spec(&spec).map_err(|source| CliError::InvalidModel {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(spec)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&args.manifest)?;
    let template = ModelTemplate::with_default_attributes(Arc::clone(&corpus.grammar));
    let config = TrainingConfig {
        subclass_count: args.k,
        em_iterations: args.iters,
        seed: args.seed,
        ..TrainingConfig::default()
    };
    let trained = train_model(&template, &corpus.examples(), &config)?;
    write(&args.out, &trained.spec.to_json())?;
    let score = trained.trace.last().copied().unwrap_or(f64::NAN);
    writeln!(out, "final log score {score}").map_err(CliError::Output)?;
    writeln!(out, "em iterations {}", trained.trace.len() - 1).map_err(CliError::Output)?;
    Ok(())
}

pub fn cmd_localize(args: &LocalizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = load_model(&args.model)?;
    let source = read(&args.source)?;
    let program = parse_program(&source, &spec.grammar).map_err(|source| CliError::Syntax {
        path: args.source.clone(),
        source,
    })?;
    let coverage =
        CoverageMatrix::read(&args.coverage).map_err(|source| CorpusError::Coverage {
            version: args.coverage.display().to_string(),
            source,
        })?;
    let name = args.source.display().to_string();
    let annotated = AnnotatedProgram::annotate(&name, program, coverage, BTreeSet::new())?;
    let ranking = localize(&spec, &annotated.program, &annotated.observed())?;
    out.write_all(ranking.to_csv().as_bytes())
        .map_err(CliError::Output)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&args.manifest)?;
    let config = EvalConfig {
        k_min: args.k_min,
        k_max: args.k_max,
        training: TrainingConfig {
            seed: args.seed,
            ..TrainingConfig::default()
        },
    };
    let report = cross_validate(&corpus, &config)?;
    write(&args.report, &report.to_json())?;
    write(&args.cdf, &report.cdf_csv())?;
    let folds = report.folds.len();
    writeln!(out, "folds {folds}").map_err(CliError::Output)?;
    writeln!(out, "mean fs tflm {:.6}", report.mean_fs_tflm).map_err(CliError::Output)?;
    writeln!(out, "mean fs tarantula {:.6}", report.mean_fs_tarantula).map_err(CliError::Output)?;
    writeln!(out, "mean fs sbi {:.6}", report.mean_fs_sbi).map_err(CliError::Output)?;
    writeln!(out, "tflm wins {}/{folds}", report.tflm_wins).map_err(CliError::Output)?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = if args.generator == "builtin" {
        builtin_generator()
    } else {
        load_model(Path::new(&args.generator))?
    };
    let options = SynthOptions {
        count: args.count,
        max_depth: args.depth,
        seed: args.seed,
        require_bug: true,
    };
    let synth = generate_synthetic_corpus(&spec, &options)?;
    let manifest = write_corpus(&args.out, &synth.corpus)?;
    let truth: BTreeMap<&str, BTreeMap<usize, f64>> = synth
        .corpus
        .programs
        .iter()
        .zip(&synth.truth)
        .map(|(p, post)| {
            (
                p.version_id.as_str(),
                post.iter().map(|(n, v)| (n.0, *v)).collect(),
            )
        })
        .collect();
    let truth_json = serde_json::to_string_pretty(&truth).expect("posterior table serializes");
    write(&args.out.join("truth.json"), &truth_json)?;
    writeln!(
        out,
        "wrote {} programs to {}",
        synth.corpus.programs.len(),
        manifest.display()
    )
    .map_err(CliError::Output)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Localize(a) => cmd_localize(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}
