//! Tractable fault localization models.
//!
//! A latent-subclass probabilistic model indexed by a programming language's
//! grammar is learned from programs with annotated bugs. For a new program
//! the model is grounded over the parse tree into a sum-product network whose
//! exact marginals give a bug probability for every line. Coverage-based
//! suspiciousness (Tarantula) enters as an observed per-node attribute.

pub mod corpus;
pub mod evaluation;
pub mod frontend;
pub mod learning;
pub mod spectra;
pub mod spn;
pub mod tflm;

#[cfg(test)]
mod testutil;

pub use corpus::{
    generate_synthetic_corpus, load_corpus, write_corpus, AnnotatedProgram, Corpus, CorpusError,
    SynthOptions,
};
pub use evaluation::{
    cross_validate, localize, EvalConfig, EvaluationError, EvaluationReport, FsReport, Ranking,
};
pub use frontend::{parse_program, Grammar, NodeId, ParseTree, ParsedProgram, Span};
pub use learning::{train_model, LearningError, ModelTemplate, TrainedModel, TrainingConfig};
pub use spectra::{CoverageMatrix, Outcome, TestRecord};
pub use tflm::{validate_spec, AttributeAssignment, TflmError, TflmSpec};
