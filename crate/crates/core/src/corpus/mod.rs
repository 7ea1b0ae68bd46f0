//! Annotated program corpora: loading from a manifest, writing back to disk,
//! and sampling synthetic corpora from a known model.
//!
//! Manifest layout (paths relative to the manifest's directory):
//!
//! ```json
//! { "grammar": "minic.grammar",
//!   "programs": [ { "version_id": "v1", "source": "v1.mc",
//!                   "buggy_lines": [3], "coverage": "v1.coverage.json" } ] }
//! ```
//!
//! `grammar` may be omitted, in which case the built-in MiniC grammar is used.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{
    load_grammar, parse_program, Grammar, GrammarError, NodeId, ParseError, ParsedProgram,
};
use crate::learning::Example;
use crate::spectra::{node_suspiciousness, tarantula_scores, CoverageMatrix, SpectraError};
use crate::spn::Value;
use crate::tflm::{AttributeAssignment, TflmError, BUGGY, SUSPICIOUSNESS};

pub use synth::{
    builtin_generator, coverage_for_scores, generate_synthetic_corpus, pretty_print, sample_tree,
    SampledTree, SynthOptions, SyntheticCorpus, COVERAGE_TESTS_PER_OUTCOME,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("grammar {}: {source}", path.display())]
    Grammar {
        path: PathBuf,
        #[source]
        source: GrammarError,
    },
    #[error("version `{version}`: {source}")]
    Syntax {
        version: String,
        #[source]
        source: ParseError,
    },
    #[error("version `{version}`: {source}")]
    Coverage {
        version: String,
        #[source]
        source: SpectraError,
    },
    #[error("version `{version}`: buggy line {line} is not executable")]
    BuggyLineNotExecutable { version: String, line: u32 },
    #[error("duplicate version id `{0}`")]
    DuplicateVersion(String),
    #[error("no tree within depth {max_depth} after {attempts} attempts")]
    DepthExceeded { max_depth: usize, attempts: usize },
    #[error("no program with a buggy line after {attempts} attempts")]
    NoBuggyProgram { attempts: usize },
    #[error("generator cannot be printed as MiniC: {0}")]
    Unprintable(String),
    #[error(transparent)]
    Model(#[from] TflmError),
}

/// One program version with its coverage and derived attributes.
#[derive(Debug, Clone)]
pub struct AnnotatedProgram {
    pub version_id: String,
    pub program: ParsedProgram,
    pub coverage: CoverageMatrix,
    pub buggy_lines: BTreeSet<u32>,
    /// `buggy` and `suspiciousness` on every node.
    pub attrs: AttributeAssignment,
}

impl AnnotatedProgram {
    /// Validates coverage and bug annotations against the parsed program,
    /// then derives node attributes: Tarantula node suspiciousness, and
    /// `buggy = 1` exactly on the finest enclosing nodes of buggy lines.
    pub fn annotate(
        version_id: &str,
        program: ParsedProgram,
        coverage: CoverageMatrix,
        buggy_lines: BTreeSet<u32>,
    ) -> Result<AnnotatedProgram, CorpusError> {
        let coverage_err = |source| CorpusError::Coverage {
            version: version_id.to_string(),
            source,
        };
        coverage
            .validate_against(&program.executable_lines)
            .map_err(coverage_err)?;
        if let Some(line) = buggy_lines
            .iter()
            .find(|l| !program.executable_lines.contains(l))
        {
            return Err(CorpusError::BuggyLineNotExecutable {
                version: version_id.to_string(),
                line: *line,
            });
        }
        let scores =
            tarantula_scores(&coverage, &program.executable_lines).map_err(coverage_err)?;
        let finest = program.finest_enclosing_nodes();
        let buggy_nodes: BTreeSet<NodeId> = buggy_lines.iter().map(|l| finest[l]).collect();
        let mut attrs = AttributeAssignment::new();
        for (node, s) in node_suspiciousness(&scores, &program) {
            attrs.set(node, SUSPICIOUSNESS, Value::Real(s));
            attrs.set(
                node,
                BUGGY,
                Value::Discrete(buggy_nodes.contains(&node) as usize),
            );
        }
        Ok(AnnotatedProgram {
            version_id: version_id.to_string(),
            program,
            coverage,
            buggy_lines,
            attrs,
        })
    }

    pub fn example(&self) -> Example<'_> {
        Example {
            tree: &self.program.tree,
            attrs: &self.attrs,
        }
    }

    /// The attributes visible at localization time: everything but `buggy`.
    pub fn observed(&self) -> AttributeAssignment {
        self.attrs.without(BUGGY)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub grammar: Arc<Grammar>,
    pub programs: Vec<AnnotatedProgram>,
}

impl Corpus {
    pub fn examples(&self) -> Vec<Example<'_>> {
        self.programs
            .iter()
            .map(AnnotatedProgram::example)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProgramRecord {
    version_id: String,
    source: PathBuf,
    buggy_lines: Vec<u32>,
    coverage: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grammar: Option<PathBuf>,
    programs: Vec<ProgramRecord>,
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CorpusError> {
    std::fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and annotates every program listed in a manifest.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = read_text(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            source,
        })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let grammar = match &manifest.grammar {
        None => Grammar::minic(),
        Some(rel) => {
            let path = base.join(rel);
            load_grammar(&read_text(&path)?)
                .map_err(|source| CorpusError::Grammar { path, source })?
        }
    };
    let mut seen = BTreeSet::new();
    let mut programs = Vec::with_capacity(manifest.programs.len());
    for record in &manifest.programs {
        if !seen.insert(record.version_id.clone()) {
            return Err(CorpusError::DuplicateVersion(record.version_id.clone()));
        }
        let source = read_text(&base.join(&record.source))?;
        let program = parse_program(&source, &grammar).map_err(|source| CorpusError::Syntax {
            version: record.version_id.clone(),
            source,
        })?;
        let coverage_path = base.join(&record.coverage);
        let coverage = match CoverageMatrix::read(&coverage_path) {
            Err(SpectraError::Io { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                return Err(CorpusError::FileNotFound(coverage_path))
            }
            other => other.map_err(|source| CorpusError::Coverage {
                version: record.version_id.clone(),
                source,
            })?,
        };
        let buggy = record.buggy_lines.iter().copied().collect();
        programs.push(AnnotatedProgram::annotate(
            &record.version_id,
            program,
            coverage,
            buggy,
        )?);
    }
    Ok(Corpus {
        grammar: Arc::new(grammar),
        programs,
    })
}

/// Writes sources, coverage files and a manifest into `dir` (created if
/// missing). Returns the manifest path.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf, CorpusError> {
    std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let grammar = if *corpus.grammar == Grammar::minic() {
        None
    } else {
        let name = PathBuf::from("grammar.txt");
        write_text(&dir.join(&name), &corpus.grammar.to_definition())?;
        Some(name)
    };
    let mut records = Vec::with_capacity(corpus.programs.len());
    for p in &corpus.programs {
        let source = PathBuf::from(format!("{}.mc", p.version_id));
        let coverage = PathBuf::from(format!("{}.coverage.json", p.version_id));
        write_text(&dir.join(&source), &p.program.source)?;
        write_text(&dir.join(&coverage), &p.coverage.to_json())?;
        records.push(ProgramRecord {
            version_id: p.version_id.clone(),
            source,
            buggy_lines: p.buggy_lines.iter().copied().collect(),
            coverage,
        });
    }
    let manifest = Manifest {
        grammar,
        programs: records,
    };
    let path = dir.join("manifest.json");
    write_text(
        &path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(path)
}

/// Number of nodes carrying `buggy = 1`.
pub fn buggy_node_count(attrs: &AttributeAssignment) -> usize {
    attrs
        .iter()
        .filter(|(_, a, v)| *a == BUGGY && *v == Value::Discrete(1))
        .count()
}

/// Ground-truth posteriors keyed by node, one map per program.
pub type PosteriorTable = Vec<BTreeMap<NodeId, f64>>;
