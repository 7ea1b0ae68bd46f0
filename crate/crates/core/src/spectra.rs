//! Coverage-spectrum suspiciousness: Tarantula and statement-level SBI.
//!
//! ```text
//! tarantula(s) = (F(s)/TF) / (P(s)/TP + F(s)/TF)
//! sbi(s)       = F(s) / (F(s) + P(s))
//! ```
//!
//! `F(s)`/`P(s)` count failing/passing tests that execute line `s`; `TF`/`TP`
//! are the total failing/passing tests. Degenerate cases:
//!
//! * no failing tests: every Tarantula score is 0;
//! * no passing tests: Tarantula is 1 for lines some failing test executes, else 0;
//! * a line no test executes scores 0 under both formulas.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{NodeId, ParsedProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    #[serde(rename = "id")]
    pub test_id: String,
    pub outcome: Outcome,
    #[serde(rename = "lines")]
    pub covered_lines: BTreeSet<u32>,
}

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("coverage matrix has no tests")]
    NoTests,
    #[error("test `{test}` covers line {line}, which is not executable")]
    NonExecutableLine { test: String, line: u32 },
    #[error("coverage file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("coverage file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Per-test line coverage with pass/fail outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMatrix {
    tests: Vec<TestRecord>,
    total_passed: usize,
    total_failed: usize,
}

#[derive(Serialize, Deserialize)]
struct CoverageFile {
    tests: Vec<TestRecord>,
}

impl CoverageMatrix {
    pub fn new(tests: Vec<TestRecord>) -> CoverageMatrix {
        let total_failed = tests.iter().filter(|t| t.outcome == Outcome::Fail).count();
        CoverageMatrix {
            total_passed: tests.len() - total_failed,
            total_failed,
            tests,
        }
    }

    pub fn tests(&self) -> &[TestRecord] {
        &self.tests
    }

    pub fn total_passed(&self) -> usize {
        self.total_passed
    }

    pub fn total_failed(&self) -> usize {
        self.total_failed
    }

    /// Checks every covered line against the program's executable lines.
    pub fn validate_against(&self, executable: &BTreeSet<u32>) -> Result<(), SpectraError> {
        for t in &self.tests {
            if let Some(line) = t.covered_lines.iter().find(|l| !executable.contains(l)) {
                return Err(SpectraError::NonExecutableLine {
                    test: t.test_id.clone(),
                    line: *line,
                });
            }
        }
        Ok(())
    }

    /// `(passed, failed)` execution counts per line.
    pub fn line_counts(&self) -> BTreeMap<u32, (usize, usize)> {
        let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for t in &self.tests {
            for line in &t.covered_lines {
                let c = counts.entry(*line).or_default();
                match t.outcome {
                    Outcome::Pass => c.0 += 1,
                    Outcome::Fail => c.1 += 1,
                }
            }
        }
        counts
    }

    pub fn from_json(text: &str) -> Result<CoverageMatrix, serde_json::Error> {
        let file: CoverageFile = serde_json::from_str(text)?;
        Ok(CoverageMatrix::new(file.tests))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CoverageFile {
            tests: self.tests.clone(),
        })
        .expect("coverage serializes")
    }

    pub fn read(path: &Path) -> Result<CoverageMatrix, SpectraError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpectraError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CoverageMatrix::from_json(&text).map_err(|source| SpectraError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Line number to suspiciousness in `[0, 1]`.
pub type ScoreVector = BTreeMap<u32, f64>;

/// Tarantula score from raw counts, including the degenerate cases.
pub fn tarantula(failed: usize, passed: usize, total_failed: usize, total_passed: usize) -> f64 {
    if total_failed == 0 || failed == 0 {
        return 0.0;
    }
    if total_passed == 0 {
        return 1.0;
    }
    let f = failed as f64 / total_failed as f64;
    let p = passed as f64 / total_passed as f64;
    f / (p + f)
}

/// Statement-level SBI: the fraction of executions of `s` that failed.
pub fn sbi(failed: usize, passed: usize) -> f64 {
    if failed + passed == 0 {
        0.0
    } else {
        failed as f64 / (failed + passed) as f64
    }
}

fn score_lines(
    matrix: &CoverageMatrix,
    executable_lines: &BTreeSet<u32>,
    score: impl Fn(usize, usize) -> f64,
) -> Result<ScoreVector, SpectraError> {
    if matrix.tests.is_empty() {
        return Err(SpectraError::NoTests);
    }
    let counts = matrix.line_counts();
    Ok(executable_lines
        .iter()
        .map(|line| {
            let (p, f) = counts.get(line).copied().unwrap_or_default();
            (*line, score(f, p))
        })
        .collect())
}

pub fn tarantula_scores(
    matrix: &CoverageMatrix,
    executable_lines: &BTreeSet<u32>,
) -> Result<ScoreVector, SpectraError> {
    let (tf, tp) = (matrix.total_failed, matrix.total_passed);
    score_lines(matrix, executable_lines, |f, p| tarantula(f, p, tf, tp))
}

pub fn sbi_scores(
    matrix: &CoverageMatrix,
    executable_lines: &BTreeSet<u32>,
) -> Result<ScoreVector, SpectraError> {
    score_lines(matrix, executable_lines, sbi)
}

/// Lifts line scores onto every tree node: the maximum over scored lines in
/// the node's span, or 0 when the span holds none.
pub fn node_suspiciousness(scores: &ScoreVector, program: &ParsedProgram) -> BTreeMap<NodeId, f64> {
    program
        .tree
        .nodes()
        .iter()
        .map(|node| {
            let best = scores
                .range(node.span.first..=node.span.last)
                .map(|(_, s)| *s)
                .fold(0.0f64, f64::max);
            (node.id, best)
        })
        .collect()
}
