//! Line rankings, the fraction-skipped (FS) score, leave-one-version-out
//! cross-validation and FS survival curves.
//!
//! FS is the fraction of executable lines ranked strictly below the
//! highest-ranked buggy line. Ties in score are ordered by ascending line
//! number, so a tie with the buggy line is never counted as skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AnnotatedProgram, Corpus};
use crate::frontend::{NodeId, ParsedProgram};
use crate::learning::{train_model, Example, LearningError, ModelTemplate, TrainingConfig};
use crate::spectra::{sbi_scores, tarantula_scores, CoverageMatrix, ScoreVector, SpectraError};
use crate::tflm::{buggy_posteriors, AttributeAssignment, TflmError, TflmSpec};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("no posterior for node {node}, the finest node of line {line}")]
    MissingPosterior { line: u32, node: usize },
    #[error("no executable buggy line to score against")]
    NoBuggyLine,
    #[error("cross-validation needs at least 2 versions, got {0}")]
    InsufficientVersions(usize),
    #[error("empty subclass range {k_min}..={k_max}")]
    EmptyRange { k_min: usize, k_max: usize },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Model(#[from] TflmError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

/// Executable lines, most suspicious first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<(u32, f64)>,
}

impl Ranking {
    pub fn lines(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(l, _)| *l)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,line,score\n");
        for (i, (line, score)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{},{line},{score}\n", i + 1));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsReport {
    pub fs: f64,
    /// 1-based position of the highest-ranked buggy line.
    pub top_buggy_rank: usize,
    pub executable_count: usize,
}

/// Sorts line scores descending, ties by ascending line.
pub fn rank_line_scores(scores: &BTreeMap<u32, f64>) -> Ranking {
    let mut entries: Vec<(u32, f64)> = scores.iter().map(|(l, s)| (*l, *s)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ranking { entries }
}

/// Scores each executable line with its finest enclosing node's posterior.
pub fn rank_lines(
    posteriors: &BTreeMap<NodeId, f64>,
    program: &ParsedProgram,
) -> Result<Ranking, EvaluationError> {
    let mut scores = BTreeMap::new();
    for (line, node) in program.finest_enclosing_nodes() {
        let p = posteriors
            .get(&node)
            .ok_or(EvaluationError::MissingPosterior { line, node: node.0 })?;
        scores.insert(line, *p);
    }
    Ok(rank_line_scores(&scores))
}

pub fn fs_score(
    ranking: &Ranking,
    buggy_lines: &BTreeSet<u32>,
) -> Result<FsReport, EvaluationError> {
    let n = ranking.entries.len();
    let pos = ranking
        .lines()
        .position(|l| buggy_lines.contains(&l))
        .ok_or(EvaluationError::NoBuggyLine)?;
    if buggy_lines
        .iter()
        .any(|l| !ranking.lines().any(|r| r == *l))
    {
        return Err(EvaluationError::NoBuggyLine);
    }
    Ok(FsReport {
        fs: (n - pos - 1) as f64 / n as f64,
        top_buggy_rank: pos + 1,
        executable_count: n,
    })
}

/// Ranks a program's lines by `P(buggy = 1)` under `spec`.
pub fn localize(
    spec: &TflmSpec,
    program: &ParsedProgram,
    observed: &AttributeAssignment,
) -> Result<Ranking, EvaluationError> {
    let posteriors = buggy_posteriors(spec, &program.tree, observed)?;
    rank_lines(&posteriors, program)
}

pub fn tarantula_ranking(
    program: &ParsedProgram,
    coverage: &CoverageMatrix,
) -> Result<Ranking, EvaluationError> {
    let scores: ScoreVector = tarantula_scores(coverage, &program.executable_lines)?;
    Ok(rank_line_scores(&scores))
}

pub fn sbi_ranking(
    program: &ParsedProgram,
    coverage: &CoverageMatrix,
) -> Result<Ranking, EvaluationError> {
    let scores: ScoreVector = sbi_scores(coverage, &program.executable_lines)?;
    Ok(rank_line_scores(&scores))
}

/// `(threshold, fraction of reports with fs >= threshold)` for thresholds
/// 0.00, 0.01, ..., 1.00.
pub fn export_cdf(reports: &[FsReport]) -> Vec<(f64, f64)> {
    let n = reports.len().max(1) as f64;
    (0..=100)
        .map(|i| {
            let t = i as f64 / 100.0;
            let hits = reports.iter().filter(|r| r.fs >= t).count();
            (t, hits as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Shared by every training run; its subclass count is overridden.
    pub training: TrainingConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_min: 1,
            k_max: 4,
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub version_id: String,
    pub chosen_k: usize,
    pub fs_tflm: f64,
    pub fs_tarantula: f64,
    pub fs_sbi: f64,
    /// Mean inner FS for each k in the range; empty when there was no
    /// inner selection.
    pub inner_mean_fs: Vec<f64>,
    #[serde(skip)]
    pub training_versions: Vec<String>,
    /// Hash of exactly the programs the final model was trained on.
    #[serde(skip)]
    pub training_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvalConfig,
    pub folds: Vec<FoldReport>,
    pub mean_fs_tflm: f64,
    pub mean_fs_tarantula: f64,
    pub mean_fs_sbi: f64,
    /// Folds where TFLM's FS is strictly above Tarantula's.
    pub tflm_wins: usize,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Survival curves for every method: `threshold,tflm,tarantula,sbi`.
    pub fn cdf_csv(&self) -> String {
        let curve = |f: fn(&FoldReport) -> f64| {
            let reports: Vec<FsReport> = self
                .folds
                .iter()
                .map(|fold| FsReport {
                    fs: f(fold),
                    top_buggy_rank: 0,
                    executable_count: 0,
                })
                .collect();
            export_cdf(&reports)
        };
        let (a, b, c) = (
            curve(|f| f.fs_tflm),
            curve(|f| f.fs_tarantula),
            curve(|f| f.fs_sbi),
        );
        let mut out = String::from("threshold,tflm,tarantula,sbi\n");
        for i in 0..a.len() {
            out.push_str(&format!("{:.2},{},{},{}\n", a[i].0, a[i].1, b[i].1, c[i].1));
        }
        out
    }
}

/// SHA-256 over the ids, sources, coverage and bug annotations of `programs`.
pub fn corpus_fingerprint(programs: &[&AnnotatedProgram]) -> String {
    let mut h = Sha256::new();
    for p in programs {
        h.update(p.version_id.as_bytes());
        h.update([0]);
        h.update(p.program.source.as_bytes());
        h.update([0]);
        h.update(p.coverage.to_json().as_bytes());
        h.update([0]);
        for l in &p.buggy_lines {
            h.update(l.to_le_bytes());
        }
        h.update([0xff]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn train_on(
    template: &ModelTemplate,
    programs: &[&AnnotatedProgram],
    config: &TrainingConfig,
    k: usize,
) -> Result<TflmSpec, EvaluationError> {
    let examples: Vec<Example> = programs.iter().map(|p| p.example()).collect();
    let config = TrainingConfig {
        subclass_count: k,
        ..config.clone()
    };
    Ok(train_model(template, &examples, &config)?.spec)
}

fn tflm_fs(spec: &TflmSpec, p: &AnnotatedProgram) -> Result<f64, EvaluationError> {
    let ranking = localize(spec, &p.program, &p.observed())?;
    Ok(fs_score(&ranking, &p.buggy_lines)?.fs)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Picks k by mean FS over a leave-one-out split of `train`; ties go to the
/// smaller k. With fewer than two programs there is nothing to hold out and
/// `k_min` is returned.
fn select_k(
    template: &ModelTemplate,
    train: &[&AnnotatedProgram],
    config: &EvalConfig,
) -> Result<(usize, Vec<f64>), EvaluationError> {
    if train.len() < 2 || config.k_min == config.k_max {
        return Ok((config.k_min, Vec::new()));
    }
    let mut scores = Vec::new();
    let mut best = (config.k_min, f64::NEG_INFINITY);
    for k in config.k_min..=config.k_max {
        let mut fs = Vec::with_capacity(train.len());
        for held in 0..train.len() {
            let inner: Vec<&AnnotatedProgram> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, p)| *p)
                .collect();
            let spec = train_on(template, &inner, &config.training, k)?;
            fs.push(tflm_fs(&spec, train[held])?);
        }
        let m = mean(fs.into_iter());
        if m > best.1 {
            best = (k, m);
        }
        scores.push(m);
    }
    Ok((best.0, scores))
}

/// Leave-one-version-out evaluation of TFLM against Tarantula and SBI. Each
/// fold selects k by an inner leave-one-out over its training versions,
/// trains on all of them, and ranks the held-out version with all three
/// methods through the same ranking and FS code.
pub fn cross_validate(
    corpus: &Corpus,
    config: &EvalConfig,
) -> Result<EvaluationReport, EvaluationError> {
    let programs = &corpus.programs;
    if programs.len() < 2 {
        return Err(EvaluationError::InsufficientVersions(programs.len()));
    }
    if config.k_min == 0 || config.k_min > config.k_max {
        return Err(EvaluationError::EmptyRange {
            k_min: config.k_min,
            k_max: config.k_max,
        });
    }
    let template = ModelTemplate::with_default_attributes(Arc::clone(&corpus.grammar));
    let mut folds = Vec::with_capacity(programs.len());
    for (held, test) in programs.iter().enumerate() {
        if test.buggy_lines.is_empty() {
            return Err(EvaluationError::NoBuggyLine);
        }
        let train: Vec<&AnnotatedProgram> = programs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, p)| p)
            .collect();
        let (chosen_k, inner_mean_fs) = select_k(&template, &train, config)?;
        let spec = train_on(&template, &train, &config.training, chosen_k)?;
        let fs_tflm = tflm_fs(&spec, test)?;
        let fs_tarantula = fs_score(
            &tarantula_ranking(&test.program, &test.coverage)?,
            &test.buggy_lines,
        )?
        .fs;
        let fs_sbi = fs_score(
            &sbi_ranking(&test.program, &test.coverage)?,
            &test.buggy_lines,
        )?
        .fs;
        log::info!(
            "fold {}/{} ({}): k={chosen_k} tflm={fs_tflm:.3} tarantula={fs_tarantula:.3} sbi={fs_sbi:.3}",
            held + 1,
            programs.len(),
            test.version_id
        );
        folds.push(FoldReport {
            version_id: test.version_id.clone(),
            chosen_k,
            fs_tflm,
            fs_tarantula,
            fs_sbi,
            inner_mean_fs,
            training_versions: train.iter().map(|p| p.version_id.clone()).collect(),
            training_fingerprint: corpus_fingerprint(&train),
        });
    }
    Ok(EvaluationReport {
        config: config.clone(),
        mean_fs_tflm: mean(folds.iter().map(|f| f.fs_tflm)),
        mean_fs_tarantula: mean(folds.iter().map(|f| f.fs_tarantula)),
        mean_fs_sbi: mean(folds.iter().map(|f| f.fs_sbi)),
        tflm_wins: folds.iter().filter(|f| f.fs_tflm > f.fs_tarantula).count(),
        folds,
    })
}
