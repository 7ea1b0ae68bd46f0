use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Grammar, ParseTree, SymbolId};
use crate::spn::{LeafDistribution, Value};
use crate::tflm::{
    joint_log_prob, map_subclasses_direct, validate_spec, AttributeAssignment, AttributeDecl,
    AttributeKind, SubclassAssignment, TflmError, TflmSpec, BUGGY, SUSPICIOUSNESS,
};

use super::logistic::{fit_logistic, Sample};

pub const STD_DEV_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Subclasses per nonterminal, shared by every symbol.
    pub subclass_count: usize,
    pub em_iterations: usize,
    pub smoothing_alpha: f64,
    pub seed: u64,
    pub convergence_epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            subclass_count: 1,
            em_iterations: 100,
            smoothing_alpha: 1.0,
            seed: 0,
            convergence_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearningError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("program {program} has no subclass label for node {node}")]
    MissingSubclassLabel { program: usize, node: usize },
    #[error(transparent)]
    Model(#[from] TflmError),
}

/// A training program: its tree and fully observed attributes.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub tree: &'a ParseTree,
    pub attrs: &'a AttributeAssignment,
}

/// What the model is defined over: a grammar and per-symbol attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTemplate {
    pub grammar: Arc<Grammar>,
    pub attributes: Vec<Vec<AttributeDecl>>,
}

impl ModelTemplate {
    /// `buggy` and `suspiciousness` on every nonterminal.
    pub fn with_default_attributes(grammar: Arc<Grammar>) -> Self {
        let n = grammar.symbol_count();
        ModelTemplate {
            grammar,
            attributes: vec![crate::tflm::default_attributes(); n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: TflmSpec,
    /// Completed-data log score: the initial estimate, then the MAP score
    /// total of every E-step.
    pub trace: Vec<f64>,
    /// Subclass labels from the final E-step.
    pub classes: Vec<SubclassAssignment>,
}

fn check_config(config: &TrainingConfig) -> Result<(), LearningError> {
    if config.subclass_count == 0 {
        return Err(LearningError::BadConfig(
            "subclass count must be at least 1".into(),
        ));
    }
    if !(config.smoothing_alpha >= 0.0 && config.smoothing_alpha.is_finite()) {
        return Err(LearningError::BadConfig(
            "smoothing must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

fn smoothed(counts: &[f64], alpha: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + alpha * counts.len() as f64;
    if total <= 0.0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|c| (c + alpha) / total).collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    /// Maximum-likelihood Gaussian with the standard deviation floored.
    fn gaussian(&self) -> Option<LeafDistribution> {
        (self.n > 0.0).then(|| {
            let mean = self.sum / self.n;
            let var = (self.sum_sq / self.n - mean * mean).max(0.0);
            LeafDistribution::Gaussian {
                mean,
                std_dev: var.sqrt().max(STD_DEV_FLOOR),
            }
        })
    }
}

/// Re-estimates every table from a corpus with fixed subclass labels.
pub fn m_step_estimate(
    template: &ModelTemplate,
    corpus: &[Example],
    classes: &[SubclassAssignment],
    subclass_count: usize,
    alpha: f64,
) -> Result<TflmSpec, LearningError> {
    let g = &template.grammar;
    let n_sym = g.symbol_count();
    let k = subclass_count;
    let attrs = &template.attributes;

    let mut start = vec![0.0; k];
    let mut rules: Vec<Vec<Vec<f64>>> = (0..n_sym)
        .map(|s| vec![vec![0.0; g.rules_for(SymbolId(s)).len()]; k])
        .collect();
    let mut children: Vec<Vec<Vec<Vec<f64>>>> = g
        .rules()
        .iter()
        .map(|r| vec![vec![vec![0.0; k]; r.arity()]; k])
        .collect();
    // (ones, total) per binary attribute; moments per real attribute.
    let mut binary: Vec<Vec<Vec<(f64, f64)>>> = (0..n_sym)
        .map(|s| vec![vec![(0.0, 0.0); attrs[s].len()]; k])
        .collect();
    let mut real: Vec<Vec<Vec<Moments>>> = (0..n_sym)
        .map(|s| vec![vec![Moments::default(); attrs[s].len()]; k])
        .collect();
    let mut pooled: Vec<Vec<Moments>> = (0..n_sym)
        .map(|s| vec![Moments::default(); attrs[s].len()])
        .collect();

    if classes.len() != corpus.len() {
        return Err(LearningError::MissingSubclassLabel {
            program: classes.len().min(corpus.len()),
            node: 0,
        });
    }
    for (p, (ex, c)) in corpus.iter().zip(classes).enumerate() {
        let tree = ex.tree;
        if c.classes.len() != tree.len() || c.classes.iter().any(|i| *i >= k) {
            let node = c
                .classes
                .iter()
                .position(|i| *i >= k)
                .unwrap_or(c.classes.len());
            return Err(LearningError::MissingSubclassLabel { program: p, node });
        }
        start[c.get(tree.root().id)] += 1.0;
        for node in tree.nodes() {
            let s = node.symbol.0;
            let i = c.get(node.id);
            rules[s][i][g.local_rule_index(node.rule)] += 1.0;
            for (pos, child) in node.children.iter().enumerate() {
                children[node.rule.0][i][pos][c.get(*child)] += 1.0;
            }
            for (a, decl) in attrs[s].iter().enumerate() {
                match (decl.kind, ex.attrs.get(node.id, &decl.name)) {
                    (AttributeKind::Binary, Some(Value::Discrete(v))) => {
                        let e = &mut binary[s][i][a];
                        e.0 += v as f64;
                        e.1 += 1.0;
                    }
                    (AttributeKind::Real, Some(Value::Real(x))) => {
                        real[s][i][a].add(x);
                        pooled[s][a].add(x);
                    }
                    _ => {
                        return Err(TflmError::IncompleteAssignment(format!(
                            "attribute `{}` of node {} in program {p}",
                            decl.name, node.id.0
                        ))
                        .into())
                    }
                }
            }
        }
    }

    let fallback_gaussian = LeafDistribution::Gaussian {
        mean: 0.5,
        std_dev: 0.5,
    };
    let attr_dist = (0..n_sym)
        .map(|s| {
            (0..k)
                .map(|i| {
                    attrs[s]
                        .iter()
                        .enumerate()
                        .map(|(a, decl)| match decl.kind {
                            AttributeKind::Binary => {
                                let (ones, n) = binary[s][i][a];
                                let denom = n + 2.0 * alpha;
                                let p = if denom > 0.0 {
                                    (ones + alpha) / denom
                                } else {
                                    0.5
                                };
                                LeafDistribution::Bernoulli { p }
                            }
                            AttributeKind::Real => real[s][i][a]
                                .gaussian()
                                .or_else(|| pooled[s][a].gaussian())
                                .unwrap_or_else(|| fallback_gaussian.clone()),
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let spec = TflmSpec {
        grammar: g.clone(),
        attributes: attrs.clone(),
        subclass_count: vec![k; n_sym],
        start_dist: smoothed(&start, alpha),
        rule_dist: rules
            .iter()
            .map(|rows| rows.iter().map(|r| smoothed(r, alpha)).collect())
            .collect(),
        child_dist: children
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|pos| pos.iter().map(|d| smoothed(d, alpha)).collect())
                    .collect()
            })
            .collect(),
        attr_dist,
        attr_joint: None,
    };
    validate_spec(&spec)?;
    Ok(spec)
}

fn random_classes(corpus: &[Example], k: usize, seed: u64) -> Vec<SubclassAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .map(|ex| SubclassAssignment {
            classes: (0..ex.tree.len()).map(|_| rng.random_range(0..k)).collect(),
        })
        .collect()
}

/// Random subclass labels (seeded) followed by one M-step.
pub fn init_params(
    template: &ModelTemplate,
    corpus: &[Example],
    config: &TrainingConfig,
) -> Result<(TflmSpec, Vec<SubclassAssignment>), LearningError> {
    check_config(config)?;
    if corpus.is_empty() {
        return Err(LearningError::EmptyCorpus);
    }
    let classes = random_classes(corpus, config.subclass_count, config.seed);
    let spec = m_step_estimate(
        template,
        corpus,
        &classes,
        config.subclass_count,
        config.smoothing_alpha,
    )?;
    Ok((spec, classes))
}

/// `Σ log P(T, A, C)` over the corpus.
pub fn completed_log_score(
    spec: &TflmSpec,
    corpus: &[Example],
    classes: &[SubclassAssignment],
) -> Result<f64, LearningError> {
    let mut total = 0.0;
    for (ex, c) in corpus.iter().zip(classes) {
        total += joint_log_prob(spec, ex.tree, ex.attrs, c)?;
    }
    Ok(total)
}

/// Alternates MAP subclass assignment and re-estimation until the score
/// stops improving or the iteration cap is reached.
pub fn hard_em_train(
    template: &ModelTemplate,
    corpus: &[Example],
    config: &TrainingConfig,
) -> Result<TrainedModel, LearningError> {
    let (mut spec, mut classes) = init_params(template, corpus, config)?;
    let mut trace = vec![completed_log_score(&spec, corpus, &classes)?];
    for iteration in 1..=config.em_iterations {
        let started = Instant::now();
        let mut score = 0.0;
        let mut next = Vec::with_capacity(corpus.len());
        for ex in corpus {
            let (c, s) = map_subclasses_direct(&spec, ex.tree, ex.attrs)?;
            score += s;
            next.push(c);
        }
        classes = next;
        spec = m_step_estimate(
            template,
            corpus,
            &classes,
            config.subclass_count,
            config.smoothing_alpha,
        )?;
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(score);
        log::info!(
            "em iteration {iteration}: score {score:.6} ({:.3}s)",
            started.elapsed().as_secs_f64()
        );
        if score - previous < config.convergence_epsilon {
            break;
        }
    }
    Ok(TrainedModel {
        spec,
        trace,
        classes,
    })
}

/// Fits a logistic model of `buggy` on `suspiciousness` for every
/// (symbol, subclass) group. Groups with one class keep their Bernoulli.
pub fn fit_subclass_logreg(
    spec: &TflmSpec,
    corpus: &[Example],
    classes: &[SubclassAssignment],
) -> TflmSpec {
    let n_sym = spec.grammar.symbol_count();
    let mut groups: Vec<Vec<Vec<Sample>>> = (0..n_sym)
        .map(|s| vec![Vec::new(); spec.subclass_count[s]])
        .collect();
    for (ex, c) in corpus.iter().zip(classes) {
        for node in ex.tree.nodes() {
            let s = node.symbol;
            if spec.attribute_index(s, BUGGY).is_none()
                || spec.attribute_index(s, SUSPICIOUSNESS).is_none()
            {
                continue;
            }
            if let (Some(Value::Discrete(y)), Some(Value::Real(x))) = (
                ex.attrs.get(node.id, BUGGY),
                ex.attrs.get(node.id, SUSPICIOUSNESS),
            ) {
                groups[s.0][c.get(node.id)].push(Sample { x, y: y == 1 });
            }
        }
    }
    let joint = groups
        .iter()
        .map(|row| row.iter().map(|samples| fit_logistic(samples)).collect())
        .collect();
    TflmSpec {
        attr_joint: Some(joint),
        ..spec.clone()
    }
}

/// Hard EM followed by the logistic refinement.
pub fn train_model(
    template: &ModelTemplate,
    corpus: &[Example],
    config: &TrainingConfig,
) -> Result<TrainedModel, LearningError> {
    let trained = hard_em_train(template, corpus, config)?;
    let spec = fit_subclass_logreg(&trained.spec, corpus, &trained.classes);
    Ok(TrainedModel { spec, ..trained })
}
