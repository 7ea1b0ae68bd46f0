use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::frontend::{NodeId, ParseTree};
use crate::spn::{LeafDistribution, Value};
use crate::testutil::*;
use crate::tflm::{
    default_attributes, AttributeAssignment, SubclassAssignment, TflmSpec, BUGGY, SUSPICIOUSNESS,
};

const LONE_GRAMMAR: &str = r#"
%start x
x.only: x -> "x"
"#;

fn lone_corpus(buggy: &[bool], susp: &[f64]) -> (Vec<ParseTree>, Vec<AttributeAssignment>) {
    let g = grammar(LONE_GRAMMAR);
    let trees: Vec<ParseTree> = buggy
        .iter()
        .map(|_| tree_of(&g, &[("x.only", None)]))
        .collect();
    let attrs = buggy
        .iter()
        .zip(susp)
        .map(|(b, s)| {
            let mut a = AttributeAssignment::new();
            a.set(NodeId(0), BUGGY, Value::Discrete(*b as usize));
            a.set(NodeId(0), SUSPICIOUSNESS, Value::Real(*s));
            a
        })
        .collect();
    (trees, attrs)
}

fn examples<'a>(trees: &'a [ParseTree], attrs: &'a [AttributeAssignment]) -> Vec<Example<'a>> {
    trees
        .iter()
        .zip(attrs)
        .map(|(tree, attrs)| Example { tree, attrs })
        .collect()
}

/// Random corpus over the branching grammar with attributes drawn from a
/// random two-subclass model.
fn random_corpus(
    rng: &mut ChaCha8Rng,
    programs: usize,
    max_nodes: usize,
) -> (
    Arc<crate::Grammar>,
    Vec<ParseTree>,
    Vec<AttributeAssignment>,
) {
    let g = grammar(BRANCHING_GRAMMAR);
    let spec = random_spec(g.clone(), 2, default_attributes(), rng);
    let trees: Vec<ParseTree> = (0..programs)
        .map(|_| random_tree(&g, rng, max_nodes))
        .collect();
    let attrs = trees.iter().map(|t| random_attrs(&spec, t, rng)).collect();
    (g, trees, attrs)
}

#[test]
fn laplace_smoothed_bernoulli() {
    let mut buggy = vec![false; 10];
    buggy[3] = true;
    buggy[7] = true;
    let (trees, attrs) = lone_corpus(&buggy, &[0.4; 10]);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(grammar(LONE_GRAMMAR));
    let classes = vec![SubclassAssignment { classes: vec![0] }; 10];
    let spec = m_step_estimate(&template, &corpus, &classes, 2, 1.0).unwrap();
    assert_eq!(
        spec.attr_dist[0][0][0],
        LeafDistribution::Bernoulli { p: 3.0 / 12.0 }
    );
    // Unused subclass: uniform rows and p = 0.5.
    assert_eq!(
        spec.attr_dist[0][1][0],
        LeafDistribution::Bernoulli { p: 0.5 }
    );
    assert_eq!(spec.start_dist, vec![11.0 / 12.0, 1.0 / 12.0]);
    // Constant scores hit the floor.
    let LeafDistribution::Gaussian { mean, std_dev } = spec.attr_dist[0][0][1] else {
        unreachable!()
    };
    assert!((mean - 0.4).abs() < 1e-12);
    assert_eq!(std_dev, STD_DEV_FLOOR);
}

#[test]
fn empty_subclass_rows_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (g, trees, attrs) = random_corpus(&mut rng, 3, 10);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let classes: Vec<_> = trees
        .iter()
        .map(|t| SubclassAssignment {
            classes: vec![0; t.len()],
        })
        .collect();
    let spec = m_step_estimate(&template, &corpus, &classes, 3, 1.0).unwrap();
    for rows in &spec.rule_dist {
        let n = rows[2].len() as f64;
        assert!(rows[2].iter().all(|p| (*p - 1.0 / n).abs() < 1e-15));
    }
}

#[test]
fn missing_labels_and_empty_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (g, trees, attrs) = random_corpus(&mut rng, 2, 10);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let classes = vec![SubclassAssignment { classes: vec![] }; 2];
    assert!(matches!(
        m_step_estimate(&template, &corpus, &classes, 2, 1.0),
        Err(LearningError::MissingSubclassLabel { program: 0, .. })
    ));
    assert_eq!(
        init_params(&template, &[], &TrainingConfig::default()).unwrap_err(),
        LearningError::EmptyCorpus
    );
}

#[test]
fn init_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, trees, attrs) = random_corpus(&mut rng, 6, 20);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let cfg = |k, seed| TrainingConfig {
        subclass_count: k,
        seed,
        ..TrainingConfig::default()
    };
    let (a, _) = init_params(&template, &corpus, &cfg(1, 1)).unwrap();
    let (b, _) = init_params(&template, &corpus, &cfg(1, 2)).unwrap();
    assert_eq!(a, b);
    let (a, _) = init_params(&template, &corpus, &cfg(2, 7)).unwrap();
    let (b, _) = init_params(&template, &corpus, &cfg(2, 7)).unwrap();
    let (c, _) = init_params(&template, &corpus, &cfg(2, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.attr_dist, c.attr_dist);
}

#[test]
fn one_subclass_converges_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (g, trees, attrs) = random_corpus(&mut rng, 4, 20);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let cfg = TrainingConfig {
        subclass_count: 1,
        ..TrainingConfig::default()
    };
    let trained = hard_em_train(&template, &corpus, &cfg).unwrap();
    assert_eq!(trained.trace.len(), 2);
    assert!((trained.trace[0] - trained.trace[1]).abs() < 1e-9);
}

#[test]
fn unsmoothed_trace_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..5 {
        let (g, trees, attrs) = random_corpus(&mut rng, 8, 25);
        let corpus = examples(&trees, &attrs);
        let template = ModelTemplate::with_default_attributes(g);
        let cfg = TrainingConfig {
            subclass_count: 2 + round % 2,
            smoothing_alpha: 0.0,
            seed: round as u64,
            em_iterations: 30,
            ..TrainingConfig::default()
        };
        let trained = hard_em_train(&template, &corpus, &cfg).unwrap();
        for w in trained.trace.windows(2) {
            assert!(
                w[1] - w[0] >= -1e-9 * w[0].abs().max(1.0),
                "trace {:?}",
                trained.trace
            );
        }
        // The last score is the completed-data score of the final labels
        // under the parameters that produced them, so re-scoring with the
        // final parameters can only improve it.
        let rescored = completed_log_score(&trained.spec, &corpus, &trained.classes).unwrap();
        assert!(rescored >= trained.trace.last().unwrap() - 1e-9);
    }
}

#[test]
fn unsmoothed_bernoulli_is_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (g, trees, attrs) = random_corpus(&mut rng, 6, 20);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let classes: Vec<_> = trees
        .iter()
        .map(|t| SubclassAssignment {
            classes: (0..t.len()).map(|_| rng.random_range(0..2)).collect(),
        })
        .collect();
    let spec = m_step_estimate(&template, &corpus, &classes, 2, 0.0).unwrap();
    let base = completed_log_score(&spec, &corpus, &classes).unwrap();
    for s in 0..spec.attr_dist.len() {
        for i in 0..2 {
            let LeafDistribution::Bernoulli { p } = spec.attr_dist[s][i][0] else {
                unreachable!()
            };
            for d in [-0.01, 0.01] {
                let q = p + d;
                if !(0.0..=1.0).contains(&q) {
                    continue;
                }
                let mut moved: TflmSpec = spec.clone();
                moved.attr_dist[s][i][0] = LeafDistribution::Bernoulli { p: q };
                let score = completed_log_score(&moved, &corpus, &classes).unwrap();
                assert!(
                    score <= base + 1e-12,
                    "symbol {s} subclass {i}: {score} > {base}"
                );
            }
        }
    }
}

#[test]
fn logistic_refinement_falls_back_for_single_class_groups() {
    let (trees, attrs) = lone_corpus(&[false; 6], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(grammar(LONE_GRAMMAR));
    let cfg = TrainingConfig {
        subclass_count: 1,
        ..TrainingConfig::default()
    };
    let trained = train_model(&template, &corpus, &cfg).unwrap();
    assert_eq!(trained.spec.attr_joint, Some(vec![vec![None]]));

    let susp: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let buggy: Vec<bool> = susp.iter().map(|s| *s > 0.5).collect();
    let (trees, attrs) = lone_corpus(&buggy, &susp);
    let corpus = examples(&trees, &attrs);
    let trained = train_model(&template, &corpus, &cfg).unwrap();
    let m = trained
        .spec
        .joint_model(crate::frontend::SymbolId(0), 0)
        .unwrap();
    assert!(m.weight > 0.0);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (g, trees, attrs) = random_corpus(&mut rng, 5, 20);
    let corpus = examples(&trees, &attrs);
    let template = ModelTemplate::with_default_attributes(g);
    let cfg = TrainingConfig {
        subclass_count: 2,
        seed: 3,
        ..TrainingConfig::default()
    };
    let a = train_model(&template, &corpus, &cfg).unwrap();
    let b = train_model(&template, &corpus, &cfg).unwrap();
    assert_eq!(a.spec.to_json(), b.spec.to_json());
    assert_eq!(a.trace, b.trace);
}
