//! Shared helpers for unit tests.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::frontend::{load_grammar, Grammar, NodeId, ParseTree, Span, SymbolId, TreeBuilder};
use crate::spn::{LeafDistribution, Value};
use crate::tflm::{validate_spec, AttributeAssignment, AttributeDecl, AttributeKind, TflmSpec};

/// Small branching grammar for randomized trees.
pub const BRANCHING_GRAMMAR: &str = r#"
%start s
%terminals x
s.pair: s -> a s
s.one: s -> a
a.leaf: a -> x
a.nest: a -> "(" s ")"
a.two: a -> "[" b b "]"
b.leaf: b -> x
"#;

pub fn grammar(def: &str) -> Arc<Grammar> {
    Arc::new(load_grammar(def).unwrap())
}

pub fn sym(g: &Grammar, name: &str) -> SymbolId {
    g.symbol(name).unwrap()
}

/// Builds a tree from `(rule id, parent index)` pairs given in pre-order.
pub fn tree_of(g: &Grammar, nodes: &[(&str, Option<usize>)]) -> ParseTree {
    let mut b = TreeBuilder::new();
    for (rule, parent) in nodes {
        b.push(
            g.rule_by_name(rule).unwrap(),
            parent.map(NodeId),
            Span::line(1),
        );
    }
    b.finish(g).unwrap()
}

pub fn bern(p: f64) -> LeafDistribution {
    LeafDistribution::Bernoulli { p }
}

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / t).collect()
}

pub fn random_spec(
    g: Arc<Grammar>,
    k: usize,
    attrs: Vec<AttributeDecl>,
    rng: &mut ChaCha8Rng,
) -> TflmSpec {
    let n = g.symbol_count();
    let mut spec = TflmSpec::uniform(g.clone(), vec![attrs; n], vec![k; n], |_, _| bern(0.5));
    spec.start_dist = random_dist(rng, k);
    for rows in spec.rule_dist.iter_mut() {
        for row in rows.iter_mut() {
            *row = random_dist(rng, row.len());
        }
    }
    for rows in spec.child_dist.iter_mut() {
        for row in rows.iter_mut() {
            for d in row.iter_mut() {
                *d = random_dist(rng, d.len());
            }
        }
    }
    for (s, rows) in spec.attr_dist.iter_mut().enumerate() {
        for row in rows.iter_mut() {
            for (a, leaf) in row.iter_mut().enumerate() {
                *leaf = match spec.attributes[s][a].kind {
                    AttributeKind::Binary => bern(rng.random_range(0.02..0.98)),
                    AttributeKind::Real => LeafDistribution::Gaussian {
                        mean: rng.random_range(0.0..1.0),
                        std_dev: rng.random_range(0.05..0.5),
                    },
                };
            }
        }
    }
    validate_spec(&spec).unwrap();
    spec
}

/// Samples a tree top-down with uniform rule choice, retrying until it has at
/// most `max_nodes` nodes.
pub fn random_tree(g: &Grammar, rng: &mut ChaCha8Rng, max_nodes: usize) -> ParseTree {
    'retry: loop {
        let mut b = TreeBuilder::new();
        let mut stack = vec![(g.start_symbol(), None)];
        let mut count = 0;
        while let Some((s, parent)) = stack.pop() {
            count += 1;
            if count > max_nodes {
                continue 'retry;
            }
            let rules = g.rules_for(s);
            let rule = rules[rng.random_range(0..rules.len())];
            let id = b.push(rule, parent, Span::line(1));
            let kids: Vec<SymbolId> = g.rule(rule).nonterminal_children().collect();
            for c in kids.into_iter().rev() {
                stack.push((c, Some(id)));
            }
        }
        return b.finish(g).unwrap();
    }
}

pub fn random_attrs(
    spec: &TflmSpec,
    tree: &ParseTree,
    rng: &mut ChaCha8Rng,
) -> AttributeAssignment {
    let mut a = AttributeAssignment::new();
    for node in tree.nodes() {
        for decl in &spec.attributes[node.symbol.0] {
            let v = match decl.kind {
                AttributeKind::Binary => Value::Discrete(rng.random_range(0..2)),
                AttributeKind::Real => Value::Real(rng.random_range(0.0..1.0)),
            };
            a.set(node.id, &decl.name, v);
        }
    }
    a
}
