//! Synthetic corpora sampled top-down from a model, printed as MiniC with
//! one statement per line, and given coverage whose Tarantula scores
//! reproduce the sampled suspiciousness.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::frontend::{parse_program, Grammar, NodeId, ParseTree, Span, SymbolId, TreeBuilder};
use crate::spectra::{CoverageMatrix, Outcome, TestRecord};
use crate::spn::{LeafDistribution, Value};
use crate::tflm::{
    buggy_posteriors, default_attributes, validate_spec, AttributeAssignment, AttributeKind,
    SubclassAssignment, TflmSpec, BUGGY, SUSPICIOUSNESS,
};

use super::{AnnotatedProgram, Corpus, CorpusError, PosteriorTable};

/// Passing and failing tests in constructed coverage matrices.
pub const COVERAGE_TESTS_PER_OUTCOME: usize = 20;

const TREE_ATTEMPTS: usize = 100;
const BUG_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub count: usize,
    /// Deepest allowed node depth; the root has depth 0.
    pub max_depth: usize,
    pub seed: u64,
    /// Resample programs until at least one line is buggy.
    pub require_bug: bool,
}

/// A tree drawn from the model, with its latent subclasses and raw
/// attribute draws.
#[derive(Debug, Clone)]
pub struct SampledTree {
    pub tree: ParseTree,
    pub classes: SubclassAssignment,
    pub attrs: AttributeAssignment,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Exact `P(buggy = 1 | observed)` under the generating model.
    pub truth: PosteriorTable,
    pub samples: Vec<SampledTree>,
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    WeightedIndex::new(weights)
        .expect("validated distribution")
        .sample(rng)
}

fn sample_leaf(leaf: &LeafDistribution, rng: &mut impl Rng) -> Value {
    match leaf {
        LeafDistribution::Bernoulli { p } => Value::Discrete(usize::from(rng.random::<f64>() < *p)),
        LeafDistribution::Categorical { weights } => Value::Discrete(draw(weights, rng)),
        LeafDistribution::Gaussian { mean, std_dev } => Value::Real(
            Normal::new(*mean, *std_dev)
                .expect("validated leaf")
                .sample(rng),
        ),
    }
}

/// Draws a tree from `π_S`, `ρ` and `π`, then every attribute from `ψ`
/// (or from the joint model for `buggy`, given the drawn suspiciousness).
/// Returns `None` when a node would exceed `max_depth`.
pub fn sample_tree(spec: &TflmSpec, rng: &mut impl Rng, max_depth: usize) -> Option<SampledTree> {
    let g = &spec.grammar;
    let mut builder = TreeBuilder::new();
    let mut classes = Vec::new();
    let root_class = draw(&spec.start_dist, rng);
    let mut stack: Vec<(SymbolId, usize, Option<NodeId>, usize)> =
        vec![(g.start_symbol(), root_class, None, 0)];
    while let Some((sym, class, parent, depth)) = stack.pop() {
        if depth > max_depth {
            return None;
        }
        let local = draw(&spec.rule_dist[sym.0][class], rng);
        let rule = g.rules_for(sym)[local];
        let id = builder.push(rule, parent, Span::line(1));
        classes.push(class);
        let kids: Vec<SymbolId> = g.rule(rule).nonterminal_children().collect();
        let drawn: Vec<usize> = (0..kids.len())
            .map(|pos| draw(&spec.child_dist[rule.0][class][pos], rng))
            .collect();
        for (pos, child) in kids.iter().enumerate().rev() {
            stack.push((*child, drawn[pos], Some(id), depth + 1));
        }
    }
    let tree = builder.finish(g).expect("sampled trees follow the grammar");

    let mut attrs = AttributeAssignment::new();
    for node in tree.nodes() {
        let class = classes[node.id.0];
        let decls = &spec.attributes[node.symbol.0];
        let leaves = &spec.attr_dist[node.symbol.0][class];
        // Real attributes first: the joint model conditions on them.
        for (decl, leaf) in decls.iter().zip(leaves) {
            if decl.kind == AttributeKind::Real {
                attrs.set(node.id, &decl.name, sample_leaf(leaf, rng));
            }
        }
        for (decl, leaf) in decls.iter().zip(leaves) {
            if decl.kind != AttributeKind::Binary {
                continue;
            }
            let joint = spec
                .joint_model(node.symbol, class)
                .filter(|_| decl.name == BUGGY);
            let value = match (joint, attrs.get(node.id, SUSPICIOUSNESS)) {
                (Some(model), Some(Value::Real(s))) => {
                    Value::Discrete(usize::from(rng.random::<f64>() < model.predict(s)))
                }
                _ => sample_leaf(leaf, rng),
            };
            attrs.set(node.id, &decl.name, value);
        }
    }
    Some(SampledTree {
        tree,
        classes: SubclassAssignment { classes },
        attrs,
    })
}

const NAMES: [&str; 8] = ["x", "y", "z", "i", "n", "acc", "tmp", "k"];

fn name(n: usize) -> &'static str {
    NAMES[n % NAMES.len()]
}

struct Printer<'a> {
    grammar: &'a Grammar,
    tree: &'a ParseTree,
    out: String,
}

impl Printer<'_> {
    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn rule_id(&self, node: NodeId) -> &str {
        &self.grammar.rule(self.tree.node(node).rule).id
    }

    fn child(&self, node: NodeId, pos: usize) -> NodeId {
        self.tree.node(node).children[pos]
    }

    fn unprintable(&self, node: NodeId) -> CorpusError {
        CorpusError::Unprintable(format!("rule `{}` at node {}", self.rule_id(node), node.0))
    }

    /// Text of a single-line construct: `condition` or `assign_stmt`.
    fn inline(&self, node: NodeId) -> Result<String, CorpusError> {
        let n = node.0;
        match self.rule_id(node) {
            "condition" => Ok(format!("{} < {}", name(n), name(n / NAMES.len() + 1))),
            "assign_stmt" => Ok(format!(
                "{} = {} + {};",
                name(n),
                name(n / NAMES.len() + 3),
                n % 10
            )),
            _ => Err(self.unprintable(node)),
        }
    }

    /// Body of a block, one level deeper than its header.
    fn block(&mut self, node: NodeId, indent: usize) -> Result<(), CorpusError> {
        match self.rule_id(node) {
            "block.body" => self.node(self.child(node, 0), indent + 1),
            "block.empty" => Ok(()),
            _ => Err(self.unprintable(node)),
        }
    }

    fn node(&mut self, node: NodeId, indent: usize) -> Result<(), CorpusError> {
        let n = node.0;
        let rule = self.rule_id(node).to_string();
        match rule.as_str() {
            "program" | "stmt_list.last" => self.node(self.child(node, 0), indent),
            "stmt_list.cons" => {
                self.node(self.child(node, 0), indent)?;
                self.node(self.child(node, 1), indent)
            }
            r if r.starts_with("stmt.") && r != "stmt.block" => {
                self.node(self.child(node, 0), indent)
            }
            "stmt.block" | "block.body" | "block.empty" => {
                let b = if rule == "stmt.block" {
                    self.child(node, 0)
                } else {
                    node
                };
                self.line(indent, "{");
                self.block(b, indent)?;
                self.line(indent, "}");
                Ok(())
            }
            "if_stmt" | "while_stmt" => {
                let kw = if rule == "if_stmt" { "if" } else { "while" };
                let cond = self.inline(self.child(node, 0))?;
                self.line(indent, &format!("{kw} ({cond}) {{"));
                self.block(self.child(node, 1), indent)?;
                self.line(indent, "}");
                Ok(())
            }
            "if_else_stmt" => {
                let cond = self.inline(self.child(node, 0))?;
                self.line(indent, &format!("if ({cond}) {{"));
                self.block(self.child(node, 1), indent)?;
                self.line(indent, "} else {");
                self.block(self.child(node, 2), indent)?;
                self.line(indent, "}");
                Ok(())
            }
            "for_stmt" => {
                let init = self.inline(self.child(node, 0))?;
                let cond = self.inline(self.child(node, 1))?;
                let v = name(n);
                self.line(indent, &format!("for ({init} {cond}; {v} = {v} + 1) {{"));
                self.block(self.child(node, 2), indent)?;
                self.line(indent, "}");
                Ok(())
            }
            "assign_stmt" => {
                let text = self.inline(node)?;
                self.line(indent, &text);
                Ok(())
            }
            "return_stmt.value" => {
                self.line(indent, &format!("return {};", name(n)));
                Ok(())
            }
            "return_stmt.bare" => {
                self.line(indent, "return;");
                Ok(())
            }
            "break_stmt" => {
                self.line(indent, "break;");
                Ok(())
            }
            "continue_stmt" => {
                self.line(indent, "continue;");
                Ok(())
            }
            "call_stmt" => {
                self.line(indent, &format!("log({}, {});", name(n), n % 7));
                Ok(())
            }
            _ => Err(self.unprintable(node)),
        }
    }
}

/// Renders a MiniC parse tree as source text with one statement per line.
/// Identifier and expression text is derived from node ids.
pub fn pretty_print(grammar: &Grammar, tree: &ParseTree) -> Result<String, CorpusError> {
    let mut p = Printer {
        grammar,
        tree,
        out: String::new(),
    };
    p.node(tree.root().id, 0)?;
    Ok(p.out)
}

/// `(failed, passed)` counts out of 20 each whose Tarantula score is
/// nearest to `target`; the first pair in `(failed, passed)` order wins ties.
fn nearest_counts(target: f64) -> (usize, usize) {
    let n = COVERAGE_TESTS_PER_OUTCOME;
    let mut best = (0, 0);
    let mut best_err = f64::INFINITY;
    for f in 0..=n {
        for p in 0..=n {
            let err = (crate::spectra::tarantula(f, p, n, n) - target).abs();
            if err < best_err {
                best = (f, p);
                best_err = err;
            }
        }
    }
    best
}

/// A 20-fail/20-pass matrix where line `l` is executed by the first
/// `F(l)` failing and first `P(l)` passing tests, with counts chosen so
/// each Tarantula score is as close as possible to `targets[l]` (clamped
/// to `[0, 1]`).
pub fn coverage_for_scores(targets: &BTreeMap<u32, f64>) -> CoverageMatrix {
    let counts: BTreeMap<u32, (usize, usize)> = targets
        .iter()
        .map(|(l, t)| (*l, nearest_counts(t.clamp(0.0, 1.0))))
        .collect();
    let mut tests = Vec::with_capacity(2 * COVERAGE_TESTS_PER_OUTCOME);
    for (outcome, prefix) in [(Outcome::Fail, "f"), (Outcome::Pass, "p")] {
        for j in 1..=COVERAGE_TESTS_PER_OUTCOME {
            let covered_lines: BTreeSet<u32> = counts
                .iter()
                .filter(|(_, (f, p))| {
                    if outcome == Outcome::Fail {
                        *f >= j
                    } else {
                        *p >= j
                    }
                })
                .map(|(l, _)| *l)
                .collect();
            tests.push(TestRecord {
                test_id: format!("{prefix}{j:02}"),
                outcome,
                covered_lines,
            });
        }
    }
    CoverageMatrix::new(tests)
}

fn declared_only(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
) -> AttributeAssignment {
    let mut out = AttributeAssignment::new();
    for (node, attr, value) in attrs.iter() {
        if spec.attribute_index(tree.node(node).symbol, attr).is_some() {
            out.set(node, attr, value);
        }
    }
    out
}

fn synthesize_one(
    spec: &TflmSpec,
    index: usize,
    options: &SynthOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(AnnotatedProgram, BTreeMap<NodeId, f64>, SampledTree), CorpusError> {
    let g = &spec.grammar;
    for _ in 0..BUG_ATTEMPTS {
        let sampled = (0..TREE_ATTEMPTS)
            .find_map(|_| sample_tree(spec, rng, options.max_depth))
            .ok_or(CorpusError::DepthExceeded {
                max_depth: options.max_depth,
                attempts: TREE_ATTEMPTS,
            })?;
        let source = pretty_print(g, &sampled.tree)?;
        let version_id = format!("synth-{index:04}");
        let program = parse_program(&source, g).map_err(|source| CorpusError::Syntax {
            version: version_id.clone(),
            source,
        })?;
        if program.tree.skeleton() != sampled.tree.skeleton() {
            return Err(CorpusError::Unprintable(
                "printed source re-parses to a different tree".into(),
            ));
        }
        let finest = program.finest_enclosing_nodes();
        let mut targets = BTreeMap::new();
        let mut buggy_lines = BTreeSet::new();
        for (line, node) in &finest {
            let s = match sampled.attrs.get(*node, SUSPICIOUSNESS) {
                Some(Value::Real(s)) => s,
                _ => 0.0,
            };
            targets.insert(*line, s);
            if sampled.attrs.get(*node, BUGGY) == Some(Value::Discrete(1)) {
                buggy_lines.insert(*line);
            }
        }
        if options.require_bug && buggy_lines.is_empty() {
            continue;
        }
        let coverage = coverage_for_scores(&targets);
        let annotated = AnnotatedProgram::annotate(&version_id, program, coverage, buggy_lines)?;
        let observed = declared_only(spec, &annotated.program.tree, &annotated.observed());
        let truth = buggy_posteriors(spec, &annotated.program.tree, &observed)?;
        return Ok((annotated, truth, sampled));
    }
    Err(CorpusError::NoBuggyProgram {
        attempts: BUG_ATTEMPTS,
    })
}

/// Samples `options.count` programs. Program `i` draws from its own stream
/// of a generator seeded with `options.seed`, so programs are independent of
/// each other and of `count`.
pub fn generate_synthetic_corpus(
    spec: &TflmSpec,
    options: &SynthOptions,
) -> Result<SyntheticCorpus, CorpusError> {
    validate_spec(spec)?;
    let mut programs = Vec::with_capacity(options.count);
    let mut truth = Vec::with_capacity(options.count);
    let mut samples = Vec::with_capacity(options.count);
    for i in 0..options.count {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(i as u64);
        let (p, t, s) = synthesize_one(spec, i, options, &mut rng)?;
        programs.push(p);
        truth.push(t);
        samples.push(s);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus {
            grammar: Arc::clone(&spec.grammar),
            programs,
        },
        truth,
        samples,
    })
}

/// A two-subclass MiniC model in which bugs live only in loop conditions.
///
/// Subclass 0 marks straight-line context and subclass 1 loop context: loop
/// bodies and loop conditions are forced into subclass 1, `if` conditions
/// into subclass 0. Only subclass-1 conditions can be buggy (p = 0.3), and
/// their suspiciousness is only slightly higher on average than other
/// lines', so coverage alone separates them poorly.
pub fn builtin_generator() -> TflmSpec {
    let grammar = Arc::new(Grammar::minic());
    let n = grammar.symbol_count();
    let sym = |s: &str| grammar.symbol(s).expect("MiniC symbol").0;
    let condition = sym("condition");
    let finest: BTreeSet<usize> = [
        "condition",
        "assign_stmt",
        "return_stmt",
        "break_stmt",
        "continue_stmt",
        "call_stmt",
    ]
    .iter()
    .map(|s| sym(s))
    .collect();
    let mut spec = TflmSpec::uniform(
        Arc::clone(&grammar),
        vec![default_attributes(); n],
        vec![2; n],
        |_, _| LeafDistribution::Bernoulli { p: 0.0 },
    );
    spec.start_dist = vec![0.4, 0.6];
    for s in 0..n {
        for class in 0..2 {
            let mean = if s == condition && class == 1 {
                0.52
            } else if finest.contains(&s) {
                0.45
            } else {
                0.5
            };
            let p = if s == condition && class == 1 {
                0.3
            } else {
                0.0
            };
            spec.attr_dist[s][class] = vec![
                LeafDistribution::Bernoulli { p },
                LeafDistribution::Gaussian { mean, std_dev: 0.2 },
            ];
        }
    }

    let mut set_rules = |symbol: &str, class: usize, probs: &[(&str, f64)]| {
        let s = sym(symbol);
        let mut row = vec![0.0; grammar.rules_for(crate::frontend::SymbolId(s)).len()];
        for (id, p) in probs {
            let r = grammar.rule_by_name(id).expect("MiniC rule");
            row[grammar.local_rule_index(r)] = *p;
        }
        spec.rule_dist[s][class] = row;
    };
    set_rules(
        "stmt_list",
        0,
        &[("stmt_list.cons", 0.8), ("stmt_list.last", 0.2)],
    );
    set_rules(
        "stmt_list",
        1,
        &[("stmt_list.cons", 0.5), ("stmt_list.last", 0.5)],
    );
    set_rules(
        "stmt",
        0,
        &[
            ("stmt.if", 0.10),
            ("stmt.if_else", 0.05),
            ("stmt.while", 0.25),
            ("stmt.assign", 0.40),
            ("stmt.return", 0.05),
            ("stmt.call", 0.15),
        ],
    );
    set_rules(
        "stmt",
        1,
        &[
            ("stmt.if", 0.10),
            ("stmt.if_else", 0.05),
            ("stmt.while", 0.05),
            ("stmt.assign", 0.50),
            ("stmt.return", 0.05),
            ("stmt.break", 0.05),
            ("stmt.continue", 0.05),
            ("stmt.call", 0.15),
        ],
    );
    for class in 0..2 {
        set_rules("block", class, &[("block.body", 1.0)]);
        set_rules(
            "return_stmt",
            class,
            &[("return_stmt.value", 0.7), ("return_stmt.bare", 0.3)],
        );
    }

    // Child subclasses: inherit the parent's unless the rule says otherwise.
    let one_hot = |c: usize| {
        if c == 0 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    };
    for (r, rule) in grammar.rules().iter().enumerate() {
        for class in 0..2 {
            let kids: Vec<usize> = rule.nonterminal_children().map(|c| c.0).collect();
            spec.child_dist[r][class] = kids
                .iter()
                .map(|&child| {
                    let forced = match rule.id.as_str() {
                        "program" => Some(0),
                        "while_stmt" => Some(1),
                        "for_stmt" if child != sym("assign_stmt") => Some(1),
                        "if_stmt" | "if_else_stmt" if child == condition => Some(0),
                        _ => None,
                    };
                    one_hot(forced.unwrap_or(class))
                })
                .collect();
        }
    }
    spec
}
