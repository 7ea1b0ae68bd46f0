//! Grammar-indexed latent-subclass models.
//!
//! Every nonterminal `α` has `k(α)` latent subclasses. For each subclass the
//! model holds a distribution over `α`'s rules, one distribution per
//! nonterminal child position over the child's subclasses, and one
//! univariate distribution per attribute. Subclass indices are 0-based.

mod document;
mod ground;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Grammar, NodeId, ParseTree, RuleId, SymbolId};
use crate::learning::LogRegModel;
use crate::spn::{LeafDistribution, SpnError, Value};

pub use document::SpecDocumentError;
pub use ground::{
    buggy_posteriors, ground_spn, joint_log_prob, log_likelihood, map_subclasses,
    map_subclasses_direct, GroundedSpn, SubclassSum,
};

/// Name of the binary fault indicator attribute.
pub const BUGGY: &str = "buggy";
/// Name of the real-valued coverage score attribute.
pub const SUSPICIOUSNESS: &str = "suspiciousness";

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Binary,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    pub kind: AttributeKind,
}

impl AttributeDecl {
    pub fn binary(name: &str) -> Self {
        AttributeDecl {
            name: name.to_string(),
            kind: AttributeKind::Binary,
        }
    }

    pub fn real(name: &str) -> Self {
        AttributeDecl {
            name: name.to_string(),
            kind: AttributeKind::Real,
        }
    }
}

/// The `buggy` and `suspiciousness` pair used by the localization pipeline.
pub fn default_attributes() -> Vec<AttributeDecl> {
    vec![
        AttributeDecl::binary(BUGGY),
        AttributeDecl::real(SUSPICIOUSNESS),
    ]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TflmError {
    #[error("missing distribution: {0}")]
    MissingDistribution(String),
    #[error("unnormalized distribution: {what} sums to {total}")]
    UnnormalizedDistribution { what: String, total: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("symbol `{0}` has zero subclasses")]
    SubclassCountZero(String),
    #[error("unknown attribute `{attribute}` on node {node}")]
    UnknownAttribute { node: usize, attribute: String },
    #[error("tree does not match the model grammar: {0}")]
    GrammarMismatch(String),
    #[error("assignment is incomplete: {0}")]
    IncompleteAssignment(String),
    #[error("attribute `{attribute}` on node {node} has a value outside its domain")]
    AttributeDomain { node: usize, attribute: String },
    #[error("the buggy attribute of node {0} is given as evidence")]
    BuggyObserved(usize),
    #[error("real attribute `{attribute}` on node {node} is unobserved")]
    UnobservedRealAttribute { node: usize, attribute: String },
    #[error(transparent)]
    Spn(#[from] SpnError),
}

/// Model parameters. Tables are indexed by grammar symbol or rule id, then by
/// subclass.
#[derive(Debug, Clone, PartialEq)]
pub struct TflmSpec {
    pub grammar: Arc<Grammar>,
    /// Attribute declarations per nonterminal.
    pub attributes: Vec<Vec<AttributeDecl>>,
    pub subclass_count: Vec<usize>,
    /// `π_S` over subclasses of the start symbol.
    pub start_dist: Vec<f64>,
    /// `ρ[symbol][subclass][local rule index]`.
    pub rule_dist: Vec<Vec<Vec<f64>>>,
    /// `π[rule][parent subclass][child position][child subclass]`.
    pub child_dist: Vec<Vec<Vec<Vec<f64>>>>,
    /// `ψ[symbol][subclass][attribute]`.
    pub attr_dist: Vec<Vec<Vec<LeafDistribution>>>,
    /// Optional per-(symbol, subclass) model of `buggy` given `suspiciousness`.
    pub attr_joint: Option<Vec<Vec<Option<LogRegModel>>>>,
}

impl TflmSpec {
    /// A spec with uniform rule and child distributions, uniform `π_S` and
    /// the given attribute leaves for every subclass. Useful as a starting
    /// point for hand-written models.
    pub fn uniform(
        grammar: Arc<Grammar>,
        attributes: Vec<Vec<AttributeDecl>>,
        subclass_count: Vec<usize>,
        leaf: impl Fn(SymbolId, &AttributeDecl) -> LeafDistribution,
    ) -> TflmSpec {
        let uniform = |n: usize| vec![1.0 / n as f64; n];
        let n_sym = grammar.symbol_count();
        let rule_dist = (0..n_sym)
            .map(|s| {
                let rules = grammar.rules_for(SymbolId(s)).len();
                vec![uniform(rules); subclass_count[s]]
            })
            .collect();
        let child_dist = grammar
            .rules()
            .iter()
            .map(|r| {
                let per_pos: Vec<Vec<f64>> = r
                    .nonterminal_children()
                    .map(|c| uniform(subclass_count[c.0]))
                    .collect();
                vec![per_pos; subclass_count[r.lhs.0]]
            })
            .collect();
        let attr_dist = (0..n_sym)
            .map(|s| {
                let row: Vec<LeafDistribution> =
                    attributes[s].iter().map(|a| leaf(SymbolId(s), a)).collect();
                vec![row; subclass_count[s]]
            })
            .collect();
        let start = grammar.start_symbol();
        TflmSpec {
            start_dist: uniform(subclass_count[start.0]),
            grammar,
            attributes,
            subclass_count,
            rule_dist,
            child_dist,
            attr_dist,
            attr_joint: None,
        }
    }

    pub fn symbol_name(&self, s: SymbolId) -> &str {
        self.grammar.symbol_name(s)
    }

    pub fn attribute_index(&self, symbol: SymbolId, name: &str) -> Option<usize> {
        self.attributes[symbol.0]
            .iter()
            .position(|a| a.name == name)
    }

    /// `log ρ_{α_i}(rule)`.
    pub fn log_rule(&self, rule: RuleId, subclass: usize) -> f64 {
        let lhs = self.grammar.rule(rule).lhs;
        self.rule_dist[lhs.0][subclass][self.grammar.local_rule_index(rule)].ln()
    }

    /// Logistic model for (symbol, subclass), if one was fitted.
    pub fn joint_model(&self, symbol: SymbolId, subclass: usize) -> Option<&LogRegModel> {
        self.attr_joint.as_ref()?[symbol.0][subclass].as_ref()
    }

    /// Debug-friendly JSON with tables keyed by symbol and rule names.
    pub fn to_json(&self) -> String {
        document::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<TflmSpec, SpecDocumentError> {
        document::from_json(text)
    }
}

fn check_dist(
    what: impl Fn() -> String,
    dist: &[f64],
    expected_len: usize,
) -> Result<(), TflmError> {
    if dist.len() != expected_len {
        return Err(TflmError::MissingDistribution(format!(
            "{} has {} entries, expected {expected_len}",
            what(),
            dist.len()
        )));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(TflmError::InvalidDistribution(format!(
            "{} has a negative or non-finite entry",
            what()
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(TflmError::UnnormalizedDistribution {
            what: what(),
            total,
        });
    }
    Ok(())
}

fn missing(what: String) -> TflmError {
    TflmError::MissingDistribution(what)
}

/// Checks table shapes against the grammar and every distribution's
/// normalization.
pub fn validate_spec(spec: &TflmSpec) -> Result<(), TflmError> {
    let g = &spec.grammar;
    let n_sym = g.symbol_count();
    if spec.subclass_count.len() != n_sym || spec.attributes.len() != n_sym {
        return Err(missing("subclass counts or attributes per symbol".into()));
    }
    for s in 0..n_sym {
        if spec.subclass_count[s] == 0 {
            return Err(TflmError::SubclassCountZero(
                g.symbol_name(SymbolId(s)).into(),
            ));
        }
    }
    let k = |s: SymbolId| spec.subclass_count[s.0];
    let name = |s: SymbolId| g.symbol_name(s).to_string();

    check_dist(
        || "start distribution".into(),
        &spec.start_dist,
        k(g.start_symbol()),
    )?;

    if spec.rule_dist.len() != n_sym {
        return Err(missing("rule distributions".into()));
    }
    for s in (0..n_sym).map(SymbolId) {
        let rows = &spec.rule_dist[s.0];
        if rows.len() != k(s) {
            return Err(missing(format!("rule distributions for `{}`", name(s))));
        }
        for (i, row) in rows.iter().enumerate() {
            check_dist(
                || format!("rule distribution of `{}` subclass {i}", name(s)),
                row,
                g.rules_for(s).len(),
            )?;
        }
    }

    if spec.child_dist.len() != g.rules().len() {
        return Err(missing("child distributions".into()));
    }
    for (r, rule) in g.rules().iter().enumerate() {
        let rows = &spec.child_dist[r];
        if rows.len() != k(rule.lhs) {
            return Err(missing(format!(
                "child distributions for rule `{}`",
                rule.id
            )));
        }
        let children: Vec<SymbolId> = rule.nonterminal_children().collect();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != children.len() {
                return Err(missing(format!(
                    "child distributions for rule `{}` subclass {i}",
                    rule.id
                )));
            }
            for (pos, (dist, child)) in row.iter().zip(&children).enumerate() {
                check_dist(
                    || {
                        format!(
                            "child distribution of rule `{}` subclass {i} position {pos}",
                            rule.id
                        )
                    },
                    dist,
                    k(*child),
                )?;
            }
        }
    }

    if spec.attr_dist.len() != n_sym {
        return Err(missing("attribute distributions".into()));
    }
    for s in (0..n_sym).map(SymbolId) {
        let decls = &spec.attributes[s.0];
        let rows = &spec.attr_dist[s.0];
        if rows.len() != k(s) {
            return Err(missing(format!(
                "attribute distributions for `{}`",
                name(s)
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != decls.len() {
                let attr = decls.get(row.len()).map_or("?", |d| d.name.as_str());
                return Err(missing(format!("ψ for (`{}`, {i}, {attr})", name(s))));
            }
            for (decl, leaf) in decls.iter().zip(row) {
                let ok = matches!(
                    (decl.kind, leaf),
                    (AttributeKind::Binary, LeafDistribution::Bernoulli { .. })
                        | (AttributeKind::Real, LeafDistribution::Gaussian { .. })
                );
                if !ok {
                    return Err(TflmError::InvalidDistribution(format!(
                        "attribute `{}` of `{}` has a leaf of the wrong kind",
                        decl.name,
                        name(s)
                    )));
                }
                leaf.check().map_err(TflmError::InvalidDistribution)?;
            }
        }
    }

    if let Some(joint) = &spec.attr_joint {
        if joint.len() != n_sym || (0..n_sym).any(|s| joint[s].len() != k(SymbolId(s))) {
            return Err(missing("joint attribute model table".into()));
        }
        for (s, row) in joint.iter().enumerate() {
            if row.iter().any(Option::is_some)
                && (spec.attribute_index(SymbolId(s), BUGGY).is_none()
                    || spec.attribute_index(SymbolId(s), SUSPICIOUSNESS).is_none())
            {
                return Err(TflmError::InvalidDistribution(format!(
                    "joint model on `{}` needs both `{BUGGY}` and `{SUSPICIOUSNESS}`",
                    name(SymbolId(s))
                )));
            }
            for m in row.iter().flatten() {
                if !(m.weight.is_finite() && m.bias.is_finite()) {
                    return Err(TflmError::InvalidDistribution(
                        "non-finite logistic weights".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Attribute values per node; a missing entry is unobserved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeAssignment {
    values: BTreeMap<NodeId, BTreeMap<String, Value>>,
}

impl AttributeAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, node: NodeId, attribute: &str, value: Value) {
        self.values
            .entry(node)
            .or_default()
            .insert(attribute.to_string(), value);
    }

    pub fn get(&self, node: NodeId, attribute: &str) -> Option<Value> {
        self.values.get(&node)?.get(attribute).copied()
    }

    pub fn remove(&mut self, node: NodeId, attribute: &str) -> Option<Value> {
        self.values.get_mut(&node)?.remove(attribute)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &str, Value)> {
        self.values
            .iter()
            .flat_map(|(n, m)| m.iter().map(move |(a, v)| (*n, a.as_str(), *v)))
    }

    /// Copy with every value of `attribute` dropped.
    pub fn without(&self, attribute: &str) -> AttributeAssignment {
        let mut out = self.clone();
        for m in out.values.values_mut() {
            m.remove(attribute);
        }
        out
    }

    /// Checks that every entry names an existing node and a declared
    /// attribute with a value in its domain.
    pub fn check(&self, spec: &TflmSpec, tree: &ParseTree) -> Result<(), TflmError> {
        for (node, attr, value) in self.iter() {
            if node.0 >= tree.len() {
                return Err(TflmError::UnknownAttribute {
                    node: node.0,
                    attribute: attr.to_string(),
                });
            }
            let symbol = tree.node(node).symbol;
            let idx =
                spec.attribute_index(symbol, attr)
                    .ok_or_else(|| TflmError::UnknownAttribute {
                        node: node.0,
                        attribute: attr.to_string(),
                    })?;
            let ok = match (spec.attributes[symbol.0][idx].kind, value) {
                (AttributeKind::Binary, Value::Discrete(v)) => v <= 1,
                (AttributeKind::Real, Value::Real(x)) => x.is_finite(),
                _ => false,
            };
            if !ok {
                return Err(TflmError::AttributeDomain {
                    node: node.0,
                    attribute: attr.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Subclass index per tree node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubclassAssignment {
    pub classes: Vec<usize>,
}

impl SubclassAssignment {
    pub fn get(&self, node: NodeId) -> usize {
        self.classes[node.0]
    }
}
