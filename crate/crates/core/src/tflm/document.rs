//! JSON form of a [`TflmSpec`]: tables keyed by symbol, rule and attribute
//! names, plus the grammar definition and its fingerprint.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{load_grammar, GrammarError, SymbolId};
use crate::learning::LogRegModel;
use crate::spn::LeafDistribution;

use super::{validate_spec, AttributeDecl, TflmError, TflmSpec};

const FORMAT: &str = "tflm-spec/1";

#[derive(Debug, Error)]
pub enum SpecDocumentError {
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error("embedded grammar is invalid: {0}")]
    Grammar(#[from] GrammarError),
    #[error("grammar fingerprint mismatch: file says {stored}, grammar hashes to {actual}")]
    FingerprintMismatch { stored: String, actual: String },
    #[error("model refers to unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("model has no entry for {0}")]
    Missing(String),
    #[error(transparent)]
    Invalid(#[from] TflmError),
}

#[derive(Debug, Serialize, Deserialize)]
struct SymbolTables {
    subclasses: usize,
    attributes: Vec<AttributeDecl>,
    /// Per subclass: rule id to probability.
    rule_dist: Vec<BTreeMap<String, f64>>,
    /// Per subclass: attribute name to leaf.
    attr_dist: Vec<BTreeMap<String, LeafDistribution>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attr_joint: Option<Vec<Option<LogRegModel>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecDocument {
    format: String,
    grammar_fingerprint: String,
    grammar: String,
    start_dist: Vec<f64>,
    symbols: BTreeMap<String, SymbolTables>,
    /// Rule id to `[parent subclass][child position][child subclass]`.
    child_dist: BTreeMap<String, Vec<Vec<Vec<f64>>>>,
}

pub(super) fn to_json(spec: &TflmSpec) -> String {
    let g = &spec.grammar;
    let mut symbols = BTreeMap::new();
    for s in 0..g.symbol_count() {
        let sym = SymbolId(s);
        let decls = &spec.attributes[s];
        let rule_dist = spec.rule_dist[s]
            .iter()
            .map(|row| {
                g.rules_for(sym)
                    .iter()
                    .zip(row)
                    .map(|(r, p)| (g.rule(*r).id.clone(), *p))
                    .collect()
            })
            .collect();
        let attr_dist = spec.attr_dist[s]
            .iter()
            .map(|row| {
                decls
                    .iter()
                    .zip(row)
                    .map(|(d, l)| (d.name.clone(), l.clone()))
                    .collect()
            })
            .collect();
        symbols.insert(
            g.symbol_name(sym).to_string(),
            SymbolTables {
                subclasses: spec.subclass_count[s],
                attributes: decls.clone(),
                rule_dist,
                attr_dist,
                attr_joint: spec.attr_joint.as_ref().map(|j| j[s].clone()),
            },
        );
    }
    let child_dist = g
        .rules()
        .iter()
        .zip(&spec.child_dist)
        .map(|(r, d)| (r.id.clone(), d.clone()))
        .collect();
    let definition = g.to_definition();
    let doc = SpecDocument {
        format: FORMAT.to_string(),
        grammar_fingerprint: g.fingerprint(),
        grammar: definition,
        start_dist: spec.start_dist.clone(),
        symbols,
        child_dist,
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub(super) fn from_json(text: &str) -> Result<TflmSpec, SpecDocumentError> {
    let mut doc: SpecDocument = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(SpecDocumentError::Format(doc.format));
    }
    let grammar = load_grammar(&doc.grammar)?;
    let actual = grammar.fingerprint();
    if actual != doc.grammar_fingerprint {
        return Err(SpecDocumentError::FingerprintMismatch {
            stored: doc.grammar_fingerprint,
            actual,
        });
    }
    for name in doc.symbols.keys() {
        if grammar.symbol(name).is_none() {
            return Err(SpecDocumentError::Unknown {
                kind: "symbol",
                name: name.clone(),
            });
        }
    }
    for name in doc.child_dist.keys() {
        if grammar.rule_by_name(name).is_none() {
            return Err(SpecDocumentError::Unknown {
                kind: "rule",
                name: name.clone(),
            });
        }
    }

    let n = grammar.symbol_count();
    let mut attributes = Vec::with_capacity(n);
    let mut subclass_count = Vec::with_capacity(n);
    let mut rule_dist = Vec::with_capacity(n);
    let mut attr_dist = Vec::with_capacity(n);
    let mut joint = Vec::with_capacity(n);
    let mut any_joint = false;
    for s in 0..n {
        let sym = SymbolId(s);
        let name = grammar.symbol_name(sym);
        let t = doc
            .symbols
            .remove(name)
            .ok_or_else(|| SpecDocumentError::Missing(format!("symbol `{name}`")))?;
        let mut rows = Vec::with_capacity(t.rule_dist.len());
        for (i, mut row) in t.rule_dist.into_iter().enumerate() {
            let mut dist = Vec::new();
            for r in grammar.rules_for(sym) {
                let id = &grammar.rule(*r).id;
                dist.push(row.remove(id).ok_or_else(|| {
                    SpecDocumentError::Missing(format!("rule `{id}` in subclass {i} of `{name}`"))
                })?);
            }
            if let Some(extra) = row.into_keys().next() {
                return Err(SpecDocumentError::Unknown {
                    kind: "rule",
                    name: extra,
                });
            }
            rows.push(dist);
        }
        rule_dist.push(rows);
        let mut rows = Vec::with_capacity(t.attr_dist.len());
        for (i, mut row) in t.attr_dist.into_iter().enumerate() {
            let mut leaves = Vec::new();
            for d in &t.attributes {
                leaves.push(row.remove(&d.name).ok_or_else(|| {
                    SpecDocumentError::Missing(format!(
                        "attribute `{}` in subclass {i} of `{name}`",
                        d.name
                    ))
                })?);
            }
            if let Some(extra) = row.into_keys().next() {
                return Err(SpecDocumentError::Unknown {
                    kind: "attribute",
                    name: extra,
                });
            }
            rows.push(leaves);
        }
        attr_dist.push(rows);
        any_joint |= t.attr_joint.is_some();
        joint.push(t.attr_joint.unwrap_or_else(|| vec![None; t.subclasses]));
        attributes.push(t.attributes);
        subclass_count.push(t.subclasses);
    }
    let mut child_dist = Vec::with_capacity(grammar.rules().len());
    for r in grammar.rules() {
        child_dist.push(doc.child_dist.remove(&r.id).ok_or_else(|| {
            SpecDocumentError::Missing(format!("child distributions of rule `{}`", r.id))
        })?);
    }
    let spec = TflmSpec {
        grammar: Arc::new(grammar),
        attributes,
        subclass_count,
        start_dist: doc.start_dist,
        rule_dist,
        child_dist,
        attr_dist,
        attr_joint: any_joint.then_some(joint),
    };
    validate_spec(&spec)?;
    Ok(spec)
}
