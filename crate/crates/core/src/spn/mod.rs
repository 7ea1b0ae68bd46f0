//! Sum-product networks over discrete and Gaussian leaves.
//!
//! Nodes live in an arena ([`SpnGraph`]) and may be shared, so the network is
//! a DAG rather than a tree. All inference is done in log space.

mod graph;
mod inference;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use graph::{
    gaussian_log_density, Leaf, LeafDistribution, SpnBuilder, SpnGraph, SpnNode, SpnNodeId, Value,
    VarId,
};
pub use inference::{
    all_marginals, log_evidence, log_partition, log_sum_exp, map_state, marginal_posterior,
    Evidence, MapState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpnError {
    #[error("node {0} references a child outside the graph")]
    DanglingChild(usize),
    #[error("cycle through node {0}")]
    CycleDetected(usize),
    #[error("node {0} has no children")]
    EmptyNode(usize),
    #[error("sum node {node} has {children} children but {weights} weights")]
    WeightCount {
        node: usize,
        children: usize,
        weights: usize,
    },
    #[error("sum node {node} has invalid weight {weight}")]
    InvalidWeight { node: usize, weight: f64 },
    #[error("sum node {node} weights sum to {total}")]
    UnnormalizedWeights { node: usize, total: f64 },
    #[error("sum node {0} is not complete: children have different scopes")]
    IncompleteSum(usize),
    #[error("product node {0} is not decomposable: children share variables")]
    NonDecomposableProduct(usize),
    #[error("leaf {node}: {reason}")]
    InvalidLeaf { node: usize, reason: String },
    #[error("variable {0} is used by leaves of different kinds")]
    InconsistentVariable(usize),
    #[error("value {value} is outside the domain of variable {variable}")]
    DomainMismatch { variable: usize, value: String },
    #[error("branch {child} does not exist at sum node {node}")]
    BadBranch { node: usize, child: usize },
    #[error("variable {0} does not occur in the network")]
    UnknownVariable(usize),
    #[error("variable {0} is not discrete")]
    NotDiscrete(usize),
    #[error("query variable {0} is already observed")]
    QueryInEvidence(usize),
    #[error("evidence has zero probability")]
    ImpossibleEvidence,
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Scope of every node reachable from the root.
pub type Scopes = BTreeMap<SpnNodeId, BTreeSet<VarId>>;

/// Checks structure and parameters, returning the scope of each reachable
/// node.
pub fn validate_spn(spn: &SpnGraph) -> Result<Scopes, SpnError> {
    let order = spn.post_order()?;
    let mut kinds: BTreeMap<VarId, Option<usize>> = BTreeMap::new();
    let mut scopes: Scopes = BTreeMap::new();
    for &id in order {
        let scope = match spn.node(id) {
            SpnNode::Leaf(leaf) => {
                leaf.distribution
                    .check()
                    .map_err(|reason| SpnError::InvalidLeaf { node: id.0, reason })?;
                let kind = leaf.distribution.domain_size();
                if *kinds.entry(leaf.variable).or_insert(kind) != kind {
                    return Err(SpnError::InconsistentVariable(leaf.variable.0));
                }
                BTreeSet::from([leaf.variable])
            }
            SpnNode::Product { children } => {
                if children.is_empty() {
                    return Err(SpnError::EmptyNode(id.0));
                }
                let mut scope = BTreeSet::new();
                let mut total = 0;
                for c in children {
                    total += scopes[c].len();
                    scope.extend(scopes[c].iter().copied());
                }
                if scope.len() != total {
                    return Err(SpnError::NonDecomposableProduct(id.0));
                }
                scope
            }
            SpnNode::Sum { children, weights } => {
                if children.is_empty() {
                    return Err(SpnError::EmptyNode(id.0));
                }
                if children.len() != weights.len() {
                    return Err(SpnError::WeightCount {
                        node: id.0,
                        children: children.len(),
                        weights: weights.len(),
                    });
                }
                if let Some(&w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
                    return Err(SpnError::InvalidWeight {
                        node: id.0,
                        weight: w,
                    });
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(SpnError::UnnormalizedWeights { node: id.0, total });
                }
                let first = &scopes[&children[0]];
                if children.iter().any(|c| &scopes[c] != first) {
                    return Err(SpnError::IncompleteSum(id.0));
                }
                first.clone()
            }
        };
        scopes.insert(id, scope);
    }
    Ok(scopes)
}
