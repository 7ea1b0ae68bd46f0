//! Exact log-space inference: one upward pass per query.

use std::collections::BTreeMap;

use super::graph::{LeafDistribution, SpnGraph, SpnNode, SpnNodeId, Value, VarId};
use super::SpnError;

/// Observed variable values plus optional fixed choices at sum nodes.
///
/// A fixed branch restricts a sum node to one child, which treats the sum's
/// implicit latent selector as observed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    values: BTreeMap<VarId, Value>,
    branches: BTreeMap<SpnNodeId, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: VarId, value: Value) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: VarId, value: Value) {
        self.values.insert(var, value);
    }

    pub fn remove(&mut self, var: VarId) -> Option<Value> {
        self.values.remove(&var)
    }

    pub fn get(&self, var: VarId) -> Option<Value> {
        self.values.get(&var).copied()
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.values.contains_key(&var)
    }

    pub fn fix_branch(&mut self, sum: SpnNodeId, child: usize) {
        self.branches.insert(sum, child);
    }

    pub fn branch(&self, sum: SpnNodeId) -> Option<usize> {
        self.branches.get(&sum).copied()
    }

    pub fn values(&self) -> &BTreeMap<VarId, Value> {
        &self.values
    }
}

/// `log(Σ exp(x))`, returning `-inf` when every term is `-inf`.
pub fn log_sum_exp(terms: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let total: f64 = terms.into_iter().map(|t| (t - max).exp()).sum();
    max + total.ln()
}

/// Evidence laid out by index for the passes over one network.
struct Dense {
    values: Vec<Option<Value>>,
    branches: Vec<Option<usize>>,
}

impl Dense {
    fn new(spn: &SpnGraph, evidence: &Evidence) -> Dense {
        let n_vars = evidence.values.keys().next_back().map_or(0, |v| v.0 + 1);
        let mut values = vec![None; n_vars];
        for (var, value) in &evidence.values {
            values[var.0] = Some(*value);
        }
        let mut branches = vec![None; spn.len()];
        for (node, child) in &evidence.branches {
            if let Some(slot) = branches.get_mut(node.0) {
                *slot = Some(*child);
            }
        }
        Dense { values, branches }
    }

    fn value(&self, var: VarId) -> Option<Value> {
        self.values.get(var.0).copied().flatten()
    }

    fn leaf(&self, dist: &LeafDistribution, var: VarId) -> Result<f64, SpnError> {
        match self.value(var) {
            None => Ok(0.0),
            Some(v) => dist.log_prob(v).ok_or(SpnError::DomainMismatch {
                variable: var.0,
                value: format!("{v:?}"),
            }),
        }
    }

    fn branch(&self, node: SpnNodeId, arity: usize) -> Result<Option<usize>, SpnError> {
        match self.branches[node.0] {
            Some(c) if c >= arity => Err(SpnError::BadBranch {
                node: node.0,
                child: c,
            }),
            b => Ok(b),
        }
    }
}

/// Upward sum-product pass; returns log values indexed by node.
fn upward_sum(spn: &SpnGraph, evidence: &Evidence) -> Result<Vec<f64>, SpnError> {
    let order = spn.post_order()?;
    let dense = Dense::new(spn, evidence);
    let mut val = vec![f64::NEG_INFINITY; spn.len()];
    for &id in order {
        val[id.0] = match spn.node(id) {
            SpnNode::Leaf(leaf) => dense.leaf(&leaf.distribution, leaf.variable)?,
            SpnNode::Product { children } => children.iter().map(|c| val[c.0]).sum(),
            SpnNode::Sum { children, weights } => match dense.branch(id, children.len())? {
                Some(c) => weights[c].ln() + val[children[c].0],
                None => log_sum_exp(children.iter().zip(weights).map(|(c, w)| w.ln() + val[c.0])),
            },
        };
        // -inf + finite stays -inf; guard against -inf + +inf densities.
        if val[id.0].is_nan() {
            val[id.0] = f64::NEG_INFINITY;
        }
    }
    Ok(val)
}

/// `log Z` with every leaf replaced by its univariate partition value.
pub fn log_partition(spn: &SpnGraph) -> Result<f64, SpnError> {
    log_evidence(spn, &Evidence::new())
}

/// Unnormalized log probability of the evidence; unassigned variables are
/// summed out.
pub fn log_evidence(spn: &SpnGraph, evidence: &Evidence) -> Result<f64, SpnError> {
    Ok(upward_sum(spn, evidence)?[spn.root().0])
}

/// Domain size of a discrete variable, read off the leaves mentioning it.
fn discrete_domain(spn: &SpnGraph, var: VarId) -> Result<usize, SpnError> {
    let mut seen = false;
    let mut size: Option<usize> = None;
    for node in spn.nodes() {
        if let SpnNode::Leaf(leaf) = node {
            if leaf.variable == var {
                seen = true;
                size = size.max(leaf.distribution.domain_size());
            }
        }
    }
    if !seen {
        return Err(SpnError::UnknownVariable(var.0));
    }
    size.ok_or(SpnError::NotDiscrete(var.0))
}

/// `P(query = v | evidence)` for each value `v` of a discrete variable.
pub fn marginal_posterior(
    spn: &SpnGraph,
    evidence: &Evidence,
    query: VarId,
) -> Result<Vec<f64>, SpnError> {
    if evidence.contains(query) {
        return Err(SpnError::QueryInEvidence(query.0));
    }
    let size = discrete_domain(spn, query)?;
    let mut ev = evidence.clone();
    let mut logs = Vec::with_capacity(size);
    for v in 0..size {
        ev.set(query, Value::Discrete(v));
        logs.push(log_evidence(spn, &ev)?);
    }
    let total = log_sum_exp(logs.iter().copied());
    if total == f64::NEG_INFINITY {
        return Err(SpnError::ImpossibleEvidence);
    }
    Ok(logs.into_iter().map(|l| (l - total).exp()).collect())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Posteriors of every unobserved discrete variable from one upward pass and
/// one downward pass of log partial derivatives. Each entry equals
/// [`marginal_posterior`] for that variable.
pub fn all_marginals(
    spn: &SpnGraph,
    evidence: &Evidence,
) -> Result<BTreeMap<VarId, Vec<f64>>, SpnError> {
    let order = spn.post_order()?;
    let dense = Dense::new(spn, evidence);
    let val = upward_sum(spn, evidence)?;
    if val[spn.root().0] == f64::NEG_INFINITY {
        return Err(SpnError::ImpossibleEvidence);
    }
    // deriv[n] = log of d(root value) / d(value of n), in linear space.
    let mut deriv = vec![f64::NEG_INFINITY; spn.len()];
    deriv[spn.root().0] = 0.0;
    for &id in order.iter().rev() {
        let d = deriv[id.0];
        if d == f64::NEG_INFINITY {
            continue;
        }
        match spn.node(id) {
            SpnNode::Leaf(_) => {}
            SpnNode::Sum { children, weights } => {
                let fixed = dense.branch(id, children.len())?;
                for (i, (c, w)) in children.iter().zip(weights).enumerate() {
                    if fixed.is_none_or(|f| f == i) {
                        deriv[c.0] = log_add_exp(deriv[c.0], d + w.ln());
                    }
                }
            }
            SpnNode::Product { children } => {
                let mut suffix = vec![0.0; children.len() + 1];
                for i in (0..children.len()).rev() {
                    suffix[i] = suffix[i + 1] + val[children[i].0];
                }
                let mut prefix = 0.0;
                for (i, c) in children.iter().enumerate() {
                    let others = prefix + suffix[i + 1];
                    if !others.is_nan() {
                        deriv[c.0] = log_add_exp(deriv[c.0], d + others);
                    }
                    prefix += val[c.0];
                }
            }
        }
    }
    let mut joint: BTreeMap<VarId, Vec<f64>> = BTreeMap::new();
    for (i, node) in spn.nodes().iter().enumerate() {
        let SpnNode::Leaf(leaf) = node else { continue };
        if dense.value(leaf.variable).is_some() {
            continue;
        }
        let Some(size) = leaf.distribution.domain_size() else {
            continue;
        };
        let entry = joint.entry(leaf.variable).or_default();
        if entry.len() < size {
            entry.resize(size, f64::NEG_INFINITY);
        }
        for (v, slot) in entry.iter_mut().enumerate().take(size) {
            let lp = leaf
                .distribution
                .log_prob(Value::Discrete(v))
                .unwrap_or(f64::NEG_INFINITY);
            *slot = log_add_exp(*slot, deriv[i] + lp);
        }
    }
    Ok(joint
        .into_iter()
        .map(|(var, logs)| {
            let total = log_sum_exp(logs.iter().copied());
            (var, logs.into_iter().map(|l| (l - total).exp()).collect())
        })
        .collect())
}

/// Most probable joint state of the sum selectors and unobserved discrete
/// leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct MapState {
    pub log_score: f64,
    /// Chosen child position for every sum node on the selected subtree.
    pub branches: BTreeMap<SpnNodeId, usize>,
    /// Values for unobserved discrete variables on the selected subtree.
    pub values: BTreeMap<VarId, usize>,
}

/// Max-product upward pass followed by top-down backtracking. Ties between
/// sum children go to the lowest child position.
pub fn map_state(spn: &SpnGraph, evidence: &Evidence) -> Result<MapState, SpnError> {
    let order = spn.post_order()?;
    let dense = Dense::new(spn, evidence);
    let mut val = vec![f64::NEG_INFINITY; spn.len()];
    let mut arg = vec![0usize; spn.len()];
    for &id in order {
        val[id.0] = match spn.node(id) {
            SpnNode::Leaf(leaf) => match dense.value(leaf.variable) {
                Some(_) => dense.leaf(&leaf.distribution, leaf.variable)?,
                None => match leaf.distribution.mode() {
                    Some((v, lp)) => {
                        arg[id.0] = v;
                        lp
                    }
                    None => 0.0,
                },
            },
            SpnNode::Product { children } => children.iter().map(|c| val[c.0]).sum(),
            SpnNode::Sum { children, weights } => {
                let allowed = dense.branch(id, children.len())?;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = allowed.unwrap_or(0);
                for (i, (c, w)) in children.iter().zip(weights).enumerate() {
                    if allowed.is_some_and(|a| a != i) {
                        continue;
                    }
                    let score = w.ln() + val[c.0];
                    if score > best {
                        best = score;
                        best_i = i;
                    }
                }
                arg[id.0] = best_i;
                best
            }
        };
        if val[id.0].is_nan() {
            val[id.0] = f64::NEG_INFINITY;
        }
    }

    let mut state = MapState {
        log_score: val[spn.root().0],
        branches: BTreeMap::new(),
        values: BTreeMap::new(),
    };
    let mut seen = vec![false; spn.len()];
    let mut stack = vec![spn.root()];
    while let Some(id) = stack.pop() {
        if std::mem::replace(&mut seen[id.0], true) {
            continue;
        }
        match spn.node(id) {
            SpnNode::Leaf(leaf) => {
                if dense.value(leaf.variable).is_none() && leaf.distribution.mode().is_some() {
                    state.values.insert(leaf.variable, arg[id.0]);
                }
            }
            SpnNode::Product { children } => stack.extend(children.iter().rev().copied()),
            SpnNode::Sum { children, .. } => {
                state.branches.insert(id, arg[id.0]);
                stack.push(children[arg[id.0]]);
            }
        }
    }
    Ok(state)
}
