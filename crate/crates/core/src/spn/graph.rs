use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::SpnError;

/// Random variable index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

/// Node index within an [`SpnGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpnNodeId(pub usize);

/// Univariate distribution at a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafDistribution {
    Bernoulli { p: f64 },
    Categorical { weights: Vec<f64> },
    Gaussian { mean: f64, std_dev: f64 },
}

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

impl LeafDistribution {
    pub fn check(&self) -> Result<(), String> {
        match self {
            LeafDistribution::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(format!("bernoulli p={p} outside [0,1]"));
                }
            }
            LeafDistribution::Categorical { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err("categorical weights must be finite and non-negative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(format!("categorical weights sum to {total}"));
                }
            }
            LeafDistribution::Gaussian { mean, std_dev } => {
                if !mean.is_finite() || !(*std_dev > 0.0 && std_dev.is_finite()) {
                    return Err(format!("gaussian N({mean}, {std_dev}) is invalid"));
                }
            }
        }
        Ok(())
    }

    /// Number of values for discrete distributions; `None` for real-valued.
    pub fn domain_size(&self) -> Option<usize> {
        match self {
            LeafDistribution::Bernoulli { .. } => Some(2),
            LeafDistribution::Categorical { weights } => Some(weights.len()),
            LeafDistribution::Gaussian { .. } => None,
        }
    }

    /// Log probability (or log density) of `value`.
    pub fn log_prob(&self, value: Value) -> Option<f64> {
        match (self, value) {
            (LeafDistribution::Bernoulli { p }, Value::Discrete(1)) => Some(p.ln()),
            (LeafDistribution::Bernoulli { p }, Value::Discrete(0)) => Some((1.0 - p).ln()),
            (LeafDistribution::Categorical { weights }, Value::Discrete(v)) => {
                weights.get(v).map(|w| w.ln())
            }
            (LeafDistribution::Gaussian { mean, std_dev }, Value::Real(x)) if x.is_finite() => {
                Some(gaussian_log_density(x, *mean, *std_dev))
            }
            _ => None,
        }
    }

    /// Most probable value and its log probability; ties go to the lower value.
    /// Real-valued leaves have no discrete mode.
    pub fn mode(&self) -> Option<(usize, f64)> {
        match self {
            LeafDistribution::Bernoulli { p } => {
                if *p > 0.5 {
                    Some((1, p.ln()))
                } else {
                    Some((0, (1.0 - p).ln()))
                }
            }
            LeafDistribution::Categorical { weights } => {
                let mut best = 0;
                for (i, w) in weights.iter().enumerate() {
                    if *w > weights[best] {
                        best = i;
                    }
                }
                Some((best, weights[best].ln()))
            }
            LeafDistribution::Gaussian { .. } => None,
        }
    }
}

pub fn gaussian_log_density(x: f64, mean: f64, std_dev: f64) -> f64 {
    let z = (x - mean) / std_dev;
    -0.5 * z * z - std_dev.ln() - 0.5 * (2.0 * PI).ln()
}

/// An observed value for a variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Discrete(usize),
    Real(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub variable: VarId,
    pub distribution: LeafDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpnNode {
    Sum {
        children: Vec<SpnNodeId>,
        weights: Vec<f64>,
    },
    Product {
        children: Vec<SpnNodeId>,
    },
    Leaf(Leaf),
}

impl SpnNode {
    pub fn children(&self) -> &[SpnNodeId] {
        match self {
            SpnNode::Sum { children, .. } | SpnNode::Product { children } => children,
            SpnNode::Leaf(_) => &[],
        }
    }
}

/// A rooted DAG of sums, products and univariate leaves.
///
/// The graph is immutable once built. A post-order of the nodes reachable
/// from the root is computed on first use and cached.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpnGraph {
    nodes: Vec<SpnNode>,
    root: SpnNodeId,
    #[serde(skip)]
    order: OnceLock<Result<Vec<SpnNodeId>, SpnError>>,
}

impl Clone for SpnGraph {
    fn clone(&self) -> Self {
        SpnGraph::from_nodes(self.nodes.clone(), self.root)
    }
}

impl SpnGraph {
    /// Wraps a node list without checking it; see [`super::validate_spn`].
    pub fn from_nodes(nodes: Vec<SpnNode>, root: SpnNodeId) -> SpnGraph {
        SpnGraph {
            nodes,
            root,
            order: OnceLock::new(),
        }
    }

    pub fn nodes(&self) -> &[SpnNode] {
        &self.nodes
    }

    pub fn node(&self, id: SpnNodeId) -> &SpnNode {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> SpnNodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reachable nodes, children before parents.
    pub fn post_order(&self) -> Result<&[SpnNodeId], SpnError> {
        self.order
            .get_or_init(|| compute_post_order(&self.nodes, self.root))
            .as_ref()
            .map(Vec::as_slice)
            .map_err(Clone::clone)
    }

    /// Variables and the leaf distributions that mention them.
    pub fn variables(&self) -> BTreeMap<VarId, Vec<&LeafDistribution>> {
        let mut vars: BTreeMap<VarId, Vec<&LeafDistribution>> = BTreeMap::new();
        for node in &self.nodes {
            if let SpnNode::Leaf(leaf) = node {
                vars.entry(leaf.variable)
                    .or_default()
                    .push(&leaf.distribution);
            }
        }
        vars
    }

    /// Debug dump; the layout is not a stable format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spn serializes")
    }
}

fn compute_post_order(nodes: &[SpnNode], root: SpnNodeId) -> Result<Vec<SpnNodeId>, SpnError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let check = |id: SpnNodeId| {
        if id.0 < nodes.len() {
            Ok(id)
        } else {
            Err(SpnError::DanglingChild(id.0))
        }
    };
    let root = check(root)?;
    let mut mark = vec![Mark::New; nodes.len()];
    let mut order = Vec::new();
    let mut stack = vec![(root, 0usize)];
    mark[root.0] = Mark::Open;
    while let Some((id, next)) = stack.last_mut() {
        let children = nodes[id.0].children();
        if *next < children.len() {
            let child = check(children[*next])?;
            *next += 1;
            match mark[child.0] {
                Mark::New => {
                    mark[child.0] = Mark::Open;
                    stack.push((child, 0));
                }
                Mark::Open => return Err(SpnError::CycleDetected(child.0)),
                Mark::Done => {}
            }
        } else {
            mark[id.0] = Mark::Done;
            order.push(*id);
            stack.pop();
        }
    }
    Ok(order)
}

/// Appends nodes children-first and hands out their ids.
#[derive(Debug, Default)]
pub struct SpnBuilder {
    nodes: Vec<SpnNode>,
}

impl SpnBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, variable: VarId, distribution: LeafDistribution) -> SpnNodeId {
        self.push(SpnNode::Leaf(Leaf {
            variable,
            distribution,
        }))
    }

    pub fn sum(&mut self, children: Vec<SpnNodeId>, weights: Vec<f64>) -> SpnNodeId {
        debug_assert_eq!(children.len(), weights.len());
        self.push(SpnNode::Sum { children, weights })
    }

    pub fn product(&mut self, children: Vec<SpnNodeId>) -> SpnNodeId {
        self.push(SpnNode::Product { children })
    }

    fn push(&mut self, node: SpnNode) -> SpnNodeId {
        self.nodes.push(node);
        SpnNodeId(self.nodes.len() - 1)
    }

    pub fn finish(self, root: SpnNodeId) -> SpnGraph {
        SpnGraph::from_nodes(self.nodes, root)
    }
}
