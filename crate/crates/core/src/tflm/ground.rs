//! Grounding a model over a parse tree, and the queries built on it.
//!
//! For tree node `t` and subclass `i` the grounded network has a product
//! `P(t, i)` whose children are
//!
//! * one term per attribute: a sum over the two indicator leaves of a binary
//!   attribute weighted by `ψ`, or a Gaussian leaf for a real attribute;
//! * a categorical leaf over `t`'s rule variable with distribution `ρ_{α_i}`,
//!   observed at the applied rule;
//! * one subclass sum per nonterminal child `c`, weighted by
//!   `π_{(α_i → β), c}` over the shared products `P(c, j)`.
//!
//! The root is a sum over `P(root, i)` weighted by `π_S`. Zero-weight sum
//! children are dropped, and each subclass sum records which subclass each
//! remaining child stands for.

use std::collections::{BTreeMap, HashMap};

use crate::frontend::{NodeId, ParseTree, SymbolId};
use crate::spn::{
    all_marginals, log_evidence, map_state, Evidence, LeafDistribution, SpnBuilder, SpnGraph,
    SpnNodeId, Value, VarId,
};

use super::{
    AttributeAssignment, AttributeKind, SubclassAssignment, TflmError, TflmSpec, BUGGY,
    SUSPICIOUSNESS,
};

/// A sum node choosing the subclass of one tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubclassSum {
    pub node: NodeId,
    /// Subclass of the parent that owns this sum; `None` at the root.
    pub parent_subclass: Option<usize>,
    /// Subclass index of each child position of the sum.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GroundedSpn {
    pub spn: SpnGraph,
    /// `[node][attribute index]`.
    pub attr_vars: Vec<Vec<VarId>>,
    /// Rule variable per node.
    pub rule_vars: Vec<VarId>,
    pub subclass_sums: BTreeMap<SpnNodeId, SubclassSum>,
    selectors: HashMap<(NodeId, Option<usize>), SpnNodeId>,
}

impl GroundedSpn {
    /// Evidence fixing every rule variable to the applied rule and every
    /// attribute present in `attrs`.
    pub fn evidence(
        &self,
        spec: &TflmSpec,
        tree: &ParseTree,
        attrs: &AttributeAssignment,
    ) -> Result<Evidence, TflmError> {
        attrs.check(spec, tree)?;
        let mut ev = Evidence::new();
        for node in tree.nodes() {
            ev.set(
                self.rule_vars[node.id.0],
                Value::Discrete(spec.grammar.local_rule_index(node.rule)),
            );
        }
        for (node, name, value) in attrs.iter() {
            let idx = spec
                .attribute_index(tree.node(node).symbol, name)
                .expect("checked above");
            ev.set(self.attr_vars[node.0][idx], value);
        }
        Ok(ev)
    }

    /// Fixes the subclass sums on the path selected by `classes`. Returns
    /// `false` when some choice has zero weight and was pruned.
    pub fn fix_subclasses(
        &self,
        ev: &mut Evidence,
        tree: &ParseTree,
        classes: &SubclassAssignment,
    ) -> bool {
        for node in tree.nodes() {
            let parent = node.parent.map(|p| classes.get(p));
            let sum = self.selectors[&(node.id, parent)];
            let labels = &self.subclass_sums[&sum].labels;
            match labels.iter().position(|l| *l == classes.get(node.id)) {
                Some(pos) => ev.fix_branch(sum, pos),
                None => return false,
            }
        }
        true
    }

    /// Reads per-node subclasses off the sum choices of a MAP state.
    pub fn decode(
        &self,
        tree: &ParseTree,
        branches: &BTreeMap<SpnNodeId, usize>,
    ) -> Option<SubclassAssignment> {
        let mut classes = vec![None; tree.len()];
        for (sum, choice) in branches {
            if let Some(s) = self.subclass_sums.get(sum) {
                classes[s.node.0] = Some(s.labels[*choice]);
            }
        }
        classes
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .map(|classes| SubclassAssignment { classes })
    }
}

fn check_tree(spec: &TflmSpec, tree: &ParseTree) -> Result<(), TflmError> {
    let g = &spec.grammar;
    for node in tree.nodes() {
        if node.rule.0 >= g.rules().len() {
            return Err(TflmError::GrammarMismatch(format!(
                "node {} uses unknown rule",
                node.id.0
            )));
        }
        let rule = g.rule(node.rule);
        let kids: Vec<SymbolId> = rule.nonterminal_children().collect();
        let ok = rule.lhs == node.symbol
            && kids.len() == node.children.len()
            && kids
                .iter()
                .zip(&node.children)
                .all(|(s, c)| tree.node(*c).symbol == *s);
        if !ok {
            return Err(TflmError::GrammarMismatch(format!(
                "node {} does not match rule `{}`",
                node.id.0, rule.id
            )));
        }
    }
    if tree.root().symbol != g.start_symbol() {
        return Err(TflmError::GrammarMismatch(
            "root is not the start symbol".into(),
        ));
    }
    Ok(())
}

fn real_feature(attrs: &AttributeAssignment, node: NodeId) -> Option<f64> {
    match attrs.get(node, SUSPICIOUSNESS) {
        Some(Value::Real(x)) => Some(x),
        _ => None,
    }
}

/// Leaf distribution for attribute `attr` of `node` in `subclass`, with the
/// joint model substituted for `buggy` when present.
fn leaf_for(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
    node: NodeId,
    subclass: usize,
    attr: usize,
) -> Result<LeafDistribution, TflmError> {
    let symbol = tree.node(node).symbol;
    let decl = &spec.attributes[symbol.0][attr];
    if decl.name == BUGGY {
        if let Some(model) = spec.joint_model(symbol, subclass) {
            let x =
                real_feature(attrs, node).ok_or_else(|| TflmError::UnobservedRealAttribute {
                    node: node.0,
                    attribute: SUSPICIOUSNESS.to_string(),
                })?;
            return Ok(LeafDistribution::Bernoulli {
                p: model.predict(x),
            });
        }
    }
    Ok(spec.attr_dist[symbol.0][subclass][attr].clone())
}

/// Builds the network for `tree`. `features` supplies the `suspiciousness`
/// values that joint attribute models condition on; it is otherwise unused.
pub fn ground_spn(
    spec: &TflmSpec,
    tree: &ParseTree,
    features: &AttributeAssignment,
) -> Result<GroundedSpn, TflmError> {
    check_tree(spec, tree)?;
    let mut b = SpnBuilder::new();
    let mut next_var = 0usize;
    let mut fresh = || {
        next_var += 1;
        VarId(next_var - 1)
    };

    let mut attr_vars = Vec::with_capacity(tree.len());
    let mut rule_vars = Vec::with_capacity(tree.len());
    for node in tree.nodes() {
        attr_vars.push(
            spec.attributes[node.symbol.0]
                .iter()
                .map(|_| fresh())
                .collect::<Vec<_>>(),
        );
        rule_vars.push(fresh());
    }

    let mut subclass_sums = BTreeMap::new();
    let mut selectors = HashMap::new();
    // products[t][i] = P(t, i); filled children first.
    let mut products: Vec<Vec<SpnNodeId>> = vec![Vec::new(); tree.len()];

    for node in tree.nodes().iter().rev() {
        let sym = node.symbol;
        let k = spec.subclass_count[sym.0];
        // Indicator leaves shared by every subclass of this node.
        let indicators: Vec<Option<[SpnNodeId; 2]>> = spec.attributes[sym.0]
            .iter()
            .enumerate()
            .map(|(a, decl)| {
                (decl.kind == AttributeKind::Binary).then(|| {
                    let v = attr_vars[node.id.0][a];
                    [
                        b.leaf(v, LeafDistribution::Bernoulli { p: 0.0 }),
                        b.leaf(v, LeafDistribution::Bernoulli { p: 1.0 }),
                    ]
                })
            })
            .collect();

        let mut row = Vec::with_capacity(k);
        for i in 0..k {
            let mut parts = Vec::new();
            for (a, ind) in indicators.iter().enumerate() {
                let leaf = leaf_for(spec, tree, features, node.id, i, a)?;
                match (ind, leaf) {
                    (Some([zero, one]), LeafDistribution::Bernoulli { p }) => {
                        let (mut kids, mut weights) = (Vec::new(), Vec::new());
                        for (child, w) in [(*zero, 1.0 - p), (*one, p)] {
                            if w > 0.0 {
                                kids.push(child);
                                weights.push(w);
                            }
                        }
                        parts.push(b.sum(kids, weights));
                    }
                    (_, dist) => parts.push(b.leaf(attr_vars[node.id.0][a], dist)),
                }
            }
            parts.push(b.leaf(
                rule_vars[node.id.0],
                LeafDistribution::Categorical {
                    weights: spec.rule_dist[sym.0][i].clone(),
                },
            ));
            for (pos, child) in node.children.iter().enumerate() {
                let dist = &spec.child_dist[node.rule.0][i][pos];
                let (mut kids, mut weights, mut labels) = (Vec::new(), Vec::new(), Vec::new());
                for (j, w) in dist.iter().enumerate() {
                    if *w > 0.0 {
                        kids.push(products[child.0][j]);
                        weights.push(*w);
                        labels.push(j);
                    }
                }
                let sum = b.sum(kids, weights);
                subclass_sums.insert(
                    sum,
                    SubclassSum {
                        node: *child,
                        parent_subclass: Some(i),
                        labels,
                    },
                );
                selectors.insert((*child, Some(i)), sum);
                parts.push(sum);
            }
            row.push(b.product(parts));
        }
        products[node.id.0] = row;
    }

    let root = tree.root().id;
    let (mut kids, mut weights, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, w) in spec.start_dist.iter().enumerate() {
        if *w > 0.0 {
            kids.push(products[root.0][i]);
            weights.push(*w);
            labels.push(i);
        }
    }
    let top = b.sum(kids, weights);
    subclass_sums.insert(
        top,
        SubclassSum {
            node: root,
            parent_subclass: None,
            labels,
        },
    );
    selectors.insert((root, None), top);

    Ok(GroundedSpn {
        spn: b.finish(top),
        attr_vars,
        rule_vars,
        subclass_sums,
        selectors,
    })
}

fn require_complete(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
) -> Result<(), TflmError> {
    attrs.check(spec, tree)?;
    for node in tree.nodes() {
        for decl in &spec.attributes[node.symbol.0] {
            if attrs.get(node.id, &decl.name).is_none() {
                return Err(TflmError::IncompleteAssignment(format!(
                    "attribute `{}` of node {}",
                    decl.name, node.id.0
                )));
            }
        }
    }
    Ok(())
}

/// `log P(T, A, C)` evaluated directly from the parameter tables.
pub fn joint_log_prob(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
    classes: &SubclassAssignment,
) -> Result<f64, TflmError> {
    check_tree(spec, tree)?;
    require_complete(spec, tree, attrs)?;
    if classes.classes.len() != tree.len() {
        return Err(TflmError::IncompleteAssignment(format!(
            "{} subclasses for {} nodes",
            classes.classes.len(),
            tree.len()
        )));
    }
    for node in tree.nodes() {
        if classes.get(node.id) >= spec.subclass_count[node.symbol.0] {
            return Err(TflmError::IncompleteAssignment(format!(
                "subclass {} out of range at node {}",
                classes.get(node.id),
                node.id.0
            )));
        }
    }

    let mut total = spec.start_dist[classes.get(tree.root().id)].ln();
    for node in tree.nodes() {
        let i = classes.get(node.id);
        total += spec.log_rule(node.rule, i);
        for (pos, child) in node.children.iter().enumerate() {
            total += spec.child_dist[node.rule.0][i][pos][classes.get(*child)].ln();
        }
        for (a, decl) in spec.attributes[node.symbol.0].iter().enumerate() {
            let value = attrs.get(node.id, &decl.name).expect("complete");
            let leaf = leaf_for(spec, tree, attrs, node.id, i, a)?;
            total += leaf
                .log_prob(value)
                .ok_or_else(|| TflmError::AttributeDomain {
                    node: node.id.0,
                    attribute: decl.name.clone(),
                })?;
        }
    }
    Ok(total)
}

/// Most probable subclass assignment given a complete attribute assignment.
pub fn map_subclasses(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
) -> Result<(SubclassAssignment, f64), TflmError> {
    require_complete(spec, tree, attrs)?;
    let grounded = ground_spn(spec, tree, attrs)?;
    let ev = grounded.evidence(spec, tree, attrs)?;
    let state = map_state(&grounded.spn, &ev)?;
    let classes = grounded
        .decode(tree, &state.branches)
        .expect("the selected subtree covers every tree node");
    Ok((classes, state.log_score))
}

/// [`map_subclasses`] evaluated on the tree itself: the same max-product
/// recursion over the grounded network's products and subclass sums, with
/// the same summation order and tie-breaking, but without building it.
pub fn map_subclasses_direct(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
) -> Result<(SubclassAssignment, f64), TflmError> {
    check_tree(spec, tree)?;
    require_complete(spec, tree, attrs)?;
    // Best choice among the nonzero entries of `dist`; the first wins ties
    // and is kept when every score is -inf.
    let pick = |dist: &[f64], score: &dyn Fn(usize) -> f64| -> (usize, f64) {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = None;
        for (j, w) in dist.iter().enumerate().filter(|(_, w)| **w > 0.0) {
            let s = w.ln() + score(j);
            if best_j.is_none() {
                best_j = Some(j);
            }
            if s > best {
                best = s;
                best_j = Some(j);
            }
        }
        (best_j.expect("normalized distribution"), best)
    };
    let n = tree.len();
    let mut best: Vec<Vec<f64>> = vec![Vec::new(); n];
    // choice[t][i][pos]: subclass of child `pos` when `t` has subclass `i`.
    let mut choice: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    for node in tree.nodes().iter().rev() {
        let sym = node.symbol;
        let k = spec.subclass_count[sym.0];
        let mut row = Vec::with_capacity(k);
        let mut picks = Vec::with_capacity(k);
        for i in 0..k {
            let mut total = 0.0;
            for (a, decl) in spec.attributes[sym.0].iter().enumerate() {
                let value = attrs.get(node.id, &decl.name).expect("complete");
                let leaf = leaf_for(spec, tree, attrs, node.id, i, a)?;
                total += leaf
                    .log_prob(value)
                    .ok_or_else(|| TflmError::AttributeDomain {
                        node: node.id.0,
                        attribute: decl.name.clone(),
                    })?;
            }
            total += spec.log_rule(node.rule, i);
            let mut chosen = Vec::with_capacity(node.children.len());
            for (pos, child) in node.children.iter().enumerate() {
                let dist = &spec.child_dist[node.rule.0][i][pos];
                let (j, s) = pick(dist, &|j| best[child.0][j]);
                chosen.push(j);
                total += s;
            }
            row.push(if total.is_nan() {
                f64::NEG_INFINITY
            } else {
                total
            });
            picks.push(chosen);
        }
        best[node.id.0] = row;
        choice[node.id.0] = picks;
    }
    let root = tree.root().id;
    let (root_class, score) = pick(&spec.start_dist, &|i| best[root.0][i]);
    let mut classes = vec![0usize; n];
    classes[root.0] = root_class;
    for node in tree.nodes() {
        let i = classes[node.id.0];
        for (pos, child) in node.children.iter().enumerate() {
            classes[child.0] = choice[node.id.0][i][pos];
        }
    }
    Ok((SubclassAssignment { classes }, score))
}

/// `P(buggy = 1 | observed)` for every node that declares `buggy`.
pub fn buggy_posteriors(
    spec: &TflmSpec,
    tree: &ParseTree,
    observed: &AttributeAssignment,
) -> Result<BTreeMap<NodeId, f64>, TflmError> {
    for node in tree.nodes() {
        if observed.get(node.id, BUGGY).is_some() {
            return Err(TflmError::BuggyObserved(node.id.0));
        }
        for decl in &spec.attributes[node.symbol.0] {
            if decl.kind == AttributeKind::Real && observed.get(node.id, &decl.name).is_none() {
                return Err(TflmError::UnobservedRealAttribute {
                    node: node.id.0,
                    attribute: decl.name.clone(),
                });
            }
        }
    }
    let grounded = ground_spn(spec, tree, observed)?;
    let ev = grounded.evidence(spec, tree, observed)?;
    let marginals = all_marginals(&grounded.spn, &ev)?;
    let mut out = BTreeMap::new();
    for node in tree.nodes() {
        if let Some(a) = spec.attribute_index(node.symbol, BUGGY) {
            let var = grounded.attr_vars[node.id.0][a];
            let p = marginals
                .get(&var)
                .and_then(|m| m.get(1))
                .copied()
                .unwrap_or(0.0);
            out.insert(node.id, p);
        }
    }
    Ok(out)
}

/// `log P(T, A_observed)`: the log evidence of the grounded network with the
/// tree's rules and the given attributes observed.
pub fn log_likelihood(
    spec: &TflmSpec,
    tree: &ParseTree,
    attrs: &AttributeAssignment,
) -> Result<f64, TflmError> {
    let grounded = ground_spn(spec, tree, attrs)?;
    let ev = grounded.evidence(spec, tree, attrs)?;
    Ok(log_evidence(&grounded.spn, &ev)?)
}
