//! Parse trees stored as a flat pre-order arena.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{Grammar, RuleId, SymbolId};

/// Pre-order index of a node in its [`ParseTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

/// Inclusive 1-based source line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub first: u32,
    pub last: u32,
}

impl Span {
    pub fn new(first: u32, last: u32) -> Span {
        debug_assert!(first <= last);
        Span { first, last }
    }

    pub fn line(line: u32) -> Span {
        Span::new(line, line)
    }

    pub fn contains(&self, line: u32) -> bool {
        self.first <= line && line <= self.last
    }

    pub fn encloses(&self, other: &Span) -> bool {
        self.first <= other.first && other.last <= self.last
    }

    pub fn lines(&self) -> impl Iterator<Item = u32> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: NodeId,
    pub symbol: SymbolId,
    pub rule: RuleId,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub span: Span,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node {0}: parent must precede its children")]
    BadParent(usize),
    #[error("node {node}: rule `{rule}` expects {expected} children, found {found}")]
    Arity {
        node: usize,
        rule: String,
        expected: usize,
        found: usize,
    },
    #[error("node {node}: child symbol `{found}` where rule expects `{expected}`")]
    ChildSymbol {
        node: usize,
        expected: String,
        found: String,
    },
    #[error("node {0}: span escapes its parent's span")]
    SpanEscapes(usize),
    #[error("nodes are not in pre-order")]
    NotPreOrder,
}

/// A parse tree whose node ids are contiguous and assigned in pre-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    nodes: Vec<AstNode>,
}

impl ParseTree {
    pub fn root(&self) -> &AstNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &AstNode {
        &self.nodes[id.0]
    }

    /// Nodes in pre-order; parents come before children.
    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    /// Position of `id` among its parent's children.
    pub fn child_position(&self, id: NodeId) -> Option<usize> {
        let parent = self.nodes[id.0].parent?;
        self.nodes[parent.0].children.iter().position(|c| *c == id)
    }

    /// `(symbol, rule)` per node in pre-order: the tree's skeleton without spans.
    pub fn skeleton(&self) -> Vec<(SymbolId, RuleId, usize)> {
        self.nodes
            .iter()
            .map(|n| (n.symbol, n.rule, n.children.len()))
            .collect()
    }
}

/// Builds a [`ParseTree`] from nodes pushed in pre-order.
#[derive(Debug, Default)]
pub struct TreeBuilder {
    pending: Vec<(RuleId, Option<NodeId>, Span)>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node. Nodes must arrive in pre-order with children in
    /// left-to-right order.
    pub fn push(&mut self, rule: RuleId, parent: Option<NodeId>, span: Span) -> NodeId {
        self.pending.push((rule, parent, span));
        NodeId(self.pending.len() - 1)
    }

    pub fn set_span(&mut self, node: NodeId, span: Span) {
        self.pending[node.0].2 = span;
    }

    pub fn finish(self, grammar: &Grammar) -> Result<ParseTree, TreeError> {
        if self.pending.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut nodes: Vec<AstNode> = Vec::with_capacity(self.pending.len());
        for (i, (rule, parent, span)) in self.pending.into_iter().enumerate() {
            let depth = match parent {
                None if i == 0 => 0,
                Some(p) if p.0 < i => nodes[p.0].depth + 1,
                _ => return Err(TreeError::BadParent(i)),
            };
            if let Some(p) = parent {
                nodes[p.0].children.push(NodeId(i));
            }
            nodes.push(AstNode {
                id: NodeId(i),
                symbol: grammar.rule(rule).lhs,
                rule,
                children: Vec::new(),
                parent,
                depth,
                span,
            });
        }
        // Pre-order check: walking the structure must reproduce index order.
        let mut stack = vec![NodeId(0)];
        let mut expected = 0;
        while let Some(id) = stack.pop() {
            if id.0 != expected {
                return Err(TreeError::NotPreOrder);
            }
            expected += 1;
            stack.extend(nodes[id.0].children.iter().rev().copied());
        }
        for node in &nodes {
            let rule = grammar.rule(node.rule);
            let want: Vec<SymbolId> = rule.nonterminal_children().collect();
            if want.len() != node.children.len() {
                return Err(TreeError::Arity {
                    node: node.id.0,
                    rule: rule.id.clone(),
                    expected: want.len(),
                    found: node.children.len(),
                });
            }
            for (w, c) in want.iter().zip(&node.children) {
                let child = &nodes[c.0];
                if child.symbol != *w {
                    return Err(TreeError::ChildSymbol {
                        node: node.id.0,
                        expected: grammar.symbol_name(*w).to_string(),
                        found: grammar.symbol_name(child.symbol).to_string(),
                    });
                }
                if !node.span.encloses(&child.span) {
                    return Err(TreeError::SpanEscapes(child.id.0));
                }
            }
        }
        Ok(ParseTree { nodes })
    }
}
