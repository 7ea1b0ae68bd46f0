//! Recursive-descent parser for MiniC with one token of lookahead.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::grammar::{Grammar, RuleId};
use super::lexer::{tokenize, Token, TokenKind};
use super::tree::{NodeId, ParseTree, Span, TreeBuilder};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    SyntaxError {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("program is empty")]
    EmptyProgram,
    #[error("grammar is not MiniC: {0}")]
    UnsupportedGrammar(String),
}

impl ParseError {
    pub(crate) fn syntax(line: u32, column: u32, message: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line,
            column,
            message: message.into(),
        }
    }
}

/// A MiniC program with its parse tree.
#[derive(Debug, Clone)]
pub struct ParsedProgram {
    pub tree: ParseTree,
    pub source: String,
    /// Lines holding a non-brace token inside some statement.
    pub executable_lines: BTreeSet<u32>,
}

impl ParsedProgram {
    pub fn line_count(&self) -> u32 {
        self.source.lines().count() as u32
    }

    /// Maps each executable line to the deepest node whose span contains it.
    /// Ties between equally deep nodes go to the earlier node in pre-order.
    pub fn finest_enclosing_nodes(&self) -> BTreeMap<u32, NodeId> {
        let mut best: BTreeMap<u32, NodeId> = BTreeMap::new();
        for node in self.tree.nodes() {
            for line in node.span.lines() {
                if !self.executable_lines.contains(&line) {
                    continue;
                }
                match best.get(&line) {
                    Some(cur) if self.tree.node(*cur).depth >= node.depth => {}
                    _ => {
                        best.insert(line, node.id);
                    }
                }
            }
        }
        best
    }
}

/// Rule ids the parser emits, resolved against a grammar.
#[derive(Debug, Clone, Copy)]
struct MiniCRules {
    program: RuleId,
    list_cons: RuleId,
    list_last: RuleId,
    stmt_if: RuleId,
    stmt_if_else: RuleId,
    stmt_while: RuleId,
    stmt_for: RuleId,
    stmt_block: RuleId,
    stmt_assign: RuleId,
    stmt_return: RuleId,
    stmt_break: RuleId,
    stmt_continue: RuleId,
    stmt_call: RuleId,
    if_stmt: RuleId,
    if_else_stmt: RuleId,
    while_stmt: RuleId,
    for_stmt: RuleId,
    block_body: RuleId,
    block_empty: RuleId,
    assign: RuleId,
    return_value: RuleId,
    return_bare: RuleId,
    break_stmt: RuleId,
    continue_stmt: RuleId,
    call: RuleId,
    condition: RuleId,
}

impl MiniCRules {
    fn resolve(g: &Grammar) -> Result<MiniCRules, ParseError> {
        let get = |id: &str, lhs: &str, children: &[&str]| -> Result<RuleId, ParseError> {
            let rule_id = g
                .rule_by_name(id)
                .ok_or_else(|| ParseError::UnsupportedGrammar(format!("missing rule `{id}`")))?;
            let rule = g.rule(rule_id);
            let kids: Vec<&str> = rule
                .nonterminal_children()
                .map(|s| g.symbol_name(s))
                .collect();
            if g.symbol_name(rule.lhs) != lhs || kids != children {
                return Err(ParseError::UnsupportedGrammar(format!(
                    "rule `{id}` has an unexpected shape"
                )));
            }
            Ok(rule_id)
        };
        Ok(MiniCRules {
            program: get("program", "program", &["stmt_list"])?,
            list_cons: get("stmt_list.cons", "stmt_list", &["stmt", "stmt_list"])?,
            list_last: get("stmt_list.last", "stmt_list", &["stmt"])?,
            stmt_if: get("stmt.if", "stmt", &["if_stmt"])?,
            stmt_if_else: get("stmt.if_else", "stmt", &["if_else_stmt"])?,
            stmt_while: get("stmt.while", "stmt", &["while_stmt"])?,
            stmt_for: get("stmt.for", "stmt", &["for_stmt"])?,
            stmt_block: get("stmt.block", "stmt", &["block"])?,
            stmt_assign: get("stmt.assign", "stmt", &["assign_stmt"])?,
            stmt_return: get("stmt.return", "stmt", &["return_stmt"])?,
            stmt_break: get("stmt.break", "stmt", &["break_stmt"])?,
            stmt_continue: get("stmt.continue", "stmt", &["continue_stmt"])?,
            stmt_call: get("stmt.call", "stmt", &["call_stmt"])?,
            if_stmt: get("if_stmt", "if_stmt", &["condition", "block"])?,
            if_else_stmt: get(
                "if_else_stmt",
                "if_else_stmt",
                &["condition", "block", "block"],
            )?,
            while_stmt: get("while_stmt", "while_stmt", &["condition", "block"])?,
            for_stmt: get(
                "for_stmt",
                "for_stmt",
                &["assign_stmt", "condition", "block"],
            )?,
            block_body: get("block.body", "block", &["stmt_list"])?,
            block_empty: get("block.empty", "block", &[])?,
            assign: get("assign_stmt", "assign_stmt", &[])?,
            return_value: get("return_stmt.value", "return_stmt", &[])?,
            return_bare: get("return_stmt.bare", "return_stmt", &[])?,
            break_stmt: get("break_stmt", "break_stmt", &[])?,
            continue_stmt: get("continue_stmt", "continue_stmt", &[])?,
            call: get("call_stmt", "call_stmt", &[])?,
            condition: get("condition", "condition", &[])?,
        })
    }
}

/// Arena node; children are indices so deep statement chains never recurse.
struct Pending {
    rule: RuleId,
    children: Vec<usize>,
    span: Span,
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    rules: MiniCRules,
    arena: Vec<Pending>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + offset)
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::syntax(t.line, t.column, message),
            None => {
                let (line, column) = self
                    .tokens
                    .last()
                    .map(|t| (t.line, t.column + t.text().chars().count() as u32))
                    .unwrap_or((1, 1));
                ParseError::syntax(line, column, message)
            }
        }
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn expect_punct(&mut self, p: &str) -> Result<&'a Token, ParseError> {
        match self.peek() {
            Some(t) if t.is_punct(p) => Ok(self.next().unwrap()),
            Some(t) => Err(self.error_here(format!("expected `{p}`, found `{}`", t.text()))),
            None => Err(self.error_here(format!("expected `{p}`, found end of input"))),
        }
    }

    fn expect_keyword(&mut self, k: &str) -> Result<&'a Token, ParseError> {
        match self.peek() {
            Some(t) if t.is_keyword(k) => Ok(self.next().unwrap()),
            _ => Err(self.error_here(format!("expected `{k}`"))),
        }
    }

    fn expect_ident(&mut self) -> Result<&'a Token, ParseError> {
        match self.peek() {
            Some(t) if matches!(t.kind, TokenKind::Ident(_)) => Ok(self.next().unwrap()),
            _ => Err(self.error_here("expected identifier")),
        }
    }

    fn add(&mut self, rule: RuleId, children: Vec<usize>, first: u32, last: u32) -> usize {
        self.arena.push(Pending {
            rule,
            children,
            span: Span::new(first, last),
        });
        self.arena.len() - 1
    }

    /// Consumes an expression token run, stopping before a depth-0 token
    /// matching `stop`. Returns the last line consumed.
    fn token_run(&mut self, stop: &str, allow_empty: bool) -> Result<Option<u32>, ParseError> {
        let mut depth = 0usize;
        let mut last = None;
        loop {
            let Some(t) = self.peek() else {
                return Err(self.error_here(format!("expected `{stop}`, found end of input")));
            };
            if depth == 0 && t.is_punct(stop) {
                break;
            }
            match &t.kind {
                TokenKind::Punct("{") | TokenKind::Punct("}") | TokenKind::Punct(";") => {
                    return Err(self.error_here(format!("unexpected `{}` in expression", t.text())))
                }
                TokenKind::Keyword(k) => {
                    return Err(self.error_here(format!("unexpected keyword `{k}` in expression")))
                }
                TokenKind::Punct("(") | TokenKind::Punct("[") => depth += 1,
                TokenKind::Punct(")") | TokenKind::Punct("]") => {
                    if depth == 0 {
                        return Err(self.error_here(format!("unbalanced `{}`", t.text())));
                    }
                    depth -= 1;
                }
                _ => {}
            }
            last = Some(t.line);
            self.pos += 1;
        }
        if last.is_none() && !allow_empty {
            return Err(self.error_here("expected expression"));
        }
        Ok(last)
    }

    fn condition(&mut self, stop: &str) -> Result<usize, ParseError> {
        let first = self.peek().map(|t| t.line);
        let last = self.token_run(stop, false)?.expect("non-empty run");
        Ok(self.add(self.rules.condition, vec![], first.unwrap(), last))
    }

    fn stmt_list(&mut self) -> Result<usize, ParseError> {
        let mut stmts = Vec::new();
        while let Some(t) = self.peek() {
            if t.is_punct("}") {
                break;
            }
            stmts.push(self.stmt()?);
        }
        if stmts.is_empty() {
            return Err(self.error_here("expected statement"));
        }
        let last_stmt = stmts.pop().unwrap();
        let span = self.arena[last_stmt].span;
        let mut acc = self.add(self.rules.list_last, vec![last_stmt], span.first, span.last);
        while let Some(s) = stmts.pop() {
            let first = self.arena[s].span.first;
            let last = self.arena[acc].span.last;
            acc = self.add(self.rules.list_cons, vec![s, acc], first, last);
        }
        Ok(acc)
    }

    fn stmt(&mut self) -> Result<usize, ParseError> {
        let t = self.peek().expect("caller checked");
        let (wrap, inner) = match &t.kind {
            TokenKind::Keyword("if") => {
                let inner = self.if_stmt()?;
                let wrap = if self.arena[inner].rule == self.rules.if_else_stmt {
                    self.rules.stmt_if_else
                } else {
                    self.rules.stmt_if
                };
                (wrap, inner)
            }
            TokenKind::Keyword("while") => (self.rules.stmt_while, self.while_stmt()?),
            TokenKind::Keyword("for") => (self.rules.stmt_for, self.for_stmt()?),
            TokenKind::Keyword("return") => (self.rules.stmt_return, self.return_stmt()?),
            TokenKind::Keyword("break") => {
                let kw = self.next().unwrap();
                let semi = self.expect_punct(";")?;
                (
                    self.rules.stmt_break,
                    self.add(self.rules.break_stmt, vec![], kw.line, semi.line),
                )
            }
            TokenKind::Keyword("continue") => {
                let kw = self.next().unwrap();
                let semi = self.expect_punct(";")?;
                let node = self.add(self.rules.continue_stmt, vec![], kw.line, semi.line);
                (self.rules.stmt_continue, node)
            }
            TokenKind::Punct("{") => (self.rules.stmt_block, self.block()?),
            TokenKind::Ident(_) => match self.peek_at(1) {
                Some(n) if n.is_punct("=") => (self.rules.stmt_assign, self.assign_stmt()?),
                Some(n) if n.is_punct("(") => (self.rules.stmt_call, self.call_stmt()?),
                _ => {
                    self.pos += 1;
                    return Err(self.error_here("expected `=` or `(` after identifier"));
                }
            },
            _ => return Err(self.error_here(format!("unexpected `{}`", t.text()))),
        };
        let span = self.arena[inner].span;
        Ok(self.add(wrap, vec![inner], span.first, span.last))
    }

    fn if_stmt(&mut self) -> Result<usize, ParseError> {
        let kw = self.expect_keyword("if")?;
        self.expect_punct("(")?;
        let cond = self.condition(")")?;
        self.expect_punct(")")?;
        let then = self.block()?;
        if self.peek().is_some_and(|t| t.is_keyword("else")) {
            self.next();
            let other = self.block()?;
            let last = self.arena[other].span.last;
            Ok(self.add(
                self.rules.if_else_stmt,
                vec![cond, then, other],
                kw.line,
                last,
            ))
        } else {
            let last = self.arena[then].span.last;
            Ok(self.add(self.rules.if_stmt, vec![cond, then], kw.line, last))
        }
    }

    fn while_stmt(&mut self) -> Result<usize, ParseError> {
        let kw = self.expect_keyword("while")?;
        self.expect_punct("(")?;
        let cond = self.condition(")")?;
        self.expect_punct(")")?;
        let body = self.block()?;
        let last = self.arena[body].span.last;
        Ok(self.add(self.rules.while_stmt, vec![cond, body], kw.line, last))
    }

    fn for_stmt(&mut self) -> Result<usize, ParseError> {
        let kw = self.expect_keyword("for")?;
        self.expect_punct("(")?;
        let init = self.assign_stmt()?;
        let cond = self.condition(";")?;
        self.expect_punct(";")?;
        self.expect_ident()?;
        self.expect_punct("=")?;
        self.token_run(")", false)?;
        self.expect_punct(")")?;
        let body = self.block()?;
        let last = self.arena[body].span.last;
        Ok(self.add(self.rules.for_stmt, vec![init, cond, body], kw.line, last))
    }

    fn block(&mut self) -> Result<usize, ParseError> {
        let open = self.expect_punct("{")?;
        if self.peek().is_some_and(|t| t.is_punct("}")) {
            let close = self.next().unwrap();
            return Ok(self.add(self.rules.block_empty, vec![], open.line, close.line));
        }
        let body = self.stmt_list()?;
        let close = self.expect_punct("}")?;
        Ok(self.add(self.rules.block_body, vec![body], open.line, close.line))
    }

    fn assign_stmt(&mut self) -> Result<usize, ParseError> {
        let name = self.expect_ident()?;
        self.expect_punct("=")?;
        self.token_run(";", false)?;
        let semi = self.expect_punct(";")?;
        Ok(self.add(self.rules.assign, vec![], name.line, semi.line))
    }

    fn call_stmt(&mut self) -> Result<usize, ParseError> {
        let name = self.expect_ident()?;
        self.expect_punct("(")?;
        self.token_run(")", true)?;
        self.expect_punct(")")?;
        let semi = self.expect_punct(";")?;
        Ok(self.add(self.rules.call, vec![], name.line, semi.line))
    }

    fn return_stmt(&mut self) -> Result<usize, ParseError> {
        let kw = self.expect_keyword("return")?;
        if self.peek().is_some_and(|t| t.is_punct(";")) {
            let semi = self.next().unwrap();
            return Ok(self.add(self.rules.return_bare, vec![], kw.line, semi.line));
        }
        self.token_run(";", false)?;
        let semi = self.expect_punct(";")?;
        Ok(self.add(self.rules.return_value, vec![], kw.line, semi.line))
    }
}

/// Parses MiniC source into its unique parse tree.
pub fn parse_program(source: &str, grammar: &Grammar) -> Result<ParsedProgram, ParseError> {
    let rules = MiniCRules::resolve(grammar)?;
    let tokens = tokenize(source)?;
    if tokens.is_empty() {
        return Err(ParseError::EmptyProgram);
    }
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        rules,
        arena: Vec::new(),
    };
    let list = parser.stmt_list()?;
    if parser.peek().is_some() {
        return Err(parser.error_here("unexpected `}`"));
    }
    let span = parser.arena[list].span;
    let root = parser.add(rules.program, vec![list], span.first, span.last);

    let mut builder = TreeBuilder::new();
    let mut stack: Vec<(usize, Option<NodeId>)> = vec![(root, None)];
    let arena = parser.arena;
    while let Some((idx, parent)) = stack.pop() {
        let p = &arena[idx];
        let id = builder.push(p.rule, parent, p.span);
        stack.extend(p.children.iter().rev().map(|c| (*c, Some(id))));
    }
    let tree = builder
        .finish(grammar)
        .expect("parser output satisfies tree invariants");

    let token_lines: BTreeSet<u32> = tokens
        .iter()
        .filter(|t| !t.is_brace())
        .map(|t| t.line)
        .collect();
    let stmt_symbol = grammar.symbol("stmt").expect("resolved above");
    let mut executable_lines = BTreeSet::new();
    for node in tree.nodes().iter().filter(|n| n.symbol == stmt_symbol) {
        executable_lines.extend(node.span.lines().filter(|l| token_lines.contains(l)));
    }
    Ok(ParsedProgram {
        tree,
        source: source.to_string(),
        executable_lines,
    })
}
