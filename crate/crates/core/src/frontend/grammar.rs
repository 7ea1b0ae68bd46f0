//! Context-free grammar definitions and the text format they are loaded from.
//!
//! ```text
//! %start program
//! %nonterminals program stmt_list stmt
//! %terminals IDENT EXPR
//! program: program -> stmt_list
//! stmt_list -> stmt stmt_list
//! ```
//!
//! Rule ids are optional; an unnamed rule gets `<lhs>.<n>` where `n` counts
//! the rules of that left-hand side. When `%nonterminals` is omitted the set
//! of left-hand sides is used.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// The built-in MiniC grammar definition.
pub const MINIC_GRAMMAR: &str = include_str!("../../grammar/minic.grammar");

/// Index of a nonterminal within its grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub usize);

/// Index of a production rule within its grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GrammarSymbol {
    Nonterminal(SymbolId),
    /// A token class (`IDENT`) or a quoted literal (`"while"`).
    Terminal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductionRule {
    pub id: String,
    pub lhs: SymbolId,
    pub rhs: Vec<GrammarSymbol>,
}

impl ProductionRule {
    /// Nonterminals on the right-hand side, in order. These are the children
    /// a parse-tree node built with this rule carries.
    pub fn nonterminal_children(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.rhs.iter().filter_map(|s| match s {
            GrammarSymbol::Nonterminal(id) => Some(*id),
            GrammarSymbol::Terminal(_) => None,
        })
    }

    pub fn arity(&self) -> usize {
        self.nonterminal_children().count()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: unknown symbol `{symbol}`")]
    UnknownSymbol { line: usize, symbol: String },
    #[error("nonterminal `{0}` has no rules")]
    NoRuleForNonterminal(String),
    #[error("line {line}: duplicate rule id `{id}`")]
    DuplicateRuleId { line: usize, id: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("start symbol `{0}` is not a nonterminal")]
    BadStartSymbol(String),
}

/// A validated grammar `(V, Σ, R, S)`.
#[derive(Debug, Clone)]
pub struct Grammar {
    nonterminals: Vec<String>,
    terminals: BTreeSet<String>,
    rules: Vec<ProductionRule>,
    start: SymbolId,
    by_lhs: Vec<Vec<RuleId>>,
    symbol_index: HashMap<String, SymbolId>,
    rule_index: HashMap<String, RuleId>,
}

/// Grammars are equal when their canonical definitions are.
impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.to_definition() == other.to_definition()
    }
}

impl Grammar {
    /// The built-in MiniC grammar.
    pub fn minic() -> Grammar {
        load_grammar(MINIC_GRAMMAR).expect("built-in MiniC grammar is valid")
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &BTreeSet<String> {
        &self.terminals
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &ProductionRule {
        &self.rules[id.0]
    }

    pub fn start_symbol(&self) -> SymbolId {
        self.start
    }

    pub fn symbol_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn symbol_name(&self, id: SymbolId) -> &str {
        &self.nonterminals[id.0]
    }

    pub fn symbol(&self, name: &str) -> Option<SymbolId> {
        self.symbol_index.get(name).copied()
    }

    pub fn rule_by_name(&self, id: &str) -> Option<RuleId> {
        self.rule_index.get(id).copied()
    }

    /// Rules with `symbol` on the left, in definition order.
    pub fn rules_for(&self, symbol: SymbolId) -> &[RuleId] {
        &self.by_lhs[symbol.0]
    }

    /// Position of `rule` among the rules sharing its left-hand side.
    pub fn local_rule_index(&self, rule: RuleId) -> usize {
        let lhs = self.rules[rule.0].lhs;
        self.by_lhs[lhs.0]
            .iter()
            .position(|r| *r == rule)
            .expect("rule is listed under its own lhs")
    }

    /// Canonical definition text; loading it yields an identical grammar.
    pub fn to_definition(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("%start {}\n", self.symbol_name(self.start)));
        out.push_str(&format!("%nonterminals {}\n", self.nonterminals.join(" ")));
        let classes: Vec<&str> = self
            .terminals
            .iter()
            .filter(|t| !t.starts_with('"'))
            .map(String::as_str)
            .collect();
        if !classes.is_empty() {
            out.push_str(&format!("%terminals {}\n", classes.join(" ")));
        }
        for rule in &self.rules {
            let rhs: Vec<String> = rule
                .rhs
                .iter()
                .map(|s| match s {
                    GrammarSymbol::Nonterminal(id) => self.symbol_name(*id).to_string(),
                    GrammarSymbol::Terminal(t) => t.clone(),
                })
                .collect();
            out.push_str(&format!(
                "{}: {} -> {}\n",
                rule.id,
                self.symbol_name(rule.lhs),
                rhs.join(" ")
            ));
        }
        out
    }

    /// SHA-256 of the canonical definition, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_definition().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_definition())
    }
}

struct RawRule {
    line: usize,
    id: Option<String>,
    lhs: String,
    rhs: Vec<String>,
}

fn tokenize_rhs(text: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut lit = String::from("\"");
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => lit.push(ch),
                    None => {
                        return Err(GrammarError::Malformed {
                            line,
                            message: "unterminated literal".into(),
                        })
                    }
                }
            }
            if lit.len() == 1 {
                return Err(GrammarError::Malformed {
                    line,
                    message: "empty literal".into(),
                });
            }
            lit.push('"');
            out.push(lit);
        } else {
            let mut word = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' {
                    break;
                }
                word.push(ch);
                chars.next();
            }
            out.push(word);
        }
    }
    Ok(out)
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with('.')
}

/// Parses and validates a grammar definition.
pub fn load_grammar(definition: &str) -> Result<Grammar, GrammarError> {
    let mut start: Option<(usize, String)> = None;
    let mut declared_nts: Option<Vec<String>> = None;
    let mut classes: BTreeSet<String> = BTreeSet::new();
    let mut raw_rules = Vec::new();

    for (idx, raw_line) in definition.lines().enumerate() {
        let line = idx + 1;
        let text = raw_line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('%') {
            let mut words = rest.split_whitespace();
            let directive = words.next().unwrap_or("");
            let args: Vec<String> = words.map(str::to_string).collect();
            match directive {
                "start" if args.len() == 1 => start = Some((line, args[0].clone())),
                "nonterminals" => declared_nts.get_or_insert_with(Vec::new).extend(args),
                "terminals" => classes.extend(args),
                _ => {
                    return Err(GrammarError::Malformed {
                        line,
                        message: format!("bad directive `%{rest}`"),
                    })
                }
            }
            continue;
        }
        let (head, rhs_text) = text
            .split_once("->")
            .ok_or_else(|| GrammarError::Malformed {
                line,
                message: "expected `lhs -> symbols`".into(),
            })?;
        let (id, lhs) = match head.split_once(':') {
            Some((id, lhs)) => (Some(id.trim().to_string()), lhs.trim().to_string()),
            None => (None, head.trim().to_string()),
        };
        if !is_identifier(&lhs) || id.as_deref().is_some_and(|i| !is_identifier(i)) {
            return Err(GrammarError::Malformed {
                line,
                message: format!("bad rule head `{}`", head.trim()),
            });
        }
        let rhs = tokenize_rhs(rhs_text, line)?;
        if rhs.is_empty() {
            return Err(GrammarError::Malformed {
                line,
                message: "empty right-hand side".into(),
            });
        }
        raw_rules.push(RawRule { line, id, lhs, rhs });
    }

    let nonterminals = match declared_nts {
        Some(list) => {
            let mut seen = BTreeSet::new();
            list.into_iter()
                .filter(|n| seen.insert(n.clone()))
                .collect::<Vec<_>>()
        }
        None => {
            let mut seen = BTreeSet::new();
            raw_rules
                .iter()
                .filter(|r| seen.insert(r.lhs.clone()))
                .map(|r| r.lhs.clone())
                .collect()
        }
    };
    let symbol_index: HashMap<String, SymbolId> = nonterminals
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), SymbolId(i)))
        .collect();

    let mut terminals = classes.clone();
    let mut rules = Vec::with_capacity(raw_rules.len());
    let mut rule_index = HashMap::new();
    let mut per_lhs_count: HashMap<SymbolId, usize> = HashMap::new();
    for raw in raw_rules {
        let lhs = *symbol_index
            .get(&raw.lhs)
            .ok_or_else(|| GrammarError::UnknownSymbol {
                line: raw.line,
                symbol: raw.lhs.clone(),
            })?;
        let mut rhs = Vec::with_capacity(raw.rhs.len());
        for sym in raw.rhs {
            if sym.starts_with('"') {
                terminals.insert(sym.clone());
                rhs.push(GrammarSymbol::Terminal(sym));
            } else if let Some(id) = symbol_index.get(&sym) {
                rhs.push(GrammarSymbol::Nonterminal(*id));
            } else if classes.contains(&sym) {
                rhs.push(GrammarSymbol::Terminal(sym));
            } else {
                return Err(GrammarError::UnknownSymbol {
                    line: raw.line,
                    symbol: sym,
                });
            }
        }
        let n = per_lhs_count.entry(lhs).or_insert(0);
        let id = raw.id.unwrap_or_else(|| format!("{}.{}", raw.lhs, n));
        *n += 1;
        if rule_index.insert(id.clone(), RuleId(rules.len())).is_some() {
            return Err(GrammarError::DuplicateRuleId { line: raw.line, id });
        }
        rules.push(ProductionRule { id, lhs, rhs });
    }

    let mut by_lhs = vec![Vec::new(); nonterminals.len()];
    for (i, rule) in rules.iter().enumerate() {
        by_lhs[rule.lhs.0].push(RuleId(i));
    }
    if let Some(i) = by_lhs.iter().position(Vec::is_empty) {
        return Err(GrammarError::NoRuleForNonterminal(nonterminals[i].clone()));
    }

    let start = match start {
        Some((_, name)) => *symbol_index
            .get(&name)
            .ok_or(GrammarError::BadStartSymbol(name))?,
        None => {
            if nonterminals.is_empty() {
                return Err(GrammarError::Malformed {
                    line: 0,
                    message: "grammar has no rules".into(),
                });
            }
            SymbolId(0)
        }
    };

    Ok(Grammar {
        nonterminals,
        terminals,
        rules,
        start,
        by_lhs,
        symbol_index,
        rule_index,
    })
}
