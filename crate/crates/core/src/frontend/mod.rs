//! MiniC grammar, tokenizer, parser and parse-tree utilities.

mod grammar;
mod lexer;
mod parser;
mod tree;

pub use grammar::{
    load_grammar, Grammar, GrammarError, GrammarSymbol, ProductionRule, RuleId, SymbolId,
    MINIC_GRAMMAR,
};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{parse_program, ParseError, ParsedProgram};
pub use tree::{AstNode, NodeId, ParseTree, Span, TreeBuilder, TreeError};
