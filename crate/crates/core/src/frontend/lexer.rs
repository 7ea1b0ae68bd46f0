//! MiniC tokenizer.

use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Keyword(&'static str),
    Number(String),
    Str(String),
    Punct(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: u32,
    pub column: u32,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        matches!(self.kind, TokenKind::Punct(q) if q == p)
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        matches!(self.kind, TokenKind::Keyword(q) if q == k)
    }

    pub fn is_brace(&self) -> bool {
        self.is_punct("{") || self.is_punct("}")
    }

    pub fn text(&self) -> String {
        match &self.kind {
            TokenKind::Ident(s) | TokenKind::Number(s) => s.clone(),
            TokenKind::Str(s) => format!("\"{s}\""),
            TokenKind::Keyword(k) | TokenKind::Punct(k) => (*k).to_string(),
        }
    }
}

const KEYWORDS: &[&str] = &["if", "else", "while", "for", "return", "break", "continue"];

// Longest first so that `<=` wins over `<`.
const PUNCTUATION: &[&str] = &[
    "<<=", ">>=", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%=",
    "<<", ">>", "{", "}", "(", ")", "[", "]", ";", ",", "=", "<", ">", "+", "-", "*", "/", "%",
    "!", "&", "|", "^", "~", "?", ":", ".",
];

struct Cursor {
    chars: Vec<char>,
    i: usize,
    line: u32,
    col: u32,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.i + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek().filter(|c| pred(*c)) {
            out.push(c);
            self.bump();
        }
        out
    }
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor {
        chars: source.chars().collect(),
        i: 0,
        line: 1,
        col: 1,
    };
    let mut tokens = Vec::new();

    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let (line, column) = (cur.line, cur.col);
        if c == '/' && cur.peek2() == Some('/') {
            cur.take_while(|c| c != '\n');
            continue;
        }
        if c == '/' && cur.peek2() == Some('*') {
            cur.bump();
            cur.bump();
            loop {
                match cur.bump() {
                    None => return Err(ParseError::syntax(line, column, "unterminated comment")),
                    Some('*') if cur.peek() == Some('/') => {
                        cur.bump();
                        break;
                    }
                    Some(_) => {}
                }
            }
            continue;
        }
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            let word = cur.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
            match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => TokenKind::Keyword(k),
                None => TokenKind::Ident(word),
            }
        } else if c.is_ascii_digit() {
            TokenKind::Number(cur.take_while(|c| c.is_ascii_alphanumeric() || c == '.'))
        } else if c == '"' {
            cur.bump();
            let mut text = String::new();
            loop {
                match cur.bump() {
                    None | Some('\n') => {
                        return Err(ParseError::syntax(
                            line,
                            column,
                            "unterminated string literal",
                        ))
                    }
                    Some('"') => break,
                    Some('\\') => {
                        text.push('\\');
                        if let Some(esc) = cur.bump() {
                            text.push(esc);
                        }
                    }
                    Some(ch) => text.push(ch),
                }
            }
            TokenKind::Str(text)
        } else {
            let rest: String = cur.chars[cur.i..cur.chars.len().min(cur.i + 3)]
                .iter()
                .collect();
            match PUNCTUATION.iter().find(|p| rest.starts_with(**p)) {
                Some(p) => {
                    for _ in 0..p.len() {
                        cur.bump();
                    }
                    TokenKind::Punct(p)
                }
                None => {
                    return Err(ParseError::syntax(
                        line,
                        column,
                        format!("unexpected character `{c}`"),
                    ))
                }
            }
        };
        tokens.push(Token { kind, line, column });
    }
    Ok(tokens)
}
