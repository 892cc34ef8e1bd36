//! Infix tokenizer, shunting-yard conversion to postfix, and postfix evaluation.
//!
//! Grammar: binary `+ - * / ^`, prefix `-` (lexed as a distinct `neg` token),
//! the functions in [`GRAMMAR_FUNCTIONS`], parentheses, numeric literals and
//! identifiers `[A-Za-z_][A-Za-z0-9_]*`. Implicit multiplication is rejected.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::prim::{BinaryOp, EvalError, UnaryOp, GRAMMAR_FUNCTIONS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("unknown character `{ch}` at {pos}")]
    UnknownChar { ch: char, pos: usize },
    #[error("malformed number `{lexeme}` at {pos}")]
    MalformedNumber { lexeme: String, pos: usize },
    #[error("unknown function `{name}` at {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("`{name}` at {pos} is a function name and must be applied with parentheses")]
    ReservedName { name: String, pos: usize },
    #[error("mismatched parenthesis at {pos}")]
    MismatchedParen { pos: usize },
    #[error("operator with missing operand at {pos}")]
    MissingOperand { pos: usize },
    #[error("unexpected operand at {pos} (implicit multiplication is not supported)")]
    UnexpectedOperand { pos: usize },
    #[error("unknown postfix token `{0}`")]
    UnknownToken(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RpnError {
    #[error("variable `{0}` has no assigned value")]
    Unassigned(String),
    #[error("stack underflow at token {at} (`{lexeme}`)")]
    StackUnderflow { at: usize, lexeme: String },
    #[error("postfix expression leaves {0} values on the stack")]
    Leftover(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Pow => "^",
        }
    }

    fn from_char(c: char) -> Option<Op> {
        Some(match c {
            '+' => Op::Add,
            '-' => Op::Sub,
            '*' => Op::Mul,
            '/' => Op::Div,
            '^' => Op::Pow,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Number(f64),
    Variable,
    Function(UnaryOp),
    Operator(Op),
    Neg,
    LParen,
    RParen,
    /// Identity marker `•` that tags an output in a concatenated vector stream.
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    /// Byte offset in the source text.
    pub pos: usize,
}

impl Token {
    fn new(kind: TokenKind, lexeme: impl Into<String>, pos: usize) -> Self {
        Token { kind, lexeme: lexeme.into(), pos }
    }

    pub fn is_operand(&self) -> bool {
        matches!(self.kind, TokenKind::Number(_) | TokenKind::Variable)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lexeme)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assoc {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpInfo {
    pub precedence: u8,
    pub assoc: Assoc,
    pub arity: u8,
}

/// Operator table: `^` (right) > `neg` > `* /` > `+ -`.
///
/// `+ - /` are left-associative; `*` chains group to the right
/// (`3*y*c` becomes `3 y c * *`), which is equivalent because `*` is associative.
pub fn op_info(kind: &TokenKind) -> Option<OpInfo> {
    let (precedence, assoc, arity) = match kind {
        TokenKind::Operator(Op::Add | Op::Sub) => (1, Assoc::Left, 2),
        // `*` is associative, so chains of it may group to the right
        TokenKind::Operator(Op::Mul) => (2, Assoc::Right, 2),
        TokenKind::Operator(Op::Div) => (2, Assoc::Left, 2),
        TokenKind::Neg => (3, Assoc::Right, 1),
        TokenKind::Operator(Op::Pow) => (4, Assoc::Right, 2),
        _ => return None,
    };
    Some(OpInfo { precedence, assoc, arity })
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens: Vec<Token> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = source[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i == digits_start {
                    // `2e` / `2exp(x)`: only malformed if no identifier follows
                    let rest_ident = i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_');
                    if rest_ident || i == save + 1 && i < bytes.len() && bytes[save + 1].is_ascii_alphabetic() {
                        i = save;
                    } else {
                        return Err(ParseError::MalformedNumber { lexeme: source[start..i].to_string(), pos: start });
                    }
                }
            }
            let lexeme = &source[start..i];
            let value: f64 = lexeme.parse().map_err(|_| ParseError::MalformedNumber { lexeme: lexeme.to_string(), pos: start })?;
            if !value.is_finite() {
                return Err(ParseError::MalformedNumber { lexeme: lexeme.to_string(), pos: start });
            }
            tokens.push(Token::new(TokenKind::Number(value), lexeme, start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let name = &source[start..i];
            let next_is_paren = source[i..].trim_start().starts_with('(');
            match (UnaryOp::from_name(name), next_is_paren) {
                (Some(op), true) => tokens.push(Token::new(TokenKind::Function(op), name, start)),
                (Some(_), false) => return Err(ParseError::ReservedName { name: name.to_string(), pos: start }),
                (None, true) => return Err(ParseError::UnknownFunction { name: name.to_string(), pos: start }),
                (None, false) => tokens.push(Token::new(TokenKind::Variable, name, start)),
            }
            continue;
        }
        let kind = match c {
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            '-' if unary_context(tokens.last()) => TokenKind::Neg,
            _ => match Op::from_char(c) {
                Some(op) => TokenKind::Operator(op),
                None => return Err(ParseError::UnknownChar { ch: c, pos: i }),
            },
        };
        let lexeme = if kind == TokenKind::Neg { "neg".to_string() } else { c.to_string() };
        tokens.push(Token::new(kind, lexeme, i));
        i += c.len_utf8();
    }
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    Ok(tokens)
}

fn unary_context(prev: Option<&Token>) -> bool {
    match prev {
        None => true,
        Some(t) => matches!(t.kind, TokenKind::Operator(_) | TokenKind::Neg | TokenKind::LParen),
    }
}

/// Token stream in postfix order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RpnExpr {
    pub tokens: Vec<Token>,
}

impl RpnExpr {
    pub fn new(tokens: Vec<Token>) -> Self {
        RpnExpr { tokens }
    }

    /// Parses an infix source string straight to postfix.
    pub fn from_infix(source: &str) -> Result<Self, ParseError> {
        to_rpn(&tokenize(source)?)
    }

    /// Reads whitespace-separated postfix text such as `x sin x sin 2 ^ +`.
    ///
    /// `-` is always binary here; prefix negation is spelled `neg`.
    pub fn parse_postfix(text: &str) -> Result<Self, ParseError> {
        let mut tokens = Vec::new();
        let mut pos = 0;
        for word in text.split_whitespace() {
            let kind = match word {
                "neg" => TokenKind::Neg,
                "•" | "out" => TokenKind::Output,
                "×" => TokenKind::Operator(Op::Mul),
                w if w.len() == 1 && Op::from_char(w.chars().next().unwrap()).is_some() => {
                    TokenKind::Operator(Op::from_char(w.chars().next().unwrap()).unwrap())
                }
                w => {
                    if let Some(op) = UnaryOp::from_name(w) {
                        TokenKind::Function(op)
                    } else if let Ok(v) = w.parse::<f64>() {
                        TokenKind::Number(v)
                    } else if w.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                        && w.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    {
                        TokenKind::Variable
                    } else {
                        return Err(ParseError::UnknownToken(w.to_string()));
                    }
                }
            };
            let lexeme = if word == "×" { "*" } else { word };
            tokens.push(Token::new(kind, lexeme, pos));
            pos += word.len() + 1;
        }
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        Ok(RpnExpr { tokens })
    }

    /// Distinct variable names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for t in &self.tokens {
            if t.kind == TokenKind::Variable && !seen.iter().any(|s| s == &t.lexeme) {
                seen.push(t.lexeme.clone());
            }
        }
        seen
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for RpnExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> = self.tokens.iter().map(|t| t.lexeme.as_str()).collect();
        f.write_str(&words.join(" "))
    }
}

/// Shunting-yard conversion of an infix token stream.
pub fn to_rpn(tokens: &[Token]) -> Result<RpnExpr, ParseError> {
    let mut output: Vec<Token> = Vec::with_capacity(tokens.len());
    let mut stack: Vec<Token> = Vec::new();
    let mut expect_operand = true;
    for (idx, tok) in tokens.iter().enumerate() {
        match &tok.kind {
            TokenKind::Number(_) | TokenKind::Variable => {
                if !expect_operand {
                    return Err(ParseError::UnexpectedOperand { pos: tok.pos });
                }
                output.push(tok.clone());
                expect_operand = false;
            }
            TokenKind::Function(_) => {
                if !expect_operand {
                    return Err(ParseError::UnexpectedOperand { pos: tok.pos });
                }
                if !matches!(tokens.get(idx + 1).map(|t| &t.kind), Some(TokenKind::LParen)) {
                    return Err(ParseError::MissingOperand { pos: tok.pos });
                }
                stack.push(tok.clone());
            }
            TokenKind::Neg => {
                if !expect_operand {
                    return Err(ParseError::MissingOperand { pos: tok.pos });
                }
                // prefix operators never pop: nothing to their left belongs to them
                stack.push(tok.clone());
            }
            TokenKind::Operator(_) => {
                if expect_operand {
                    return Err(ParseError::MissingOperand { pos: tok.pos });
                }
                let info = op_info(&tok.kind).expect("operator");
                while let Some(top) = stack.last() {
                    let Some(top_info) = op_info(&top.kind) else { break };
                    // a pending left-associative operator of equal precedence
                    // always completes first, so `a/b*c` stays `(a/b)*c`
                    let pops = top_info.precedence > info.precedence
                        || (top_info.precedence == info.precedence && (info.assoc == Assoc::Left || top_info.assoc == Assoc::Left));
                    if !pops {
                        break;
                    }
                    output.push(stack.pop().expect("non-empty"));
                }
                stack.push(tok.clone());
                expect_operand = true;
            }
            TokenKind::LParen => {
                if !expect_operand {
                    return Err(ParseError::UnexpectedOperand { pos: tok.pos });
                }
                stack.push(tok.clone());
            }
            TokenKind::RParen => {
                if expect_operand {
                    return Err(ParseError::MissingOperand { pos: tok.pos });
                }
                loop {
                    match stack.pop() {
                        None => return Err(ParseError::MismatchedParen { pos: tok.pos }),
                        Some(t) if t.kind == TokenKind::LParen => break,
                        Some(t) => output.push(t),
                    }
                }
                if matches!(stack.last().map(|t| &t.kind), Some(TokenKind::Function(_))) {
                    output.push(stack.pop().expect("function"));
                }
                expect_operand = false;
            }
            TokenKind::Output => output.push(tok.clone()),
        }
    }
    if expect_operand {
        let pos = tokens.last().map(|t| t.pos).unwrap_or(0);
        return Err(ParseError::MissingOperand { pos });
    }
    while let Some(t) = stack.pop() {
        if t.kind == TokenKind::LParen {
            return Err(ParseError::MismatchedParen { pos: t.pos });
        }
        output.push(t);
    }
    Ok(RpnExpr { tokens: output })
}

pub(crate) fn apply_op(op: Op, a: f64, b: f64) -> Result<f64, EvalError> {
    match op {
        Op::Add => Ok(a + b),
        Op::Sub => Ok(a - b),
        Op::Mul => BinaryOp::Mul.eval(a, b),
        Op::Div => BinaryOp::Div.eval(a, b),
        Op::Pow => BinaryOp::Pow.eval(a, b),
    }
}

/// Stack evaluation of a postfix stream.
pub fn eval_rpn(rpn: &RpnExpr, assignment: &HashMap<String, f64>) -> Result<f64, RpnError> {
    let mut stack: Vec<f64> = Vec::new();
    for (at, tok) in rpn.tokens.iter().enumerate() {
        let underflow = || RpnError::StackUnderflow { at, lexeme: tok.lexeme.clone() };
        match &tok.kind {
            TokenKind::Number(v) => stack.push(*v),
            TokenKind::Variable => {
                let v = assignment.get(&tok.lexeme).ok_or_else(|| RpnError::Unassigned(tok.lexeme.clone()))?;
                stack.push(*v);
            }
            TokenKind::Function(op) => {
                let a = stack.pop().ok_or_else(underflow)?;
                stack.push(op.eval(a)?);
            }
            TokenKind::Neg => {
                let a = stack.pop().ok_or_else(underflow)?;
                stack.push(-a);
            }
            TokenKind::Operator(op) => {
                let b = stack.pop().ok_or_else(underflow)?;
                let a = stack.pop().ok_or_else(underflow)?;
                stack.push(apply_op(*op, a, b)?);
            }
            TokenKind::Output => {
                if stack.is_empty() {
                    return Err(underflow());
                }
            }
            TokenKind::LParen | TokenKind::RParen => return Err(underflow()),
        }
    }
    match stack.len() {
        1 => Ok(stack[0]),
        0 => Err(RpnError::Leftover(0)),
        n => Err(RpnError::Leftover(n)),
    }
}

/// Lists the grammar's function names (for help text).
pub fn function_names() -> &'static [&'static str] {
    &GRAMMAR_FUNCTIONS
}
