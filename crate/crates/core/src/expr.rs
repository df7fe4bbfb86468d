//! Algebraic expression states: parsing, canonical rendering, structural comparison.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := INTEGER | VARIABLE | '(' expr ')'
//! ```
//!
//! Variables are single lowercase letters. Adjacent operands (implicit
//! multiplication, multi-letter names) are rejected. Subtraction is stored as
//! an `Add` child wrapped in `Neg`, and operand order is never changed.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expression {
    Integer(BigInt),
    Variable(char),
    Add(Vec<Expression>),
    Mul(Vec<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, Box<Expression>),
    Neg(Box<Expression>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at position {position}: {message}")]
pub struct SyntaxError {
    pub position: usize,
    pub message: String,
}

impl SyntaxError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

impl Expression {
    pub fn int(v: i64) -> Self {
        Expression::Integer(BigInt::from(v))
    }

    pub fn var(name: char) -> Self {
        Expression::Variable(name)
    }

    pub fn neg(e: Expression) -> Self {
        Expression::Neg(Box::new(e))
    }

    pub fn div(n: Expression, d: Expression) -> Self {
        Expression::Div(Box::new(n), Box::new(d))
    }

    pub fn pow(b: Expression, e: Expression) -> Self {
        Expression::Pow(Box::new(b), Box::new(e))
    }

    /// Signed value of an integer literal, including the `Neg(Integer)` form.
    pub fn as_literal(&self) -> Option<BigInt> {
        match self {
            Expression::Integer(v) => Some(v.clone()),
            Expression::Neg(inner) => match inner.as_ref() {
                Expression::Integer(v) => Some(-v.clone()),
                _ => None,
            },
            _ => None,
        }
    }

    /// Integer literal in canonical form: negatives become `Neg(Integer(|v|))`.
    pub fn literal(v: BigInt) -> Self {
        if v.is_negative() {
            Expression::neg(Expression::Integer(-v))
        } else {
            Expression::Integer(v)
        }
    }

    pub fn children(&self) -> Vec<&Expression> {
        match self {
            Expression::Integer(_) | Expression::Variable(_) => Vec::new(),
            Expression::Add(c) | Expression::Mul(c) => c.iter().collect(),
            Expression::Div(a, b) | Expression::Pow(a, b) => vec![a, b],
            Expression::Neg(a) => vec![a],
        }
    }

    pub fn child_mut(&mut self, index: usize) -> Option<&mut Expression> {
        match self {
            Expression::Integer(_) | Expression::Variable(_) => None,
            Expression::Add(c) | Expression::Mul(c) => c.get_mut(index),
            Expression::Div(a, b) | Expression::Pow(a, b) => match index {
                0 => Some(a),
                1 => Some(b),
                _ => None,
            },
            Expression::Neg(a) => (index == 0).then_some(a.as_mut()),
        }
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&Expression> {
        let mut node = self;
        for &i in path {
            node = *node.children().get(i)?;
        }
        Some(node)
    }

    pub fn at_path_mut(&mut self, path: &[usize]) -> Option<&mut Expression> {
        let mut node = self;
        for &i in path {
            node = node.child_mut(i)?;
        }
        Some(node)
    }

    /// Maximum root-to-leaf node count (a leaf alone has depth 1).
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Flattens nested `Add`/`Mul`, collapses single-child sums and products,
    /// and rewrites negative integer literals as `Neg(Integer)`.
    pub fn canonical(&self) -> Expression {
        match self {
            Expression::Integer(v) => Expression::literal(v.clone()),
            Expression::Variable(c) => Expression::Variable(*c),
            Expression::Add(children) => flatten(children, true),
            Expression::Mul(children) => flatten(children, false),
            Expression::Div(a, b) => Expression::div(a.canonical(), b.canonical()),
            Expression::Pow(a, b) => Expression::pow(a.canonical(), b.canonical()),
            Expression::Neg(a) => Expression::neg(a.canonical()),
        }
    }

    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        render(&self.canonical(), &mut out);
        out
    }
}

fn flatten(children: &[Expression], add: bool) -> Expression {
    let mut out = Vec::with_capacity(children.len());
    for c in children {
        match (c.canonical(), add) {
            (Expression::Add(inner), true) | (Expression::Mul(inner), false) => out.extend(inner),
            (other, _) => out.push(other),
        }
    }
    match out.len() {
        0 => Expression::int(if add { 0 } else { 1 }),
        1 => out.pop().unwrap(),
        _ if add => Expression::Add(out),
        _ => Expression::Mul(out),
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

pub fn parse(text: &str) -> Result<Expression, SyntaxError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(SyntaxError::new(0, "empty expression"));
    }
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(SyntaxError::new(t.offset, format!("unexpected {}", t.kind.describe())));
    }
    Ok(e.canonical())
}

pub fn canonical_string(e: &Expression) -> String {
    e.canonical_string()
}

pub fn structurally_equal(a: &Expression, b: &Expression) -> bool {
    a == b
}

/// Parses and re-renders a state string.
pub fn canonicalize(text: &str) -> Result<String, SyntaxError> {
    parse(text).map(|e| e.canonical_string())
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Int(BigInt),
    Var(char),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Int(v) => format!("integer {v}"),
            TokenKind::Var(c) => format!("variable '{c}'"),
            TokenKind::Op(c) => format!("operator '{c}'"),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let kind = match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = BigInt::parse_bytes(&bytes[start..i], 10).expect("ascii digits");
                out.push(Token {
                    kind: TokenKind::Int(v),
                    offset: start,
                });
                continue;
            }
            b'a'..=b'z' => TokenKind::Var(b as char),
            b'+' | b'-' | b'*' | b'/' | b'^' => TokenKind::Op(b as char),
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(SyntaxError::new(i, format!("unexpected character {ch:?}")));
            }
        };
        out.push(Token { kind, offset: i });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expr(&mut self) -> Result<Expression, SyntaxError> {
        let mut terms = vec![self.term()?];
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let t = self.term()?;
            terms.push(if op == '-' { Expression::neg(t) } else { t });
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expression::Add(terms)
        })
    }

    fn term(&mut self) -> Result<Expression, SyntaxError> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == '*' {
                match acc {
                    Expression::Mul(mut factors) => {
                        factors.push(rhs);
                        Expression::Mul(factors)
                    }
                    other => Expression::Mul(vec![other, rhs]),
                }
            } else {
                Expression::div(acc, rhs)
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expression, SyntaxError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Expression::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, SyntaxError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expression::pow(base, exp));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expression, SyntaxError> {
        let offset = self.offset();
        let Some(tok) = self.peek().cloned() else {
            return Err(SyntaxError::new(offset, "unexpected end of input"));
        };
        self.pos += 1;
        let e = match tok.kind {
            TokenKind::Int(v) => Expression::Integer(v),
            TokenKind::Var(c) => Expression::Variable(c),
            TokenKind::LParen => {
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token {
                        kind: TokenKind::RParen,
                        ..
                    }) => self.pos += 1,
                    _ => return Err(SyntaxError::new(self.offset(), "expected ')'")),
                }
                inner
            }
            other => {
                return Err(SyntaxError::new(offset, format!("unexpected {}", other.describe())));
            }
        };
        // Two operands in a row: implicit multiplication or a multi-letter name.
        if let Some(next) = self.peek() {
            if matches!(
                next.kind,
                TokenKind::Int(_) | TokenKind::Var(_) | TokenKind::LParen
            ) {
                return Err(SyntaxError::new(
                    next.offset,
                    "adjacent operands (implicit multiplication is not supported)",
                ));
            }
        }
        Ok(e)
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expression) -> u8 {
    match e {
        Expression::Add(_) => PREC_ADD,
        Expression::Mul(_) | Expression::Div(..) => PREC_MUL,
        Expression::Neg(_) => PREC_NEG,
        Expression::Pow(..) => PREC_POW,
        Expression::Integer(v) if v.is_negative() => PREC_NEG,
        Expression::Integer(_) | Expression::Variable(_) => PREC_ATOM,
    }
}

fn render_wrapped(e: &Expression, parens: bool, out: &mut String) {
    if parens {
        out.push('(');
        render(e, out);
        out.push(')');
    } else {
        render(e, out);
    }
}

fn render(e: &Expression, out: &mut String) {
    match e {
        Expression::Integer(v) => {
            if v.is_zero() {
                out.push('0');
            } else {
                out.push_str(&v.to_string());
            }
        }
        Expression::Variable(c) => out.push(*c),
        Expression::Add(children) => {
            for (i, c) in children.iter().enumerate() {
                match c {
                    Expression::Neg(inner) if i > 0 => {
                        out.push('-');
                        render_wrapped(inner, precedence(inner) <= PREC_ADD, out);
                    }
                    _ => {
                        if i > 0 {
                            out.push('+');
                        }
                        render_wrapped(c, precedence(c) <= PREC_ADD, out);
                    }
                }
            }
        }
        Expression::Mul(children) => {
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    out.push('*');
                }
                let p = precedence(c);
                let parens = if i == 0 { p < PREC_MUL } else { p <= PREC_MUL };
                render_wrapped(c, parens, out);
            }
        }
        Expression::Div(n, d) => {
            render_wrapped(n, precedence(n) < PREC_MUL, out);
            out.push('/');
            render_wrapped(d, precedence(d) <= PREC_MUL, out);
        }
        Expression::Pow(b, x) => {
            render_wrapped(b, precedence(b) <= PREC_POW, out);
            out.push('^');
            render_wrapped(x, precedence(x) < PREC_NEG, out);
        }
        Expression::Neg(inner) => {
            out.push('-');
            render_wrapped(inner, precedence(inner) < PREC_NEG, out);
        }
    }
}

/// Lexical token count of the canonical rendering (parentheses included).
pub fn token_count(e: &Expression) -> usize {
    let s = e.canonical_string();
    tokenize(&s).map(|t| t.len()).unwrap_or(0)
}

/// Counts of each operator token `+ - * / ^ ( )` in the canonical rendering.
pub fn operator_token_histogram(e: &Expression) -> [usize; 7] {
    let mut hist = [0usize; 7];
    for ch in e.canonical_string().chars() {
        let slot = match ch {
            '+' => 0,
            '-' => 1,
            '*' => 2,
            '/' => 3,
            '^' => 4,
            '(' => 5,
            ')' => 6,
            _ => continue,
        };
        hist[slot] += 1;
    }
    hist
}
