//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := primary ('^' exponent)?
//! exponent := '-' exponent | power
//! primary  := number | 'x' digits | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than prefix minus, so `-x1^2`
//! is `-(x1^2)`. Exponents must not reference state variables.

use std::fmt;

use thiserror::Error;

use super::{BinaryOp, Expr, NaryOp, UnaryOp};

/// Deepest nesting of parentheses, calls and prefix operators accepted, and
/// the tallest expression tree the parser will build.
pub const MAX_NESTING: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    InvalidCharacter(char),
    InvalidNumber(String),
    UnexpectedToken { found: String, expected: &'static str },
    UnexpectedEnd { expected: &'static str },
    UnknownIdentifier(String),
    VariableOutOfRange { index: usize, dim: usize },
    Arity { function: String, expected: &'static str, found: usize },
    NonConstantExponent,
    TooDeep,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Empty => f.write_str("empty expression"),
            ParseErrorKind::InvalidCharacter(c) => write!(f, "invalid character {c:?}"),
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number literal `{s}`"),
            ParseErrorKind::UnexpectedToken { found, expected } => {
                write!(f, "unexpected `{found}`, expected {expected}")
            }
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "unexpected end of input, expected {expected}")
            }
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier `{s}`"),
            ParseErrorKind::VariableOutOfRange { index, dim } => {
                write!(f, "variable x{index} is out of range (dimension {dim})")
            }
            ParseErrorKind::Arity { function, expected, found } => {
                write!(f, "`{function}` takes {expected} argument(s), found {found}")
            }
            ParseErrorKind::NonConstantExponent => f.write_str("exponent must be a constant expression"),
            ParseErrorKind::TooDeep => write!(f, "nesting deeper than {MAX_NESTING}"),
        }
    }
}

/// Parse failure at a byte offset into the source.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(v) => format!("{v}"),
            Token::Ident(s) => s.clone(),
            Token::Plus => "+".into(),
            Token::Minus => "-".into(),
            Token::Star => "*".into(),
            Token::Slash => "/".into(),
            Token::Caret => "^".into(),
            Token::LParen => "(".into(),
            Token::RParen => ")".into(),
            Token::Comma => ",".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let single = match b {
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            b'/' => Some(Token::Slash),
            b'^' => Some(Token::Caret),
            b'(' => Some(Token::LParen),
            b')' => Some(Token::RParen),
            b',' => Some(Token::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            tokens.push((start, tok));
            i += 1;
        } else if b.is_ascii_whitespace() {
            i += 1;
        } else if b.is_ascii_digit() || b == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => tokens.push((start, Token::Number(v))),
                _ => return Err(ParseError { offset: start, kind: ParseErrorKind::InvalidNumber(text.to_string()) }),
            }
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push((start, Token::Ident(src[start..i].to_string())));
        } else {
            let c = src[start..].chars().next().unwrap_or('\u{fffd}');
            return Err(ParseError { offset: start, kind: ParseErrorKind::InvalidCharacter(c) });
        }
    }
    Ok(tokens)
}

/// A subtree together with its height.
type Node = (Expr, usize);

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    dim: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, expected: &'static str) -> ParseError {
        let kind = match self.peek() {
            Some(tok) => ParseErrorKind::UnexpectedToken { found: tok.describe(), expected },
            None => ParseErrorKind::UnexpectedEnd { expected },
        };
        ParseError { offset: self.offset(), kind }
    }

    fn eat(&mut self, tok: &Token) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn descend(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(ParseError { offset: self.offset(), kind: ParseErrorKind::TooDeep });
        }
        Ok(())
    }

    /// Joins two subtrees, refusing to grow the tree past `MAX_NESTING` levels
    /// so evaluation and drop never recurse unboundedly.
    fn join(&self, op: BinaryOp, lhs: Node, rhs: Node) -> Result<Node, ParseError> {
        let height = lhs.1.max(rhs.1) + 1;
        if height > MAX_NESTING {
            return Err(ParseError { offset: self.offset(), kind: ParseErrorKind::TooDeep });
        }
        Ok((Expr::binary(op, lhs.0, rhs.0), height))
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Add,
                Some(Token::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = self.join(op, lhs, rhs)?;
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Mul,
                Some(Token::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = self.join(op, lhs, rhs)?;
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        self.descend()?;
        let e = if self.eat(&Token::Minus) {
            let (a, h) = self.unary()?;
            (Expr::unary(UnaryOp::Neg, a), h + 1)
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if !self.eat(&Token::Caret) {
            return Ok(base);
        }
        let at = self.offset();
        let exponent = self.exponent()?;
        if !exponent.0.is_constant() {
            return Err(ParseError { offset: at, kind: ParseErrorKind::NonConstantExponent });
        }
        self.join(BinaryOp::Pow, base, exponent)
    }

    fn exponent(&mut self) -> Result<Node, ParseError> {
        self.descend()?;
        let e = if self.eat(&Token::Minus) {
            let (a, h) = self.exponent()?;
            (Expr::unary(UnaryOp::Neg, a), h + 1)
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(e)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Token::Number(v)) => {
                self.pos += 1;
                Ok((Expr::Const(v), 1))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                self.descend()?;
                let e = self.expr()?;
                if !self.eat(&Token::RParen) {
                    return Err(self.error("`)`"));
                }
                self.depth -= 1;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if let Some(index) = variable_index(&name) {
                    return match index {
                        Some(i) if (1..=self.dim).contains(&i) => Ok((Expr::Var(i), 1)),
                        other => Err(ParseError {
                            offset,
                            kind: ParseErrorKind::VariableOutOfRange {
                                index: other.unwrap_or(usize::MAX),
                                dim: self.dim,
                            },
                        }),
                    };
                }
                self.call(&name, offset)
            }
            _ => Err(self.error("a number, variable, function call or `(`")),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ParseError> {
        enum Kind {
            Unary(UnaryOp),
            Nary(NaryOp),
        }
        let kind = match name {
            "sin" => Kind::Unary(UnaryOp::Sin),
            "cos" => Kind::Unary(UnaryOp::Cos),
            "exp" => Kind::Unary(UnaryOp::Exp),
            "sqrt" => Kind::Unary(UnaryOp::Sqrt),
            "abs" => Kind::Unary(UnaryOp::Abs),
            "max" => Kind::Nary(NaryOp::Max),
            "min" => Kind::Nary(NaryOp::Min),
            _ => return Err(ParseError { offset, kind: ParseErrorKind::UnknownIdentifier(name.to_string()) }),
        };
        if !self.eat(&Token::LParen) {
            return Err(self.error("`(` after function name"));
        }
        self.descend()?;
        let mut args = vec![self.expr()?];
        while self.eat(&Token::Comma) {
            args.push(self.expr()?);
        }
        if !self.eat(&Token::RParen) {
            return Err(self.error("`,` or `)`"));
        }
        self.depth -= 1;
        let height = args.iter().map(|a| a.1).max().unwrap_or(0) + 1;
        let mut args: Vec<Expr> = args.into_iter().map(|a| a.0).collect();
        match kind {
            Kind::Unary(op) if args.len() == 1 => Ok((Expr::unary(op, args.remove(0)), height)),
            Kind::Nary(op) if args.len() >= 2 => Ok((Expr::Nary(op, args), height)),
            Kind::Unary(_) => Err(ParseError {
                offset,
                kind: ParseErrorKind::Arity { function: name.to_string(), expected: "exactly 1", found: args.len() },
            }),
            Kind::Nary(_) => Err(ParseError {
                offset,
                kind: ParseErrorKind::Arity { function: name.to_string(), expected: "at least 2", found: args.len() },
            }),
        }
    }
}

/// `Some(Some(i))` for `x<i>`, `Some(None)` for `x<digits>` that overflows,
/// `None` when the identifier is not a variable name.
fn variable_index(name: &str) -> Option<Option<usize>> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(digits.parse().ok())
}

/// Parses `src` as an expression over variables `x1..x<dim>`.
pub fn parse_expression(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(ParseError { offset: 0, kind: ParseErrorKind::Empty });
    }
    let mut parser = Parser { tokens, pos: 0, end: src.len(), dim, depth: 0 };
    let (e, _) = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{BinaryOp::*, Expr};

    fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    fn bin(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::binary(op, a, b)
    }

    #[test]
    fn identity() {
        assert_eq!(parse_expression("x1", 2).unwrap(), Expr::Var(1));
    }

    #[test]
    fn polynomial_mode_three_first_component() {
        let got = parse_expression("-x2 - 1.5*x1 - 0.5*x1^3 + 2", 2).unwrap();
        let want = bin(
            Add,
            bin(
                Sub,
                bin(Sub, Expr::unary(UnaryOp::Neg, Expr::Var(2)), bin(Mul, c(1.5), Expr::Var(1))),
                bin(Mul, c(0.5), bin(Pow, Expr::Var(1), c(3.0))),
            ),
            c(2.0),
        );
        assert_eq!(got, want);
    }

    #[test]
    fn max_is_nary() {
        let got = parse_expression("max(0, x1/0.5)", 1).unwrap();
        assert_eq!(got, Expr::Nary(NaryOp::Max, vec![c(0.0), bin(Div, Expr::Var(1), c(0.5))]));
    }

    #[test]
    fn literals() {
        assert_eq!(parse_expression("1.5e-3", 0).unwrap(), c(1.5e-3));
        assert_eq!(parse_expression("2E+2", 0).unwrap(), c(200.0));
        assert_eq!(parse_expression(".25", 0).unwrap(), c(0.25));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expression("1 - 2 - 3", 0).unwrap();
        assert_eq!(e, bin(Sub, bin(Sub, c(1.0), c(2.0)), c(3.0)));
        let e = parse_expression("2^3^2", 0).unwrap();
        assert_eq!(e, bin(Pow, c(2.0), bin(Pow, c(3.0), c(2.0))));
        let e = parse_expression("-2^2", 0).unwrap();
        assert_eq!(e, Expr::unary(UnaryOp::Neg, bin(Pow, c(2.0), c(2.0))));
        let e = parse_expression("1 + 2*3", 0).unwrap();
        assert_eq!(e, bin(Add, c(1.0), bin(Mul, c(2.0), c(3.0))));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = parse_expression("x1 + * 2", 1).unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(matches!(err.kind, ParseErrorKind::UnexpectedToken { .. }));

        let err = parse_expression("(x1 + 2", 1).unwrap_err();
        assert_eq!(err.offset, 7);
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd { expected: "`)`" });

        let err = parse_expression("x1 x2", 2).unwrap_err();
        assert_eq!(err.offset, 3);
    }

    #[test]
    fn identifier_errors() {
        let err = parse_expression("2*y", 1).unwrap_err();
        assert_eq!(err.offset, 2);
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("y".into()));

        let err = parse_expression("x3 + 1", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::VariableOutOfRange { index: 3, dim: 2 });

        let err = parse_expression("x0", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::VariableOutOfRange { index: 0, dim: 2 });
    }

    #[test]
    fn exponent_must_be_constant() {
        let err = parse_expression("x1^x2", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::NonConstantExponent);
        assert_eq!(err.offset, 3);
        assert!(parse_expression("x1^(2*3)", 1).is_ok());
        assert!(parse_expression("x1^-sin(1)", 1).is_ok());
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(parse_expression("max(x1)", 1).unwrap_err().kind, ParseErrorKind::Arity { .. }));
        assert!(matches!(parse_expression("sin(x1, 2)", 1).unwrap_err().kind, ParseErrorKind::Arity { .. }));
    }

    #[test]
    fn bad_input() {
        assert_eq!(parse_expression("   ", 1).unwrap_err().kind, ParseErrorKind::Empty);
        assert!(matches!(parse_expression("1.2.3", 1).unwrap_err().kind, ParseErrorKind::InvalidNumber(_)));
        assert!(matches!(parse_expression("1e999", 1).unwrap_err().kind, ParseErrorKind::InvalidNumber(_)));
        assert!(matches!(parse_expression("x1 # 2", 1).unwrap_err().kind, ParseErrorKind::InvalidCharacter('#')));
    }

    #[test]
    fn deep_nesting_is_rejected() {
        let src = format!("{}x1{}", "(".repeat(10_000), ")".repeat(10_000));
        assert_eq!(parse_expression(&src, 1).unwrap_err().kind, ParseErrorKind::TooDeep);
        let src = format!("{}x1", "-".repeat(10_000));
        assert_eq!(parse_expression(&src, 1).unwrap_err().kind, ParseErrorKind::TooDeep);
        let src = format!("2{}", "^2".repeat(10_000));
        assert_eq!(parse_expression(&src, 1).unwrap_err().kind, ParseErrorKind::TooDeep);
        let src = format!("x1{}", " + 1".repeat(10_000));
        assert_eq!(parse_expression(&src, 1).unwrap_err().kind, ParseErrorKind::TooDeep);
        let src = format!("max(x1{})", ", sin(1)".repeat(10_000));
        assert!(parse_expression(&src, 1).is_ok());
    }
}
