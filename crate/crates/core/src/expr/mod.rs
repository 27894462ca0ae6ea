//! Scalar expressions over the state coordinates `x1..xn`.
//!
//! Mode vector fields are written textually in configuration files, one
//! expression per state coordinate. This module parses them into an
//! immutable [`Expr`] tree and evaluates it in double precision. Domain
//! failures (division by zero, `0^negative`, square roots of negative
//! numbers, non-finite results) are reported as [`EvalError`]s, never as a
//! silent `NaN`.

mod parse;

use std::fmt;

use thiserror::Error;

pub use parse::{parse_expression, ParseError, ParseErrorKind, MAX_NESTING};

/// Unary operators and one-argument functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl UnaryOp {
    /// Function-call name, `None` for prefix negation.
    pub fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Sqrt => Some("sqrt"),
            UnaryOp::Abs => Some("abs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Functions taking two or more arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NaryOp {
    Max,
    Min,
}

impl NaryOp {
    pub fn function_name(self) -> &'static str {
        match self {
            NaryOp::Max => "max",
            NaryOp::Min => "min",
        }
    }
}

/// Expression tree. Variables are positional and 1-based: `Var(1)` is `x1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Nary(NaryOp, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("zero raised to a negative power in `{0}`")]
    ZeroToNegativePower(String),
    #[error("negative base raised to a non-integer power in `{0}`")]
    NegativeBaseFractionalPower(String),
    #[error("square root of a negative number in `{0}`")]
    SqrtOfNegative(String),
    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),
    #[error("variable x{index} is out of range for a point of dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Self {
        Expr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// True when the subtree references no state variable.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            Expr::Unary(_, a) => a.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Nary(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    /// Largest variable index referenced, 0 for a constant expression.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => *i,
            Expr::Unary(_, a) => a.max_variable(),
            Expr::Binary(_, a, b) => a.max_variable().max(b.max_variable()),
            Expr::Nary(_, args) => args.iter().map(Expr::max_variable).max().unwrap_or(0),
        }
    }

    /// Evaluates the expression at `x`, where `x[i - 1]` is the value of `xi`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => {
                if *i == 0 || *i > x.len() {
                    return Err(EvalError::VariableOutOfRange { index: *i, dim: x.len() });
                }
                x[*i - 1]
            }
            Expr::Unary(op, a) => {
                let v = a.eval(x)?;
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Abs => v.abs(),
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtOfNegative(self.to_string()));
                        }
                        v.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let u = a.eval(x)?;
                let v = b.eval(x)?;
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => {
                        if v == 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        u / v
                    }
                    BinaryOp::Pow => power(u, v).ok_or_else(|| {
                        if u == 0.0 {
                            EvalError::ZeroToNegativePower(self.to_string())
                        } else {
                            EvalError::NegativeBaseFractionalPower(self.to_string())
                        }
                    })?,
                }
            }
            Expr::Nary(op, args) => {
                let Some((first, rest)) = args.split_first() else {
                    return Err(EvalError::NonFinite(self.to_string()));
                };
                let mut acc = first.eval(x)?;
                for arg in rest {
                    let v = arg.eval(x)?;
                    acc = match op {
                        NaryOp::Max => acc.max(v),
                        NaryOp::Min => acc.min(v),
                    };
                }
                acc
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }
}

fn power(base: f64, exponent: f64) -> Option<f64> {
    if base == 0.0 && exponent < 0.0 {
        return None;
    }
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        return Some(base.powi(exponent as i32));
    }
    if base < 0.0 {
        return None;
    }
    Some(base.powf(exponent))
}

// Binding strengths used by the printer; they mirror the parser's grammar.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if c.is_sign_negative() => PREC_UNARY,
        Expr::Const(_) | Expr::Var(_) | Expr::Nary(..) => PREC_ATOM,
        Expr::Unary(UnaryOp::Neg, _) => PREC_UNARY,
        Expr::Unary(..) => PREC_ATOM,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
        Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
    }
}

fn write_prec(e: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if precedence(e) < min {
        f.write_str("(")?;
        write_expr(e, f)?;
        f.write_str(")")
    } else {
        write_expr(e, f)
    }
}

fn write_exponent(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Unary(UnaryOp::Neg, a) => {
            f.write_str("-")?;
            write_exponent(a, f)
        }
        _ => write_prec(e, PREC_POW, f),
    }
}

fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Const(c) => write!(f, "{c:?}"),
        Expr::Var(i) => write!(f, "x{i}"),
        Expr::Unary(UnaryOp::Neg, a) => {
            f.write_str("-")?;
            write_prec(a, PREC_UNARY, f)
        }
        Expr::Unary(op, a) => {
            write!(f, "{}(", op.function_name().unwrap_or_default())?;
            write_expr(a, f)?;
            f.write_str(")")
        }
        Expr::Binary(BinaryOp::Pow, a, b) => {
            write_prec(a, PREC_ATOM, f)?;
            f.write_str("^")?;
            write_exponent(b, f)
        }
        Expr::Binary(op, a, b) => {
            let level = precedence(e);
            write_prec(a, level, f)?;
            write!(f, " {} ", op.symbol())?;
            write_prec(b, level + 1, f)
        }
        Expr::Nary(op, args) => {
            write!(f, "{}(", op.function_name())?;
            for (k, arg) in args.iter().enumerate() {
                if k > 0 {
                    f.write_str(", ")?;
                }
                write_expr(arg, f)?;
            }
            f.write_str(")")
        }
    }
}

/// Prints in the parser's surface syntax. For trees produced by the parser,
/// re-parsing the output gives back an identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f)
    }
}

/// Error from evaluating one component of a vector field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("component {component}: {source}")]
pub struct FieldError {
    /// 1-based component index.
    pub component: usize,
    #[source]
    pub source: EvalError,
}

/// An `n`-dimensional vector field, one expression per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }

    /// Parses one expression per component against dimension `components.len()`.
    pub fn parse<S: AsRef<str>>(components: &[S]) -> Result<Self, (usize, ParseError)> {
        let n = components.len();
        components
            .iter()
            .enumerate()
            .map(|(k, src)| parse_expression(src.as_ref(), n).map_err(|e| (k + 1, e)))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }

    /// The identically zero field in dimension `n`.
    pub fn zero(n: usize) -> Self {
        Self::new(vec![Expr::Const(0.0); n])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Componentwise evaluation into a caller-provided buffer.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        debug_assert_eq!(out.len(), self.components.len());
        for (k, (expr, slot)) in self.components.iter().zip(out.iter_mut()).enumerate() {
            *slot = expr.eval(x).map_err(|source| FieldError { component: k + 1, source })?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; self.components.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}
