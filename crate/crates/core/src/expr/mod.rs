//! A small expression language for model mean, scale, and log-prior terms.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' expo)*
//! expo    := '-' expo | atom
//! atom    := number | ident | ident '(' sum ')' | '(' sum ')'
//! ```
//!
//! All binary operators associate to the left. Function names are `sqrt`, `log`,
//! `exp`, `abs` and `neg`.

mod eval;
mod parse;

use std::fmt;

use thiserror::Error;

pub use eval::ParamEnv;
pub use parse::parse_expr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function '{name}' at offset {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("domain error in '{expr}': {reason}")]
    Domain { expr: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Log,
    Exp,
    Abs,
    Neg,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "neg" => Func::Neg,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Param(String),
    Call(Func, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn param(name: &str) -> Self {
        Expr::Param(name.to_string())
    }

    pub fn call(f: Func, arg: Expr) -> Self {
        Expr::Call(f, Box::new(arg))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Names of all referenced parameters, in first-use order, without duplicates.
    pub fn params(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Num(_) => {}
                Expr::Param(n) => {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Expr::Call(_, a) => walk(a, out),
                Expr::Binary(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Fails with [`ExprError::UnknownParameter`] for the first name not in `declared`.
    pub fn check_params(&self, declared: &[String]) -> Result<(), ExprError> {
        match self.params().into_iter().find(|p| !declared.contains(p)) {
            Some(p) => Err(ExprError::UnknownParameter(p)),
            None => Ok(()),
        }
    }
}

/// Prints a form that parses back to the same tree: binary nodes and negations
/// are parenthesized. Negative literals (which the parser never produces) print
/// as a negated literal.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Param(n) => f.write_str(n),
            Expr::Call(Func::Neg, a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}
