use super::{BinOp, Expr, ExprError, Func};

/// Named parameter values. Lookup is linear; models have a handful of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEnv<'a> {
    names: &'a [String],
    values: &'a [f64],
}

impl<'a> ParamEnv<'a> {
    pub fn new(names: &'a [String], values: &'a [f64]) -> Self {
        assert_eq!(names.len(), values.len(), "one value per parameter name");
        Self { names, values }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize, ExprError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ExprError::UnknownParameter(name.to_string()))
    }
}

fn domain(e: &Expr, reason: impl Into<String>) -> ExprError {
    ExprError::Domain {
        expr: e.to_string(),
        reason: reason.into(),
    }
}

fn apply_func(node: &Expr, f: Func, x: f64) -> Result<f64, ExprError> {
    let v = match f {
        Func::Sqrt | Func::Log if x <= 0.0 => {
            return Err(domain(
                node,
                format!("{} of non-positive value {x}", f.name()),
            ))
        }
        Func::Sqrt => x.sqrt(),
        Func::Log => x.ln(),
        Func::Exp => x.exp(),
        Func::Abs => x.abs(),
        Func::Neg => -x,
    };
    finite(node, v)
}

fn apply_bin(node: &Expr, op: BinOp, a: f64, b: f64) -> Result<f64, ExprError> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div if b == 0.0 => return Err(domain(node, "division by zero")),
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
    };
    finite(node, v)
}

fn finite(node: &Expr, v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(node, format!("result is {v}")))
    }
}

impl Expr {
    /// Evaluates in double precision.
    pub fn eval(&self, env: &ParamEnv<'_>) -> Result<f64, ExprError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Param(n) => Ok(env.values[env.index(n)?]),
            Expr::Call(f, a) => apply_func(self, *f, a.eval(env)?),
            Expr::Binary(op, l, r) => apply_bin(self, *op, l.eval(env)?, r.eval(env)?),
        }
    }

    /// Value and gradient with respect to every parameter of `env` (in `env`
    /// order), by forward-mode propagation. The value is computed exactly as
    /// [`Expr::eval`] computes it.
    pub fn eval_grad(&self, env: &ParamEnv<'_>) -> Result<(f64, Vec<f64>), ExprError> {
        let d = self.dual(env)?;
        Ok((d.v, d.g))
    }

    fn dual(&self, env: &ParamEnv<'_>) -> Result<Dual, ExprError> {
        let n = env.len();
        match self {
            Expr::Num(v) => Ok(Dual::constant(*v, n)),
            Expr::Param(name) => {
                let i = env.index(name)?;
                let mut g = vec![0.0; n];
                g[i] = 1.0;
                Ok(Dual {
                    v: env.values[i],
                    g,
                })
            }
            Expr::Call(f, a) => {
                let a = a.dual(env)?;
                let v = apply_func(self, *f, a.v)?;
                let slope = match f {
                    Func::Sqrt => 0.5 / v,
                    Func::Log => 1.0 / a.v,
                    Func::Exp => v,
                    // derivative of |x| at 0 taken as 0
                    Func::Abs => {
                        if a.v > 0.0 {
                            1.0
                        } else if a.v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Neg => -1.0,
                };
                Ok(Dual {
                    v,
                    g: a.g.iter().map(|x| slope * x).collect(),
                })
            }
            Expr::Binary(op, l, r) => {
                let a = l.dual(env)?;
                let b = r.dual(env)?;
                let v = apply_bin(self, *op, a.v, b.v)?;
                let g: Vec<f64> = match op {
                    BinOp::Add => a.g.iter().zip(&b.g).map(|(x, y)| x + y).collect(),
                    BinOp::Sub => a.g.iter().zip(&b.g).map(|(x, y)| x - y).collect(),
                    BinOp::Mul => {
                        a.g.iter()
                            .zip(&b.g)
                            .map(|(x, y)| x * b.v + a.v * y)
                            .collect()
                    }
                    BinOp::Div => {
                        a.g.iter()
                            .zip(&b.g)
                            .map(|(x, y)| (x - v * y) / b.v)
                            .collect()
                    }
                    BinOp::Pow => {
                        let base_slope = if a.g.iter().any(|&x| x != 0.0) {
                            b.v * a.v.powf(b.v - 1.0)
                        } else {
                            0.0
                        };
                        let expo_slope = if b.g.iter().any(|&y| y != 0.0) {
                            if a.v <= 0.0 {
                                return Err(domain(
                                    self,
                                    "variable exponent needs a positive base",
                                ));
                            }
                            v * a.v.ln()
                        } else {
                            0.0
                        };
                        a.g.iter()
                            .zip(&b.g)
                            .map(|(x, y)| base_slope * x + expo_slope * y)
                            .collect()
                    }
                };
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(domain(self, "derivative is not finite"));
                }
                Ok(Dual { v, g })
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Dual {
    v: f64,
    g: Vec<f64>,
}

impl Dual {
    fn constant(v: f64, n: usize) -> Self {
        Self { v, g: vec![0.0; n] }
    }
}
