//! Maximization of the log-posterior (as minimization of `-2L`) with L-BFGS,
//! followed by the post-hoc checks that decide whether a candidate is a maximum.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::posterior::{PosteriorContext, PosteriorError};

/// Something to minimize. `PosteriorContext` minimizes `-2L`.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Value and gradient, or an error for points outside the domain.
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), PosteriorError>;
    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, PosteriorError>;
    fn lower_bounds(&self) -> Vec<Option<f64>> {
        vec![None; self.dim()]
    }
    fn upper_bounds(&self) -> Vec<Option<f64>> {
        vec![None; self.dim()]
    }
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

impl Objective for PosteriorContext {
    fn dim(&self) -> usize {
        PosteriorContext::dim(self)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), PosteriorError> {
        self.neg2l_grad(x)
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, PosteriorError> {
        self.hessian_neg2l(x)
    }

    fn lower_bounds(&self) -> Vec<Option<f64>> {
        self.model().lower_bounds()
    }

    fn upper_bounds(&self) -> Vec<Option<f64>> {
        self.model().upper_bounds()
    }

    fn param_names(&self) -> Vec<String> {
        self.model().names().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid optimizer configuration: {0}")]
pub struct OptConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the sup-norm of the gradient of `-2L` is at most this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub grad_check: f64,
    pub eig_ratio_min: f64,
    pub lvar_max: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-9,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            grad_check: 1e-5,
            eig_ratio_min: 1e-5,
            lvar_max: 1e8,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), OptConfigError> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("armijo_c", self.armijo_c),
            ("backtrack", self.backtrack),
            ("grad_check", self.grad_check),
            ("eig_ratio_min", self.eig_ratio_min),
            ("lvar_max", self.lvar_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.armijo_c >= 1.0 || self.backtrack >= 1.0 {
            return Err(OptConfigError(
                "armijo_c and backtrack must be below 1".into(),
            ));
        }
        if self.memory == 0 || self.max_iters == 0 || self.max_backtracks == 0 {
            return Err(OptConfigError(
                "memory, max_iters and max_backtracks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxResult {
    pub names: Vec<String>,
    #[serde(with = "crate::floats::vec")]
    pub omega_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `-2L` at `omega_hat`.
    #[serde(with = "crate::floats")]
    pub neg2l: f64,
    #[serde(with = "crate::floats")]
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// `-2L` after each accepted step, starting with the initial point.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Bounds {
    lo: Vec<Option<f64>>,
    hi: Vec<Option<f64>>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            if let Some(l) = lo {
                *xi = xi.max(*l);
            }
            if let Some(h) = hi {
                *xi = xi.min(*h);
            }
        }
    }
}

struct History {
    cap: usize,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

impl History {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            s: Vec::new(),
            y: Vec::new(),
            rho: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        // skip pairs that would break positive definiteness
        let floor = 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt();
        if sy.is_nan() || sy <= floor {
            return;
        }
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
        self.rho.push(1.0 / sy);
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let k = self.s.len();
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let last = k - 1;
            let gamma = dot(&self.s[last], &self.y[last]) / dot(&self.y[last], &self.y[last]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, a) in alpha.iter().enumerate() {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (a - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

struct Step {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Backtracking along `x + alpha d` projected onto the box. A trial is accepted
/// when it satisfies the Armijo condition, or when it does not increase `f` and
/// the directional derivative has flattened (approximate Wolfe), which keeps
/// progress possible once `f` differences drop to rounding level.
#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    alpha0: f64,
    bounds: &Bounds,
    cfg: &OptConfig,
) -> Option<Step> {
    let mut alpha = alpha0;
    for _ in 0..=cfg.max_backtracks {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        bounds.project(&mut xt);
        let p: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
        let slope = dot(g, &p);
        if slope >= 0.0 || p.iter().all(|v| *v == 0.0) {
            alpha *= cfg.backtrack;
            continue;
        }
        if let Ok((ft, gt)) = obj.value_grad(&xt) {
            if ft <= f + cfg.armijo_c * slope {
                return Some(Step {
                    x: xt,
                    f: ft,
                    g: gt,
                });
            }
            let slope_t = dot(&gt, &p);
            if ft <= f && slope_t >= 0.9 * slope && slope_t <= -0.8 * slope {
                return Some(Step {
                    x: xt,
                    f: ft,
                    g: gt,
                });
            }
        }
        alpha *= cfg.backtrack;
    }
    None
}

/// Minimizes the objective from `x0` (projected onto the bounds). Never fails:
/// problems are reported through `converged = false` and `message`.
pub fn minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], cfg: &OptConfig) -> MaxResult {
    let names = obj.param_names();
    let bounds = Bounds {
        lo: obj.lower_bounds(),
        hi: obj.upper_bounds(),
    };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let fail = |x: Vec<f64>, msg: String| MaxResult {
        names: names.clone(),
        omega_hat: x,
        converged: false,
        iterations: 0,
        neg2l: f64::NAN,
        grad_norm: f64::NAN,
        message: Some(msg),
        trace: Vec::new(),
    };
    if x.len() != obj.dim() {
        return fail(
            x.clone(),
            format!("expected {} start values, got {}", obj.dim(), x.len()),
        );
    }
    let (mut f, mut g) = match obj.value_grad(&x) {
        Ok(v) => v,
        Err(e) => return fail(x, format!("infeasible start point: {e}")),
    };
    let mut trace = vec![f];
    let mut hist = History::new(cfg.memory);
    let mut iterations = 0;
    let mut message = None;
    while sup_norm(&g) > cfg.grad_tol {
        if iterations == cfg.max_iters {
            message = Some(format!("iteration limit {} reached", cfg.max_iters));
            break;
        }
        let mut d = hist.direction(&g);
        let mut fresh = hist.s.is_empty();
        if dot(&d, &g) >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            fresh = true;
        }
        let alpha0 = if fresh {
            (1.0 / sup_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut step = line_search(obj, &x, f, &g, &d, alpha0, &bounds, cfg);
        if step.is_none() && !fresh {
            // retry once with steepest descent before giving up
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            step = line_search(
                obj,
                &x,
                f,
                &g,
                &d,
                (1.0 / sup_norm(&g)).min(1.0),
                &bounds,
                cfg,
            );
        }
        let Some(step) = step else {
            message = Some("line search found no acceptable step".into());
            break;
        };
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        x = step.x;
        f = step.f;
        g = step.g;
        trace.push(f);
        iterations += 1;
    }
    let grad_norm = sup_norm(&g);
    MaxResult {
        names,
        omega_hat: x,
        converged: grad_norm <= cfg.grad_tol,
        iterations,
        neg2l: f,
        grad_norm,
        message,
        trace,
    }
}

/// Maximizes `L` for the context, starting from `x0`.
pub fn maximize(ctx: &PosteriorContext, x0: &[f64], cfg: &OptConfig) -> MaxResult {
    minimize(ctx, x0, cfg)
}

/// Result of the four checks applied to a candidate maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub grad_ok: bool,
    pub hessian_pd: bool,
    pub eig_ratio_ok: bool,
    pub lvar_finite: bool,
    pub passed: bool,
    /// `|lambda_min| / lambda_max` is below the ratio threshold: a direction of
    /// (numerically) zero curvature, whatever the sign of `lambda_min`.
    pub ridge: bool,
    #[serde(with = "crate::floats")]
    pub grad_norm: f64,
    /// Eigenvalues of the Hessian of `-2L`, ascending.
    #[serde(with = "crate::floats::vec")]
    pub eigenvalues: Vec<f64>,
    /// Smallest over largest eigenvalue.
    #[serde(with = "crate::floats::opt")]
    pub eig_ratio: Option<f64>,
    /// Present only when the Hessian is positive definite.
    #[serde(with = "crate::floats::opt_vec")]
    pub local_variances: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl CheckReport {
    fn failed(grad_norm: f64, diagnostic: String) -> Self {
        Self {
            grad_ok: false,
            hessian_pd: false,
            eig_ratio_ok: false,
            lvar_finite: false,
            passed: false,
            ridge: false,
            grad_norm,
            eigenvalues: Vec::new(),
            eig_ratio: None,
            local_variances: None,
            diagnostic: Some(diagnostic),
        }
    }

    /// Name of the first failing check, if any. A ridge is reported as an
    /// eigenvalue-ratio failure even when rounding makes `lambda_min` negative.
    pub fn first_failure(&self) -> Option<&'static str> {
        if !self.grad_ok {
            Some("gradient")
        } else if self.ridge {
            Some("eigenvalue_ratio")
        } else if !self.hessian_pd {
            Some("hessian")
        } else if !self.eig_ratio_ok {
            Some("eigenvalue_ratio")
        } else if !self.lvar_finite {
            Some("local_variance")
        } else {
            None
        }
    }
}

/// Applies the gradient, Hessian, eigenvalue-ratio and local-variance checks at
/// `omega_hat`. The checks are independent of how the candidate was found.
pub fn check_point<O: Objective + ?Sized>(
    obj: &O,
    omega_hat: &[f64],
    cfg: &OptConfig,
) -> CheckReport {
    let grad_norm = match obj.value_grad(omega_hat) {
        Ok((_, g)) => sup_norm(&g),
        Err(e) => return CheckReport::failed(f64::NAN, format!("candidate is infeasible: {e}")),
    };
    let grad_ok = grad_norm < cfg.grad_check;
    let h = match obj.hessian(omega_hat) {
        Ok(h) => h,
        Err(e) => {
            let mut r = CheckReport::failed(grad_norm, format!("Hessian unavailable: {e}"));
            r.grad_ok = grad_ok;
            return r;
        }
    };
    let Some(eig) = symmetric_eigenvalues(&h) else {
        let mut r = CheckReport::failed(grad_norm, "eigen-decomposition failed".into());
        r.grad_ok = grad_ok;
        return r;
    };
    let lmin = eig[0];
    let lmax = eig[eig.len() - 1];
    let hessian_pd = lmin > 0.0;
    let eig_ratio = (lmax != 0.0).then(|| lmin / lmax);
    let eig_ratio_ok = hessian_pd && eig_ratio.is_some_and(|r| r > cfg.eig_ratio_min);
    let ridge = lmax > 0.0 && lmin.abs() <= cfg.eig_ratio_min * lmax;
    let local_variances = hessian_pd.then(|| variances_from_hessian(&h));
    let lvar_finite = local_variances
        .as_ref()
        .is_some_and(|v| v.iter().all(|x| x.is_finite() && *x < cfg.lvar_max));
    let passed = grad_ok && hessian_pd && eig_ratio_ok && lvar_finite;
    CheckReport {
        grad_ok,
        hessian_pd,
        eig_ratio_ok,
        lvar_finite,
        passed,
        ridge,
        grad_norm,
        eigenvalues: eig,
        eig_ratio,
        local_variances,
        diagnostic: None,
    }
}

pub fn check_maximum(ctx: &PosteriorContext, result: &MaxResult, cfg: &OptConfig) -> CheckReport {
    check_point(ctx, &result.omega_hat, cfg)
}

fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Option<Vec<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 10_000)?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Some(v)
}

/// `2 diag(H^{-1})` for the Hessian `H` of `-2L`; infinite when `H` is singular.
fn variances_from_hessian(h: &DMatrix<f64>) -> Vec<f64> {
    match h.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => {
            (0..h.nrows()).map(|j| 2.0 * inv[(j, j)]).collect()
        }
        _ => vec![f64::INFINITY; h.nrows()],
    }
}

/// Local variances at `omega_hat`: the diagonal of `-H_L^{-1}`, i.e. `2 (H_{-2L})^{-1}`.
/// A singular or unavailable Hessian yields infinite variances.
pub fn local_variance(ctx: &PosteriorContext, omega_hat: &[f64]) -> Vec<f64> {
    match ctx.hessian_neg2l(omega_hat) {
        Ok(h) => variances_from_hessian(&h),
        Err(_) => vec![f64::INFINITY; omega_hat.len()],
    }
}
