//! LCD distance between a symmetric Dirac mixture and `N(0, I_d)`.
//!
//! With the unnormalized kernel `K(x - m, b) = exp(-|x - m|^2 / (2 b^2))`, the
//! distance is `D = int_0^{b_max} int (F_mix(m, b) - F_gauss(m, b))^2 dm db`.
//! The inner `m` integral is closed-form and splits into three terms:
//!
//! ```text
//! T1(b) = 1/M^2 sum_{p,q} (pi b^2)^{d/2} exp(-|x_p - x_q|^2 / (4 b^2))
//! T2(b) = 1/M   sum_p     (b^2 sqrt(2 pi / (1 + 2 b^2)))^d exp(-|x_p|^2 / (2 (1 + 2 b^2)))
//! T3(b) = (b^2 / (1 + b^2))^d (pi (1 + b^2))^{d/2}
//! ```
//!
//! and `D = int (T1 - 2 T2 + T3) db` with the `b` integral done by Gauss–Legendre.
//! Integrating over `b` first turns each pair term into a fixed function of the
//! squared distance, `G(s) = sum_n c_n exp(-a_n s)`, evaluated once per pair.

use rayon::prelude::*;

use super::{DiracError, DiracMixture, LcdConfig, Result};
use crate::quadrature::GaussLegendre;

/// Above this many `(free pair, node)` evaluations the pair kernel is tabulated.
const EXACT_PAIR_BUDGET: usize = 1 << 24;
const TABLE_CELLS: usize = 4096;

/// LCD distance of `mix` to the standard normal.
pub fn lcd_distance(mix: &DiracMixture, cfg: &LcdConfig) -> Result<f64> {
    cfg.validate()?;
    let model = LcdModel::new(mix.dim(), cfg);
    let ev = model.evaluate(mix, false)?;
    Ok(ev.value)
}

/// `int_0^{b_max} T3(b) db`: the squared LCD norm of `N(0, I_d)`, i.e. the
/// distance of an empty approximation. Useful as the scale of [`lcd_distance`].
pub fn lcd_gauss_norm(dim: usize, cfg: &LcdConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(LcdModel::new(dim, cfg).gauss_norm())
}

/// Partial derivatives of [`lcd_distance`] as an `M x d` matrix in canonical
/// point order (see [`DiracMixture::points`]).
///
/// Row `2i` holds the derivative with respect to free point `f_i`, with its
/// mirror `-f_i` moving along (chain rule through the symmetry). Mirror rows and
/// the pinned origin row are exactly zero since they are not free coordinates.
pub fn lcd_gradient(mix: &DiracMixture, cfg: &LcdConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let model = LcdModel::new(mix.dim(), cfg);
    let ev = model.evaluate(mix, true)?;
    let d = mix.dim();
    let grad = ev.free_grad.expect("gradient requested");
    let mut rows = Vec::with_capacity(mix.count());
    for i in 0..mix.free_count() {
        rows.push(grad[i * d..(i + 1) * d].to_vec());
        rows.push(vec![0.0; d]);
    }
    if mix.has_origin() {
        rows.push(vec![0.0; d]);
    }
    Ok(rows)
}

pub(crate) struct Evaluation {
    pub value: f64,
    /// Derivative with respect to the free coordinates, row-major `N x d`.
    pub free_grad: Option<Vec<f64>>,
}

/// `sum_n c_n exp(-a_n s)` with its `s`-derivative.
#[derive(Debug, Clone)]
struct ExpSum {
    coef: Vec<f64>,
    rate: Vec<f64>,
}

impl ExpSum {
    fn eval(&self, s: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (&c, &a) in self.coef.iter().zip(&self.rate) {
            let t = c * (-a * s).exp();
            v += t;
            dv -= a * t;
        }
        (v, dv)
    }
}

/// Components narrower than this many grid cells are not tabulated.
const MIN_CELLS_PER_WIDTH: f64 = 8.0;
/// `exp(-40)` is below double-precision resolution of any kernel sum.
const UNDERFLOW_EXPONENT: f64 = 40.0;

/// Cubic Hermite table of `g(r) = G(r^2)` on a uniform grid in `r`, for the
/// components wide enough to be resolved by the grid. Narrow components (small
/// kernel widths) are summed exactly and skipped once they underflow.
#[derive(Debug, Clone)]
struct HermiteTable {
    h: f64,
    value: Vec<f64>,
    slope: Vec<f64>,
    /// `dG/ds` of the tabulated part at `s = 0`.
    ds_at_zero: f64,
    smooth: ExpSum,
    /// Sorted by increasing rate.
    sharp: ExpSum,
}

impl HermiteTable {
    fn new(exact: &ExpSum, r_max: f64) -> Self {
        let h = r_max / TABLE_CELLS as f64;
        let mut smooth = ExpSum {
            coef: Vec::new(),
            rate: Vec::new(),
        };
        let mut sharp: Vec<(f64, f64)> = Vec::new();
        for (&c, &a) in exact.coef.iter().zip(&exact.rate) {
            // exp(-a r^2) has width 1/sqrt(2a) in r
            if 1.0 / (2.0 * a).sqrt() >= MIN_CELLS_PER_WIDTH * h {
                smooth.coef.push(c);
                smooth.rate.push(a);
            } else {
                sharp.push((c, a));
            }
        }
        sharp.sort_by(|x, y| x.1.total_cmp(&y.1));
        let sharp = ExpSum {
            coef: sharp.iter().map(|x| x.0).collect(),
            rate: sharp.iter().map(|x| x.1).collect(),
        };
        let (value, slope): (Vec<f64>, Vec<f64>) = (0..=TABLE_CELLS)
            .map(|k| {
                let r = k as f64 * h;
                let (g, gs) = smooth.eval(r * r);
                (g, 2.0 * r * gs)
            })
            .unzip();
        let ds_at_zero = smooth.eval(0.0).1;
        Self {
            h,
            value,
            slope,
            ds_at_zero,
            smooth,
            sharp,
        }
    }

    fn eval_sharp(&self, s: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (&c, &a) in self.sharp.coef.iter().zip(&self.sharp.rate) {
            if a * s > UNDERFLOW_EXPONENT {
                break;
            }
            let t = c * (-a * s).exp();
            v += t;
            dv -= a * t;
        }
        (v, dv)
    }

    /// `(G(s), dG/ds)`; the tabulated part is differentiated as interpolated.
    fn eval(&self, s: f64) -> (f64, f64) {
        let (vs, dvs) = self.eval_sharp(s);
        if s == 0.0 {
            return (self.value[0] + vs, self.ds_at_zero + dvs);
        }
        let r = s.sqrt();
        let u = r / self.h;
        let k = u.floor() as usize;
        if k >= TABLE_CELLS {
            let (g, dg) = self.smooth.eval(s);
            return (g + vs, dg + dvs);
        }
        let t = u - k as f64;
        let (y0, y1) = (self.value[k], self.value[k + 1]);
        let (m0, m1) = (self.slope[k] * self.h, self.slope[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let g = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dg_dt = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        let dg_dr = dg_dt / self.h;
        (g + vs, dg_dr / (2.0 * r) + dvs)
    }
}

#[derive(Debug, Clone)]
enum PairKernel {
    Exact(ExpSum),
    Table(HermiteTable),
}

impl PairKernel {
    #[inline]
    fn eval(&self, s: f64) -> (f64, f64) {
        match self {
            PairKernel::Exact(e) => e.eval(s),
            PairKernel::Table(t) => t.eval(s),
        }
    }
}

/// Quadrature-integrated coefficients for one `(d, cfg)`.
#[derive(Debug, Clone)]
pub(crate) struct LcdModel {
    dim: usize,
    pair: ExpSum,
    single: ExpSum,
    /// `int T3 db`, the squared LCD norm of `N(0, I_d)`.
    gauss_norm: f64,
    force_table: Option<bool>,
}

impl LcdModel {
    pub(crate) fn new(dim: usize, cfg: &LcdConfig) -> Self {
        let rule = GaussLegendre::new(cfg.quad_nodes, 0.0, cfg.b_max);
        let d = dim as f64;
        let pi = std::f64::consts::PI;
        let mut pair = ExpSum {
            coef: Vec::with_capacity(rule.len()),
            rate: Vec::with_capacity(rule.len()),
        };
        let mut single = pair.clone();
        let mut gauss_norm = 0.0;
        for (&b, &w) in rule.nodes().iter().zip(rule.weights()) {
            let b2 = b * b;
            pair.coef.push(w * (pi * b2).powf(0.5 * d));
            pair.rate.push(1.0 / (4.0 * b2));
            single
                .coef
                .push(w * (b2 * (2.0 * pi / (1.0 + 2.0 * b2)).sqrt()).powf(d));
            single.rate.push(1.0 / (2.0 * (1.0 + 2.0 * b2)));
            gauss_norm += w * (b2 / (1.0 + b2)).powf(d) * (pi * (1.0 + b2)).powf(0.5 * d);
        }
        Self {
            dim,
            pair,
            single,
            gauss_norm,
            force_table: None,
        }
    }

    pub(crate) fn gauss_norm(&self) -> f64 {
        self.gauss_norm
    }

    #[cfg(test)]
    fn with_table(mut self, on: bool) -> Self {
        self.force_table = Some(on);
        self
    }

    fn pair_kernel(&self, free: &[f64]) -> PairKernel {
        let n = free.len() / self.dim;
        let use_table = self.force_table.unwrap_or(
            n.saturating_mul(n).saturating_mul(self.pair.coef.len()) > EXACT_PAIR_BUDGET,
        );
        if !use_table {
            return PairKernel::Exact(self.pair.clone());
        }
        let r_max = free
            .chunks(self.dim)
            .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0_f64, f64::max);
        // |f_i +- f_j| <= 2 max |f|
        let r_max = (2.0 * r_max).max(1e-3) * (1.0 + 1e-9);
        PairKernel::Table(HermiteTable::new(&self.pair, r_max))
    }

    /// Distance and (optionally) its gradient with respect to the free points.
    pub(crate) fn evaluate(&self, mix: &DiracMixture, want_grad: bool) -> Result<Evaluation> {
        assert_eq!(mix.dim(), self.dim);
        let d = self.dim;
        let n = mix.free_count();
        let m = mix.count() as f64;
        let odd = mix.has_origin();
        let free = mix.free_flat();
        let kernel = self.pair_kernel(free);
        let g0 = self.pair.eval(0.0).0;
        let h0 = self.single.eval(0.0).0;

        // Per free point: its share of the pair sum A, the single sum B, and dD/df_i.
        let rows: Vec<(f64, f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let fi = &free[i * d..(i + 1) * d];
                let mut a = 0.0;
                let mut grad = vec![0.0; if want_grad { d } else { 0 }];
                let mut diff = vec![0.0; d];
                let mut sum = vec![0.0; d];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let fj = &free[j * d..(j + 1) * d];
                    let mut s_minus = 0.0;
                    let mut s_plus = 0.0;
                    for k in 0..d {
                        diff[k] = fi[k] - fj[k];
                        sum[k] = fi[k] + fj[k];
                        s_minus += diff[k] * diff[k];
                        s_plus += sum[k] * sum[k];
                    }
                    let (gm, dgm) = kernel.eval(s_minus);
                    let (gp, dgp) = kernel.eval(s_plus);
                    // each unordered pair {i, j} is visited twice, carrying 4 ordered pairs
                    a += 2.0 * (gm + gp);
                    if want_grad {
                        for k in 0..d {
                            grad[k] += 8.0 * (dgm * diff[k] + dgp * sum[k]);
                        }
                    }
                }
                let r2: f64 = fi.iter().map(|x| x * x).sum();
                // f_i against -f_i, both orders
                let (gs, dgs) = kernel.eval(4.0 * r2);
                a += 2.0 * gs;
                let mut self_coef = 16.0 * dgs;
                if odd {
                    // origin against +-f_i, both orders
                    let (go, dgo) = kernel.eval(r2);
                    a += 4.0 * go;
                    self_coef += 8.0 * dgo;
                }
                let (hv, dhv) = self.single.eval(r2);
                let b = 2.0 * hv;
                if want_grad {
                    let m2 = m * m;
                    for k in 0..d {
                        let da = grad[k] + self_coef * fi[k];
                        let db = 4.0 * dhv * fi[k];
                        grad[k] = da / m2 - 2.0 * db / m;
                    }
                }
                (a, b, grad)
            })
            .collect();

        let mut a = m * g0;
        let mut b = if odd { h0 } else { 0.0 };
        for (ra, rb, _) in &rows {
            a += ra;
            b += rb;
        }
        let value = a / (m * m) - 2.0 * b / m + self.gauss_norm;
        if !value.is_finite() {
            return Err(DiracError::InvalidMixture(
                "LCD distance is not finite".into(),
            ));
        }
        let free_grad = if want_grad {
            let g: Vec<f64> = rows.into_iter().flat_map(|(_, _, g)| g).collect();
            if g.iter().any(|x| !x.is_finite()) {
                return Err(DiracError::InvalidMixture(
                    "LCD gradient is not finite".into(),
                ));
            }
            Some(g)
        } else {
            None
        };
        Ok(Evaluation { value, free_grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mix1(x: f64) -> DiracMixture {
        DiracMixture::from_free_points(1, &[vec![x]], false).unwrap()
    }

    /// Plain all-pairs evaluation of T1 - 2 T2 + T3, one quadrature node at a time.
    fn brute_force_all_pairs(points: &[Vec<f64>], cfg: &LcdConfig) -> f64 {
        let rule = GaussLegendre::new(cfg.quad_nodes, 0.0, cfg.b_max);
        let m = points.len() as f64;
        let d = points[0].len() as f64;
        let pi = std::f64::consts::PI;
        rule.integrate(|b| {
            let b2 = b * b;
            let mut t1 = 0.0;
            for p in points {
                for q in points {
                    let s: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                    t1 += (pi * b2).powf(d / 2.0) * (-s / (4.0 * b2)).exp();
                }
            }
            t1 /= m * m;
            let mut t2 = 0.0;
            for p in points {
                let s: f64 = p.iter().map(|x| x * x).sum();
                t2 += (b2 * (2.0 * pi / (1.0 + 2.0 * b2)).sqrt()).powf(d)
                    * (-s / (2.0 * (1.0 + 2.0 * b2))).exp();
            }
            t2 /= m;
            let t3 = (b2 / (1.0 + b2)).powf(d) * (pi * (1.0 + b2)).powf(d / 2.0);
            t1 - 2.0 * t2 + t3
        })
    }

    fn random_mixture(rng: &mut ChaCha8Rng, d: usize, m: usize) -> DiracMixture {
        let free: Vec<Vec<f64>> = (0..m / 2)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        DiracMixture::from_free_points(d, &free, m % 2 == 1).unwrap()
    }

    #[test]
    fn symmetric_reduction_matches_all_pairs() {
        let cfg = LcdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (d, m) in [(1, 2), (1, 3), (2, 5), (3, 6), (4, 9)] {
            let mix = random_mixture(&mut rng, d, m);
            let got = lcd_distance(&mix, &cfg).unwrap();
            let want = brute_force_all_pairs(&mix.points(), &cfg);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1e-12) + 1e-12,
                "d={d} m={m}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn swapped_pair_gives_identical_distance() {
        let cfg = LcdConfig::default();
        let a = DiracMixture::from_points(1, &[vec![-1.0], vec![1.0]]).unwrap();
        let b = DiracMixture::from_points(1, &[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(
            lcd_distance(&a, &cfg).unwrap(),
            lcd_distance(&b, &cfg).unwrap()
        );
    }

    #[test]
    fn collapsed_pair_is_worse() {
        let cfg = LcdConfig::default();
        let spread = lcd_distance(&mix1(1.0), &cfg).unwrap();
        let collapsed = lcd_distance(&mix1(0.1), &cfg).unwrap();
        assert!(spread < collapsed, "{spread} vs {collapsed}");
    }

    #[test]
    fn origin_row_gradient_is_exactly_zero() {
        let cfg = LcdConfig::default();
        let mix = DiracMixture::from_free_points(1, &[vec![1.3]], true).unwrap();
        let g = lcd_gradient(&mix, &cfg).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[2], vec![0.0]);
        assert_eq!(g[1], vec![0.0]);
        assert!(g[0][0] != 0.0);
    }

    fn fd_check(model: &LcdModel, mix: &DiracMixture) {
        let d = mix.dim();
        let ev = model.evaluate(mix, true).unwrap();
        let grad = ev.free_grad.unwrap();
        let free: Vec<f64> = mix.free_flat().to_vec();
        let scale = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        for idx in 0..free.len() {
            let h = 1e-5;
            let mut up = free.clone();
            up[idx] += h;
            let mut dn = free.clone();
            dn[idx] -= h;
            let fu = model
                .evaluate(&DiracMixture::from_flat(d, up, mix.has_origin()), false)
                .unwrap()
                .value;
            let fd = model
                .evaluate(&DiracMixture::from_flat(d, dn, mix.has_origin()), false)
                .unwrap()
                .value;
            let num = (fu - fd) / (2.0 * h);
            let err = (num - grad[idx]).abs();
            // cancellation noise of the value, amplified by the difference quotient
            let noise = 1e-14 * model.gauss_norm() / h;
            assert!(
                err <= 1e-4 * grad[idx].abs().max(1e-3 * scale) + noise,
                "coord {idx}: analytic {} vs fd {num}",
                grad[idx]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = LcdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=3 {
            let model = LcdModel::new(d, &cfg);
            for m in [2, 3, 5] {
                for _ in 0..3 {
                    let mix = random_mixture(&mut rng, d, m);
                    fd_check(&model, &mix);
                }
            }
        }
    }

    #[test]
    fn tabulated_kernel_agrees_with_exact() {
        let cfg = LcdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2, 4, 8] {
            let mix = random_mixture(&mut rng, d, 40);
            let exact = LcdModel::new(d, &cfg).with_table(false);
            let table = LcdModel::new(d, &cfg).with_table(true);
            let ve = exact.evaluate(&mix, false).unwrap().value;
            let vt = table.evaluate(&mix, false).unwrap().value;
            // the distance is a small difference of terms of size gauss_norm
            assert!(
                (ve - vt).abs() <= 1e-9 * exact.gauss_norm(),
                "d={d}: {ve} vs {vt}"
            );
            fd_check(&table, &mix);
        }
    }

    #[test]
    fn quadrature_is_converged_at_defaults() {
        let cfg = LcdConfig::default();
        let fine = LcdConfig {
            quad_nodes: 2 * cfg.quad_nodes,
            ..cfg.clone()
        };
        let a = lcd_distance(&mix1(1.0), &cfg).unwrap();
        let b = lcd_distance(&mix1(1.0), &fine).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}
