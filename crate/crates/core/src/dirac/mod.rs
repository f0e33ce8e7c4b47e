//! Point-symmetric Dirac mixture approximations of the standard normal density.
//!
//! A mixture is stored through its free points `f_1..f_N`; the full point set is
//! `f_1, -f_1, f_2, -f_2, ..., f_N, -f_N` followed by the origin when the count is
//! odd. Negation closure and an exactly zero sample mean therefore hold by
//! construction.
//!
//! Placement minimizes a localized-cumulative-distribution (LCD) distance between
//! the mixture and `N(0, I)` using Gaussian kernels of width `b` integrated over
//! `b` in `(0, b_max]` (see [`lcd_distance`]).

mod cache;
mod lcd;
mod placement;

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_mixture_csv, write_mixture_csv, SampleCache};
pub use lcd::{lcd_distance, lcd_gauss_norm, lcd_gradient};
pub use placement::{
    design_disturbance_matrix, optimize_mixture, place_mixture, representative_disturbances,
    Placement,
};

#[derive(Debug, Error)]
pub enum DiracError {
    #[error("invalid LCD configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("sample cache I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sample file {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T, E = DiracError> = std::result::Result<T, E>;

/// Discretization and placement settings for the LCD distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcdConfig {
    /// Upper end of the kernel-width integral.
    pub b_max: f64,
    /// Gauss–Legendre nodes on `(0, b_max]`.
    pub quad_nodes: usize,
    /// Gradient-descent iteration cap.
    pub max_iters: usize,
    /// Stop once the sup-norm of the gradient of the normalized distance
    /// (distance divided by the squared LCD norm of `N(0, I)`) drops below this.
    pub step_tol: f64,
    /// Seed of the initial point draw.
    pub seed: u64,
}

impl Default for LcdConfig {
    fn default() -> Self {
        Self {
            b_max: 10.0,
            quad_nodes: 128,
            max_iters: 400,
            step_tol: 1e-10,
            seed: DEFAULT_SEED,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_220_417;

impl LcdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_max.is_finite() && self.b_max > 0.0) {
            return Err(DiracError::InvalidConfig(format!(
                "b_max must be positive and finite, got {}",
                self.b_max
            )));
        }
        if self.quad_nodes < 2 {
            return Err(DiracError::InvalidConfig(format!(
                "quad_nodes must be at least 2, got {}",
                self.quad_nodes
            )));
        }
        if !(self.step_tol.is_finite() && self.step_tol > 0.0) {
            return Err(DiracError::InvalidConfig(format!(
                "step_tol must be positive, got {}",
                self.step_tol
            )));
        }
        Ok(())
    }
}

/// `M` equally weighted, point-symmetric points in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMixture {
    dim: usize,
    /// Free points, row-major `N x dim`.
    free: Vec<f64>,
    has_origin: bool,
}

impl DiracMixture {
    /// Builds a mixture from its free points. `count = 2 * free.len() + has_origin`.
    pub fn from_free_points(dim: usize, free: &[Vec<f64>], has_origin: bool) -> Result<Self> {
        if dim == 0 {
            return Err(DiracError::InvalidMixture(
                "dimension must be positive".into(),
            ));
        }
        let mut flat = Vec::with_capacity(free.len() * dim);
        for p in free {
            if p.len() != dim {
                return Err(DiracError::InvalidMixture(format!(
                    "point has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(DiracError::InvalidMixture("non-finite coordinate".into()));
            }
            flat.extend_from_slice(p);
        }
        let mix = Self {
            dim,
            free: flat,
            has_origin,
        };
        if mix.count() == 0 {
            return Err(DiracError::InvalidMixture("mixture has no points".into()));
        }
        Ok(mix)
    }

    pub(crate) fn from_flat(dim: usize, free: Vec<f64>, has_origin: bool) -> Self {
        debug_assert_eq!(free.len() % dim, 0);
        Self {
            dim,
            free,
            has_origin,
        }
    }

    /// The single-point mixture at the origin.
    pub fn origin(dim: usize) -> Self {
        Self {
            dim,
            free: Vec::new(),
            has_origin: true,
        }
    }

    /// Recovers the symmetric structure from an explicit point list.
    ///
    /// Fails unless the multiset of points is closed under exact negation.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(DiracError::InvalidMixture("empty mixture".into()));
        }
        let key = |p: &[f64]| -> Vec<u64> {
            // +0.0 and -0.0 are the same point
            p.iter().map(|&x| (x + 0.0).to_bits()).collect()
        };
        let mut pending: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut free = Vec::new();
        let mut origins = 0usize;
        for p in points {
            if p.len() != dim {
                return Err(DiracError::InvalidMixture(format!(
                    "point has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(DiracError::InvalidMixture("non-finite coordinate".into()));
            }
            if p.iter().all(|&x| x == 0.0) {
                origins += 1;
                continue;
            }
            let neg: Vec<f64> = p.iter().map(|x| -x).collect();
            let nk = key(&neg);
            match pending.get_mut(&nk) {
                Some(c) if *c > 0 => {
                    *c -= 1;
                    // keep the first-seen member of the pair as the free point
                    free.push(neg);
                }
                _ => *pending.entry(key(p)).or_insert(0) += 1,
            }
        }
        if pending.values().any(|&c| c > 0) {
            return Err(DiracError::InvalidMixture(
                "points are not closed under negation".into(),
            ));
        }
        // pairs of origin points are mirror images of each other
        for _ in 0..origins / 2 {
            free.push(vec![0.0; dim]);
        }
        Self::from_free_points(dim, &free, origins % 2 == 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        2 * self.free_count() + usize::from(self.has_origin)
    }

    pub fn free_count(&self) -> usize {
        self.free.len() / self.dim
    }

    pub fn has_origin(&self) -> bool {
        self.has_origin
    }

    pub fn free_point(&self, i: usize) -> &[f64] {
        &self.free[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn free_flat(&self) -> &[f64] {
        &self.free
    }

    /// All points in canonical order: `f_1, -f_1, ..., f_N, -f_N[, 0]`.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.count());
        for i in 0..self.free_count() {
            let p = self.free_point(i);
            out.push(p.to_vec());
            out.push(p.iter().map(|x| -x).collect());
        }
        if self.has_origin {
            out.push(vec![0.0; self.dim]);
        }
        out
    }

    /// Equal-weight sample mean, summed in canonical order (mirror pairs cancel exactly).
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for p in self.points() {
            for (a, x) in acc.iter_mut().zip(&p) {
                *a += x;
            }
        }
        let m = self.count() as f64;
        acc.iter().map(|a| a / m).collect()
    }

    /// Equal-weight sample covariance `(1/M) sum x x^T` (the mean is zero).
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut c = DMatrix::<f64>::zeros(d, d);
        for i in 0..self.free_count() {
            let p = self.free_point(i);
            for r in 0..d {
                for s in 0..d {
                    c[(r, s)] += 2.0 * p[r] * p[s];
                }
            }
        }
        c / self.count() as f64
    }

    /// Applies `C^{-1/2}` (principal inverse square root of the sample covariance)
    /// so the result has identity covariance.
    pub fn whitened(&self) -> Result<Self> {
        let cov = self.covariance();
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        if eig
            .eigenvalues
            .iter()
            .any(|&l| !(l.is_finite() && l > max * 1e-14 && l > 0.0))
        {
            return Err(DiracError::InvalidMixture(
                "sample covariance is singular; cannot whiten".into(),
            ));
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        // symmetrize the transform itself so it is a true principal root
        let w = (&w + w.transpose()) * 0.5;
        let d = self.dim;
        let mut free = vec![0.0; self.free.len()];
        for i in 0..self.free_count() {
            let p = self.free_point(i);
            for r in 0..d {
                free[i * d + r] = (0..d).map(|s| w[(r, s)] * p[s]).sum();
            }
        }
        Ok(Self::from_flat(d, free, self.has_origin))
    }
}
