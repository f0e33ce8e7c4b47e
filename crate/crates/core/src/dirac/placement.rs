//! Sample placement by gradient descent on the LCD distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::lcd::LcdModel;
use super::{DiracError, DiracMixture, LcdConfig, Result};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Outcome of [`place_mixture`].
#[derive(Debug, Clone)]
pub struct Placement {
    /// Final mixture, whitened to identity covariance.
    pub mixture: DiracMixture,
    /// Descent result before whitening.
    pub unwhitened: DiracMixture,
    /// Seeded starting points (unit second moment per coordinate).
    pub initial: DiracMixture,
    pub iterations: usize,
    /// False when `max_iters` ran out or no descent step could be found first.
    pub converged: bool,
    /// Sup-norm of the normalized gradient at `unwhitened`.
    pub final_grad_norm: f64,
}

/// Places `count` symmetric points in `dim` dimensions.
///
/// For `count == 1` the origin-only mixture is returned without optimization.
/// Otherwise `floor(count / 2) >= dim` is required so that the covariance can be
/// whitened to the identity.
pub fn place_mixture(dim: usize, count: usize, cfg: &LcdConfig) -> Result<Placement> {
    cfg.validate()?;
    if dim == 0 || count == 0 {
        return Err(DiracError::InvalidConfig(format!(
            "dimension and count must be positive (dim={dim}, count={count})"
        )));
    }
    if count == 1 {
        let origin = DiracMixture::origin(dim);
        return Ok(Placement {
            mixture: origin.clone(),
            unwhitened: origin.clone(),
            initial: origin,
            iterations: 0,
            converged: true,
            final_grad_norm: 0.0,
        });
    }
    let n = count / 2;
    if n < dim {
        return Err(DiracError::InvalidConfig(format!(
            "{count} symmetric points cannot have identity covariance in {dim} dimensions \
             (need at least {})",
            2 * dim
        )));
    }
    let has_origin = count % 2 == 1;
    let initial =
        DiracMixture::from_flat(dim, initial_free_points(dim, count, cfg.seed), has_origin);

    let model = LcdModel::new(dim, cfg);
    let norm = model.gauss_norm();
    let eval = |free: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mix = DiracMixture::from_flat(dim, free.to_vec(), has_origin);
        let ev = model.evaluate(&mix, true)?;
        let g = ev.free_grad.expect("gradient requested");
        Ok((ev.value / norm, g.into_iter().map(|x| x / norm).collect()))
    };

    let mut x = initial.free_flat().to_vec();
    let (mut f, mut g) = eval(&x)?;
    let mut step = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let gmax = sup_norm(&g);
        if gmax < cfg.step_tol {
            converged = true;
            break;
        }
        if !step.is_finite() {
            // first move shifts the largest coordinate by 0.1
            step = 0.1 / gmax;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        let mut t = step;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            if let Ok((ft, gt)) = eval(&trial) {
                if ft <= f - ARMIJO_C * t * g2 {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= BACKTRACK;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no representable decrease left along -g
            converged = sup_norm(&g) < cfg.step_tol;
            break;
        };
        x = xn;
        f = fn_;
        g = gn;
        step = 2.0 * t;
        iterations += 1;
    }
    if iterations == cfg.max_iters && sup_norm(&g) < cfg.step_tol {
        converged = true;
    }

    let unwhitened = DiracMixture::from_flat(dim, x, has_origin);
    let mixture = unwhitened.whitened()?;
    Ok(Placement {
        mixture,
        unwhitened,
        initial,
        iterations,
        converged,
        final_grad_norm: sup_norm(&g),
    })
}

/// The whitened optimal mixture of [`place_mixture`].
pub fn optimize_mixture(dim: usize, count: usize, cfg: &LcdConfig) -> Result<DiracMixture> {
    place_mixture(dim, count, cfg).map(|p| p.mixture)
}

/// Representative disturbances `(e_1, ..., e_T)`: the 1-D mixture with `M = T`
/// points, sorted ascending.
pub fn representative_disturbances(horizon: usize, cfg: &LcdConfig) -> Result<Vec<f64>> {
    let mix = optimize_mixture(1, horizon, cfg)?;
    let mut v: Vec<f64> = mix.points().into_iter().map(|p| p[0]).collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `K x T` design disturbance matrix: the rows are the points of the
/// `T`-dimensional mixture with `M = K`.
pub fn design_disturbance_matrix(
    horizon: usize,
    count: usize,
    cfg: &LcdConfig,
) -> Result<Vec<Vec<f64>>> {
    if count < 2 {
        return Err(DiracError::InvalidConfig(
            "at least two design disturbance vectors are needed".into(),
        ));
    }
    Ok(optimize_mixture(horizon, count, cfg)?.points())
}

/// Seeded standard-normal free points, scaled so each coordinate of the
/// symmetric mixture has unit second moment.
fn initial_free_points(dim: usize, count: usize, seed: u64) -> Vec<f64> {
    let n = count / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free: Vec<f64> = (0..n * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for k in 0..dim {
        let second: f64 =
            (0..n).map(|i| free[i * dim + k].powi(2)).sum::<f64>() * 2.0 / count as f64;
        let scale = 1.0 / second.sqrt();
        for i in 0..n {
            free[i * dim + k] *= scale;
        }
    }
    free
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}
