//! Closed-form estimators for the analytically solvable models. These are test
//! anchors for the numeric pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("estimator is undefined for this observation vector: {0}")]
    Undefined(String),
}

/// Named estimates with their (optional) variances and expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    /// Local variances at the estimate.
    pub local_variance: Vec<f64>,
    /// Estimator variance at the supplied true values.
    pub variance: Option<Vec<f64>>,
    /// Estimator expectation at the supplied true values.
    pub expected_value: Option<Vec<f64>>,
}

impl OracleResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.estimate[i])
    }
}

/// `Z = sqrt(b) e`.
///
/// `-2L = S/b + T log b` with `S = sum z^2`, so `b^ = S/T`. Then
/// `d2(-2L)/db2 = 2S/b^3 - T/b^2 = T/b^2` at the mode and the local variance is
/// `2 / (T/b^2) = 2 b^2 / T`. Since `S/b ~ chi2(T)`, `E b^ = b` and
/// `Var b^ = 2 b^2 / T`.
pub fn oracle_b(z: &[f64], b_true: Option<f64>) -> Result<OracleResult, OracleError> {
    if z.is_empty() {
        return Err(OracleError::TooFew { need: 1, got: 0 });
    }
    let t = z.len() as f64;
    let b = z.iter().map(|x| x * x).sum::<f64>() / t;
    Ok(OracleResult {
        names: vec!["b".into()],
        estimate: vec![b],
        local_variance: vec![2.0 * b * b / t],
        variance: b_true.map(|bt| vec![2.0 * bt * bt / t]),
        expected_value: b_true.map(|bt| vec![bt]),
    })
}

/// `Z = a + sqrt(b) e`.
///
/// `-2L = sum (z - a)^2 / b + T log b`. Setting the gradient to zero gives
/// `a^ = mean z` and `b^ = (1/T) sum (z - a^)^2`. At the mode the Hessian is
/// `diag(2T/b, T/b^2)` (the mixed term is `2 sum (z - a) / b^2 = 0`), so the local
/// variances are `(b^/T, 2 b^2/T)`. With `T b^ / b ~ chi2(T-1)`:
/// `E b^ = (T-1) b / T`, `Var b^ = 2 (T-1) b^2 / T^2`, and `Var a^ = b / T`.
pub fn oracle_ab(z: &[f64], truth: Option<(f64, f64)>) -> Result<OracleResult, OracleError> {
    if z.len() < 2 {
        return Err(OracleError::TooFew {
            need: 2,
            got: z.len(),
        });
    }
    let t = z.len() as f64;
    let a = z.iter().sum::<f64>() / t;
    let b = z.iter().map(|x| (x - a) * (x - a)).sum::<f64>() / t;
    Ok(OracleResult {
        names: vec!["a".into(), "b".into()],
        estimate: vec![a, b],
        local_variance: vec![b / t, 2.0 * b * b / t],
        variance: truth.map(|(_, bt)| vec![bt / t, 2.0 * (t - 1.0) * bt * bt / (t * t)]),
        expected_value: truth.map(|(at, bt)| vec![at, (t - 1.0) / t * bt]),
    })
}

/// `Z = 1/w + e`.
///
/// `-2L = sum (z - 1/w)^2`, stationary at `1/w = mean z`, i.e. `w^ = T / sum z`,
/// which does not exist when the observations sum to zero. The curvature at the
/// mode is `2T/w^4`, giving local variance `w^4 / T`.
pub fn oracle_reciprocal(z: &[f64]) -> Result<OracleResult, OracleError> {
    if z.is_empty() {
        return Err(OracleError::TooFew { need: 1, got: 0 });
    }
    let sum: f64 = z.iter().sum();
    if sum == 0.0 {
        return Err(OracleError::Undefined("observations sum to zero".into()));
    }
    let t = z.len() as f64;
    let w = t / sum;
    Ok(OracleResult {
        names: vec!["omega".into()],
        estimate: vec![w],
        local_variance: vec![w.powi(4) / t],
        variance: None,
        expected_value: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_examples() {
        let r = 0.8f64.sqrt();
        let o = oracle_b(&[r, -r], None).unwrap();
        assert!((o.estimate[0] - 0.8).abs() < 1e-15);
        let o = oracle_b(&[0.0; 20], Some(0.8)).unwrap();
        assert!((o.variance.unwrap()[0] - 0.064).abs() < 1e-15);
        assert_eq!(o.estimate, vec![0.0]);
        assert_eq!(o.local_variance, vec![0.0]);
    }

    #[test]
    fn mean_variance_examples() {
        let o = oracle_ab(&[0.0; 4], Some((0.6, 0.4))).unwrap();
        assert!((o.expected_value.unwrap()[1] - 0.3).abs() < 1e-15);
        let o = oracle_ab(&[2.5; 3], None).unwrap();
        assert_eq!(o.estimate, vec![2.5, 0.0]);
        assert!(matches!(
            oracle_ab(&[1.0], None),
            Err(OracleError::TooFew { .. })
        ));
    }

    #[test]
    fn mean_variance_representative_vector() {
        // four symmetric disturbances with unit sample variance
        let alpha = 0.56f64.sqrt();
        let eps = [-1.2, -alpha, alpha, 1.2];
        let z: Vec<f64> = eps.iter().map(|e| 0.6 + 0.4f64.sqrt() * e).collect();
        let o = oracle_ab(&z, None).unwrap();
        assert!((o.estimate[0] - 0.6).abs() < 1e-12);
        assert!((o.estimate[1] - 0.4).abs() < 1e-12);
        assert!((o.local_variance[0] - 0.1).abs() < 1e-12);
        assert!((o.local_variance[1] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_examples() {
        assert_eq!(oracle_reciprocal(&[2.0, 2.0]).unwrap().estimate, vec![0.5]);
        assert!(matches!(
            oracle_reciprocal(&[1.0, -1.0]),
            Err(OracleError::Undefined(_))
        ));
        assert_eq!(
            oracle_reciprocal(&[0.5, 0.5, 1.0]).unwrap().get("omega"),
            Some(1.5)
        );
    }
}
