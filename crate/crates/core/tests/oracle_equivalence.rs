//! Numerical maximization against the closed-form estimators.

use std::sync::Arc;

use obscheck::model::bundled;
use obscheck::optimizer::{check_maximum, local_variance, maximize, OptConfig};
use obscheck::oracles::{oracle_ab, oracle_b, oracle_reciprocal, OracleResult};
use obscheck::posterior::PosteriorContext;
use proptest::prelude::*;

fn numeric(model: &str, z: &[f64]) -> (Vec<f64>, Vec<f64>, bool) {
    let spec = Arc::new(bundled::load(model).unwrap());
    let x0 = spec.true_values();
    let ctx = PosteriorContext::new(spec, z.to_vec()).unwrap();
    let cfg = OptConfig::default();
    let res = maximize(&ctx, &x0, &cfg);
    let check = check_maximum(&ctx, &res, &cfg);
    let lvar = local_variance(&ctx, &res.omega_hat);
    (res.omega_hat, lvar, check.passed)
}

fn assert_matches(model: &str, z: &[f64], oracle: &OracleResult) -> Result<(), TestCaseError> {
    let (est, lvar, passed) = numeric(model, z);
    prop_assert!(passed, "{model} {z:?}");
    for i in 0..est.len() {
        prop_assert!(
            (est[i] - oracle.estimate[i]).abs() < 1e-6,
            "{model} estimate {i}: {} vs {}",
            est[i],
            oracle.estimate[i]
        );
        let rel = (lvar[i] - oracle.local_variance[i]).abs() / oracle.local_variance[i];
        prop_assert!(
            rel < 1e-6,
            "{model} local variance {i}: {} vs {}",
            lvar[i],
            oracle.local_variance[i]
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn variance_model_matches_oracle(z in prop::collection::vec(-3.0..3.0f64, 1..40)) {
        let s: f64 = z.iter().map(|x| x * x).sum::<f64>() / z.len() as f64;
        prop_assume!(s > 1e-3 && s < 8.0);
        assert_matches("variance", &z, &oracle_b(&z, None).unwrap())?;
    }

    #[test]
    fn mean_variance_model_matches_oracle(z in prop::collection::vec(-2.0..3.0f64, 2..40)) {
        let o = oracle_ab(&z, None).unwrap();
        prop_assume!(o.estimate[1] > 1e-3 && o.estimate[1] < 4.0);
        assert_matches("mean_variance", &z, &o)?;
    }

    #[test]
    fn reciprocal_model_matches_oracle(z in prop::collection::vec(0.15..1.2f64, 1..40)) {
        assert_matches("reciprocal", &z, &oracle_reciprocal(&z).unwrap())?;
    }
}

#[test]
fn design_observations_of_two_points() {
    // e = (-1, 1): z = 0.6 -/+ sqrt(0.4)
    let s = 0.4f64.sqrt();
    let z = [0.6 - s, 0.6 + s];
    let o = oracle_ab(&z, None).unwrap();
    assert!((o.estimate[0] - 0.6).abs() < 1e-15);
    assert!((o.estimate[1] - 0.4).abs() < 1e-15);
    let (est, lvar, passed) = numeric("mean_variance", &z);
    assert!(passed);
    assert!(
        (est[0] - 0.6).abs() < 1e-9 && (est[1] - 0.4).abs() < 1e-9,
        "{est:?}"
    );
    assert!(
        (lvar[0] - 0.2).abs() < 1e-7 && (lvar[1] - 0.16).abs() < 1e-7,
        "{lvar:?}"
    );
}
