//! Gauss–Legendre quadrature on a finite interval.

use std::f64::consts::PI;

/// Fixed-node Gauss–Legendre rule mapped onto `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule on `[a, b]` (nodes ascending).
    ///
    /// Nodes are the roots of the Legendre polynomial `P_n`, located by Newton
    /// iteration from the Chebyshev-like initial guess `cos(pi (i - 1/4) / (n + 1/2))`.
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut ref_nodes = vec![0.0; n];
        let mut ref_weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            ref_nodes[i] = -x;
            ref_nodes[n - 1 - i] = x;
            ref_weights[i] = w;
            ref_weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            ref_nodes[n / 2] = 0.0;
        }

        let mid = 0.5 * (a + b);
        let half_len = 0.5 * (b - a);
        let nodes = ref_nodes.iter().map(|&x| mid + half_len * x).collect();
        let weights = ref_weights.iter().map(|&w| half_len * w).collect();
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `(P_n(x), P_n'(x))` via the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
