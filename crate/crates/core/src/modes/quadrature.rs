//! Generalized Gauss-Laguerre rules, ∫₀^∞ x^α e^{-x} f(x) dx ≈ Σ wₖ f(xₖ).
//!
//! Nodes come from the eigenvalues of the Jacobi matrix (Golub-Welsch) and are
//! then polished with Newton steps on the three-term recurrence; weights use the
//! closed form in terms of L_{n+1}^{(α)} so they keep full relative accuracy in
//! the tail.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone)]
pub struct GaussLaguerre {
    alpha: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Evaluates (L_n^{(α)}(x), L_{n-1}^{(α)}(x)).
fn laguerre_pair(n: usize, alpha: f64, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

impl GaussLaguerre {
    pub fn new(n: usize, alpha: f64) -> Self {
        assert!(n >= 1, "Gauss-Laguerre rule needs at least one node");
        assert!(alpha > -1.0, "alpha must exceed -1");
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * i as f64 + alpha + 1.0
            } else if i + 1 == j || j + 1 == i {
                let k = i.max(j) as f64;
                (k * (k + alpha)).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        let nf = n as f64;
        for x in nodes.iter_mut() {
            for _ in 0..8 {
                let (ln, lnm1) = laguerre_pair(n, alpha, *x);
                // x L_n' = n L_n - (n + α) L_{n-1}
                let deriv = (nf * ln - (nf + alpha) * lnm1) / *x;
                let step = ln / deriv;
                *x -= step;
                if step.abs() <= 1e-15 * x.abs() {
                    break;
                }
            }
        }

        let log_prefactor = ln_gamma(nf + alpha + 1.0) - ln_gamma(nf + 1.0);
        let weights = nodes
            .iter()
            .map(|&x| {
                let (lnp1, _) = laguerre_pair(n + 1, alpha, x);
                (log_prefactor + x.ln() - 2.0 * ((nf + 1.0) * lnp1.abs()).ln()).exp()
            })
            .collect();
        Self { alpha, nodes, weights }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Returns (Σ wₖ f(xₖ), Σ wₖ |f(xₖ)|).
    pub fn integrate_with_magnitude<F: FnMut(f64) -> f64>(&self, mut f: F) -> (f64, f64) {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold((0.0, 0.0), |(sum, mag), (&x, &w)| {
                let v = w * f(x);
                (sum + v, mag + v.abs())
            })
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, f: F) -> f64 {
        self.integrate_with_magnitude(f).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    #[test]
    fn weights_sum_to_gamma() {
        for &alpha in &[0.0, 1.0, 2.0, 5.0] {
            for &n in &[1usize, 4, 16, 64, 128] {
                let rule = GaussLaguerre::new(n, alpha);
                let total: f64 = rule.weights().iter().sum();
                let expected = gamma(alpha + 1.0);
                let tol = if n > 32 { 1e-10 } else { 1e-12 };
                assert!(
                    (total - expected).abs() < tol * expected,
                    "n={n} alpha={alpha}: {total} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn exact_for_polynomials() {
        // ∫ x^α e^{-x} x^k dx = Γ(α + k + 1)
        let rule = GaussLaguerre::new(8, 2.0);
        for k in 0..16 {
            let got = rule.integrate(|x| x.powi(k));
            let expected = gamma(2.0 + k as f64 + 1.0);
            assert!((got - expected).abs() < 1e-11 * expected, "k={k}");
        }
    }
}
