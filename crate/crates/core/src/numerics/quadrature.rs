use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};
use crate::{Error, Result};

/// Quadrature order used for every random-effect integral unless configured.
pub const DEFAULT_ORDER: usize = 40;

const MAX_ORDER: usize = 200;

/// Gauss-Hermite rule for expectations under the standard normal density:
/// `E[f(Z)] ≈ Σ w_j f(t_j)` with `Σ w_j = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Abscissae, strictly increasing and symmetric about zero.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Positive weights summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_standard(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Builds the `order`-point Gauss-Hermite rule for the standard normal
/// weight. Nodes start from the eigenvalues of the Jacobi matrix and are
/// polished by Newton steps on the orthonormal Hermite recurrence; weights
/// are the Christoffel numbers `1 / (n p_{n-1}(t)^2)`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::QuadratureOrder(order));
    }
    let n = order;
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (0..n).map(|k| if k + 1 < n { sqrt((k + 1) as f64) } else { 0.0 }).collect();
    tridiagonal_eigenvalues(&mut diag, &mut off)?;
    diag.sort_by(f64::total_cmp);

    let mut nodes = diag;
    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..4 {
            let (pn, pn1) = orthonormal_hermite(n, *x);
            let deriv = sqrt(n as f64) * pn1;
            let step = pn / deriv;
            *x -= step;
            if abs(step) <= 1e-15 * (1.0 + abs(*x)) {
                break;
            }
        }
        let (_, pn1) = orthonormal_hermite(n, *x);
        *w = 1.0 / (n as f64 * pn1 * pn1);
    }

    // Enforce exact symmetry.
    for j in 0..n / 2 {
        let k = n - 1 - j;
        let x = 0.5 * (nodes[k] - nodes[j]);
        let w = 0.5 * (weights[j] + weights[k]);
        nodes[j] = -x;
        nodes[k] = x;
        weights[j] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    Ok(QuadratureRule { nodes, weights })
}

/// Returns `(p_n(x), p_{n-1}(x))` for the Hermite polynomials orthonormal
/// under the standard normal density.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - sqrt(k as f64) * prev) / sqrt((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL.
/// `off[i]` couples rows `i` and `i + 1`; the last entry is ignored.
fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n > 0 {
        e[n - 1] = 0.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = abs(d[m]) + abs(d[m + 1]);
                if abs(e[m]) <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::NoConvergence("tridiagonal QL".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { abs(r) } else { -abs(r) });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// `∫ f(b) φ(b; 0, σ²) db` by the given rule. `sigma == 0` evaluates `f(0)`.
pub fn expect_normal(mut f: impl FnMut(f64) -> f64, sigma: f64, rule: &QuadratureRule) -> Result<f64> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(alloc::format!("random-effect SD must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        let v = f(0.0);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: 0.0, value: v });
        }
        return Ok(v);
    }
    let mut total = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let b = sigma * t;
        let v = f(b);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: b, value: v });
        }
        total += w * v;
    }
    Ok(total)
}
