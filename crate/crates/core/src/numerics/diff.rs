use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math::{abs, cbrt, sqrt};
use crate::{Error, Result};

/// Central-difference step for coordinate value `x`: `eps^(1/3) (1 + |x|)`.
#[inline]
pub fn default_step(x: f64) -> f64 {
    cbrt(f64::EPSILON) * (1.0 + abs(x))
}

// Second differences of function values lose two orders of the step, so
// they use eps^(1/4) instead.
#[inline]
fn hessian_step(x: f64) -> f64 {
    sqrt(sqrt(f64::EPSILON)) * (1.0 + abs(x))
}

/// Central-difference gradient. `h = None` uses [`default_step`] per
/// coordinate.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: Option<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let hi = h.unwrap_or_else(|| default_step(x[i]));
        probe[i] = x[i] + hi;
        let up = f(&probe);
        probe[i] = x[i] - hi;
        let down = f(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteDifference(i));
        }
        grad.push((up - down) / (2.0 * hi));
    }
    Ok(grad)
}

/// Hessian from second differences of function values, symmetrized as
/// `(H + H') / 2`. `h = None` uses `eps^(1/4) (1 + |x|)` per coordinate.
pub fn numeric_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: Option<f64>) -> Result<Matrix> {
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|&v| h.unwrap_or_else(|| hessian_step(v))).collect();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFiniteDifference(0));
    }
    let mut probe = x.to_vec();
    let eval = |probe: &mut [f64], moves: &[(usize, f64)], coord: usize| -> Result<f64> {
        for &(i, d) in moves {
            probe[i] = x[i] + d;
        }
        let v = f(probe);
        for &(i, _) in moves {
            probe[i] = x[i];
        }
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteDifference(coord))
        }
    };
    let mut hess = Matrix::zeros(n, n);
    for i in 0..n {
        let hi = steps[i];
        let up = eval(&mut probe, &[(i, hi)], i)?;
        let down = eval(&mut probe, &[(i, -hi)], i)?;
        hess[(i, i)] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let pp = eval(&mut probe, &[(i, hi), (j, hj)], i)?;
            let pm = eval(&mut probe, &[(i, hi), (j, -hj)], i)?;
            let mp = eval(&mut probe, &[(i, -hi), (j, hj)], i)?;
            let mm = eval(&mut probe, &[(i, -hi), (j, -hj)], i)?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Jacobian of a gradient map by central differences, symmetrized. This is
/// the Hessian used whenever an analytic gradient is available.
pub fn gradient_jacobian(grad: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: Option<f64>) -> Result<Matrix> {
    let n = x.len();
    let mut jac = Matrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let hj = h.unwrap_or_else(|| default_step(x[j]));
        probe[j] = x[j] + hj;
        let up = grad(&probe);
        probe[j] = x[j] - hj;
        let down = grad(&probe);
        probe[j] = x[j];
        if up.len() != n || down.len() != n {
            return Err(Error::Dimension("gradient length".into()));
        }
        for i in 0..n {
            let v = (up[i] - down[i]) / (2.0 * hj);
            if !v.is_finite() {
                return Err(Error::NonFiniteDifference(j));
            }
            jac[(i, j)] = v;
        }
    }
    jac.symmetrize();
    Ok(jac)
}
