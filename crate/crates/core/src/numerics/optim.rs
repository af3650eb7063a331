use alloc::vec;
use alloc::vec::Vec;

use super::diff::{gradient_jacobian, numeric_gradient, numeric_hessian};
use crate::linalg::{Cholesky, Matrix};
use crate::math::{abs, dot, max_abs, norm2};
use crate::{Error, Result};

/// A function to be maximized.
///
/// Implementors that can differentiate analytically override
/// [`Objective::value_and_gradient`] and return `true` from
/// [`Objective::has_analytic_gradient`]; the optimizer then builds the final
/// Hessian from differences of the gradient rather than of the value.
/// Evaluation failures are signalled by non-finite values.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let v = self.value(x);
        let g = numeric_gradient(|y| self.value(y), x, None).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
        (v, g)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }
}

impl<F: Fn(&[f64]) -> f64> Objective for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaximizeOptions {
    /// Convergence threshold on the Euclidean norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    /// Finite-difference Hessian of the objective at `argmax`.
    pub hessian: Matrix,
    /// Gradient norm within tolerance and `-hessian` positive definite.
    pub converged: bool,
    pub iterations: usize,
}

const MAX_STEP: f64 = 5.0;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const POLISH_ROUNDS: usize = 8;

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn finite_point(x: Vec<f64>, (f, g): (f64, Vec<f64>)) -> Option<Point> {
    (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some(Point { x, f, g })
}

/// Backtracking search along ascent direction `d` with safeguarded
/// quadratic interpolation. Non-finite trial points shrink the step.
fn line_search(obj: &dyn Objective, at: &Point, d: &[f64], mut t: f64) -> Option<Point> {
    let slope = dot(&at.g, d);
    if !(slope > 0.0) {
        return None;
    }
    for _ in 0..MAX_BACKTRACK {
        let x: Vec<f64> = at.x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        let vg = obj.value_and_gradient(&x);
        let fx = vg.0;
        if let Some(p) = finite_point(x, vg) {
            if p.f >= at.f + ARMIJO * t * slope {
                return Some(p);
            }
        }
        let next = if fx.is_finite() {
            let denom = 2.0 * (slope * t - (fx - at.f));
            if denom > 0.0 {
                (slope * t * t / denom).clamp(0.1 * t, 0.5 * t)
            } else {
                0.5 * t
            }
        } else {
            0.25 * t
        };
        t = next;
        if t < 1e-20 {
            break;
        }
    }
    None
}

fn hessian_at(obj: &dyn Objective, x: &[f64]) -> Result<Matrix> {
    if obj.has_analytic_gradient() {
        gradient_jacobian(|y| obj.value_and_gradient(y).1, x, None)
    } else {
        let mut h = numeric_hessian(|y| obj.value(y), x, None)?;
        h.symmetrize();
        Ok(h)
    }
}

fn negated(h: &Matrix) -> Matrix {
    h.scaled(-1.0)
}

/// Maximizes `objective` from `init` by BFGS with a backtracking line
/// search, then polishes with Newton steps on a finite-difference Hessian.
///
/// A run that exhausts `max_iter` or stalls is returned with
/// `converged = false`. A non-finite objective at `init` is an error, as is a
/// search that can make no finite progress from a point with non-finite
/// gradient.
pub fn maximize(objective: &dyn Objective, init: &[f64], opts: MaximizeOptions) -> Result<OptimResult> {
    let n = init.len();
    let start = objective.value_and_gradient(init);
    if !start.0.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut cur = finite_point(init.to_vec(), start).ok_or_else(|| Error::NonFiniteObjective { last_good: init.to_vec() })?;

    let mut inv_h = Matrix::identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < opts.max_iter {
        let gnorm = norm2(&cur.g);
        if gnorm <= opts.tol {
            break;
        }
        let mut d = inv_h.mul_vec(&cur.g);
        if !(dot(&cur.g, &d) > 0.0) {
            inv_h = Matrix::identity(n);
            fresh = true;
            d = cur.g.clone();
        }
        let mut t: f64 = 1.0;
        if fresh {
            t = t.min(1.0 / gnorm);
        }
        let dmax = max_abs(&d) * t;
        if dmax > MAX_STEP {
            t *= MAX_STEP / dmax;
        }
        let Some(next) = line_search(objective, &cur, &d, t) else {
            if fresh {
                break;
            }
            inv_h = Matrix::identity(n);
            fresh = true;
            continue;
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = cur.g.iter().zip(&next.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if fresh {
                inv_h = Matrix::identity(n).scaled(sy / dot(&y, &y));
                fresh = false;
            }
            bfgs_update(&mut inv_h, &s, &y, sy);
        }

        let gain = next.f - cur.f;
        stalls = if abs(gain) <= 1e-14 * (1.0 + abs(cur.f)) { stalls + 1 } else { 0 };
        cur = next;
        if stalls >= 5 {
            break;
        }
    }

    // Newton polish on one finite-difference Hessian, refreshed at the end
    // only if the point moved.
    let mut hessian = hessian_at(objective, &cur.x);
    let mut moved = false;
    for _ in 0..POLISH_ROUNDS {
        if norm2(&cur.g) <= opts.tol * 1e-2 {
            break;
        }
        let Ok(h) = &hessian else { break };
        let Ok(chol) = Cholesky::new(&negated(h)) else { break };
        let step = chol.solve(&cur.g);
        let mut t = 1.0;
        let smax = max_abs(&step);
        if smax > MAX_STEP {
            t = MAX_STEP / smax;
        }
        // Near the optimum the objective change drops below its rounding
        // error, so a full step that shrinks the gradient without a visible
        // loss in value is taken before falling back to the line search.
        let x: Vec<f64> = cur.x.iter().zip(&step).map(|(xi, si)| xi + t * si).collect();
        let vg = objective.value_and_gradient(&x);
        let full = finite_point(x, vg);
        let slack = 1e-10 * (1.0 + abs(cur.f));
        let next = match full {
            Some(p) if p.f >= cur.f - slack && norm2(&p.g) < norm2(&cur.g) => p,
            _ => {
                let Some(p) = line_search(objective, &cur, &step, t) else { break };
                if !(p.f > cur.f || norm2(&p.g) < norm2(&cur.g)) {
                    break;
                }
                p
            }
        };
        iterations += 1;
        cur = next;
        moved = true;
    }
    if moved {
        hessian = hessian_at(objective, &cur.x);
    }

    let gradient_norm = norm2(&cur.g);
    let (hessian, interior) = match hessian {
        Ok(h) => {
            let nd = Cholesky::new(&negated(&h)).is_ok();
            (h, nd)
        }
        Err(_) => (Matrix::from_fn(n, n, |_, _| f64::NAN), false),
    };
    Ok(OptimResult {
        converged: gradient_norm <= opts.tol && interior,
        argmax: cur.x,
        value: cur.f,
        gradient: cur.g,
        gradient_norm,
        hessian,
        iterations,
    })
}

/// Inverse-Hessian BFGS update `H ← (I − ρ s y') H (I − ρ y s') + ρ s s'`.
fn bfgs_update(h: &mut Matrix, s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    h.symmetrize();
}
