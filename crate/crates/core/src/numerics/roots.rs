use crate::math::abs;
use crate::{Error, Result};

const MAX_ITER: usize = 500;

fn check_bracket(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Result<()> {
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo * f_hi > 0.0 {
        return Err(Error::InvalidBracket { lo, hi, f_lo, f_hi });
    }
    Ok(())
}

/// Brent's method on `[lo, hi]`. Returns `r` with `|f(r)| <= tol` or a
/// bracket narrower than `tol`. Every step keeps a sign-changing bracket, so
/// convergence never depends on the interpolation steps succeeding.
pub fn find_root(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    check_bracket(lo, hi, fa, fb)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if abs(fc) < abs(fb) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * abs(b) + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if abs(fb) <= tol || abs(xm) <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if abs(e) >= tol1 && abs(fa) > abs(fb) {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = abs(p);
            let min1 = 3.0 * xm * q - abs(tol1 * q);
            let min2 = abs(e * q);
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if abs(d) > tol1 {
            d
        } else if xm > 0.0 {
            tol1
        } else {
            -tol1
        };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: b, value: fb });
        }
    }
    Err(Error::NoConvergence("Brent root finder".into()))
}

/// Newton's method safeguarded by bisection on `[lo, hi]`. `fdf` returns the
/// function value and derivative. Stops when `|f| <= tol` and the last step
/// is below round-off, or when the bracket collapses.
pub fn find_root_newton(mut fdf: impl FnMut(f64) -> (f64, f64), lo: f64, hi: f64, start: f64, tol: f64) -> Result<f64> {
    let (f_lo, _) = fdf(lo);
    let (f_hi, _) = fdf(hi);
    check_bracket(lo, hi, f_lo, f_hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    // Orient so that f(neg) < 0 < f(pos).
    let (mut neg, mut pos) = if f_lo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = if start > lo.min(hi) && start < lo.max(hi) { start } else { 0.5 * (lo + hi) };
    for _ in 0..MAX_ITER {
        let (fx, dfx) = fdf(x);
        if !fx.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: x, value: fx });
        }
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            neg = x;
        } else {
            pos = x;
        }
        let newton = x - fx / dfx;
        let inside = dfx.is_finite() && dfx != 0.0 && (newton - neg) * (newton - pos) < 0.0;
        let next = if inside { newton } else { 0.5 * (neg + pos) };
        let step = abs(next - x);
        x = next;
        if abs(fx) <= tol && step <= 4.0 * f64::EPSILON * (1.0 + abs(x)) {
            return Ok(x);
        }
        if abs(pos - neg) <= 4.0 * f64::EPSILON * (1.0 + abs(x)) {
            return if abs(fx) <= tol || step == 0.0 { Ok(x) } else { Ok(0.5 * (neg + pos)) };
        }
    }
    Err(Error::NoConvergence("safeguarded Newton".into()))
}
