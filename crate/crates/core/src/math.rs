//! Scalar helpers. Transcendentals come from `libm` so results are identical
//! with and without `std`.

pub use libm::{cbrt, exp, expm1, fabs as abs, lgamma, log as ln, log1p, sqrt};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

/// `ln expit(x)`.
#[inline]
pub fn ln_expit(x: f64) -> f64 {
    -softplus(-x)
}

/// Bernoulli log mass of `y` under success probability `expit(x)`.
#[inline]
pub fn bernoulli_logit_ln(y: bool, x: f64) -> f64 {
    if y {
        ln_expit(x)
    } else {
        ln_expit(-x)
    }
}

/// `ln(m!)`.
#[inline]
pub fn ln_factorial(m: u32) -> f64 {
    lgamma(f64::from(m) + 1.0)
}

/// Poisson log mass `ln P(M = m)` with log mean `log_rate`.
#[inline]
pub fn poisson_ln(m: u32, log_rate: f64) -> f64 {
    f64::from(m) * log_rate - exp(log_rate) - ln_factorial(m)
}

/// Numerically stable `ln Σ exp(v_i)`. Returns `-inf` for an empty slice or
/// when every term is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| exp(v - max)).sum();
    max + ln(sum)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, abs(*x)))
}
