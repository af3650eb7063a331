//! Joint marginalized model of cluster size and outcome: the implicit
//! intercepts `Δ` and `Ω`, per-cluster integrated likelihood, and maximum
//! likelihood fitting.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::data::{Cluster, Dataset, ExposureSource, FitResult, JmmParams};
use crate::likelihood::{self, Engine, ExposureTerm, ModelSpec};
use crate::math::{abs, expit, expm1, ln, ln_expit, sqrt};
use crate::numerics::{find_root_newton, QuadratureRule, DEFAULT_ORDER};
use crate::{Error, Result};

/// Root-finding tolerance on the log-mean scale for `Δ` solves.
pub const DELTA_TOL: f64 = 1e-12;

// Logistic-normal approximation constant 16√3 / (15π).
const PROBIT_SCALE: f64 = 0.588_097_108_874_019_9;

/// How the size model's intercept `Ω` relates to `Zα`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SizeConvention {
    /// `Ω = Zα`: `α` is conditional on the random effect.
    #[default]
    ConditionalIntercept,
    /// `Ω` solved so that `E[N | Z] = exp(Zα)`.
    MarginalizedSize,
}

/// Whether `β` carries population-averaged or cluster-specific meaning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scale {
    /// `Δ` solved so that `E[Y | X] = expit(Xβ)`.
    #[default]
    Marginal,
    /// `Δ = Xβ` and `Ω = Zα`, the ordinary conditional joint model.
    Conditional,
}

/// `Δ` with its derivatives in the marginal linear predictor and in `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaSolution {
    pub delta: f64,
    pub d_lp: f64,
    pub d_sigma: f64,
}

/// Solves `E[expit(Δ + σZ)] = expit(lp)` for one `σ` and quadrature rule.
#[derive(Clone, Debug)]
pub struct DeltaSolver {
    sigma: f64,
    t: Vec<f64>,
    w: Vec<f64>,
    /// `exp(-σ t_j)`.
    e_neg: Vec<f64>,
}

struct Moments {
    /// `Σ w μ`.
    m0: f64,
    /// `Σ w μ (1 - μ)`.
    m1: f64,
    /// `Σ w μ (1 - μ) t`.
    m1t: f64,
}

impl DeltaSolver {
    pub fn new(sigma: f64, rule: &QuadratureRule) -> Self {
        let t = rule.nodes().to_vec();
        let e_neg = t.iter().map(|&tj| crate::math::exp(-sigma * tj)).collect();
        Self { sigma, t, w: rule.weights().to_vec(), e_neg }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn moments(&self, delta: f64, with_t: bool) -> Moments {
        let a = crate::math::exp(-delta);
        let (mut m0, mut m1, mut m1t) = (0.0, 0.0, 0.0);
        for j in 0..self.t.len() {
            let u = a * self.e_neg[j];
            let mu = 1.0 / (1.0 + u);
            let v = if u.is_finite() { mu * (u * mu) } else { 0.0 };
            m0 += self.w[j] * mu;
            m1 += self.w[j] * v;
            if with_t {
                m1t += self.w[j] * v * self.t[j];
            }
        }
        Moments { m0, m1, m1t }
    }

    /// Solution for `lp <= 0`, in log-mean space where Newton is well
    /// behaved and relative accuracy is preserved for small probabilities.
    fn solve_nonpositive(&self, lp: f64) -> Result<f64> {
        let target = ln_expit(lp);
        let fdf = |d: f64| {
            let m = self.moments(d, false);
            (ln(m.m0) - target, m.m1 / m.m0)
        };
        let mut d = lp * sqrt(1.0 + PROBIT_SCALE * PROBIT_SCALE * self.sigma * self.sigma);
        for _ in 0..12 {
            let (f, df) = fdf(d);
            if !(f.is_finite() && df > 0.0) {
                break;
            }
            if abs(f) <= DELTA_TOL {
                return Ok(d);
            }
            let step = f / df;
            d -= step;
            // Convergence is quadratic, so once the step is this small the
            // residual after it is far below tolerance.
            if abs(step) <= 1e-7 * (1.0 + abs(d)) {
                return Ok(d);
            }
        }
        let lo = lp - 10.0 * self.sigma - 10.0;
        let hi = lp + 10.0 * self.sigma + 10.0;
        find_root_newton(fdf, lo, hi, d, DELTA_TOL)
    }

    pub fn solve(&self, lp: f64) -> Result<DeltaSolution> {
        if !lp.is_finite() {
            return Err(Error::Invalid(alloc::format!("marginal linear predictor {lp} is not finite")));
        }
        if self.sigma == 0.0 {
            return Ok(DeltaSolution { delta: lp, d_lp: 1.0, d_sigma: 0.0 });
        }
        // Δ(-lp) = -Δ(lp) because the nodes are symmetric, so Δ(0) = 0.
        let s = if lp > 0.0 { -1.0 } else { 1.0 };
        let d = if lp == 0.0 { 0.0 } else { s * self.solve_nonpositive(s * lp)? };
        let m = self.moments(d, true);
        let p = expit(lp);
        Ok(DeltaSolution { delta: d, d_lp: p * (1.0 - p) / m.m1, d_sigma: -m.m1t / m.m1 })
    }
}

/// `Δ` such that the random-intercept mean reproduces `expit(marginal_lp)`.
pub fn solve_delta(marginal_lp: f64, sigma: f64, rule: &QuadratureRule) -> Result<f64> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(alloc::format!("random-effect SD must be >= 0, got {sigma}")));
    }
    Ok(DeltaSolver::new(sigma, rule).solve(marginal_lp)?.delta)
}

/// Memo of `Δ` solutions for one `σ`, keyed by the linear predictor rounded
/// to 1e-12.
#[derive(Clone, Debug)]
pub struct DeltaCache {
    solver: DeltaSolver,
    memo: BTreeMap<i64, DeltaSolution>,
}

impl DeltaCache {
    pub fn new(solver: DeltaSolver) -> Self {
        Self { solver, memo: BTreeMap::new() }
    }

    pub fn get(&mut self, lp: f64) -> Result<DeltaSolution> {
        let scaled = lp * 1e12;
        if !(abs(scaled) < 9.0e18) {
            return self.solver.solve(lp);
        }
        let key = libm::round(scaled) as i64;
        if let Some(s) = self.memo.get(&key) {
            return Ok(*s);
        }
        let s = self.solver.solve(lp)?;
        self.memo.insert(key, s);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

/// `Ω` with derivatives with respect to `Zα`, `γ` and `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmegaSolution {
    pub omega: f64,
    pub d_lp: f64,
    pub d_gamma: f64,
    pub d_sigma: f64,
}

pub fn omega_with_derivatives(alpha_lp: f64, gamma: f64, sigma: f64, convention: SizeConvention) -> Result<OmegaSolution> {
    match convention {
        SizeConvention::ConditionalIntercept => Ok(OmegaSolution { omega: alpha_lp, d_lp: 1.0, d_gamma: 0.0, d_sigma: 0.0 }),
        SizeConvention::MarginalizedSize => {
            if !(alpha_lp > 0.0) {
                return Err(Error::SizeDomain(alpha_lp));
            }
            // E[N - 1 | Z] = e^{Zα} - 1 = e^{Ω + γ²σ²/2}.
            let omega = ln(expm1(alpha_lp)) - 0.5 * gamma * gamma * sigma * sigma;
            Ok(OmegaSolution { omega, d_lp: -1.0 / expm1(-alpha_lp), d_gamma: -gamma * sigma * sigma, d_sigma: -gamma * gamma * sigma })
        }
    }
}

/// Size-model intercept `Ω` for linear predictor `alpha_lp = Zα`.
pub fn solve_omega(alpha_lp: f64, gamma: f64, sigma: f64, convention: SizeConvention) -> Result<f64> {
    Ok(omega_with_derivatives(alpha_lp, gamma, sigma, convention)?.omega)
}

/// Log of the integrated joint likelihood of one cluster's size and
/// outcomes, with exposure `x1` driving both submodels. `x1 = None` uses the
/// cluster's complete-data exposure.
pub fn cluster_loglik(cluster: &Cluster, params: &JmmParams, x1: Option<bool>, convention: SizeConvention, rule: &QuadratureRule) -> Result<f64> {
    params.check()?;
    let x = match x1 {
        Some(x) => x,
        None => cluster.complete_data_exposure().ok_or_else(|| Error::Invalid(alloc::format!("cluster {} has no exposure", cluster.id)))?,
    };
    let model = ModelSpec { size_model: true, convention, scale: Scale::Marginal, misclass: None, exposure_model: None };
    likelihood::single_cluster(cluster, params, ExposureTerm::Known(x), &model, rule)
}

/// Options shared by the likelihood fits.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub order: usize,
    /// Gradient-norm convergence threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point on the optimizer scale (log σ); `None` derives one
    /// from the data.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, tol: 1e-6, max_iter: 500, start: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JmmSpec {
    pub exposure: ExposureSource,
    pub convention: SizeConvention,
    pub scale: Scale,
    pub options: FitOptions,
}

impl JmmSpec {
    pub fn new(exposure: ExposureSource) -> Self {
        Self { exposure, convention: SizeConvention::default(), scale: Scale::default(), options: FitOptions::default() }
    }
}

/// Maximum likelihood fit over `(α, β, log σ0, log σ1, γ0, γ1)`. Reported
/// estimates and covariance are on the natural `σ` scale.
pub fn fit_jmm(data: &Dataset, spec: &JmmSpec) -> Result<FitResult> {
    data.check()?;
    let exposure = data.exposures(spec.exposure)?;
    let model = ModelSpec { size_model: true, convention: spec.convention, scale: spec.scale, misclass: None, exposure_model: None };
    let terms: Vec<(usize, ExposureTerm)> = exposure.iter().map(|&(k, x)| (k, ExposureTerm::Known(x))).collect();
    let engine = Engine::new(data, model, terms, spec.options.order)?;
    let start = match &spec.options.start {
        Some(s) => s.clone(),
        None => engine.default_start(&exposure)?,
    };
    engine.fit(&start, &spec.options, crate::data::Method::Jmm)
}

/// Optimizer-scale parameter vector (log σ) for `params` under the JMM
/// layout, with ν and η appended when present.
pub fn params_to_theta(params: &JmmParams, size_model: bool) -> Vec<f64> {
    let mut theta = Vec::new();
    if size_model {
        theta.extend_from_slice(&params.alpha);
    }
    theta.extend_from_slice(&params.beta);
    theta.push(ln(params.sigma0));
    theta.push(ln(params.sigma1));
    if size_model {
        theta.push(params.gamma0);
        theta.push(params.gamma1);
    }
    if let Some(nu) = &params.nu {
        theta.extend_from_slice(nu);
    }
    if let Some(eta) = &params.eta {
        theta.extend_from_slice(eta);
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::math::{exp, poisson_ln};
    use crate::numerics::{expect_normal, gauss_hermite};
    use alloc::vec;

    fn trapezoid_normal(f: impl Fn(f64) -> f64, sigma: f64, points: usize) -> f64 {
        let (lo, hi) = (-10.0 * sigma, 10.0 * sigma);
        let h = (hi - lo) / (points - 1) as f64;
        let norm = 1.0 / (sigma * sqrt(2.0 * core::f64::consts::PI));
        let g = |b: f64| f(b) * norm * exp(-0.5 * (b / sigma) * (b / sigma));
        let mut s = 0.5 * (g(lo) + g(hi));
        for k in 1..points - 1 {
            s += g(lo + k as f64 * h);
        }
        s * h
    }

    #[test]
    fn degenerate_random_effect() {
        let rule = gauss_hermite(40).unwrap();
        let d = solve_delta(-1.3, 1e-12, &rule).unwrap();
        assert!((d + 1.3).abs() < 1e-6);
    }

    #[test]
    fn zero_predictor_gives_zero() {
        let rule = gauss_hermite(40).unwrap();
        for sigma in [0.5, 1.5, 2.0, 4.0] {
            assert_eq!(solve_delta(0.0, sigma, &rule).unwrap(), 0.0);
        }
    }

    #[test]
    fn matches_dense_bisection_with_trapezoid_integration() {
        // Independent oracle: bisection to a 1e-14 bracket on a
        // 10^6-point trapezoid integral.
        let (lp, sigma) = (-4.0 + 0.5, 1.5);
        let target = expit(lp);
        let g = |d: f64| trapezoid_normal(|b| expit(d + b), sigma, 1_000_000) - target;
        let (mut lo, mut hi) = (-12.0, 0.0);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let rule = gauss_hermite(40).unwrap();
        let got = solve_delta(lp, sigma, &rule).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn marginal_reproduction_grid() {
        for order in [40, 80] {
            let rule = gauss_hermite(order).unwrap();
            for sigma in [0.1, 0.5, 1.0, 1.5, 2.0, 3.0] {
                let solver = DeltaSolver::new(sigma, &rule);
                let mut prev = f64::NEG_INFINITY;
                for k in -40..=40 {
                    let lp = 0.2 * k as f64;
                    let d = solver.solve(lp).unwrap();
                    let m = expect_normal(|b| expit(d.delta + b), sigma, &rule).unwrap();
                    assert!((m - expit(lp)).abs() < 1e-10, "order {order} σ {sigma} lp {lp}");
                    assert!(d.delta > prev, "Δ must increase with lp");
                    prev = d.delta;
                }
            }
        }
    }

    #[test]
    fn delta_derivatives_match_differences() {
        let rule = gauss_hermite(40).unwrap();
        let (lp, sigma) = (-2.7, 1.8);
        let d = DeltaSolver::new(sigma, &rule).solve(lp).unwrap();
        let h = 1e-6;
        let dl = (solve_delta(lp + h, sigma, &rule).unwrap() - solve_delta(lp - h, sigma, &rule).unwrap()) / (2.0 * h);
        let ds = (solve_delta(lp, sigma + h, &rule).unwrap() - solve_delta(lp, sigma - h, &rule).unwrap()) / (2.0 * h);
        assert!((d.d_lp - dl).abs() < 1e-7);
        assert!((d.d_sigma - ds).abs() < 1e-7);
    }

    #[test]
    fn cache_returns_identical_solutions() {
        let rule = gauss_hermite(40).unwrap();
        let mut cache = DeltaCache::new(DeltaSolver::new(2.0, &rule));
        let a = cache.get(-3.25).unwrap();
        let b = cache.get(-3.25 + 1e-14).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn omega_conventions() {
        assert_eq!(solve_omega(0.37, 0.25, 2.0, SizeConvention::ConditionalIntercept).unwrap(), 0.37);
        let o = solve_omega(ln(2.0), 0.0, 1.5, SizeConvention::MarginalizedSize).unwrap();
        assert!(o.abs() < 1e-15);
        assert_eq!(solve_omega(-0.1, 0.0, 1.0, SizeConvention::MarginalizedSize).unwrap_err(), Error::SizeDomain(-0.1));
    }

    #[test]
    fn marginalized_size_reproduces_the_mean_by_quadrature() {
        let (a, gamma, sigma) = (0.6, 0.25, 2.0);
        let omega = solve_omega(a, gamma, sigma, SizeConvention::MarginalizedSize).unwrap();
        let rule = gauss_hermite(80).unwrap();
        // E[N | Z] = 1 + E[exp(Ω + γ b)].
        let mean = 1.0 + expect_normal(|b| exp(omega + gamma * b), sigma, &rule).unwrap();
        assert!((mean - exp(a)).abs() < 1e-8);
        // Quadrature solve of the same equation by bisection on Ω.
        let (mut lo, mut hi) = (-5.0, 5.0);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            let m = 1.0 + expect_normal(|b| exp(mid + gamma * b), sigma, &rule).unwrap();
            if m < exp(a) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((omega - 0.5 * (lo + hi)).abs() < 1e-8);
    }

    fn params(beta0: f64, sigma: f64, gamma: f64) -> JmmParams {
        JmmParams::new(vec![0.6, -0.2], vec![beta0, 0.5, 0.2], [sigma, sigma * 0.75], [gamma, gamma])
    }

    #[test]
    fn no_random_effect_factorizes() {
        let rule = gauss_hermite(40).unwrap();
        let units = vec![Unit::new(true, vec![0.3]), Unit::new(false, vec![-1.0]), Unit::new(false, vec![0.0])];
        let c = Cluster::new("c", Some(true), true, true, vec![], units.clone());
        let p = params(-1.0, 1e-300, 0.0);
        let got = cluster_loglik(&c, &p, None, SizeConvention::ConditionalIntercept, &rule).unwrap();
        let mut want = poisson_ln(2, 0.6 - 0.2);
        for u in &units {
            let lp = -1.0 + 0.5 + 0.2 * u.x2[0];
            want += crate::math::bernoulli_logit_ln(u.y == 1, lp);
        }
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn singleton_matches_trapezoid_oracle() {
        let rule = gauss_hermite(40).unwrap();
        let c = Cluster::new("c", Some(false), false, true, vec![], vec![Unit::new(false, vec![0.0])]);
        let mut p = params(-4.0, 2.0, 0.0);
        p.beta = vec![-4.0, 0.5, 0.0];
        let got = cluster_loglik(&c, &p, None, SizeConvention::ConditionalIntercept, &rule).unwrap();
        // Independent oracle: bisection Δ on the trapezoid integral.
        let target = expit(-4.0);
        let g = |d: f64| trapezoid_normal(|b| expit(d + b), 2.0, 200_001) - target;
        let (mut lo, mut hi) = (-15.0, 0.0);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let delta = 0.5 * (lo + hi);
        let outcome = trapezoid_normal(|b| 1.0 - expit(delta + b), 2.0, 1_000_000);
        let want = poisson_ln(0, 0.6) + ln(outcome);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn override_consistent_with_stored_exposure() {
        let rule = gauss_hermite(40).unwrap();
        let units = vec![Unit::new(false, vec![0.3]), Unit::new(true, vec![1.0])];
        let c = Cluster::new("c", Some(true), false, true, vec![], units);
        let p = params(-3.0, 1.7, -0.25);
        let a = cluster_loglik(&c, &p, None, SizeConvention::ConditionalIntercept, &rule).unwrap();
        let b = cluster_loglik(&c, &p, Some(true), SizeConvention::ConditionalIntercept, &rule).unwrap();
        assert_eq!(a, b);
        let other = cluster_loglik(&c, &p, Some(false), SizeConvention::ConditionalIntercept, &rule).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn outcome_factor_is_a_probability() {
        let rule = gauss_hermite(40).unwrap();
        for n in 1..6 {
            let units = (0..n).map(|i| Unit::new(i % 2 == 0, vec![i as f64 * 0.4])).collect();
            let c = Cluster::new("c", Some(n % 2 == 0), false, true, vec![], units);
            let p = params(-2.0, 1.5, 0.25);
            let total = cluster_loglik(&c, &p, None, SizeConvention::ConditionalIntercept, &rule).unwrap();
            // Size factor alone is a Poisson mixture, bounded by the largest
            // Poisson mass; the outcome factor is at most 1.
            assert!(total <= 0.0);
            assert!(total.is_finite());
        }
    }
}
