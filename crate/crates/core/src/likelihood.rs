//! Integrated-likelihood engine shared by the joint model, the marginalized
//! GLMM and the observed-likelihood corrections.
//!
//! Parameters live on an optimizer scale
//! `[α (size model), β, log σ0, log σ1, γ0, γ1 (size model), ν, η]`.
//! Gradients are analytic; per-node outcome probabilities use the separable
//! form `μ_ij = 1 / (1 + e^{-Δ_i} e^{-σ t_j})` so each node costs one
//! division per unit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::data::{indexed_names, Cluster, Dataset, FitResult, JmmParams, Method};
use crate::glm::{fit_logistic, fit_poisson, Design};
use crate::jmm::{omega_with_derivatives, DeltaCache, DeltaSolution, DeltaSolver, FitOptions, OmegaSolution, Scale, SizeConvention};
use crate::linalg::{inverse_spd, Matrix};
use crate::math::{bernoulli_logit_ln, exp, expit, ln, ln_factorial, log_sum_exp};
use crate::numerics::{gauss_hermite, maximize, MaximizeOptions, Objective, QuadratureRule};
use crate::obslik::{ExposureSpec, MisclassSpec};
use crate::{Error, Result};

/// Log σ below which a random-effect SD is reported as collapsed.
const LOG_SIGMA_FLOOR: f64 = -10.0;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ModelSpec {
    pub size_model: bool,
    pub convention: SizeConvention,
    pub scale: Scale,
    pub misclass: Option<MisclassSpec>,
    pub exposure_model: Option<ExposureSpec>,
}

/// How a cluster's exposure enters its likelihood contribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ExposureTerm {
    /// Exposure taken as given; size and outcome factors only.
    Known(bool),
    /// Exposure observed in the validation sample; the misclassification
    /// and exposure-model factors are added.
    Validated(bool),
    /// Exposure unobserved; the contribution mixes over both arms.
    Mixture,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub alpha: Option<Range<usize>>,
    pub beta: Range<usize>,
    pub log_sigma: usize,
    pub gamma: Option<usize>,
    pub nu: Option<Range<usize>>,
    pub eta: Option<Range<usize>>,
    pub len: usize,
    pub names: Vec<String>,
}

impl Layout {
    pub fn new(model: &ModelSpec, x2_dim: usize, z2_dim: usize) -> Self {
        let mut names = Vec::new();
        let mut next = 0;
        let mut block = |names: &mut Vec<String>, labels: Vec<String>| {
            let r = next..next + labels.len();
            next = r.end;
            names.extend(labels);
            r
        };
        let alpha = model.size_model.then(|| block(&mut names, indexed_names("alpha", 2 + z2_dim)));
        let beta = block(&mut names, indexed_names("beta", 2 + x2_dim));
        let log_sigma = block(&mut names, vec!["sigma0".into(), "sigma1".into()]).start;
        let gamma = model.size_model.then(|| block(&mut names, vec!["gamma0".into(), "gamma1".into()]).start);
        let nu = model.misclass.as_ref().map(|m| block(&mut names, indexed_names("nu", m.arity())));
        let eta = model.exposure_model.as_ref().map(|e| block(&mut names, indexed_names("eta", e.arity(z2_dim))));
        Self { alpha, beta, log_sigma, gamma, nu, eta, len: next, names }
    }
}

/// Borrowed parameter values on the natural scale.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View<'a> {
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
    pub sigma: [f64; 2],
    pub gamma: [f64; 2],
    pub nu: &'a [f64],
    pub eta: &'a [f64],
}

impl<'a> View<'a> {
    fn from_theta(layout: &Layout, theta: &'a [f64]) -> Self {
        Self {
            alpha: layout.alpha.clone().map_or(&[][..], |r| &theta[r]),
            beta: &theta[layout.beta.clone()],
            sigma: [exp(theta[layout.log_sigma]), exp(theta[layout.log_sigma + 1])],
            gamma: layout.gamma.map_or([0.0, 0.0], |g| [theta[g], theta[g + 1]]),
            nu: layout.nu.clone().map_or(&[][..], |r| &theta[r]),
            eta: layout.eta.clone().map_or(&[][..], |r| &theta[r]),
        }
    }

    fn from_params(params: &'a JmmParams) -> Self {
        Self {
            alpha: &params.alpha,
            beta: &params.beta,
            sigma: [params.sigma0, params.sigma1],
            gamma: [params.gamma0, params.gamma1],
            nu: params.nu.as_deref().unwrap_or(&[]),
            eta: params.eta.as_deref().unwrap_or(&[]),
        }
    }
}

enum DeltaMode {
    Identity,
    Solve(DeltaSolver),
    Cached(DeltaCache),
}

/// Per-arm node tables for one parameter value.
struct Arm {
    sigma: f64,
    gamma: f64,
    /// `exp(-σ t_j)`.
    e_neg: Vec<f64>,
    /// `exp(γ σ t_j)`.
    e_size: Vec<f64>,
    delta: DeltaMode,
}

impl Arm {
    fn new(sigma: f64, gamma: f64, rule: &QuadratureRule, scale: Scale, cache: bool) -> Self {
        let t = rule.nodes();
        let delta = match scale {
            Scale::Conditional => DeltaMode::Identity,
            Scale::Marginal if cache => DeltaMode::Cached(DeltaCache::new(DeltaSolver::new(sigma, rule))),
            Scale::Marginal => DeltaMode::Solve(DeltaSolver::new(sigma, rule)),
        };
        Self {
            sigma,
            gamma,
            e_neg: t.iter().map(|&tj| exp(-sigma * tj)).collect(),
            e_size: t.iter().map(|&tj| exp(gamma * sigma * tj)).collect(),
            delta,
        }
    }

    fn delta(&mut self, lp: f64) -> Result<DeltaSolution> {
        match &mut self.delta {
            DeltaMode::Identity => Ok(DeltaSolution { delta: lp, d_lp: 1.0, d_sigma: 0.0 }),
            DeltaMode::Solve(s) => s.solve(lp),
            DeltaMode::Cached(c) => c.get(lp),
        }
    }
}

#[derive(Default)]
struct Scratch {
    lf: Vec<f64>,
    pi: Vec<f64>,
    node_resid: Vec<f64>,
    mu: Vec<f64>,
    sols: Vec<DeltaSolution>,
    grads: [Vec<f64>; 2],
}

/// Everything fixed across evaluations: the quadrature rule and the model.
struct Context<'a> {
    model: &'a ModelSpec,
    rule: &'a QuadratureRule,
    ln_w: Vec<f64>,
    layout: Option<&'a Layout>,
}

fn linear_row(coef: &[f64], x: bool, rest: &[f64]) -> f64 {
    coef[0] + coef[1] * f64::from(u8::from(x)) + rest.iter().zip(&coef[2..]).map(|(a, b)| a * b).sum::<f64>()
}

fn add_row(g: &mut [f64], scale: f64, x: bool, rest: &[f64]) {
    g[0] += scale;
    g[1] += scale * f64::from(u8::from(x));
    for (gj, v) in g[2..].iter_mut().zip(rest) {
        *gj += scale * v;
    }
}

impl Context<'_> {
    /// Size and outcome factors for cluster `c` under arm `x`. When `grad`
    /// is given, the gradient of the returned log-likelihood is added to it.
    fn arm_loglik(&self, arms: &mut [Arm; 2], c: &Cluster, x: bool, view: &View, grad: Option<&mut [f64]>, s: &mut Scratch) -> Result<f64> {
        let arm = &mut arms[usize::from(x)];
        let t = self.rule.nodes();
        let nodes = t.len();
        let n = c.units.len();
        let m = (n - 1) as f64;
        let (sigma, gamma) = (arm.sigma, arm.gamma);

        s.lf.clear();
        s.lf.extend_from_slice(&self.ln_w);
        let mut omega = OmegaSolution { omega: 0.0, d_lp: 0.0, d_gamma: 0.0, d_sigma: 0.0 };
        let mut e_omega = 0.0;
        if self.model.size_model {
            let a = linear_row(view.alpha, x, &c.z2);
            omega = match self.model.scale {
                Scale::Conditional => omega_with_derivatives(a, gamma, sigma, SizeConvention::ConditionalIntercept)?,
                Scale::Marginal => omega_with_derivatives(a, gamma, sigma, self.model.convention)?,
            };
            e_omega = exp(omega.omega);
            let base = m * omega.omega - ln_factorial((n - 1) as u32);
            for j in 0..nodes {
                s.lf[j] += base + m * gamma * sigma * t[j] - e_omega * arm.e_size[j];
            }
        }

        s.sols.clear();
        s.mu.clear();
        s.mu.resize(n * nodes, 0.0);
        // Node values are kept as exp(lf_j) * prod_j; lf_j only picks up a
        // log term in the rare event that a product nears underflow.
        let mut prod = vec![1.0f64; nodes];
        let mut shifted = self.model.size_model;
        for (i, u) in c.units.iter().enumerate() {
            let sol = arm.delta(linear_row(view.beta, x, &u.x2))?;
            s.sols.push(sol);
            let a = exp(-sol.delta);
            let row = &mut s.mu[i * nodes..(i + 1) * nodes];
            for j in 0..nodes {
                let v = a * arm.e_neg[j];
                let mu = 1.0 / (1.0 + v);
                row[j] = mu;
                // 1 - μ written as 1 / (1 + 1/v) stays exact when v overflows.
                prod[j] *= if u.y == 1 { mu } else { 1.0 / (1.0 + 1.0 / v) };
                if prod[j] < 1e-250 && prod[j] > 0.0 {
                    s.lf[j] += ln(prod[j]);
                    prod[j] = 1.0;
                    shifted = true;
                }
            }
        }
        s.pi.clear();
        let shift = if shifted {
            let top = s.lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.pi.extend(s.lf.iter().zip(&prod).map(|(&l, &p)| exp(l - top) * p));
            top
        } else {
            s.pi.extend(self.rule.weights().iter().zip(&prod).map(|(&w, &p)| w * p));
            0.0
        };
        let total: f64 = s.pi.iter().sum();
        let ll = shift + ln(total);
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { cluster: c.id.clone(), value: ll });
        }
        let Some(g) = grad else { return Ok(ll) };
        let layout = self.layout.expect("gradient requires a parameter layout");

        for p in &mut s.pi {
            *p /= total;
        }
        s.node_resid.clear();
        s.node_resid.resize(nodes, 0.0);
        let mut g_sigma = 0.0;
        let bidx = layout.beta.clone();
        for (i, u) in c.units.iter().enumerate() {
            let y = f64::from(u.y);
            let row = &s.mu[i * nodes..(i + 1) * nodes];
            let mut d_delta = 0.0;
            for j in 0..nodes {
                let r = y - row[j];
                s.node_resid[j] += r;
                d_delta += s.pi[j] * r;
            }
            let sol = s.sols[i];
            g_sigma += d_delta * sol.d_sigma;
            add_row(&mut g[bidx.clone()], d_delta * sol.d_lp, x, &u.x2);
        }
        let mut g_omega = 0.0;
        let mut g_gamma = 0.0;
        for j in 0..nodes {
            let mut tj_term = s.node_resid[j];
            if self.model.size_model {
                let excess = m - e_omega * arm.e_size[j];
                g_omega += s.pi[j] * excess;
                g_gamma += s.pi[j] * excess * sigma * t[j];
                tj_term += excess * gamma;
            }
            g_sigma += s.pi[j] * t[j] * tj_term;
        }
        let arm_index = usize::from(x);
        if let (Some(ar), Some(gi)) = (layout.alpha.clone(), layout.gamma) {
            g_sigma += g_omega * omega.d_sigma;
            g_gamma += g_omega * omega.d_gamma;
            add_row(&mut g[ar], g_omega * omega.d_lp, x, &c.z2);
            g[gi + arm_index] += g_gamma;
        }
        g[layout.log_sigma + arm_index] += sigma * g_sigma;
        Ok(ll)
    }

    /// Misclassification and exposure-model log factors for arm `x`.
    fn side_factors(&self, c: &Cluster, x: bool, view: &View, grad: Option<&mut [f64]>) -> f64 {
        let mut ll = 0.0;
        let mut grad = grad;
        if let Some(mis) = &self.model.misclass {
            let lin = mis.linear(view.nu, x, c.size());
            let w = c.surrogate();
            ll += bernoulli_logit_ln(w, lin);
            if let (Some(g), Some(layout)) = (grad.as_deref_mut(), self.layout) {
                let r = f64::from(u8::from(w)) - expit(lin);
                mis.add_gradient(&mut g[layout.nu.clone().expect("nu block")], r, x, c.size());
            }
        }
        if let Some(expo) = &self.model.exposure_model {
            let lin = expo.linear(view.eta, &c.z2, c.size());
            ll += bernoulli_logit_ln(x, lin);
            if let (Some(g), Some(layout)) = (grad, self.layout) {
                let r = f64::from(u8::from(x)) - expit(lin);
                expo.add_gradient(&mut g[layout.eta.clone().expect("eta block")], r, &c.z2, c.size());
            }
        }
        ll
    }

    fn cluster_loglik(
        &self,
        arms: &mut [Arm; 2],
        c: &Cluster,
        term: ExposureTerm,
        view: &View,
        grad: Option<&mut [f64]>,
        s: &mut Scratch,
    ) -> Result<f64> {
        match term {
            ExposureTerm::Known(x) => self.arm_loglik(arms, c, x, view, grad, s),
            ExposureTerm::Validated(x) => {
                let mut grad = grad;
                let ll = self.arm_loglik(arms, c, x, view, grad.as_deref_mut(), s)?;
                Ok(ll + self.side_factors(c, x, view, grad))
            }
            ExposureTerm::Mixture => {
                let want_grad = grad.is_some();
                let mut comp = [0.0; 2];
                let mut grads = core::mem::take(&mut s.grads);
                for x in [false, true] {
                    let k = usize::from(x);
                    let gk = if want_grad {
                        grads[k].clear();
                        grads[k].resize(grad.as_ref().map_or(0, |g| g.len()), 0.0);
                        Some(&mut grads[k][..])
                    } else {
                        None
                    };
                    let mut gk = gk;
                    let ll = self.arm_loglik(arms, c, x, view, gk.as_deref_mut(), s);
                    comp[k] = match ll {
                        Ok(v) => v + self.side_factors(c, x, view, gk),
                        Err(e) => {
                            s.grads = grads;
                            return Err(e);
                        }
                    };
                }
                let ll = log_sum_exp(&comp);
                if let Some(g) = grad {
                    for k in 0..2 {
                        let rho = exp(comp[k] - ll);
                        if rho > 0.0 {
                            for (gi, v) in g.iter_mut().zip(&grads[k]) {
                                *gi += rho * v;
                            }
                        }
                    }
                }
                s.grads = grads;
                Ok(ll)
            }
        }
    }
}

fn arms_for(view: &View, rule: &QuadratureRule, scale: Scale, cache: bool) -> [Arm; 2] {
    [Arm::new(view.sigma[0], view.gamma[0], rule, scale, cache), Arm::new(view.sigma[1], view.gamma[1], rule, scale, cache)]
}

fn check_view(model: &ModelSpec, view: &View, x2_dim: usize, z2_dim: usize) -> Result<()> {
    if !(view.sigma[0] > 0.0 && view.sigma[1] > 0.0) {
        return Err(Error::Invalid(format!("random-effect SDs {:?} must be positive", view.sigma)));
    }
    if view.beta.len() != 2 + x2_dim {
        return Err(Error::Dimension(format!("beta has {} entries, expected {}", view.beta.len(), 2 + x2_dim)));
    }
    if model.size_model && view.alpha.len() != 2 + z2_dim {
        return Err(Error::Dimension(format!("alpha has {} entries, expected {}", view.alpha.len(), 2 + z2_dim)));
    }
    if let Some(m) = &model.misclass {
        if view.nu.len() != m.arity() {
            return Err(Error::Dimension(format!("nu has {} entries, expected {}", view.nu.len(), m.arity())));
        }
    }
    if let Some(e) = &model.exposure_model {
        if view.eta.len() != e.arity(z2_dim) {
            return Err(Error::Dimension(format!("eta has {} entries, expected {}", view.eta.len(), e.arity(z2_dim))));
        }
    }
    Ok(())
}

/// Log-likelihood contribution of one cluster at natural-scale parameters.
pub(crate) fn single_cluster(cluster: &Cluster, params: &JmmParams, term: ExposureTerm, model: &ModelSpec, rule: &QuadratureRule) -> Result<f64> {
    let view = View::from_params(params);
    let x2_dim = cluster.units.first().map_or(0, |u| u.x2.len());
    check_view(model, &view, x2_dim, cluster.z2.len())?;
    if cluster.units.is_empty() {
        return Err(Error::Invalid(format!("cluster {} has no units", cluster.id)));
    }
    let ctx = Context { model, rule, ln_w: rule.weights().iter().map(|&w| ln(w)).collect(), layout: None };
    let mut arms = arms_for(&view, rule, model.scale, false);
    ctx.cluster_loglik(&mut arms, cluster, term, &view, None, &mut Scratch::default())
}

/// Summed log-likelihood over a fixed set of cluster contributions.
pub(crate) struct Engine<'a> {
    data: &'a Dataset,
    model: ModelSpec,
    terms: Vec<(usize, ExposureTerm)>,
    rule: QuadratureRule,
    ln_w: Vec<f64>,
    pub layout: Layout,
    use_cache: bool,
}

impl<'a> Engine<'a> {
    pub fn new(data: &'a Dataset, model: ModelSpec, terms: Vec<(usize, ExposureTerm)>, order: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Invalid("no clusters contribute to the likelihood".into()));
        }
        let rule = gauss_hermite(order)?;
        let ln_w = rule.weights().iter().map(|&w| ln(w)).collect();
        let layout = Layout::new(&model, data.x2_dim(), data.z2_dim());
        // With continuous unit covariates nearly every predictor is distinct
        // and memoizing Δ only costs time.
        let use_cache = data.x2_dim() == 0;
        Ok(Self { data, model, terms, rule, ln_w, layout, use_cache })
    }

    /// Total log-likelihood and, if requested, its gradient on the
    /// optimizer scale. Clusters are summed in term order.
    pub fn evaluate(&self, theta: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.layout.len {
            return Err(Error::Dimension(format!("parameter vector has {} entries, expected {}", theta.len(), self.layout.len)));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        let view = View::from_theta(&self.layout, theta);
        check_view(&self.model, &view, self.data.x2_dim(), self.data.z2_dim())?;
        let ctx = Context { model: &self.model, rule: &self.rule, ln_w: self.ln_w.clone(), layout: Some(&self.layout) };
        let mut arms = arms_for(&view, &self.rule, self.model.scale, self.use_cache);
        let mut scratch = Scratch::default();
        let mut grad = if with_grad { vec![0.0; theta.len()] } else { Vec::new() };
        let mut total = 0.0;
        for &(k, term) in &self.terms {
            let g = with_grad.then_some(&mut grad[..]);
            total += ctx.cluster_loglik(&mut arms, &self.data.clusters[k], term, &view, g, &mut scratch)?;
        }
        Ok((total, grad))
    }

    /// Start for `(α, β, log σ, γ)` from Poisson and logistic fits that
    /// ignore the random effect; `exposure` supplies each cluster's arm.
    pub fn default_start(&self, exposure: &[(usize, bool)]) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.layout.len];
        if let Some(ar) = self.layout.alpha.clone() {
            let marginal_size = self.model.convention == SizeConvention::MarginalizedSize && self.model.scale == Scale::Marginal;
            let mut rows = Vec::with_capacity(exposure.len());
            let mut y = Vec::with_capacity(exposure.len());
            for &(k, x) in exposure {
                let c = &self.data.clusters[k];
                let mut row = vec![1.0, f64::from(u8::from(x))];
                row.extend_from_slice(&c.z2);
                rows.push(row);
                let n = c.units.len() as f64;
                y.push(if marginal_size { n } else { n - 1.0 });
            }
            let design = Design::from_rows(&rows, indexed_names("alpha", ar.len()))?;
            let fit = fit_poisson(&design, &y, &vec![1.0; y.len()], None)?;
            theta[ar].copy_from_slice(&fit.coef);
        }
        let s = crate::gee::stack(self.data, exposure, crate::gee::Weighting::Unit, None)?;
        let fit = fit_logistic(&s.design, &s.y, &s.weights, None)?;
        theta[self.layout.beta.clone()].copy_from_slice(&fit.coef);
        Ok(theta)
    }

    pub fn fit(&self, start: &[f64], options: &FitOptions, method: Method) -> Result<FitResult> {
        let opts = MaximizeOptions { tol: options.tol, max_iter: options.max_iter };
        let res = maximize(self, start, opts)?;
        let mut warnings = Vec::new();
        if !res.converged {
            warnings.push(format!("optimizer stopped after {} iterations with gradient norm {:.3e}", res.iterations, res.gradient_norm));
        }
        for k in 0..2 {
            if res.argmax[self.layout.log_sigma + k] < LOG_SIGMA_FLOOR {
                warnings.push(format!("sigma{k} is at the boundary (log sigma < {LOG_SIGMA_FLOOR})"));
            }
        }
        let p = self.layout.len;
        let info = res.hessian.scaled(-1.0);
        let theta_cov = inverse_spd(&info).unwrap_or_else(|_| {
            warnings.push("observed information is not positive definite; covariance unavailable".into());
            Matrix::from_fn(p, p, |_, _| f64::NAN)
        });
        // Delta method from log σ to σ.
        let mut estimates = res.argmax.clone();
        let mut jac = vec![1.0; p];
        for k in 0..2 {
            let i = self.layout.log_sigma + k;
            estimates[i] = exp(res.argmax[i]);
            jac[i] = estimates[i];
        }
        let covariance = Matrix::from_fn(p, p, |i, j| jac[i] * theta_cov[(i, j)] * jac[j]);
        Ok(FitResult {
            method,
            names: self.layout.names.clone(),
            estimates,
            covariance,
            converged: res.converged,
            loglik: Some(res.value),
            iterations: res.iterations,
            gradient_norm: res.gradient_norm,
            warnings,
        })
    }
}

impl Objective for Engine<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x, false).map_or(f64::NAN, |r| r.0)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evaluate(x, true).unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; x.len()]))
    }

    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::obslik::MisclassForm;

    fn toy() -> Dataset {
        let clusters = (0..24)
            .map(|k| {
                let n = 1 + (k * 5) % 4;
                let x = k % 3 != 0;
                let units = (0..n).map(|i| Unit::new((k + 2 * i) % 3 == 0, vec![((k * 7 + i) % 5) as f64 * 0.4 - 0.8])).collect();
                Cluster::new(format!("{k}"), Some(x), (k % 4 == 0) ^ x, k % 2 == 0, vec![], units)
            })
            .collect();
        Dataset::new(clusters, vec!["x2".into()], vec![])
    }

    fn stencil_gradient(e: &Engine, theta: &[f64]) -> Vec<f64> {
        let h = 1e-4;
        (0..theta.len())
            .map(|i| {
                let at = |d: f64| {
                    let mut t = theta.to_vec();
                    t[i] += d;
                    e.evaluate(&t, false).unwrap().0
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            })
            .collect()
    }

    fn check_gradient(model: ModelSpec, terms: Vec<(usize, ExposureTerm)>, theta: &[f64]) {
        let d = toy();
        let e = Engine::new(&d, model, terms, 20).unwrap();
        let (_, g) = e.evaluate(theta, true).unwrap();
        let fd = stencil_gradient(&e, theta);
        for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "component {} ({}): {a} vs {b}", i, e.layout.names[i]);
        }
    }

    fn known(d: &Dataset) -> Vec<(usize, ExposureTerm)> {
        (0..d.len()).map(|k| (k, ExposureTerm::Known(d.clusters[k].complete_data_exposure().unwrap()))).collect()
    }

    #[test]
    fn analytic_gradient_matches_stencil_for_each_model() {
        let d = toy();
        let base = ModelSpec {
            size_model: true,
            convention: SizeConvention::ConditionalIntercept,
            scale: Scale::Marginal,
            misclass: None,
            exposure_model: None,
        };
        let jmm_theta = [0.3, -0.2, -1.0, 0.5, 0.2, 0.4, 0.1, -0.3, 0.25];
        check_gradient(base.clone(), known(&d), &jmm_theta);
        check_gradient(
            ModelSpec { convention: SizeConvention::MarginalizedSize, ..base.clone() },
            known(&d),
            &[0.9, -0.2, -1.0, 0.5, 0.2, 0.4, 0.1, -0.3, 0.25],
        );
        check_gradient(ModelSpec { scale: Scale::Conditional, ..base.clone() }, known(&d), &jmm_theta);
        check_gradient(ModelSpec { size_model: false, ..base.clone() }, known(&d), &[-1.0, 0.5, 0.2, 0.4, 0.1]);

        let obs = ModelSpec {
            misclass: Some(MisclassSpec { form: MisclassForm::SizeDependent, size_cap: Some(3) }),
            exposure_model: Some(ExposureSpec { covariates: false, size: false }),
            ..base.clone()
        };
        let terms: Vec<_> =
            d.clusters.iter().enumerate().map(|(k, c)| (k, c.validated_exposure().map_or(ExposureTerm::Mixture, ExposureTerm::Validated))).collect();
        let mut theta = jmm_theta.to_vec();
        theta.extend([-1.5, 3.0, 0.2, -0.1, 0.7]);
        check_gradient(obs, terms.clone(), &theta);

        let glmm = ModelSpec {
            size_model: false,
            misclass: Some(MisclassSpec { form: MisclassForm::Simple, size_cap: None }),
            exposure_model: Some(ExposureSpec { covariates: false, size: true }),
            ..base
        };
        check_gradient(glmm, terms, &[-1.0, 0.5, 0.2, 0.4, 0.1, -1.2, 2.5, 0.3, 0.2]);
    }

    #[test]
    fn mixture_is_log_sum_of_components() {
        let d = toy();
        let model = ModelSpec {
            size_model: true,
            convention: SizeConvention::ConditionalIntercept,
            scale: Scale::Marginal,
            misclass: Some(MisclassSpec { form: MisclassForm::Simple, size_cap: None }),
            exposure_model: Some(ExposureSpec { covariates: false, size: false }),
        };
        let mut p = JmmParams::new(vec![0.6, -0.2], vec![-2.0, 0.5, 0.2], [2.0, 1.5], [0.25, 0.25]);
        p.nu = Some(vec![-1.7, 2.8]);
        p.eta = Some(vec![-1.1]);
        let rule = gauss_hermite(40).unwrap();
        for c in &d.clusters {
            let mix = single_cluster(c, &p, ExposureTerm::Mixture, &model, &rule).unwrap();
            let parts: Vec<f64> = [false, true].iter().map(|&x| single_cluster(c, &p, ExposureTerm::Validated(x), &model, &rule).unwrap()).collect();
            let direct = exp(parts[0]) + exp(parts[1]);
            assert!((exp(mix) - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn layout_names_follow_blocks() {
        let model = ModelSpec {
            size_model: true,
            convention: SizeConvention::ConditionalIntercept,
            scale: Scale::Marginal,
            misclass: Some(MisclassSpec { form: MisclassForm::SizeDependent, size_cap: None }),
            exposure_model: Some(ExposureSpec { covariates: true, size: false }),
        };
        let l = Layout::new(&model, 1, 1);
        let want = [
            "alpha0", "alpha1", "alpha2", "beta0", "beta1", "beta2", "sigma0", "sigma1", "gamma0", "gamma1", "nu0", "nu1", "nu2", "nu3", "eta0",
            "eta1",
        ];
        assert_eq!(l.names, want);
        assert_eq!(l.len, want.len());
    }
}
