//! Observed-likelihood correction for a misclassified binary cluster
//! exposure: validated clusters contribute their complete likelihood, the
//! rest a two-component mixture over the unobserved exposure.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Cluster, Dataset, ExposureSource, FitResult, JmmParams, Method};
use crate::glm::{fit_logistic, Design};
use crate::jmm::{fit_jmm, FitOptions, JmmSpec, Scale, SizeConvention};
use crate::likelihood::{self, Engine, ExposureTerm, ModelSpec};
use crate::math::{ln, logit};
use crate::numerics::QuadratureRule;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MisclassForm {
    /// logit `P(W = 1 | X)` on `(1, X)`.
    #[default]
    Simple,
    /// logit `P(W = 1 | X, N)` on `(1, X, N, X·N)`.
    SizeDependent,
}

/// Misclassification model for the surrogate exposure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MisclassSpec {
    pub form: MisclassForm,
    /// Sizes above the cap enter the size-dependent design as the cap, for
    /// misclassification that stops changing beyond some size.
    pub size_cap: Option<u32>,
}

impl MisclassSpec {
    pub fn simple() -> Self {
        Self { form: MisclassForm::Simple, size_cap: None }
    }

    pub fn size_dependent(size_cap: Option<u32>) -> Self {
        Self { form: MisclassForm::SizeDependent, size_cap }
    }

    pub fn arity(&self) -> usize {
        match self.form {
            MisclassForm::Simple => 2,
            MisclassForm::SizeDependent => 4,
        }
    }

    fn effective_size(&self, n: u32) -> f64 {
        f64::from(self.size_cap.map_or(n, |cap| n.min(cap)))
    }

    /// Design row `f(x, n)`.
    pub fn row(&self, x: bool, n: u32) -> Vec<f64> {
        let xv = f64::from(u8::from(x));
        match self.form {
            MisclassForm::Simple => vec![1.0, xv],
            MisclassForm::SizeDependent => {
                let m = self.effective_size(n);
                vec![1.0, xv, m, xv * m]
            }
        }
    }

    /// `ν · f(x, n)`.
    pub fn linear(&self, nu: &[f64], x: bool, n: u32) -> f64 {
        let xv = f64::from(u8::from(x));
        let mut v = nu[0] + nu[1] * xv;
        if self.form == MisclassForm::SizeDependent {
            let m = self.effective_size(n);
            v += nu[2] * m + nu[3] * xv * m;
        }
        v
    }

    pub(crate) fn add_gradient(&self, g: &mut [f64], r: f64, x: bool, n: u32) {
        let xv = f64::from(u8::from(x));
        g[0] += r;
        g[1] += r * xv;
        if self.form == MisclassForm::SizeDependent {
            let m = self.effective_size(n);
            g[2] += r * m;
            g[3] += r * xv * m;
        }
    }

    /// Sensitivity and specificity implied by `nu` at size `n`.
    pub fn sens_spec(&self, nu: &[f64], n: u32) -> (f64, f64) {
        let sens = crate::math::expit(self.linear(nu, true, n));
        let spec = 1.0 - crate::math::expit(self.linear(nu, false, n));
        (sens, spec)
    }
}

/// Exposure prevalence model, logit `P(X = 1 | ...)` on
/// `(1, z2 if covariates, n if size)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ExposureSpec {
    pub covariates: bool,
    pub size: bool,
}

impl ExposureSpec {
    pub fn intercept_only() -> Self {
        Self { covariates: false, size: false }
    }

    pub fn with_size() -> Self {
        Self { covariates: false, size: true }
    }

    pub fn arity(&self, z2_dim: usize) -> usize {
        1 + if self.covariates { z2_dim } else { 0 } + usize::from(self.size)
    }

    pub fn row(&self, z2: &[f64], n: u32) -> Vec<f64> {
        let mut row = vec![1.0];
        if self.covariates {
            row.extend_from_slice(z2);
        }
        if self.size {
            row.push(f64::from(n));
        }
        row
    }

    pub fn linear(&self, eta: &[f64], z2: &[f64], n: u32) -> f64 {
        let mut v = eta[0];
        let mut k = 1;
        if self.covariates {
            for z in z2 {
                v += eta[k] * z;
                k += 1;
            }
        }
        if self.size {
            v += eta[k] * f64::from(n);
        }
        v
    }

    pub(crate) fn add_gradient(&self, g: &mut [f64], r: f64, z2: &[f64], n: u32) {
        g[0] += r;
        let mut k = 1;
        if self.covariates {
            for z in z2 {
                g[k] += r * z;
                k += 1;
            }
        }
        if self.size {
            g[k] += r * f64::from(n);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObslikSpec {
    pub misclass: MisclassSpec,
    pub exposure: ExposureSpec,
    pub convention: SizeConvention,
    pub scale: Scale,
    pub options: FitOptions,
}

impl ObslikSpec {
    pub fn new(misclass: MisclassSpec, exposure: ExposureSpec) -> Self {
        Self { misclass, exposure, convention: SizeConvention::default(), scale: Scale::default(), options: FitOptions::default() }
    }
}

fn obs_model(size_model: bool, spec: &ObslikSpec) -> ModelSpec {
    ModelSpec { size_model, convention: spec.convention, scale: spec.scale, misclass: Some(spec.misclass), exposure_model: Some(spec.exposure) }
}

fn term_for(c: &Cluster) -> Result<ExposureTerm> {
    if c.is_validated() {
        c.validated_exposure().map(ExposureTerm::Validated).ok_or_else(|| Error::Invalid(format!("validated cluster {} has no true exposure", c.id)))
    } else {
        Ok(ExposureTerm::Mixture)
    }
}

fn obs_term(cluster: &Cluster, params: &JmmParams) -> Result<ExposureTerm> {
    if params.nu.is_none() || params.eta.is_none() {
        return Err(Error::Invalid("observed likelihood needs nu and eta".into()));
    }
    term_for(cluster)
}

/// Observed log-likelihood contribution of one cluster under the joint
/// model: complete for validated clusters, a mixture over `x` otherwise.
pub fn obs_cluster_loglik_jmm(
    cluster: &Cluster,
    params: &JmmParams,
    mis: &MisclassSpec,
    expo: &ExposureSpec,
    convention: SizeConvention,
    rule: &QuadratureRule,
) -> Result<f64> {
    let term = obs_term(cluster, params)?;
    let model = ModelSpec { size_model: true, convention, scale: Scale::Marginal, misclass: Some(*mis), exposure_model: Some(*expo) };
    likelihood::single_cluster(cluster, params, term, &model, rule)
}

/// As [`obs_cluster_loglik_jmm`] without the cluster-size factor; `alpha`
/// and the `gamma` values are ignored.
pub fn obs_cluster_loglik_glmm(cluster: &Cluster, params: &JmmParams, mis: &MisclassSpec, expo: &ExposureSpec, rule: &QuadratureRule) -> Result<f64> {
    let term = obs_term(cluster, params)?;
    let model = ModelSpec {
        size_model: false,
        convention: SizeConvention::default(),
        scale: Scale::Marginal,
        misclass: Some(*mis),
        exposure_model: Some(*expo),
    };
    likelihood::single_cluster(cluster, params, term, &model, rule)
}

/// Logistic fit on validated clusters with a smoothed-intercept fallback
/// when the fit fails (separation or too few clusters).
fn validation_logistic(rows: &[Vec<f64>], y: &[f64], fallback: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
    if rows.is_empty() {
        return fallback();
    }
    let p = rows[0].len();
    let fit = Design::from_rows(rows, crate::data::indexed_names("v", p)).and_then(|d| fit_logistic(&d, y, &vec![1.0; y.len()], None));
    match fit {
        Ok(f) if f.converged && f.coef.iter().all(|c| c.is_finite() && c.abs() < 15.0) => f.coef,
        _ => fallback(),
    }
}

/// Starting values for ν and η from the validation sample.
fn side_starts(data: &Dataset, spec: &ObslikSpec) -> (Vec<f64>, Vec<f64>) {
    let mut mis_rows = Vec::new();
    let mut w = Vec::new();
    let mut exp_rows = Vec::new();
    let mut xs = Vec::new();
    let (mut tp, mut pos, mut fp, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for c in &data.clusters {
        if let Some(x) = c.validated_exposure() {
            let wv = f64::from(u8::from(c.surrogate()));
            mis_rows.push(spec.misclass.row(x, c.size()));
            w.push(wv);
            exp_rows.push(spec.exposure.row(&c.z2, c.size()));
            xs.push(f64::from(u8::from(x)));
            if x {
                tp += wv;
                pos += 1.0;
            } else {
                fp += wv;
                neg += 1.0;
            }
        }
    }
    let mis_arity = spec.misclass.arity();
    let nu = validation_logistic(&mis_rows, &w, || {
        // Add-one smoothing keeps both rates off the boundary.
        let sens = (tp + 1.0) / (pos + 2.0);
        let fpr = (fp + 1.0) / (neg + 2.0);
        let mut nu = vec![0.0; mis_arity];
        nu[0] = logit(fpr);
        nu[1] = logit(sens) - logit(fpr);
        nu
    });
    let exp_arity = spec.exposure.arity(data.z2_dim());
    let eta = validation_logistic(&exp_rows, &xs, || {
        let mut eta = vec![0.0; exp_arity];
        eta[0] = logit((pos + 1.0) / (pos + neg + 2.0));
        eta
    });
    (nu, eta)
}

fn with_log_sigma(fit: &FitResult, sigma_at: usize) -> Vec<f64> {
    let mut theta = fit.estimates.clone();
    theta[sigma_at] = ln(theta[sigma_at]);
    theta[sigma_at + 1] = ln(theta[sigma_at + 1]);
    theta
}

fn obs_fit(data: &Dataset, spec: &ObslikSpec, size_model: bool, naive: impl FnOnce() -> Result<FitResult>, method: Method) -> Result<FitResult> {
    data.check()?;
    let terms = data.clusters.iter().enumerate().map(|(k, c)| Ok((k, term_for(c)?))).collect::<Result<Vec<_>>>()?;
    let engine = Engine::new(data, obs_model(size_model, spec), terms, spec.options.order)?;
    let start = match &spec.options.start {
        Some(s) => s.clone(),
        None => {
            let naive = naive()?;
            let mut theta = with_log_sigma(&naive, engine.layout.log_sigma);
            let (nu, eta) = side_starts(data, spec);
            theta.extend(nu);
            theta.extend(eta);
            theta
        }
    };
    let mut fit = engine.fit(&start, &spec.options, method)?;
    if !size_model && !spec.exposure.size {
        fit.warnings.push("exposure model omits cluster size; the correction assumes X is independent of N".into());
    }
    Ok(fit)
}

/// Joint fit of the size, outcome, misclassification and exposure models by
/// maximizing the observed likelihood. Starts from the naive joint-model fit
/// on the surrogate and validation-sample logistic fits for `ν` and `η`.
pub fn fit_obslik_jmm(data: &Dataset, spec: &ObslikSpec) -> Result<FitResult> {
    let naive = || {
        let js = JmmSpec {
            exposure: ExposureSource::Misclassified,
            convention: spec.convention,
            scale: spec.scale,
            options: FitOptions { start: None, ..spec.options.clone() },
        };
        fit_jmm(data, &js)
    };
    obs_fit(data, spec, true, naive, Method::ObslikJmm)
}

/// As [`fit_obslik_jmm`], starting from an already computed naive fit on the
/// surrogate, which saves refitting it when both are wanted.
pub fn fit_obslik_jmm_from(data: &Dataset, spec: &ObslikSpec, naive: &FitResult) -> Result<FitResult> {
    obs_fit(data, spec, true, || Ok(naive.clone()), Method::ObslikJmm)
}

/// Observed-likelihood fit of the marginalized GLMM, treating cluster size
/// as fixed. The exposure model should include size.
pub fn fit_obslik_glmm(data: &Dataset, spec: &ObslikSpec) -> Result<FitResult> {
    let naive = || fit_glmm(data, ExposureSource::Misclassified, spec.scale, &FitOptions { start: None, ..spec.options.clone() });
    obs_fit(data, spec, false, naive, Method::ObslikGlmm)
}

/// Marginalized (or conditional) random-intercept logistic model for the
/// outcome alone, with arm-specific random-effect SDs.
pub fn fit_glmm(data: &Dataset, exposure: ExposureSource, scale: Scale, options: &FitOptions) -> Result<FitResult> {
    data.check()?;
    let exposures = data.exposures(exposure)?;
    let model = ModelSpec { size_model: false, convention: SizeConvention::default(), scale, misclass: None, exposure_model: None };
    let terms = exposures.iter().map(|&(k, x)| (k, ExposureTerm::Known(x))).collect();
    let engine = Engine::new(data, model, terms, options.order)?;
    let start = match &options.start {
        Some(s) => s.clone(),
        None => engine.default_start(&exposures)?,
    };
    engine.fit(&start, options, Method::Glmm)
}
