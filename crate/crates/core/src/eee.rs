//! Expected estimating equations: a conditional exposure model fitted on the
//! validation sample, plugged into inverse-size weighted outcome equations
//! that average the main-sample scores over the unobserved exposure.
//!
//! The corrected equations are the score of a logistic likelihood in which
//! each main-sample unit appears twice, at `x1 = 1` with weight `μX / n` and
//! at `x1 = 0` with weight `(1 - μX) / n`. They are solved by the same IRLS
//! routine as the other logistic fits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Cluster, Dataset, FitResult, Method};
use crate::gee::{outcome_names, outcome_row};
use crate::glm::{fit_logistic, fit_logistic_boundary, Design};
use crate::linalg::Matrix;
use crate::math::{dot, expit};
use crate::rng::{Stream, StreamRng};
use crate::{Error, Result};

/// A product of the indicators `y`, `w` and the cluster size `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Term {
    pub y: bool,
    pub w: bool,
    pub n: bool,
}

impl Term {
    const fn of(y: bool, w: bool, n: bool) -> Self {
        Self { y, w, n }
    }

    fn value(self, y: f64, w: f64, n: f64) -> f64 {
        let mut v = 1.0;
        if self.y {
            v *= y;
        }
        if self.w {
            v *= w;
        }
        if self.n {
            v *= n;
        }
        v
    }

    pub fn label(self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.y, 'y'), (self.w, 'w'), (self.n, 'n')] {
            if on {
                s.push(c);
            }
        }
        s
    }
}

const Y: Term = Term::of(true, false, false);
const W: Term = Term::of(false, true, false);
const N: Term = Term::of(false, false, true);
const YW: Term = Term::of(true, true, false);
const YN: Term = Term::of(true, false, true);
const WN: Term = Term::of(false, true, true);
const YWN: Term = Term::of(true, true, true);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EeeLevel {
    /// Main effects of `y`, `w` and `x2`.
    Eee1,
    /// As EEE1 plus `n`.
    Eee2,
    /// Main effects of `y`, `w`, their interaction, and `x2`.
    Eee3,
    /// All main effects and interactions of `y`, `w`, `n`, plus `x2`.
    Eee4,
    Custom,
}

/// Conditional exposure model `logit P(X = 1 | y, w, n, x2)` on an
/// intercept, the listed terms and optionally the unit covariates.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EeeSpec {
    pub level: EeeLevel,
    pub terms: Vec<Term>,
    pub include_x2: bool,
    pub sparse_cells: SparseCells,
}

/// What to do when the validation sample is too thin for the exposure
/// design: a cell of `y`, `w`, `n` holding only exposed or only unexposed
/// units separates the fit, and a cell pattern with a single size aliases
/// the `n` interactions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SparseCells {
    /// Fail with `Error::Separation` or `Error::RankDeficient`.
    #[default]
    Error,
    /// Keep the boundary fit, whose fitted probabilities on separated cells
    /// are 0 or 1, and fix aliased terms at 0.
    Tolerate,
}

/// Fitted exposure model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureModel {
    pub coef: Vec<f64>,
    pub separated: bool,
    /// Terms dropped as aliased, whose coefficients are 0.
    pub aliased: Vec<String>,
}

impl EeeSpec {
    pub fn new(level: EeeLevel) -> Self {
        let terms = match level {
            EeeLevel::Eee1 => vec![Y, W],
            EeeLevel::Eee2 => vec![Y, W, N],
            EeeLevel::Eee3 => vec![Y, W, YW],
            EeeLevel::Eee4 | EeeLevel::Custom => vec![Y, W, N, YW, YN, WN, YWN],
        };
        Self { level, terms, include_x2: true, sparse_cells: SparseCells::Error }
    }

    pub fn custom(terms: Vec<Term>, include_x2: bool) -> Self {
        Self { level: EeeLevel::Custom, terms, include_x2, sparse_cells: SparseCells::Error }
    }

    pub fn with_sparse_cells(mut self, policy: SparseCells) -> Self {
        self.sparse_cells = policy;
        self
    }

    pub fn method(&self) -> Method {
        match self.level {
            EeeLevel::Eee1 => Method::Eee1,
            EeeLevel::Eee2 => Method::Eee2,
            EeeLevel::Eee3 => Method::Eee3,
            EeeLevel::Eee4 => Method::Eee4,
            EeeLevel::Custom => Method::EeeCustom,
        }
    }

    pub fn arity(&self, x2_dim: usize) -> usize {
        1 + self.terms.len() + if self.include_x2 { x2_dim } else { 0 }
    }

    pub fn names(&self, x2_names: &[String]) -> Vec<String> {
        let mut names = vec![String::from("1")];
        names.extend(self.terms.iter().map(|t| t.label()));
        if self.include_x2 {
            names.extend(x2_names.iter().cloned());
        }
        names
    }

    /// Exposure-model row for one unit.
    pub fn row(&self, y: bool, w: bool, n: u32, x2: &[f64]) -> Vec<f64> {
        let (y, w, n) = (f64::from(u8::from(y)), f64::from(u8::from(w)), f64::from(n));
        let mut row = Vec::with_capacity(self.arity(x2.len()));
        row.push(1.0);
        row.extend(self.terms.iter().map(|t| t.value(y, w, n)));
        if self.include_x2 {
            row.extend_from_slice(x2);
        }
        row
    }
}

/// Fitted `P(X = 1 | y, w, n, x2)` for every unit of `cluster`.
pub fn exposure_probabilities(cluster: &Cluster, spec: &EeeSpec, xi: &[f64]) -> Vec<f64> {
    cluster.units.iter().map(|u| expit(dot(&spec.row(u.y == 1, cluster.surrogate(), cluster.size(), &u.x2), xi))).collect()
}

/// Logistic fit of the true exposure on the exposure design over all units
/// of validated clusters.
pub fn fit_exposure_model(data: &Dataset, spec: &EeeSpec) -> Result<ExposureModel> {
    let mut rows = Vec::new();
    let mut xs = Vec::new();
    for c in &data.clusters {
        if let Some(x) = c.validated_exposure() {
            for u in &c.units {
                rows.push(spec.row(u.y == 1, c.surrogate(), c.size(), &u.x2));
                xs.push(f64::from(u8::from(x)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let names = spec.names(&data.x2_names);
    let weights = vec![1.0; xs.len()];
    if spec.sparse_cells == SparseCells::Error {
        let fit = fit_logistic(&Design::from_rows(&rows, names)?, &xs, &weights, None)?;
        return Ok(ExposureModel { coef: fit.coef, separated: false, aliased: Vec::new() });
    }
    let mut keep: Vec<usize> = (0..names.len()).collect();
    loop {
        let sub: Vec<Vec<f64>> = rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
        let design = Design::from_rows(&sub, keep.iter().map(|&j| names[j].clone()).collect())?;
        match fit_logistic_boundary(&design, &xs, &weights) {
            Ok(fit) => {
                let mut coef = vec![0.0; names.len()];
                for (&j, c) in keep.iter().zip(fit.coef) {
                    coef[j] = c;
                }
                let aliased = (0..names.len()).filter(|j| !keep.contains(j)).map(|j| names[j].clone()).collect();
                return Ok(ExposureModel { coef, separated: fit.separated, aliased });
            }
            // The intercept is never dropped; an aliased intercept means no
            // usable data.
            Err(Error::RankDeficient(cols)) if !cols.iter().any(|c| c == &names[0]) => {
                keep.retain(|&j| !cols.contains(&names[j]));
            }
            Err(e) => return Err(e),
        }
    }
}

struct Augmented {
    design: Design,
    y: Vec<f64>,
    weights: Vec<f64>,
    clusters: Vec<usize>,
}

fn augment(data: &Dataset, spec: &EeeSpec, xi: &[f64]) -> Result<Augmented> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.clusters[a].id.cmp(&data.clusters[b].id));
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    let mut clusters = Vec::new();
    for (label, &k) in order.iter().enumerate() {
        let c = &data.clusters[k];
        let wk = 1.0 / c.units.len() as f64;
        match c.validated_exposure() {
            Some(x) => {
                for u in &c.units {
                    rows.push(outcome_row(x, u, None));
                    y.push(f64::from(u.y));
                    weights.push(wk);
                    clusters.push(label);
                }
            }
            None if c.is_validated() => return Err(Error::Invalid(format!("validated cluster {} has no true exposure", c.id))),
            None => {
                for (u, mx) in c.units.iter().zip(exposure_probabilities(c, spec, xi)) {
                    assert!((0.0..=1.0).contains(&mx), "exposure probability {mx} outside [0, 1]");
                    for (x, share) in [(true, mx), (false, 1.0 - mx)] {
                        rows.push(outcome_row(x, u, None));
                        y.push(f64::from(u.y));
                        weights.push(wk * share);
                        clusters.push(label);
                    }
                }
            }
        }
    }
    let names = outcome_names(data, None);
    let design = Design::new(Matrix::from_row_major(rows.len(), names.len(), rows.concat())?, names)?;
    Ok(Augmented { design, y, weights, clusters })
}

/// Solves the corrected inverse-size weighted equations at a fitted exposure
/// model. The covariance returned is the cluster-robust sandwich treating
/// `xi` as known; use [`bootstrap_se`] for standard errors that carry the
/// exposure-model uncertainty.
pub fn solve_eee(data: &Dataset, xi: &[f64], spec: &EeeSpec) -> Result<FitResult> {
    data.check()?;
    if xi.len() != spec.arity(data.x2_dim()) {
        return Err(Error::Dimension(format!("xi has {} entries, expected {}", xi.len(), spec.arity(data.x2_dim()))));
    }
    let a = augment(data, spec, xi)?;
    let fit = fit_logistic(&a.design, &a.y, &a.weights, Some(&a.clusters))?;
    let mut warnings = Vec::new();
    if fit.score_norm > 1e-8 {
        warnings.push(format!("score norm {:.3e} at the returned root", fit.score_norm));
    }
    Ok(FitResult {
        method: spec.method(),
        names: a.design.names,
        estimates: fit.coef,
        covariance: fit.robust_cov.expect("cluster labels supplied"),
        converged: fit.converged && fit.score_norm <= 1e-8,
        loglik: None,
        iterations: fit.iterations,
        gradient_norm: fit.score_norm,
        warnings,
    })
}

/// Corrected score `Σ_k (1/n_k) Σ_i [...]` at `beta`, for residual checks.
pub fn eee_estimating_function(data: &Dataset, xi: &[f64], spec: &EeeSpec, beta: &[f64]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; beta.len()];
    let mut add = |row: Vec<f64>, r: f64| {
        for (t, v) in total.iter_mut().zip(&row) {
            *t += r * v;
        }
    };
    for c in &data.clusters {
        let wk = 1.0 / c.units.len() as f64;
        match c.validated_exposure() {
            Some(x) => {
                for u in &c.units {
                    let row = outcome_row(x, u, None);
                    let r = wk * (f64::from(u.y) - expit(dot(&row, beta)));
                    add(row, r);
                }
            }
            None => {
                for (u, mx) in c.units.iter().zip(exposure_probabilities(c, spec, xi)) {
                    for (x, share) in [(true, mx), (false, 1.0 - mx)] {
                        let row = outcome_row(x, u, None);
                        let r = wk * share * (f64::from(u.y) - expit(dot(&row, beta)));
                        add(row, r);
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Plug-in fit: exposure model on the validation sample, then the corrected
/// outcome equations.
pub fn fit_eee(data: &Dataset, spec: &EeeSpec) -> Result<FitResult> {
    let model = fit_exposure_model(data, spec)?;
    let mut fit = solve_eee(data, &model.coef, spec)?;
    if model.separated {
        fit.warnings.push("exposure model separated on the validation sample; boundary fit used".into());
    }
    if !model.aliased.is_empty() {
        fit.warnings.push(format!("exposure model terms aliased and fixed at 0: {}", model.aliased.join(", ")));
    }
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BootstrapPlan {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        Self { resamples: 50, seed: 0 }
    }
}

/// Which refit failed inside a bootstrap resample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Exposure,
    Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapFailure {
    pub resample: usize,
    pub stage: Stage,
    pub error: Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapResult {
    pub covariance: Matrix,
    pub se: Vec<f64>,
    pub succeeded: usize,
    /// Resamples whose exposure model needed a boundary fit or dropped
    /// aliased terms.
    pub sparse: usize,
    pub failures: Vec<BootstrapFailure>,
}

/// Cluster indices of resample `b`: validated clusters drawn with
/// replacement from the validation stratum, the rest from the main stratum.
pub fn resample_indices(data: &Dataset, seed: u64, b: usize) -> Vec<usize> {
    let (val, main): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&k| data.clusters[k].is_validated());
    let mut rng = StreamRng::new(seed, &[Stream::Bootstrap as u64, b as u64]);
    let mut out = Vec::with_capacity(data.len());
    for stratum in [&val, &main] {
        for _ in 0..stratum.len() {
            out.push(stratum[rng.below(stratum.len() as u64) as usize]);
        }
    }
    out
}

/// Stratified cluster bootstrap of the whole plug-in pipeline. Resamples
/// that fail are recorded; more than 20% failures is an error.
pub fn bootstrap_se(data: &Dataset, spec: &EeeSpec, plan: &BootstrapPlan) -> Result<BootstrapResult> {
    if plan.resamples < 2 {
        return Err(Error::Invalid(format!("bootstrap needs at least 2 resamples, got {}", plan.resamples)));
    }
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(plan.resamples);
    let mut failures = Vec::new();
    let mut sparse = 0;
    for b in 0..plan.resamples {
        let sample = data.select(&resample_indices(data, plan.seed, b));
        let xi = match fit_exposure_model(&sample, spec) {
            Ok(m) => {
                sparse += usize::from(m.separated || !m.aliased.is_empty());
                m.coef
            }
            Err(error) => {
                failures.push(BootstrapFailure { resample: b, stage: Stage::Exposure, error });
                continue;
            }
        };
        match solve_eee(&sample, &xi, spec) {
            Ok(f) => draws.push(f.estimates),
            Err(error) => failures.push(BootstrapFailure { resample: b, stage: Stage::Outcome, error }),
        }
    }
    if failures.len() * 5 > plan.resamples || draws.len() < 2 {
        let first = failures.first().map_or_else(|| "too few successful resamples".into(), |f| format!("{:?} stage, {}", f.stage, f.error));
        return Err(Error::Bootstrap { failed: failures.len(), resamples: plan.resamples, first });
    }
    let p = draws[0].len();
    let m = draws.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / m).collect();
    let mut covariance = Matrix::zeros(p, p);
    for d in &draws {
        let centred: Vec<f64> = d.iter().zip(&mean).map(|(a, b)| a - b).collect();
        covariance.add_outer(&centred, 1.0 / (m - 1.0));
    }
    let se = covariance.diagonal().iter().map(|v| crate::math::sqrt(*v)).collect();
    Ok(BootstrapResult { covariance, se, succeeded: draws.len(), sparse, failures })
}

/// Plug-in fit with bootstrap covariance.
pub fn fit_eee_bootstrap(data: &Dataset, spec: &EeeSpec, plan: &BootstrapPlan) -> Result<FitResult> {
    let mut fit = fit_eee(data, spec)?;
    let boot = bootstrap_se(data, spec, plan)?;
    fit.covariance = boot.covariance;
    if boot.sparse > 0 {
        fit.warnings.push(format!("exposure model hit sparse cells in {} of {} resamples", boot.sparse, plan.resamples));
    }
    for f in &boot.failures {
        fit.warnings.push(format!("bootstrap resample {} failed in the {:?} stage: {}", f.resample, f.stage, f.error));
    }
    Ok(fit)
}
