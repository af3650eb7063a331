//! Weighted logistic and Poisson regression by iteratively reweighted least
//! squares, with model-based and cluster-robust covariance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dependent_columns, Cholesky, Matrix};
use crate::math::{abs, dot, exp, expit, ln, norm2, softplus, sqrt};
use crate::{Error, Result};

const MAX_ITER: usize = 100;
const REL_DEVIANCE_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 50.0;
/// |η| beyond which a fitted probability is within about 1e-10 of 0 or 1.
const BOUNDARY_ETA: f64 = 23.0;

/// Design matrix (one row per observation) with column names for
/// diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub x: Matrix,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(x: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != x.cols() {
            return Err(Error::Dimension(format!("{} names for {} columns", names.len(), x.cols())));
        }
        Ok(Self { x, names })
    }

    /// Columns named `c0, c1, ...`.
    pub fn unnamed(x: Matrix) -> Self {
        let names = (0..x.cols()).map(|j| format!("c{j}")).collect();
        Self { x, names }
    }

    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, names)
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Logistic,
    Poisson,
}

impl Family {
    fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Logistic => expit(eta),
            Family::Poisson => exp(eta),
        }
    }

    /// Variance function, which is also `dμ/dη` for both canonical links.
    fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Logistic => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    /// Deviance contribution of one observation, computed from `η`.
    fn unit_deviance(self, y: f64, eta: f64) -> f64 {
        match self {
            // -2 [y log μ + (1 - y) log(1 - μ)], stable for large |η|.
            Family::Logistic => 2.0 * (softplus(eta) - y * eta),
            Family::Poisson => {
                let mu = exp(eta);
                let ylogy = if y > 0.0 { y * (ln(y) - eta) } else { 0.0 };
                2.0 * (ylogy - (y - mu))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    /// Inverse of the weighted information `X' W X`.
    pub model_cov: Matrix,
    /// Sandwich covariance, present when cluster labels were supplied.
    pub robust_cov: Option<Matrix>,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the weighted score at `coef`.
    pub score_norm: f64,
    /// The coefficients diverged and the fit stopped at the boundary. Only
    /// possible through [`fit_logistic_boundary`].
    pub separated: bool,
}

fn check_inputs(design: &Design, y: &[f64], weights: &[f64], offset: Option<&[f64]>) -> Result<()> {
    let n = design.rows();
    if y.len() != n || weights.len() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(Error::Dimension(format!("design has {n} rows but y, weights or offset has a different length")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Invalid("weights must be finite and nonnegative".into()));
    }
    if design.x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("design and response must be finite".into()));
    }
    Ok(())
}

/// Names of columns that are linear combinations of earlier columns on the
/// rows with positive weight.
fn collinear_columns(design: &Design, weights: &[f64]) -> Vec<String> {
    let p = design.cols();
    let mut gram = Matrix::zeros(p, p);
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            gram.add_outer(design.x.row(i), w);
        }
    }
    dependent_columns(&gram, 1e-10).into_iter().map(|j| design.names[j].clone()).collect()
}

struct Pass {
    deviance: f64,
    score: Vec<f64>,
    info: Matrix,
}

fn evaluate(family: Family, design: &Design, y: &[f64], weights: &[f64], offset: Option<&[f64]>, coef: &[f64]) -> Pass {
    let p = design.cols();
    let mut deviance = 0.0;
    let mut score = vec![0.0; p];
    let mut info = Matrix::zeros(p, p);
    for i in 0..design.rows() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = design.x.row(i);
        let eta = dot(row, coef) + offset.map_or(0.0, |o| o[i]);
        let mu = family.mean(eta);
        deviance += w * family.unit_deviance(y[i], eta);
        let r = w * (y[i] - mu);
        for (s, x) in score.iter_mut().zip(row) {
            *s += r * x;
        }
        info.add_outer(row, w * family.variance(mu));
    }
    Pass { deviance, score, info }
}

/// Some positively weighted fitted probability is numerically 0 or 1.
fn at_boundary(design: &Design, weights: &[f64], coef: &[f64]) -> bool {
    (0..design.rows()).any(|i| weights[i] > 0.0 && abs(dot(design.x.row(i), coef)) > BOUNDARY_ETA)
}

fn starting_coef(family: Family, design: &Design, y: &[f64], weights: &[f64], offset: Option<&[f64]>) -> Result<Vec<f64>> {
    // One weighted least-squares fit of a working response built from the
    // data, which lands IRLS close to the solution.
    let p = design.cols();
    let mut xtwx = Matrix::zeros(p, p);
    let mut xtwz = vec![0.0; p];
    for i in 0..design.rows() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let (z, v) = match family {
            Family::Logistic => {
                let m = (y[i] + 0.5) / 2.0;
                (ln(m / (1.0 - m)), m * (1.0 - m))
            }
            Family::Poisson => {
                let m = y[i] + 0.1;
                (ln(m) - offset.map_or(0.0, |o| o[i]), m)
            }
        };
        let row = design.x.row(i);
        xtwx.add_outer(row, w * v);
        for (a, x) in xtwz.iter_mut().zip(row) {
            *a += w * v * z * x;
        }
    }
    Ok(Cholesky::new(&xtwx)?.solve(&xtwz))
}

fn fit(
    family: Family,
    design: &Design,
    y: &[f64],
    weights: &[f64],
    offset: Option<&[f64]>,
    clusters: Option<&[usize]>,
    allow_separation: bool,
) -> Result<GlmFit> {
    check_inputs(design, y, weights, offset)?;
    if clusters.is_some_and(|c| c.len() != design.rows()) {
        return Err(Error::Dimension("cluster labels must match design rows".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Invalid("all weights are zero".into()));
    }
    let collinear = collinear_columns(design, weights);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }

    let mut coef = starting_coef(family, design, y, weights, offset)?;
    let mut pass = evaluate(family, design, y, weights, offset, &coef);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let chol = match Cholesky::new(&pass.info) {
            Ok(c) => c,
            // Information collapses along the diverging direction.
            Err(_) if separated => break,
            Err(_) => return Err(Error::Singular),
        };
        let step = chol.solve(&pass.score);
        // Newton step with halving until the deviance does not increase.
        let mut t = 1.0;
        let (next_coef, next) = loop {
            let cand: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + t * s).collect();
            let ev = evaluate(family, design, y, weights, offset, &cand);
            if ev.deviance.is_finite() && ev.deviance <= pass.deviance * (1.0 + 1e-12) + 1e-300 {
                break (cand, ev);
            }
            t *= 0.5;
            if t < 1e-10 {
                break (coef.clone(), evaluate(family, design, y, weights, offset, &coef));
            }
        };
        let change = abs(pass.deviance - next.deviance) / next.deviance.max(f64::MIN_POSITIVE);
        coef = next_coef;
        pass = next;
        let norm = norm2(&coef);
        if !norm.is_finite() {
            return Err(Error::Separation(norm));
        }
        if norm > SEPARATION_NORM {
            if !allow_separation {
                return Err(Error::Separation(norm));
            }
            separated = true;
        }
        if change < REL_DEVIANCE_TOL {
            converged = true;
            break;
        }
    }
    if family == Family::Logistic && !separated && at_boundary(design, weights, &coef) {
        // Quasi-separation can settle the deviance before the norm grows.
        if !allow_separation {
            return Err(Error::Separation(norm2(&coef)));
        }
        separated = true;
    }
    // Final Newton correction so the score is at round-off level.
    if converged && !separated {
        if let Ok(chol) = Cholesky::new(&pass.info) {
            let step = chol.solve(&pass.score);
            let cand: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + s).collect();
            let ev = evaluate(family, design, y, weights, offset, &cand);
            if norm2(&ev.score) <= norm2(&pass.score) {
                coef = cand;
                pass = ev;
            }
        }
    }
    let model_cov = match Cholesky::new(&pass.info) {
        Ok(c) => c.inverse(),
        Err(_) if separated => Matrix::from_fn(design.cols(), design.cols(), |_, _| f64::NAN),
        Err(e) => return Err(e),
    };
    let robust_cov = match clusters {
        Some(ids) => Some(sandwich(&pass.info, &scores_by_cluster(family, design, y, weights, offset, &coef, ids))?),
        None => None,
    };
    Ok(GlmFit { score_norm: norm2(&pass.score), coef, model_cov, robust_cov, deviance: pass.deviance, iterations, converged, separated })
}

/// Weighted logistic regression. `y` may hold fractional values in
/// `[0, 1]`. Cluster labels request the sandwich covariance.
pub fn fit_logistic(design: &Design, y: &[f64], weights: &[f64], clusters: Option<&[usize]>) -> Result<GlmFit> {
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Invalid("logistic response must lie in [0, 1]".into()));
    }
    fit(Family::Logistic, design, y, weights, None, clusters, false)
}

/// Weighted logistic regression that tolerates separation. When the
/// coefficients diverge, IRLS runs until the deviance settles and returns the
/// boundary fit with `separated` set; fitted probabilities on the separated
/// cells are then numerically 0 or 1 and the model covariance may be NaN.
pub fn fit_logistic_boundary(design: &Design, y: &[f64], weights: &[f64]) -> Result<GlmFit> {
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Invalid("logistic response must lie in [0, 1]".into()));
    }
    fit(Family::Logistic, design, y, weights, None, None, true)
}

/// Weighted Poisson regression with log link and optional offset.
pub fn fit_poisson(design: &Design, y: &[f64], weights: &[f64], offset: Option<&[f64]>) -> Result<GlmFit> {
    if y.iter().any(|&v| v < 0.0) {
        return Err(Error::Invalid("Poisson response must be nonnegative".into()));
    }
    fit(Family::Poisson, design, y, weights, offset, None, false)
}

/// Per-cluster sums of weighted score contributions, in increasing label
/// order.
fn scores_by_cluster(
    family: Family,
    design: &Design,
    y: &[f64],
    weights: &[f64],
    offset: Option<&[f64]>,
    coef: &[f64],
    clusters: &[usize],
) -> Vec<Vec<f64>> {
    let p = design.cols();
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for i in 0..design.rows() {
        let row = design.x.row(i);
        let eta = dot(row, coef) + offset.map_or(0.0, |o| o[i]);
        let r = weights[i] * (y[i] - family.mean(eta));
        let s = sums.entry(clusters[i]).or_insert_with(|| vec![0.0; p]);
        for (a, x) in s.iter_mut().zip(row) {
            *a += r * x;
        }
    }
    sums.into_values().collect()
}

/// `B⁻¹ M B⁻¹` with `M = Σ_c u_c u_c'`.
pub fn sandwich(bread: &Matrix, cluster_scores: &[Vec<f64>]) -> Result<Matrix> {
    let p = bread.rows();
    let inv = Cholesky::new(bread)?.inverse();
    let mut meat = Matrix::zeros(p, p);
    for u in cluster_scores {
        meat.add_outer(u, 1.0);
    }
    let mut cov = inv.mul(&meat)?.mul(&inv)?;
    cov.symmetrize();
    Ok(cov)
}

/// Cluster-robust covariance of a logistic fit.
pub fn sandwich_cov(fit: &GlmFit, design: &Design, y: &[f64], weights: &[f64], clusters: &[usize]) -> Result<Matrix> {
    check_inputs(design, y, weights, None)?;
    if clusters.len() != design.rows() {
        return Err(Error::Dimension("cluster labels must match design rows".into()));
    }
    let bread = evaluate(Family::Logistic, design, y, weights, None, &fit.coef).info;
    sandwich(&bread, &scores_by_cluster(Family::Logistic, design, y, weights, None, &fit.coef, clusters))
}

/// Weighted logistic log-likelihood, for cross-checks against generic
/// optimizers.
pub fn logistic_loglik(design: &Design, y: &[f64], weights: &[f64], coef: &[f64]) -> f64 {
    -0.5 * evaluate(Family::Logistic, design, y, weights, None, coef).deviance
}

/// Standard errors from a covariance matrix.
pub fn std_errors(cov: &Matrix) -> Vec<f64> {
    cov.diagonal().into_iter().map(|v| sqrt(v.max(0.0))).collect()
}
