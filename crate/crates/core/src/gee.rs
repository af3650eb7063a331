//! Independence estimating equations for the marginal logistic outcome
//! model, with inverse-cluster-size (WEE) or unit (IEE) weights and
//! cluster-robust covariance.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{indexed_names, Dataset, ExposureSource, FitResult, Method, Unit};
use crate::glm::{fit_logistic, Design};
use crate::linalg::Matrix;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Weighting {
    /// Each unit weighted by `1 / n_k`.
    InverseSize,
    /// Each unit weighted by 1.
    Unit,
}

impl Weighting {
    pub fn weight(self, n: usize) -> f64 {
        match self {
            Weighting::InverseSize => 1.0 / n as f64,
            Weighting::Unit => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeeSpec {
    pub weighting: Weighting,
    pub exposure: ExposureSource,
    /// Indices of the unit covariates entering the outcome model; `None`
    /// uses all of them.
    pub covariates: Option<Vec<usize>>,
}

impl GeeSpec {
    pub fn wee(exposure: ExposureSource) -> Self {
        Self { weighting: Weighting::InverseSize, exposure, covariates: None }
    }

    pub fn iee(exposure: ExposureSource) -> Self {
        Self { weighting: Weighting::Unit, exposure, covariates: None }
    }
}

/// Outcome covariate row `(1, x1, x2[sel]...)`.
pub fn outcome_row(x1: bool, unit: &Unit, covariates: Option<&[usize]>) -> Vec<f64> {
    let mut row = vec![1.0, x1 as u8 as f64];
    match covariates {
        Some(sel) => row.extend(sel.iter().map(|&j| unit.x2[j])),
        None => row.extend_from_slice(&unit.x2),
    }
    row
}

pub fn outcome_names(data: &Dataset, covariates: Option<&[usize]>) -> Vec<alloc::string::String> {
    let p = covariates.map_or(data.x2_dim(), <[usize]>::len);
    indexed_names("beta", p + 2)
}

/// Stacked unit rows for the clusters selected by `exposure`.
pub(crate) struct StackedRows {
    pub design: Design,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub clusters: Vec<usize>,
}

pub(crate) fn stack(data: &Dataset, exposure: &[(usize, bool)], weighting: Weighting, covariates: Option<&[usize]>) -> Result<StackedRows> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    let mut clusters = Vec::new();
    // Canonical order by cluster id, so sums do not depend on storage order.
    let mut order: Vec<(usize, bool)> = exposure.to_vec();
    order.sort_by(|a, b| data.clusters[a.0].id.cmp(&data.clusters[b.0].id));
    for (label, &(k, x)) in order.iter().enumerate() {
        let c = &data.clusters[k];
        let w = weighting.weight(c.units.len());
        for u in &c.units {
            rows.push(outcome_row(x, u, covariates));
            y.push(u.y as f64);
            weights.push(w);
            clusters.push(label);
        }
    }
    let names = outcome_names(data, covariates);
    let p = names.len();
    let design = Design::new(Matrix::from_row_major(rows.len(), p, rows.concat())?, names)?;
    Ok(StackedRows { design, y, weights, clusters })
}

fn solve(data: &Dataset, spec: &GeeSpec) -> Result<FitResult> {
    data.check()?;
    let exposure = data.exposures(spec.exposure)?;
    let sel = spec.covariates.as_deref();
    let s = stack(data, &exposure, spec.weighting, sel)?;
    let fit = fit_logistic(&s.design, &s.y, &s.weights, Some(&s.clusters))?;
    let method = match spec.weighting {
        Weighting::InverseSize => Method::Wee,
        Weighting::Unit => Method::Iee,
    };
    Ok(FitResult {
        method,
        names: s.design.names,
        estimates: fit.coef,
        covariance: fit.robust_cov.expect("cluster labels supplied"),
        converged: fit.converged,
        loglik: None,
        iterations: fit.iterations,
        gradient_norm: fit.score_norm,
        warnings: Vec::new(),
    })
}

/// Inverse-cluster-size weighted equations. Any `weighting` set on the
/// argument is overridden to inverse-size.
pub fn solve_wee(data: &Dataset, spec: &GeeSpec) -> Result<FitResult> {
    solve(data, &GeeSpec { weighting: Weighting::InverseSize, ..spec.clone() })
}

/// Unweighted independence equations.
pub fn solve_iee(data: &Dataset, spec: &GeeSpec) -> Result<FitResult> {
    solve(data, &GeeSpec { weighting: Weighting::Unit, ..spec.clone() })
}

/// Weighted score `Σ_k w_k Σ_i x_ki (y_ki - μ_ki)` at `beta`, for residual
/// checks.
pub fn estimating_function(data: &Dataset, spec: &GeeSpec, beta: &[f64]) -> Result<Vec<f64>> {
    let exposure = data.exposures(spec.exposure)?;
    let mut total = vec![0.0; beta.len()];
    for &(k, x) in &exposure {
        let c = &data.clusters[k];
        let w = spec.weighting.weight(c.units.len());
        for u in &c.units {
            let row = outcome_row(x, u, spec.covariates.as_deref());
            let r = w * (u.y as f64 - crate::math::expit(crate::math::dot(&row, beta)));
            for (t, v) in total.iter_mut().zip(&row) {
                *t += r * v;
            }
        }
    }
    Ok(total)
}
