//! Clustered datasets, parameter containers and fit results.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::Matrix;
use crate::math::sqrt;
use crate::{Error, Result, Z_95};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Unit {
    pub y: u8,
    pub x2: Vec<f64>,
}

impl Unit {
    pub fn new(y: bool, x2: Vec<f64>) -> Self {
        Self { y: y as u8, x2 }
    }
}

/// One cluster: its size, cluster-level exposures, validation flag and units.
///
/// The true exposure is private. Estimators read it through
/// [`Cluster::validated_exposure`], which only answers for validated
/// clusters; complete-data ("True") fits use
/// [`Cluster::complete_data_exposure`], which exists for simulated data.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cluster {
    pub id: String,
    /// Declared cluster size; `validate` checks it against `units.len()`.
    pub n: u32,
    x1: Option<u8>,
    pub w1: u8,
    pub r: u8,
    pub z2: Vec<f64>,
    pub units: Vec<Unit>,
}

impl Cluster {
    /// Builds a cluster whose declared size is the number of units.
    pub fn new(id: impl Into<String>, x1: Option<bool>, w1: bool, validated: bool, z2: Vec<f64>, units: Vec<Unit>) -> Self {
        Self { id: id.into(), n: units.len() as u32, x1: x1.map(u8::from), w1: w1 as u8, r: validated as u8, z2, units }
    }

    /// Builds a cluster from raw field values without checking them. Used by
    /// ingestion so that [`Dataset::validate`] can report every problem.
    pub fn from_raw(id: String, n: u32, x1: Option<u8>, w1: u8, r: u8, z2: Vec<f64>, units: Vec<Unit>) -> Self {
        Self { id, n, x1, w1, r, z2, units }
    }

    pub fn size(&self) -> u32 {
        self.n
    }

    pub fn is_validated(&self) -> bool {
        self.r == 1
    }

    pub fn surrogate(&self) -> bool {
        self.w1 == 1
    }

    /// True exposure, available only for validated clusters.
    pub fn validated_exposure(&self) -> Option<bool> {
        if self.is_validated() {
            self.x1.map(|v| v == 1)
        } else {
            None
        }
    }

    /// True exposure regardless of the validation flag. Only simulated data
    /// carries it outside the validation sample; it drives complete-data
    /// reference fits and must not feed a correction method.
    pub fn complete_data_exposure(&self) -> Option<bool> {
        self.x1.map(|v| v == 1)
    }

    /// Raw stored exposure code, for serialization.
    pub fn stored_exposure(&self) -> Option<u8> {
        self.x1
    }

    pub fn outcomes(&self) -> impl Iterator<Item = bool> + '_ {
        self.units.iter().map(|u| u.y == 1)
    }

    /// Copy with the true exposure dropped outside the validation sample.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        if !c.is_validated() {
            c.x1 = None;
        }
        c
    }
}

/// Which exposure variable an estimator consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ExposureSource {
    /// Complete-data exposure on every cluster.
    True,
    /// The surrogate `w1` on every cluster.
    Misclassified,
    /// True exposure on validated clusters only; others are dropped.
    ValidationOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub cluster: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cluster {}: {}", self.cluster, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub clusters: Vec<Cluster>,
    pub x2_names: Vec<String>,
    pub z2_names: Vec<String>,
}

impl Dataset {
    pub fn new(clusters: Vec<Cluster>, x2_names: Vec<String>, z2_names: Vec<String>) -> Self {
        Self { clusters, x2_names, z2_names }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn x2_dim(&self) -> usize {
        self.x2_names.len()
    }

    pub fn z2_dim(&self) -> usize {
        self.z2_names.len()
    }

    pub fn unit_count(&self) -> usize {
        self.clusters.iter().map(|c| c.units.len()).sum()
    }

    pub fn validated_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.is_validated()).count()
    }

    /// Every invariant violation, each naming its cluster.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.clusters.is_empty() {
            out.push(Violation { cluster: "-".into(), message: "dataset has no clusters".into() });
        }
        let (p, q) = (self.x2_dim(), self.z2_dim());
        for c in &self.clusters {
            let mut bad = |message: String| out.push(Violation { cluster: c.id.clone(), message });
            if c.n == 0 {
                bad("cluster size must be at least 1".into());
            }
            if c.n as usize != c.units.len() {
                bad(format!("declared size {} but {} units", c.n, c.units.len()));
            }
            if c.w1 > 1 {
                bad(format!("w1 = {} is not binary", c.w1));
            }
            if c.r > 1 {
                bad(format!("r = {} is not binary", c.r));
            }
            match c.x1 {
                Some(v) if v > 1 => bad(format!("x1 = {v} is not binary")),
                None if c.r == 1 => bad("validated cluster has no true exposure".into()),
                _ => {}
            }
            if c.z2.len() != q {
                bad(format!("{} size-model covariates, expected {q}", c.z2.len()));
            }
            if c.z2.iter().any(|v| !v.is_finite()) {
                bad("non-finite size-model covariate".into());
            }
            for (i, u) in c.units.iter().enumerate() {
                if u.y > 1 {
                    bad(format!("unit {i}: y = {} is not binary", u.y));
                }
                if u.x2.len() != p {
                    bad(format!("unit {i}: {} outcome covariates, expected {p}", u.x2.len()));
                }
                if u.x2.iter().any(|v| !v.is_finite()) {
                    bad(format!("unit {i}: non-finite outcome covariate"));
                }
            }
        }
        out
    }

    /// [`Dataset::validate`] as a `Result`, reporting the first violations.
    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = v.iter().take(5).map(|x| x.to_string()).collect();
        Err(Error::Invalid(format!("{} invariant violation(s): {}", v.len(), shown.join("; "))))
    }

    /// `(cluster index, exposure)` pairs for the clusters an estimator uses
    /// under `source`.
    pub fn exposures(&self, source: ExposureSource) -> Result<Vec<(usize, bool)>> {
        let mut out = Vec::with_capacity(self.clusters.len());
        for (k, c) in self.clusters.iter().enumerate() {
            let x = match source {
                ExposureSource::Misclassified => Some(c.surrogate()),
                ExposureSource::True => {
                    Some(c.complete_data_exposure().ok_or_else(|| Error::Invalid(format!("cluster {} has no complete-data exposure", c.id)))?)
                }
                ExposureSource::ValidationOnly => c.validated_exposure(),
            };
            if let Some(x) = x {
                out.push((k, x));
            }
        }
        if out.is_empty() {
            return Err(match source {
                ExposureSource::ValidationOnly => Error::EmptyValidation,
                _ => Error::Invalid("dataset has no clusters".into()),
            });
        }
        Ok(out)
    }

    /// Copy with true exposures removed outside the validation sample.
    pub fn redacted(&self) -> Self {
        Self { clusters: self.clusters.iter().map(Cluster::redacted).collect(), x2_names: self.x2_names.clone(), z2_names: self.z2_names.clone() }
    }

    /// Dataset made of the clusters at `indices`, in that order; repeats are
    /// allowed and get distinct ids.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut seen = alloc::collections::BTreeMap::new();
        let clusters = indices
            .iter()
            .map(|&k| {
                let mut c = self.clusters[k].clone();
                let copy = seen.entry(k).and_modify(|n| *n += 1).or_insert(0usize);
                if *copy > 0 {
                    c.id = format!("{}#{}", c.id, copy);
                }
                c
            })
            .collect();
        Self { clusters, x2_names: self.x2_names.clone(), z2_names: self.z2_names.clone() }
    }
}

/// Parameters of the joint marginalized model and the optional correction
/// blocks.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JmmParams {
    /// Size model coefficients on `(1, x1, z2...)`.
    pub alpha: Vec<f64>,
    /// Outcome model coefficients on `(1, x1, x2...)`.
    pub beta: Vec<f64>,
    pub sigma0: f64,
    pub sigma1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Misclassification model, logit `P(W = 1 | X, N)`.
    pub nu: Option<Vec<f64>>,
    /// Exposure model, logit `P(X = 1 | covariates)`.
    pub eta: Option<Vec<f64>>,
    /// Conditional exposure model used by expected estimating equations.
    pub xi: Option<Vec<f64>>,
}

impl JmmParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, sigma: [f64; 2], gamma: [f64; 2]) -> Self {
        Self { alpha, beta, sigma0: sigma[0], sigma1: sigma[1], gamma0: gamma[0], gamma1: gamma[1], nu: None, eta: None, xi: None }
    }

    /// Random-effect SD of exposure arm `x`.
    pub fn sigma(&self, x: bool) -> f64 {
        if x {
            self.sigma1
        } else {
            self.sigma0
        }
    }

    /// Size-model loading of exposure arm `x`.
    pub fn gamma(&self, x: bool) -> f64 {
        if x {
            self.gamma1
        } else {
            self.gamma0
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(Error::Invalid(format!("sigma0 = {}, sigma1 = {} must be positive", self.sigma0, self.sigma1)));
        }
        if self.alpha.len() < 2 || self.beta.len() < 2 {
            return Err(Error::Dimension("alpha and beta need an intercept and an exposure coefficient".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Method {
    Jmm,
    Wee,
    Iee,
    ObslikJmm,
    ObslikGlmm,
    /// Marginalized GLMM for the outcome alone (no size model).
    Glmm,
    Eee1,
    Eee2,
    Eee3,
    Eee4,
    EeeCustom,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Jmm => "JMM",
            Method::Wee => "WEE",
            Method::Iee => "IEE",
            Method::ObslikJmm => "OBSLIK-JMM",
            Method::ObslikGlmm => "OBSLIK-GLMM",
            Method::Glmm => "GLMM",
            Method::Eee1 => "EEE1",
            Method::Eee2 => "EEE2",
            Method::Eee3 => "EEE3",
            Method::Eee4 => "EEE4",
            Method::EeeCustom => "EEE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub method: Method,
    /// Parameter names, e.g. `beta1`, `sigma0`, `nu2`.
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: Matrix,
    pub converged: bool,
    pub loglik: Option<f64>,
    pub iterations: usize,
    /// Norm of the objective gradient (likelihood fits) or of the estimating
    /// function (estimating-equation fits) at the estimate.
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.estimates[i])
    }

    pub fn se(&self, i: usize) -> f64 {
        sqrt(self.covariance[(i, i)].max(0.0))
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.se(i))
    }

    /// 95% Wald interval for parameter `i`.
    pub fn ci(&self, i: usize) -> (f64, f64) {
        let h = Z_95 * self.se(i);
        (self.estimates[i] - h, self.estimates[i] + h)
    }

    pub fn ci_of(&self, name: &str) -> Option<(f64, f64)> {
        self.index_of(name).map(|i| self.ci(i))
    }
}

/// Names `prefix0, prefix1, ...`.
pub fn indexed_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

/// Inclusive range of cluster sizes; `hi = None` means "and above".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeBin {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl SizeBin {
    pub fn contains(&self, n: u32) -> bool {
        n >= self.lo && self.hi.is_none_or(|h| n <= h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            None => format!("{}+", self.lo),
            Some(h) if h == self.lo => format!("{h}"),
            Some(h) => format!("{}-{h}", self.lo),
        }
    }
}

/// Bins `1, 2, 3, 4+`.
pub fn default_size_bins() -> Vec<SizeBin> {
    alloc::vec![SizeBin { lo: 1, hi: Some(1) }, SizeBin { lo: 2, hi: Some(2) }, SizeBin { lo: 3, hi: Some(3) }, SizeBin { lo: 4, hi: None },]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeSummary {
    pub bin: SizeBin,
    pub clusters: usize,
    pub units: usize,
    /// Percentage of units with `y = 1`.
    pub outcome_pct: Option<f64>,
    /// Percentage of clusters with `w1 = 1`.
    pub exposure_pct: Option<f64>,
    pub validated: usize,
    /// `P(w1 = 1 | x1 = 1)` among validated clusters, in percent.
    pub sensitivity_pct: Option<f64>,
    /// `P(w1 = 0 | x1 = 0)` among validated clusters, in percent.
    pub specificity_pct: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Outcome and surrogate-exposure prevalence by cluster-size bin, with
/// sensitivity and specificity computed over validated clusters. A cluster
/// falling in several bins is counted in the first.
pub fn summarize_by_size(data: &Dataset, bins: &[SizeBin]) -> Vec<SizeSummary> {
    let mut rows: Vec<SizeSummary> = bins
        .iter()
        .map(|&bin| SizeSummary {
            bin,
            clusters: 0,
            units: 0,
            outcome_pct: None,
            exposure_pct: None,
            validated: 0,
            sensitivity_pct: None,
            specificity_pct: None,
        })
        .collect();
    // (cases, exposed, true positives, exposed validated, true negatives, unexposed validated)
    let mut counts = alloc::vec![[0usize; 6]; bins.len()];
    for c in &data.clusters {
        let Some(b) = bins.iter().position(|bin| bin.contains(c.size())) else { continue };
        let row = &mut rows[b];
        let cnt = &mut counts[b];
        row.clusters += 1;
        row.units += c.units.len();
        cnt[0] += c.outcomes().filter(|&y| y).count();
        cnt[1] += c.surrogate() as usize;
        if let Some(x) = c.validated_exposure() {
            row.validated += 1;
            if x {
                cnt[3] += 1;
                cnt[2] += c.surrogate() as usize;
            } else {
                cnt[5] += 1;
                cnt[4] += !c.surrogate() as usize;
            }
        }
    }
    for (row, cnt) in rows.iter_mut().zip(&counts) {
        row.outcome_pct = pct(cnt[0], row.units);
        row.exposure_pct = pct(cnt[1], row.clusters);
        row.sensitivity_pct = pct(cnt[2], cnt[3]);
        row.specificity_pct = pct(cnt[4], cnt[5]);
    }
    rows
}
