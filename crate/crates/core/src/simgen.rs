//! Synthetic clustered data with informative size and a misclassified
//! cluster-level exposure.
//!
//! Each cluster draws from its own keyed streams, so a dataset is a pure
//! function of its configuration and cluster `k` does not depend on how many
//! clusters precede it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::data::{Cluster, Dataset, Unit};
use crate::jmm::DeltaSolver;
use crate::math::{exp, expit, ln};
use crate::numerics::gauss_hermite;
use crate::rng::{Stream, StreamRng};
use crate::{Error, Result};

/// Quadrature order for the generator's `Δ` solves, finer than the fitting
/// default so the truth is not limited by the fitting rule.
pub const GENERATOR_ORDER: usize = 80;

/// Sensitivity and specificity at a cluster size.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegimeRow {
    pub size: u32,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// How a [`RegimeTable`] assigns accuracy to a cluster size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SizeTrend {
    /// Each row covers its size up to the next row; sizes beyond the last
    /// row use the last row.
    #[default]
    Steps,
    /// Sensitivity and specificity follow the least-squares line through
    /// the rows on the logit scale, extended to every size.
    LogitLinear,
}

/// Size-indexed misclassification table.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegimeTable {
    pub rows: Vec<RegimeRow>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub trend: SizeTrend,
}

fn table(rows: [(f64, f64); 4], trend: SizeTrend) -> RegimeTable {
    RegimeTable {
        rows: rows.iter().enumerate().map(|(i, &(sensitivity, specificity))| RegimeRow { size: i as u32 + 1, sensitivity, specificity }).collect(),
        trend,
    }
}

/// Intercept and slope of the least-squares line through `(x, logit p)`.
fn logit_line(points: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let m = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, p)| (a + x, b + logit(p)));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = points.fold((0.0, 0.0), |(a, b), (x, p)| (a + (x - mx) * (logit(p) - my), b + (x - mx) * (x - mx)));
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

impl RegimeTable {
    pub fn perfect() -> Self {
        RegimeTable { rows: vec![RegimeRow { size: 1, sensitivity: 1.0, specificity: 1.0 }], trend: SizeTrend::Steps }
    }

    /// Regime (i): constant in size.
    pub fn fixed() -> Self {
        table([(0.75, 0.85); 4], SizeTrend::Steps)
    }

    // The size-dependent regimes are logit-linear in size to rounding, so
    // they continue along that line past the tabulated sizes.

    /// Regime (ii): accuracy falls with size.
    pub fn decrease() -> Self {
        table([(0.95, 0.95), (0.90, 0.90), (0.82, 0.82), (0.69, 0.69)], SizeTrend::LogitLinear)
    }

    /// Regime (iii): accuracy rises with size.
    pub fn increase() -> Self {
        table([(0.54, 0.54), (0.70, 0.70), (0.82, 0.82), (0.90, 0.90)], SizeTrend::LogitLinear)
    }

    /// Regime (iv): falling sensitivity with near-perfect specificity.
    pub fn observed() -> Self {
        table([(0.71, 0.99), (0.65, 0.99), (0.58, 0.99), (0.50, 0.99)], SizeTrend::LogitLinear)
    }

    pub fn check(&self) -> Result<()> {
        let first = self.rows.first().ok_or_else(|| Error::Invalid("regime table is empty".into()))?;
        if first.size != 1 {
            return Err(Error::Invalid(format!("regime table must start at size 1, not {}", first.size)));
        }
        if self.rows.windows(2).any(|w| w[1].size <= w[0].size) {
            return Err(Error::Invalid("regime table sizes must be strictly increasing".into()));
        }
        for r in &self.rows {
            let ok = |p: f64| p > 0.0 && p <= 1.0;
            if !ok(r.sensitivity) || !ok(r.specificity) {
                return Err(Error::Invalid(format!("size {}: sensitivity and specificity must lie in (0, 1]", r.size)));
            }
            if self.trend == SizeTrend::LogitLinear && (r.sensitivity == 1.0 || r.specificity == 1.0) {
                return Err(Error::Invalid(format!("size {}: a logit-linear trend needs accuracies below 1", r.size)));
            }
        }
        Ok(())
    }

    /// `(sensitivity, specificity)` for clusters of size `n`.
    pub fn lookup(&self, n: u32) -> (f64, f64) {
        match self.trend {
            SizeTrend::Steps => {
                let row = self.rows.iter().rev().find(|r| r.size <= n).unwrap_or(&self.rows[0]);
                (row.sensitivity, row.specificity)
            }
            SizeTrend::LogitLinear => {
                let at = |line: (f64, f64)| expit(line.0 + line.1 * f64::from(n));
                let sens = logit_line(self.rows.iter().map(|r| (f64::from(r.size), r.sensitivity)));
                let spec = logit_line(self.rows.iter().map(|r| (f64::from(r.size), r.specificity)));
                (at(sens), at(spec))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Regime {
    #[default]
    Fixed,
    Decrease,
    Increase,
    Observed,
    /// No misclassification.
    Perfect,
    /// Use the scenario's `regime_table`.
    Custom,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Fixed => "i",
            Regime::Decrease => "ii",
            Regime::Increase => "iii",
            Regime::Observed => "iv",
            Regime::Perfect => "none",
            Regime::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioConfig {
    /// Number of clusters `K`.
    pub clusters: usize,
    pub validation_count: usize,
    /// Size model coefficients on `(1, x1, z2...)`; extra entries add
    /// standard normal cluster covariates.
    pub alpha: Vec<f64>,
    /// Outcome model coefficients on `(1, x1, x2...)`; extra entries add
    /// standard normal unit covariates.
    pub beta: Vec<f64>,
    pub sigma0: f64,
    pub sigma1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub exposure_prevalence: f64,
    pub regime: Regime,
    pub regime_table: Option<RegimeTable>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            clusters: 2000,
            validation_count: 400,
            alpha: vec![0.6, -0.2],
            beta: vec![-4.0, 0.5, 0.2],
            sigma0: 2.0,
            sigma1: 1.5,
            gamma0: 0.0,
            gamma1: 0.0,
            exposure_prevalence: 0.25,
            regime: Regime::Fixed,
            regime_table: None,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Default parameters with informativeness `gamma` in both arms.
    pub fn with_gamma(gamma: f64, regime: Regime) -> Self {
        Self { gamma0: gamma, gamma1: gamma, regime, ..Self::default() }
    }

    pub fn table(&self) -> Result<RegimeTable> {
        let t = match self.regime {
            Regime::Fixed => RegimeTable::fixed(),
            Regime::Decrease => RegimeTable::decrease(),
            Regime::Increase => RegimeTable::increase(),
            Regime::Observed => RegimeTable::observed(),
            Regime::Perfect => RegimeTable::perfect(),
            Regime::Custom => self.regime_table.clone().ok_or_else(|| Error::Invalid("custom regime needs a regime_table".into()))?,
        };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::Invalid("scenario needs at least one cluster".into()));
        }
        if self.validation_count > self.clusters {
            return Err(Error::Invalid(format!("validation_count {} exceeds {} clusters", self.validation_count, self.clusters)));
        }
        if self.alpha.len() < 2 || self.beta.len() < 2 {
            return Err(Error::Dimension("alpha and beta need an intercept and an exposure coefficient".into()));
        }
        if !(self.exposure_prevalence > 0.0 && self.exposure_prevalence < 1.0) {
            return Err(Error::Invalid(format!("exposure prevalence {} must lie in (0, 1)", self.exposure_prevalence)));
        }
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(Error::Invalid("random-effect SDs must be positive".into()));
        }
        let finite = self.alpha.iter().chain(&self.beta).chain([&self.gamma0, &self.gamma1, &self.sigma0, &self.sigma1]);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("scenario parameters must be finite".into()));
        }
        self.table().map(|_| ())
    }

    pub fn x2_dim(&self) -> usize {
        self.beta.len() - 2
    }

    pub fn z2_dim(&self) -> usize {
        self.alpha.len() - 2
    }

    /// True value of every named parameter the estimators can report.
    pub fn truth(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        out.extend(self.alpha.iter().enumerate().map(|(i, &v)| (format!("alpha{i}"), v)));
        out.extend(self.beta.iter().enumerate().map(|(i, &v)| (format!("beta{i}"), v)));
        out.push(("sigma0".into(), self.sigma0));
        out.push(("sigma1".into(), self.sigma1));
        out.push(("gamma0".into(), self.gamma0));
        out.push(("gamma1".into(), self.gamma1));
        out
    }
}

/// Configuration with no informativeness, exposure effect 1 and the given
/// exposure-size association, under constant misclassification.
pub fn induced_informativeness_scenario(alpha1: f64) -> ScenarioConfig {
    ScenarioConfig { alpha: vec![0.6, alpha1], beta: vec![-4.0, 1.0, 0.2], ..ScenarioConfig::default() }
}

/// Draws the surrogate for true exposure `x1` in a cluster of size `n`.
pub fn apply_misclassification(x1: bool, n: u32, table: &RegimeTable, rng: &mut StreamRng) -> bool {
    let (sens, spec) = table.lookup(n);
    let p = if x1 { sens } else { 1.0 - spec };
    // Strict comparison keeps p = 0 and p = 1 exact.
    rng.uniform() < p
}

fn standard_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn poisson(rng: &mut StreamRng, lambda: f64) -> Result<u32> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lambda).map_err(|e| Error::Invalid(format!("Poisson rate {lambda}: {e}")))?;
    let draw: f64 = d.sample(rng);
    if draw > f64::from(u32::MAX - 1) {
        return Err(Error::Invalid(format!("cluster size overflow at rate {lambda}")));
    }
    Ok(draw as u32)
}

/// Simple random sample of `count` cluster indices out of `k`, by partial
/// Fisher-Yates on a dedicated stream.
fn validation_sample(seed: u64, k: usize, count: usize) -> Vec<bool> {
    let mut rng = StreamRng::new(seed, &[u64::MAX, Stream::Validation as u64]);
    let mut idx: Vec<usize> = (0..k).collect();
    for i in 0..count {
        let j = i + rng.below((k - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut flags = vec![false; k];
    for &i in &idx[..count] {
        flags[i] = true;
    }
    flags
}

/// Generates one dataset. Every cluster carries its true exposure; callers
/// that need an analysis-ready file redact it outside the validation sample.
pub fn generate(config: &ScenarioConfig) -> Result<Dataset> {
    config.check()?;
    let table = config.table()?;
    let rule = gauss_hermite(GENERATOR_ORDER)?;
    let solvers = [DeltaSolver::new(config.sigma0, &rule), DeltaSolver::new(config.sigma1, &rule)];
    let validated = validation_sample(config.seed, config.clusters, config.validation_count);
    let mut clusters = Vec::with_capacity(config.clusters);
    let width = format!("{}", config.clusters.saturating_sub(1)).len();
    for k in 0..config.clusters {
        let key = k as u64;
        let stream = |s| StreamRng::for_cluster(config.seed, key, s);
        let x = stream(Stream::Exposure).uniform() < config.exposure_prevalence;
        let arm = usize::from(x);
        let (sigma, gamma) = if x { (config.sigma1, config.gamma1) } else { (config.sigma0, config.gamma0) };
        let b = sigma * standard_normal(&mut stream(Stream::RandomEffect));

        let mut cov = stream(Stream::Covariates);
        let z2: Vec<f64> = (0..config.z2_dim()).map(|_| standard_normal(&mut cov)).collect();
        let mut zrow = vec![1.0, f64::from(u8::from(x))];
        zrow.extend_from_slice(&z2);
        let lambda = exp(crate::math::dot(&zrow, &config.alpha) + gamma * b);
        let n = poisson(&mut stream(Stream::Size), lambda)? + 1;

        let mut out = stream(Stream::Outcome);
        let mut units = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let x2: Vec<f64> = (0..config.x2_dim()).map(|_| standard_normal(&mut cov)).collect();
            let mut row = vec![1.0, f64::from(u8::from(x))];
            row.extend_from_slice(&x2);
            let delta = solvers[arm].solve(crate::math::dot(&row, &config.beta))?.delta;
            let y = out.uniform() < expit(delta + b);
            units.push(Unit::new(y, x2));
        }
        let w = apply_misclassification(x, n, &table, &mut stream(Stream::Misclassification));
        clusters.push(Cluster::new(format!("{k:0width$}"), Some(x), w, validated[k], z2, units));
    }
    let names = |p: &str, d: usize| (1..=d).map(|i| format!("{p}_{i}")).collect();
    Ok(Dataset::new(clusters, names("x2", config.x2_dim()), names("z2", config.z2_dim())))
}
