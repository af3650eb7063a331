//! Study and estimator configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use misclass_core::eee::SparseCells;
use misclass_core::jmm::SizeConvention;
use misclass_core::numerics::DEFAULT_ORDER;
use misclass_core::obslik::{ExposureSpec, MisclassSpec};
use misclass_core::simgen::{Regime, ScenarioConfig};
use serde::{Deserialize, Serialize};

/// An estimator applied to one dataset: a method together with the exposure
/// it consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "JMM-true")]
    JmmTrue,
    #[serde(rename = "JMM-naive")]
    JmmNaive,
    #[serde(rename = "JMM-valid")]
    JmmValid,
    #[serde(rename = "OBSLIK")]
    Obslik,
    #[serde(rename = "WEE-true")]
    WeeTrue,
    #[serde(rename = "WEE-naive")]
    WeeNaive,
    #[serde(rename = "WEE-valid")]
    WeeValid,
    #[serde(rename = "IEE-true")]
    IeeTrue,
    #[serde(rename = "IEE-naive")]
    IeeNaive,
    #[serde(rename = "EEE1")]
    Eee1,
    #[serde(rename = "EEE2")]
    Eee2,
    #[serde(rename = "EEE3")]
    Eee3,
    #[serde(rename = "EEE4")]
    Eee4,
    #[serde(rename = "OBSLIK-GLMM")]
    ObslikGlmm,
}

impl Estimator {
    pub const ALL: [Estimator; 14] = [
        Estimator::JmmTrue,
        Estimator::JmmNaive,
        Estimator::JmmValid,
        Estimator::Obslik,
        Estimator::WeeTrue,
        Estimator::WeeNaive,
        Estimator::WeeValid,
        Estimator::IeeTrue,
        Estimator::IeeNaive,
        Estimator::Eee1,
        Estimator::Eee2,
        Estimator::Eee3,
        Estimator::Eee4,
        Estimator::ObslikGlmm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::JmmTrue => "JMM-true",
            Estimator::JmmNaive => "JMM-naive",
            Estimator::JmmValid => "JMM-valid",
            Estimator::Obslik => "OBSLIK",
            Estimator::WeeTrue => "WEE-true",
            Estimator::WeeNaive => "WEE-naive",
            Estimator::WeeValid => "WEE-valid",
            Estimator::IeeTrue => "IEE-true",
            Estimator::IeeNaive => "IEE-naive",
            Estimator::Eee1 => "EEE1",
            Estimator::Eee2 => "EEE2",
            Estimator::Eee3 => "EEE3",
            Estimator::Eee4 => "EEE4",
            Estimator::ObslikGlmm => "OBSLIK-GLMM",
        }
    }

    /// Likelihood fits, which are the slow ones.
    pub fn is_likelihood(self) -> bool {
        matches!(self, Estimator::JmmTrue | Estimator::JmmNaive | Estimator::JmmValid | Estimator::Obslik | Estimator::ObslikGlmm)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Estimator::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s.trim())).with_context(|| {
            let known: Vec<&str> = Estimator::ALL.iter().map(|e| e.label()).collect();
            format!("unknown estimator {s:?}; expected one of {}", known.join(", "))
        })
    }
}

/// Tuning shared by every estimator in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub quadrature_order: usize,
    pub bootstrap_resamples: usize,
    pub sparse_cells: SparseCells,
    pub convention: SizeConvention,
    /// Misclassification model for OBSLIK fits. When absent, simulation
    /// studies use the simple model under the fixed regime and the
    /// size-dependent one otherwise; `fit` uses the size-dependent one.
    pub obslik_misclass: Option<MisclassSpec>,
    pub obslik_exposure: ExposureSpec,
    pub obslik_glmm_exposure: ExposureSpec,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            quadrature_order: DEFAULT_ORDER,
            bootstrap_resamples: 50,
            sparse_cells: SparseCells::Error,
            convention: SizeConvention::default(),
            obslik_misclass: None,
            obslik_exposure: ExposureSpec::intercept_only(),
            obslik_glmm_exposure: ExposureSpec::with_size(),
        }
    }
}

impl Settings {
    pub fn misclass_for(&self, regime: Option<Regime>) -> MisclassSpec {
        self.obslik_misclass.unwrap_or(match regime {
            Some(Regime::Fixed | Regime::Perfect) => MisclassSpec::simple(),
            _ => MisclassSpec::size_dependent(None),
        })
    }
}

fn default_replications() -> usize {
    200
}

fn default_parallelism() -> usize {
    1
}

/// A Monte Carlo study: one scenario, optionally swept over a grid of
/// exposure-size associations `alpha1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Values of `alpha[1]` to sweep; empty runs the scenario as given.
    #[serde(default)]
    pub alpha1_grid: Vec<f64>,
    #[serde(default)]
    pub settings: Settings,
    pub scenario: ScenarioConfig,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioConfig, estimators: Vec<Estimator>, replications: usize) -> Self {
        Self {
            name: String::new(),
            replications,
            estimators,
            parallelism: 1,
            output_dir: None,
            alpha1_grid: Vec::new(),
            settings: Settings::default(),
            scenario,
        }
    }

    pub fn check(&self) -> anyhow::Result<()> {
        if self.replications == 0 {
            bail!("replications must be at least 1");
        }
        if self.estimators.is_empty() {
            bail!("at least one estimator is required");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.settings.bootstrap_resamples < 2
            && self.estimators.iter().any(|e| matches!(e, Estimator::Eee1 | Estimator::Eee2 | Estimator::Eee3 | Estimator::Eee4))
        {
            bail!("EEE estimators need at least 2 bootstrap resamples");
        }
        if self.alpha1_grid.iter().any(|a| !a.is_finite()) {
            bail!("alpha1_grid values must be finite");
        }
        self.scenario.check().context("invalid scenario")?;
        Ok(())
    }

    /// Scenarios to run, one per `alpha1` value.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        if self.alpha1_grid.is_empty() {
            return vec![self.scenario.clone()];
        }
        self.alpha1_grid
            .iter()
            .map(|&a| {
                let mut s = self.scenario.clone();
                s.alpha[1] = a;
                s
            })
            .collect()
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: StudyConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }
}

pub fn load_scenario(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: ScenarioConfig = toml::from_str(&text).with_context(|| format!("in {}", path.display()))?;
    s.check()?;
    Ok(s)
}
