//! Dispatch from [`Estimator`] to the core fitting routines.

use misclass_core::data::{Dataset, ExposureSource, FitResult};
use misclass_core::eee::{fit_eee_bootstrap, BootstrapPlan, EeeLevel, EeeSpec};
use misclass_core::gee::{solve_iee, solve_wee, GeeSpec};
use misclass_core::jmm::{fit_jmm, FitOptions, JmmSpec};
use misclass_core::obslik::{fit_obslik_glmm, fit_obslik_jmm_from, MisclassSpec, ObslikSpec};

use crate::config::{Estimator, Settings};

/// Fits a list of estimators to one dataset, sharing the naive joint-model
/// fit between `JMM-naive` and the `OBSLIK` starting point.
pub struct Fitter<'a> {
    pub data: &'a Dataset,
    pub settings: &'a Settings,
    pub misclass: MisclassSpec,
    /// Seed for bootstrap resampling.
    pub seed: u64,
    naive: Option<Result<FitResult, misclass_core::Error>>,
}

impl<'a> Fitter<'a> {
    pub fn new(data: &'a Dataset, settings: &'a Settings, misclass: MisclassSpec, seed: u64) -> Self {
        Self { data, settings, misclass, seed, naive: None }
    }

    fn options(&self) -> FitOptions {
        FitOptions { order: self.settings.quadrature_order, ..FitOptions::default() }
    }

    fn jmm(&self, exposure: ExposureSource) -> misclass_core::Result<FitResult> {
        let spec = JmmSpec { convention: self.settings.convention, options: self.options(), ..JmmSpec::new(exposure) };
        fit_jmm(self.data, &spec)
    }

    fn naive(&mut self) -> misclass_core::Result<FitResult> {
        if self.naive.is_none() {
            self.naive = Some(self.jmm(ExposureSource::Misclassified));
        }
        self.naive.clone().expect("just filled")
    }

    fn eee(&self, level: EeeLevel) -> misclass_core::Result<FitResult> {
        let spec = EeeSpec::new(level).with_sparse_cells(self.settings.sparse_cells);
        let plan = BootstrapPlan { resamples: self.settings.bootstrap_resamples, seed: self.seed };
        fit_eee_bootstrap(self.data, &spec, &plan)
    }

    pub fn fit(&mut self, estimator: Estimator) -> misclass_core::Result<FitResult> {
        match estimator {
            Estimator::JmmTrue => self.jmm(ExposureSource::True),
            Estimator::JmmNaive => self.naive(),
            Estimator::JmmValid => self.jmm(ExposureSource::ValidationOnly),
            Estimator::Obslik => {
                let naive = self.naive()?;
                let spec = ObslikSpec {
                    convention: self.settings.convention,
                    options: self.options(),
                    ..ObslikSpec::new(self.misclass, self.settings.obslik_exposure)
                };
                fit_obslik_jmm_from(self.data, &spec, &naive)
            }
            Estimator::ObslikGlmm => {
                let spec = ObslikSpec { options: self.options(), ..ObslikSpec::new(self.misclass, self.settings.obslik_glmm_exposure) };
                fit_obslik_glmm(self.data, &spec)
            }
            Estimator::WeeTrue => solve_wee(self.data, &GeeSpec::wee(ExposureSource::True)),
            Estimator::WeeNaive => solve_wee(self.data, &GeeSpec::wee(ExposureSource::Misclassified)),
            Estimator::WeeValid => solve_wee(self.data, &GeeSpec::wee(ExposureSource::ValidationOnly)),
            Estimator::IeeTrue => solve_iee(self.data, &GeeSpec::iee(ExposureSource::True)),
            Estimator::IeeNaive => solve_iee(self.data, &GeeSpec::iee(ExposureSource::Misclassified)),
            Estimator::Eee1 => self.eee(EeeLevel::Eee1),
            Estimator::Eee2 => self.eee(EeeLevel::Eee2),
            Estimator::Eee3 => self.eee(EeeLevel::Eee3),
            Estimator::Eee4 => self.eee(EeeLevel::Eee4),
        }
    }
}
