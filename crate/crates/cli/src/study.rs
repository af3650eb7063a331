//! Monte Carlo studies: generate, fit, aggregate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::Context;
use misclass_core::jmm::SizeConvention;
use misclass_core::rng::derive_key;
use misclass_core::simgen::{generate, ScenarioConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Estimator, StudyConfig};
use crate::estimators::Fitter;
use crate::report;

/// One parameter estimate from one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub alpha1: f64,
    pub replication: usize,
    pub estimator: Estimator,
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub truth: Option<f64>,
    pub covered: Option<bool>,
}

/// An estimator that produced no usable fit in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub alpha1: f64,
    pub replication: usize,
    pub estimator: Estimator,
    pub error: String,
}

/// Replication summary for one (scenario, estimator, parameter).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub alpha1: f64,
    pub estimator: Estimator,
    pub parameter: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    /// Percentage of Wald intervals containing the truth.
    pub coverage: Option<f64>,
    pub mse: Option<f64>,
    pub count: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyOutput {
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
    pub summary: Vec<OperatingCharacteristics>,
}

impl StudyOutput {
    pub fn get(&self, alpha1: f64, estimator: Estimator, parameter: &str) -> Option<&OperatingCharacteristics> {
        self.summary.iter().find(|s| s.alpha1 == alpha1 && s.estimator == estimator && s.parameter == parameter)
    }

    /// Per-replication estimates of `parameter`, indexed by replication.
    pub fn estimates(&self, alpha1: f64, estimator: Estimator, parameter: &str) -> BTreeMap<usize, f64> {
        self.records
            .iter()
            .filter(|r| r.alpha1 == alpha1 && r.estimator == estimator && r.parameter == parameter)
            .map(|r| (r.replication, r.estimate))
            .collect()
    }
}

/// Seed of replication `rep`, shared by every scenario of a sweep.
pub fn replication_seed(study_seed: u64, rep: usize) -> u64 {
    derive_key(study_seed, &[rep as u64])
}

fn truth_of(scenario: &ScenarioConfig, convention: SizeConvention) -> BTreeMap<String, f64> {
    scenario
        .truth()
        .into_iter()
        // Under the marginalized convention the fitted intercepts are not
        // the generator's alpha.
        .filter(|(name, _)| convention == SizeConvention::ConditionalIntercept || !name.starts_with("alpha"))
        .collect()
}

fn run_replication(cfg: &StudyConfig, scenario: &ScenarioConfig, rep: usize) -> (Vec<Record>, Vec<Failure>) {
    let alpha1 = scenario.alpha[1];
    let seed = replication_seed(cfg.scenario.seed, rep);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let fail = |failures: &mut Vec<Failure>, estimator, error: String| failures.push(Failure { alpha1, replication: rep, estimator, error });
    let data = match generate(&ScenarioConfig { seed, ..scenario.clone() }) {
        Ok(d) => d,
        Err(e) => {
            for &est in &cfg.estimators {
                fail(&mut failures, est, format!("generation failed: {e}"));
            }
            return (records, failures);
        }
    };
    let truth = truth_of(scenario, cfg.settings.convention);
    let mut fitter = Fitter::new(&data, &cfg.settings, cfg.settings.misclass_for(Some(scenario.regime)), seed);
    for &est in &cfg.estimators {
        match fitter.fit(est) {
            Err(e) => fail(&mut failures, est, e.to_string()),
            Ok(f) if !f.converged => fail(&mut failures, est, format!("did not converge (gradient norm {:.3e})", f.gradient_norm)),
            Ok(f) => {
                for (i, name) in f.names.iter().enumerate() {
                    let (lower, upper) = f.ci(i);
                    let t = truth.get(name).copied();
                    records.push(Record {
                        alpha1,
                        replication: rep,
                        estimator: est,
                        parameter: name.clone(),
                        estimate: f.estimates[i],
                        se: f.se(i),
                        lower,
                        upper,
                        truth: t,
                        covered: t.map(|t| lower <= t && t <= upper),
                    });
                }
            }
        }
    }
    (records, failures)
}

/// Aggregates records into operating characteristics, ordered by scenario,
/// then estimator as listed, then parameter as reported.
pub fn summarize(records: &[Record], failures: &[Failure], estimators: &[Estimator], alpha1s: &[f64]) -> Vec<OperatingCharacteristics> {
    let mut out = Vec::new();
    for &a in alpha1s {
        for &est in estimators {
            let failed = failures.iter().filter(|f| f.alpha1 == a && f.estimator == est).count();
            let mine: Vec<&Record> = records.iter().filter(|r| r.alpha1 == a && r.estimator == est).collect();
            let mut params: Vec<&str> = Vec::new();
            for r in &mine {
                if !params.contains(&r.parameter.as_str()) {
                    params.push(&r.parameter);
                }
            }
            if params.is_empty() {
                out.push(OperatingCharacteristics {
                    alpha1: a,
                    estimator: est,
                    parameter: "*".into(),
                    truth: None,
                    mean: f64::NAN,
                    sd: f64::NAN,
                    coverage: None,
                    mse: None,
                    count: 0,
                    failures: failed,
                });
                continue;
            }
            for p in params {
                let rows: Vec<&&Record> = mine.iter().filter(|r| r.parameter == p).collect();
                let n = rows.len() as f64;
                let mean = rows.iter().map(|r| r.estimate).sum::<f64>() / n;
                let sd = if rows.len() > 1 { (rows.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { f64::NAN };
                let truth = rows[0].truth;
                let coverage = truth.map(|_| 100.0 * rows.iter().filter(|r| r.covered == Some(true)).count() as f64 / n);
                let mse = truth.map(|t| rows.iter().map(|r| (r.estimate - t).powi(2)).sum::<f64>() / n);
                out.push(OperatingCharacteristics {
                    alpha1: a,
                    estimator: est,
                    parameter: p.to_string(),
                    truth,
                    mean,
                    sd,
                    coverage,
                    mse,
                    count: rows.len(),
                    failures: failed,
                });
            }
        }
    }
    out
}

/// Runs every replication of every scenario in the sweep. Estimator failures
/// are recorded, never fatal. Results do not depend on `parallelism`.
pub fn run_study(cfg: &StudyConfig) -> anyhow::Result<StudyOutput> {
    run_study_with_progress(cfg, |_, _| {})
}

/// As [`run_study`], calling `progress(done, total)` after each replication.
pub fn run_study_with_progress(cfg: &StudyConfig, progress: impl Fn(usize, usize) + Sync) -> anyhow::Result<StudyOutput> {
    cfg.check()?;
    let scenarios = cfg.scenarios();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|s| (0..cfg.replications).map(move |r| (s, r))).collect();
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build().context("building worker pool")?;
    let results: Vec<(Vec<Record>, Vec<Failure>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, r)| {
                let out = run_replication(cfg, &scenarios[s], r);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, jobs.len());
                out
            })
            .collect()
    });
    let mut output = StudyOutput::default();
    for (r, f) in results {
        output.records.extend(r);
        output.failures.extend(f);
    }
    let alpha1s: Vec<f64> = scenarios.iter().map(|s| s.alpha[1]).collect();
    output.summary = summarize(&output.records, &output.failures, &cfg.estimators, &alpha1s);
    Ok(output)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const RECORD_COLUMNS: [&str; 10] = ["alpha1", "replication", "estimator", "parameter", "estimate", "se", "lower", "upper", "truth", "covered"];
pub const SUMMARY_COLUMNS: [&str; 10] = ["alpha1", "estimator", "parameter", "truth", "mean", "sd", "coverage", "mse", "count", "failures"];

/// Writes `replications.csv`, `failures.csv`, `summary.csv`, `table.md` and
/// the resolved `study.toml` into `dir`.
pub fn write_outputs(cfg: &StudyConfig, output: &StudyOutput, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join("replications.csv"), &output.records, &RECORD_COLUMNS)?;
    write_csv(&dir.join("failures.csv"), &output.failures, &["alpha1", "replication", "estimator", "error"])?;
    write_csv(&dir.join("summary.csv"), &output.summary, &SUMMARY_COLUMNS)?;
    fs::write(dir.join("table.md"), report::operating_table(&output.summary, &cfg.estimators, "beta1"))?;
    fs::write(dir.join("study.toml"), toml::to_string(cfg)?)?;
    Ok(())
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<Record>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        out.push(r.with_context(|| format!("{} record {}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Row of the plot-ready long table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub alpha1: f64,
    pub estimator: Estimator,
    pub replication: usize,
    pub beta1_hat: f64,
}

/// Long-format `beta1` estimates by `alpha1` and estimator, optionally
/// restricted to some estimators.
pub fn figure_rows(records: &[Record], estimators: Option<&[Estimator]>) -> Vec<FigureRow> {
    records
        .iter()
        .filter(|r| r.parameter == "beta1" && estimators.is_none_or(|e| e.contains(&r.estimator)))
        .map(|r| FigureRow { alpha1: r.alpha1, estimator: r.estimator, replication: r.replication, beta1_hat: r.estimate })
        .collect()
}

pub fn write_figure_rows(rows: &[FigureRow], writer: impl std::io::Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["alpha1", "estimator", "replication", "beta1_hat"])?;
    }
    w.flush()?;
    Ok(())
}
