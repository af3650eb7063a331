//! Human-readable tables: study operating characteristics, fit reports and
//! size-bin summaries.

use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, Context};
use misclass_core::data::{FitResult, SizeBin, SizeSummary};

use crate::config::Estimator;
use crate::study::OperatingCharacteristics;

fn num(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("NA".into(), |v| num(v, digits))
}

/// Markdown table of mean, SD and coverage of `parameter`, one block of rows
/// per `alpha1` value and one row per estimator.
pub fn operating_table(summary: &[OperatingCharacteristics], estimators: &[Estimator], parameter: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| alpha1 | Estimator | Truth | Mean | SD | Coverage (%) | MSE | Fits | Failures |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    let mut alpha1s: Vec<f64> = Vec::new();
    for s in summary {
        if !alpha1s.contains(&s.alpha1) {
            alpha1s.push(s.alpha1);
        }
    }
    for a in alpha1s {
        for &est in estimators {
            let row = summary
                .iter()
                .find(|s| s.alpha1 == a && s.estimator == est && s.parameter == parameter)
                .or_else(|| summary.iter().find(|s| s.alpha1 == a && s.estimator == est && s.parameter == "*"));
            let Some(s) = row else { continue };
            let _ = writeln!(
                out,
                "| {a} | {est} | {} | {} | {} | {} | {} | {} | {} |",
                opt(s.truth, 2),
                num(s.mean, 3),
                num(s.sd, 3),
                opt(s.coverage, 1),
                opt(s.mse, 4),
                s.count,
                s.failures
            );
        }
    }
    out
}

/// Ratio scale for a parameter: outcome `beta*` become odds ratios and
/// size-model `alpha*` rate ratios. Intercepts stay on the link scale.
fn ratio_label(name: &str) -> Option<&'static str> {
    match name {
        "beta0" | "alpha0" => None,
        n if n.starts_with("beta") => Some("OR"),
        n if n.starts_with("alpha") => Some("RR"),
        _ => None,
    }
}

/// One row of a fit report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub scale: &'static str,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn report_rows(fit: &FitResult) -> Vec<ReportRow> {
    fit.names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (lo, hi) = fit.ci(i);
            let est = fit.estimates[i];
            match ratio_label(name) {
                Some(scale) => ReportRow { parameter: name.clone(), scale, estimate: est.exp(), lower: lo.exp(), upper: hi.exp() },
                None => ReportRow { parameter: name.clone(), scale: "coef", estimate: est, lower: lo, upper: hi },
            }
        })
        .collect()
}

/// Markdown report of one estimator's fit: "Est (95% CI)" per parameter.
pub fn fit_report(estimator: Estimator, fit: &FitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### {estimator}\n");
    let _ = writeln!(out, "| Parameter | Scale | Est | 95% CI |");
    let _ = writeln!(out, "|---|---|---|---|");
    for r in report_rows(fit) {
        let _ = writeln!(out, "| {} | {} | {} | ({}, {}) |", r.parameter, r.scale, num(r.estimate, 3), num(r.lower, 3), num(r.upper, 3));
    }
    let _ = writeln!(out);
    if !fit.converged {
        let _ = writeln!(out, "Not converged (gradient norm {:.3e}).\n", fit.gradient_norm);
    }
    for w in &fit.warnings {
        let _ = writeln!(out, "Warning: {w}");
    }
    if !fit.warnings.is_empty() {
        let _ = writeln!(out);
    }
    out
}

/// Parses bins such as `1,2,3,4+` or `1-2,3+`.
pub fn parse_bins(text: &str) -> anyhow::Result<Vec<SizeBin>> {
    let mut bins = Vec::new();
    for part in text.split(',').map(str::trim) {
        let bad = || format!("bad size bin {part:?}; use forms like 2, 1-3 or 4+");
        let bin = if let Some(lo) = part.strip_suffix('+') {
            SizeBin { lo: lo.trim().parse().with_context(bad)?, hi: None }
        } else if let Some((lo, hi)) = part.split_once('-') {
            SizeBin { lo: lo.trim().parse().with_context(bad)?, hi: Some(hi.trim().parse().with_context(bad)?) }
        } else {
            let n = part.parse().with_context(bad)?;
            SizeBin { lo: n, hi: Some(n) }
        };
        if bin.lo == 0 || bin.hi.is_some_and(|h| h < bin.lo) {
            bail!("{}", bad());
        }
        bins.push(bin);
    }
    Ok(bins)
}

pub const SIZE_SUMMARY_COLUMNS: [&str; 8] =
    ["bin", "clusters", "units", "outcome_pct", "exposure_pct", "validated", "sensitivity_pct", "specificity_pct"];

/// Writes size-bin rows as CSV in [`SIZE_SUMMARY_COLUMNS`] order, with `NA`
/// for undefined percentages.
pub fn write_size_summary(rows: &[SizeSummary], writer: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SIZE_SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.bin.label(),
            r.clusters.to_string(),
            r.units.to_string(),
            opt(r.outcome_pct, 1),
            opt(r.exposure_pct, 1),
            r.validated.to_string(),
            opt(r.sensitivity_pct, 1),
            opt(r.specificity_pct, 1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
