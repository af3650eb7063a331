use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use misclass::config::{load_scenario, Estimator, Settings, StudyConfig};
use misclass::estimators::Fitter;
use misclass::io::{read_dataset_file, write_dataset, write_dataset_file};
use misclass::report;
use misclass::study;
use misclass_core::data::summarize_by_size;
use misclass_core::simgen::generate;

#[derive(Parser)]
#[command(version, about = "Cluster-level exposure misclassification with informative cluster size")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study from a TOML config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Gauss-Hermite quadrature order.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// K = 8000 clusters, 1600 validated, 2000 replications.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Fit estimators to a unit-level CSV file.
    Fit {
        data: PathBuf,
        /// Comma-separated estimator labels.
        #[arg(long, value_delimiter = ',', default_value = "JMM-naive,OBSLIK")]
        estimators: Vec<Estimator>,
        /// TOML file with estimator settings.
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        /// Seed for bootstrap resampling.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Outcome and exposure prevalence by cluster size.
    Summarize {
        data: PathBuf,
        #[arg(long, default_value = "1,2,3,4+")]
        bins: String,
    },
    /// Long-format beta1 estimates from a study output directory.
    FigureData {
        study_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<Estimator>>,
        /// Output file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate one synthetic dataset from a scenario TOML.
    Generate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Blank x1 outside the validation sample.
        #[arg(long)]
        redact: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn simulate(
    config: PathBuf,
    seed: Option<u64>,
    parallelism: Option<usize>,
    order: Option<usize>,
    replications: Option<usize>,
    output_dir: Option<PathBuf>,
    paper_scale: bool,
) -> anyhow::Result<()> {
    let mut cfg = StudyConfig::load(&config)?;
    if paper_scale {
        eprintln!("warning: paper scale (8000 clusters, 2000 replications) takes days on one core");
        cfg.scenario.clusters = 8000;
        cfg.scenario.validation_count = 1600;
        cfg.replications = 2000;
    }
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    if let Some(p) = parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = order {
        cfg.settings.quadrature_order = o;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    let dir = output_dir.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
        let stem = config.file_stem().map_or("study".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("results").join(stem)
    });
    cfg.check()?;
    let output = study::run_study_with_progress(&cfg, |done, total| {
        if done % 10 == 0 || done == total {
            eprintln!("{done}/{total} replications");
        }
    })?;
    study::write_outputs(&cfg, &output, &dir)?;
    print!("{}", report::operating_table(&output.summary, &cfg.estimators, "beta1"));
    if !output.failures.is_empty() {
        eprintln!("{} estimator failures; see {}", output.failures.len(), dir.join("failures.csv").display());
    }
    eprintln!("results written to {}", dir.display());
    Ok(())
}

fn fit(data: PathBuf, estimators: Vec<Estimator>, settings: Option<PathBuf>, order: Option<usize>, seed: u64) -> anyhow::Result<bool> {
    let data = read_dataset_file(&data).with_context(|| format!("reading {}", data.display()))?;
    let mut settings: Settings = match settings {
        Some(p) => toml::from_str(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("in {}", p.display()))?,
        None => Settings::default(),
    };
    if let Some(o) = order {
        settings.quadrature_order = o;
    }
    let mut fitter = Fitter::new(&data, &settings, settings.misclass_for(None), seed);
    let mut ok = true;
    println!("{} clusters, {} units, {} validated\n", data.len(), data.unit_count(), data.validated_count());
    for est in estimators {
        match fitter.fit(est) {
            Ok(f) => print!("{}", report::fit_report(est, &f)),
            Err(e) => {
                ok = false;
                eprintln!("{est}: {e}");
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { config, seed, parallelism, order, replications, output_dir, paper_scale } => {
            simulate(config, seed, parallelism, order, replications, output_dir, paper_scale)?
        }
        Command::Fit { data, estimators, settings, order, seed } => return fit(data, estimators, settings, order, seed),
        Command::Summarize { data, bins } => {
            let bins = report::parse_bins(&bins)?;
            let data = read_dataset_file(&data).with_context(|| format!("reading {}", data.display()))?;
            report::write_size_summary(&summarize_by_size(&data, &bins), std::io::stdout().lock())?;
        }
        Command::FigureData { study_dir, estimators, output } => {
            let records = study::read_records(&study_dir.join("replications.csv"))?;
            let rows = study::figure_rows(&records, estimators.as_deref());
            match output {
                Some(p) => study::write_figure_rows(&rows, std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?)?,
                None => study::write_figure_rows(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Generate { scenario, seed, redact, output } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let mut data = generate(&s)?;
            if redact {
                data = data.redacted();
            }
            match output {
                Some(p) => write_dataset_file(&data, &p)?,
                None => {
                    let mut out = std::io::stdout().lock();
                    write_dataset(&data, &mut out)?;
                    out.flush()?;
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
