//! Command-line front end: CSV ingestion, JSON configuration and results,
//! and report rendering on top of `medmeta-core`.

pub mod csv_input;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use medmeta_core::classical::{e_value, fixed_effect_rr, peto_or, ClassicalConfig, ZeroCellPolicy};
use medmeta_core::mcmc::{run_chains, summarize, SamplerConfig};
use medmeta_core::model::{DecisionModel, PriorConfig};
use medmeta_core::report::{render_forest_svg, render_forest_text, summary_table, ForestPlotSpec, TableSource};
use medmeta_core::simulate::{confounding_demo, replicate_dataset, simulate_dataset, SimScenario};
use serde::de::DeserializeOwned;

pub use csv_input::{parse_csv, parse_csv_str, write_csv, ParsedCsv};
pub use error::CliError;
pub use output::*;

#[derive(Debug, Parser)]
#[command(name = "medmeta", version, about = "Decision-mediated Bayesian and fixed-effect meta-analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fixed-effect pooling of a study CSV.
    Fixed(FixedArgs),
    /// Posterior sampling of the decision-mediated model.
    Bayes(BayesArgs),
    /// E-value of an observed relative risk.
    Evalue(EvalueArgs),
    /// Synthetic datasets from a scenario, optionally with the confounding experiment.
    Simulate(SimulateArgs),
    /// Forest plot of a fixed or bayes result file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZeroCellArg {
    /// Add 0.5 to every cell of a study with a zero cell.
    AddHalf,
    /// Drop studies with a zero cell.
    Exclude,
}

#[derive(Debug, Args)]
pub struct FixedArgs {
    #[arg(long, value_enum, default_value_t = MeasureArg::Rr)]
    pub measure: MeasureArg,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub conf: f64,
    #[arg(long, value_enum, default_value_t = ZeroCellArg::AddHalf)]
    pub zero_cells: ZeroCellArg,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 10)]
    pub max_tree_depth: usize,
    /// Prior hyper-parameters as a JSON object with `PriorConfig` field names.
    #[arg(long, value_name = "FILE.json")]
    pub priors: Option<PathBuf>,
}

impl SamplerArgs {
    fn sampler(&self, seed: u64) -> Result<SamplerConfig, CliError> {
        let cfg = SamplerConfig {
            chains: self.chains,
            warmup_draws: self.warmup,
            retained_draws: self.draws,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn priors(&self) -> Result<PriorConfig, CliError> {
        let priors = match &self.priors {
            Some(path) => read_json::<PriorConfig>(path)?,
            None => PriorConfig::default(),
        };
        priors.validate()?;
        Ok(priors)
    }
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    #[arg(long = "in", value_name = "FILE", required_unless_present = "prior_only", conflicts_with = "prior_only")]
    pub input: Option<PathBuf>,
    /// Sample the prior (no studies) instead of a posterior.
    #[arg(long)]
    pub prior_only: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalueArgs {
    #[arg(long)]
    pub rr: f64,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario as a JSON object with `SimScenario` field names.
    #[arg(long, value_name = "FILE.json")]
    pub scenario: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of independent replicates; without it a single dataset is
    /// drawn from the scenario seed.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Run the classical and Bayesian analyses on every replicate.
    #[arg(long, requires = "replicates")]
    pub demo: bool,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Svg,
    Text,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "RESULT.json")]
    pub from: PathBuf,
    #[arg(long, value_enum)]
    pub format: ReportFormat,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(command: &Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Fixed(a) => fixed(a, out),
        Command::Bayes(a) => bayes(a, out),
        Command::Evalue(a) => evalue(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Report(a) => report(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_result(dir: &Path, name: &str, result: &ResultFile) -> Result<(), CliError> {
    create_dir(dir)?;
    write_file(&dir.join(name), &result.to_json())
}

fn io_error(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn fixed(a: &FixedArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = ClassicalConfig::with_confidence(a.conf)?;
    cfg.zero_cell_policy = match a.zero_cells {
        ZeroCellArg::AddHalf => ZeroCellPolicy::HaldaneAnscombe05,
        ZeroCellArg::Exclude => ZeroCellPolicy::ExcludeStudy,
    };
    let parsed = parse_csv(&a.input)?;
    warn_all(&parsed.warnings);
    let estimate = match a.measure {
        MeasureArg::Rr => fixed_effect_rr(&parsed.dataset, &cfg)?,
        MeasureArg::PetoOr => peto_or(&parsed.dataset, &cfg)?,
    };
    write!(out, "{}", summary_table(TableSource::Classical(&estimate))).map_err(io_error)?;
    let result = FixedResult {
        config: FixedConfig {
            input: a.input.display().to_string(),
            measure: a.measure,
            confidence_level: cfg.confidence_level,
            zero_cell_policy: cfg.zero_cell_policy,
        },
        dataset: parsed.dataset,
        ratio: estimate.ratio(),
        ratio_ci: estimate.ratio_ci(),
        estimate,
    };
    write_result(&a.out, "fixed_result.json", &ResultFile::new(CommandResult::Fixed(result), parsed.warnings))?;
    Ok(0)
}

fn bayes(a: &BayesArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let priors = a.sampler.priors()?;
    let sampler = a.sampler.sampler(a.seed)?;
    let (dataset, warnings) = match &a.input {
        Some(path) => {
            let parsed = parse_csv(path)?;
            (Some(parsed.dataset), parsed.warnings)
        }
        None => (None, Vec::new()),
    };
    warn_all(&warnings);
    let model = match &dataset {
        Some(d) => DecisionModel::from_dataset(d, priors)?,
        None => DecisionModel::prior_only(priors)?,
    };
    let chains = run_chains(&model, &sampler)?;
    let summary = summarize(&chains, &model)?;
    let gates = QualityGates::default();
    let diagnostics = Diagnostics::assess(&summary, &gates);

    write!(out, "{}", summary_table(TableSource::Posterior(&summary))).map_err(io_error)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    for f in &diagnostics.failures {
        eprintln!("diagnostics: {f}");
    }
    let passed = diagnostics.passed;
    let result = BayesResult {
        config: BayesConfig {
            input: a.input.as_ref().map(|p| p.display().to_string()),
            prior_only: a.prior_only,
            priors,
            sampler,
            gates,
        },
        dataset,
        summary,
        diagnostics,
    };
    write_result(&a.out, "bayes_result.json", &ResultFile::new(CommandResult::Bayes(result), warnings))?;
    Ok(if passed { 0 } else { 3 })
}

fn evalue(a: &EvalueArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let e = e_value(a.rr)?;
    writeln!(out, "{e:.2}").map_err(io_error)?;
    let result = EvalueResult { rr: a.rr, e_value: e };
    write_result(&a.out, "evalue_result.json", &ResultFile::new(CommandResult::Evalue(result), Vec::new()))?;
    Ok(0)
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenario: SimScenario = read_json(&a.scenario)?;
    scenario.validate()?;
    create_dir(&a.out)?;
    let mut datasets = Vec::new();
    match a.replicates {
        None => {
            let (data, truth) = simulate_dataset(&scenario)?;
            write_file(&a.out.join("dataset.csv"), &write_csv(&data))?;
            datasets.push(SimulatedDataset {
                file: String::from("dataset.csv"),
                sampler_seed: None,
                truth,
            });
        }
        Some(n) => {
            for i in 0..n {
                let (data, truth, seed) = replicate_dataset(&scenario, i as u64)?;
                let file = format!("replicate_{:03}.csv", i + 1);
                write_file(&a.out.join(&file), &write_csv(&data))?;
                datasets.push(SimulatedDataset {
                    file,
                    sampler_seed: Some(seed),
                    truth,
                });
            }
        }
    }
    writeln!(out, "wrote {} dataset(s) to {}", datasets.len(), a.out.display()).map_err(io_error)?;

    let demo = if a.demo {
        let priors = a.sampler.priors()?;
        let sampler = a.sampler.sampler(0)?;
        let report = confounding_demo(&scenario, a.replicates.unwrap_or(0), &priors, &sampler)?;
        writeln!(
            out,
            "classical p<0.05 in {:.0}% of replicates; posterior total RR HDI contains 1 in {:.0}%",
            100.0 * report.spurious_detection,
            100.0 * report.null_coverage
        )
        .map_err(io_error)?;
        Some(DemoResult { priors, sampler, report })
    } else {
        None
    };
    let result = SimulateResult { scenario, datasets, demo };
    write_result(&a.out, "simulate_result.json", &ResultFile::new(CommandResult::Simulate(result), Vec::new()))?;
    Ok(0)
}

fn report(a: &ReportArgs) -> Result<i32, CliError> {
    let file = ResultFile::read(&a.from)?;
    let spec = match &file.result {
        CommandResult::Fixed(r) => {
            let title = a.title.clone().unwrap_or_else(|| String::from("Fixed-effect meta-analysis"));
            ForestPlotSpec::from_classical(&r.estimate, &title)?
        }
        CommandResult::Bayes(r) => {
            let title = a.title.clone().unwrap_or_else(|| String::from("Decision-mediated posterior"));
            let studies = r.dataset.as_ref().map(|d| d.studies.as_slice()).unwrap_or_default();
            let labels: Vec<(&str, &str)> = studies.iter().map(|s| (s.id.as_str(), s.label.as_str())).collect();
            ForestPlotSpec::from_posterior(&r.summary, &labels, &title)?
        }
        CommandResult::Evalue(_) | CommandResult::Simulate(_) => {
            return Err(CliError::Usage(String::from(
                "report needs the result of a `fixed` or `bayes` run",
            )))
        }
    };
    let rendered = match a.format {
        ReportFormat::Svg => render_forest_svg(&spec)?,
        ReportFormat::Text => render_forest_text(&spec)?,
    };
    write_file(&a.out, &rendered)?;
    Ok(0)
}
