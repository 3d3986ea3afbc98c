//! The versioned JSON result file written by every analysis command.

use std::path::Path;

use medmeta_core::classical::{EffectEstimate, ZeroCellPolicy};
use medmeta_core::mcmc::{PosteriorSummary, SamplerConfig};
use medmeta_core::model::PriorConfig;
use medmeta_core::simulate::{ConfoundingReport, GroundTruth, SimScenario};
use medmeta_core::MetaDataset;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema_version: u32,
    pub tool: ToolInfo,
    #[serde(flatten)]
    pub result: CommandResult,
    pub warnings: Vec<String>,
}

impl ResultFile {
    pub fn new(result: CommandResult, warnings: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: ToolInfo::current(),
            result,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result types serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandResult {
    Fixed(FixedResult),
    Bayes(BayesResult),
    Evalue(EvalueResult),
    Simulate(SimulateResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureArg {
    Rr,
    PetoOr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedConfig {
    pub input: String,
    pub measure: MeasureArg,
    pub confidence_level: f64,
    pub zero_cell_policy: ZeroCellPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedResult {
    pub config: FixedConfig,
    pub dataset: MetaDataset,
    pub estimate: EffectEstimate,
    /// The pooled ratio and its interval on the natural scale.
    pub ratio: f64,
    pub ratio_ci: (f64, f64),
}

/// Thresholds a posterior run must meet to exit with status 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGates {
    /// Every R-hat must lie strictly below this.
    pub max_rhat: f64,
    /// Every ESS must lie strictly above this.
    pub min_ess: f64,
    /// Divergent transitions must be strictly below this fraction of draws.
    pub max_divergence_fraction: f64,
}

impl Default for QualityGates {
    fn default() -> Self {
        Self {
            max_rhat: 1.01,
            min_ess: 400.0,
            max_divergence_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergences: usize,
    pub divergence_fraction: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

impl Diagnostics {
    pub fn assess(summary: &PosteriorSummary, gates: &QualityGates) -> Self {
        let max_rhat = summary.max_rhat();
        let min_ess = summary.min_ess();
        let total = summary.total_draws().max(1);
        let divergence_fraction = summary.divergences as f64 / total as f64;
        let mut failures = Vec::new();
        let worst = |key: fn(&medmeta_core::mcmc::QuantitySummary) -> Option<f64>, max: bool| {
            summary
                .quantities
                .iter()
                .filter_map(|q| key(q).map(|v| (q.name.as_str(), v)))
                .reduce(|a, b| if (b.1 > a.1) == max { b } else { a })
                .map(|(n, _)| n.to_string())
                .unwrap_or_default()
        };
        if let Some(r) = max_rhat.filter(|r| !(*r < gates.max_rhat)) {
            failures.push(format!("R-hat {r:.3} for {} (gate < {})", worst(|q| q.rhat, true), gates.max_rhat));
        }
        if let Some(e) = min_ess.filter(|e| !(*e > gates.min_ess)) {
            failures.push(format!("ESS {e:.0} for {} (gate > {})", worst(|q| q.ess, false), gates.min_ess));
        }
        if !(divergence_fraction < gates.max_divergence_fraction) {
            failures.push(format!(
                "{} divergent transitions of {total} ({:.2}%, gate < {}%)",
                summary.divergences,
                100.0 * divergence_fraction,
                100.0 * gates.max_divergence_fraction
            ));
        }
        Self {
            max_rhat,
            min_ess,
            divergences: summary.divergences,
            divergence_fraction,
            passed: failures.is_empty(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub input: Option<String>,
    pub prior_only: bool,
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub gates: QualityGates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesResult {
    pub config: BayesConfig,
    pub dataset: Option<MetaDataset>,
    pub summary: PosteriorSummary,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalueResult {
    pub rr: f64,
    pub e_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub file: String,
    /// Sampler seed the confounding experiment uses for this replicate.
    pub sampler_seed: Option<u64>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoResult {
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub report: ConfoundingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResult {
    pub scenario: SimScenario,
    pub datasets: Vec<SimulatedDataset>,
    pub demo: Option<DemoResult>,
}
