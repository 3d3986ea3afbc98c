//! Forward simulation of the generative story with known ground truth, the
//! confounding experiment built on it, and simulation-based calibration.
//!
//! Every replicate owns a ChaCha8 stream selected by its index
//! (`seed_from_u64(seed)` followed by `set_stream(index)`), so replicates are
//! independent of each other and of how many run in parallel.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classical::{fixed_effect_rr, ClassicalConfig};
use crate::data::{MetaDataset, StudyRecord};
use crate::dists::Kernel;
use crate::error::{Error, Result};
use crate::math::chi_square_sf;
use crate::mcmc::{run_chains, summarize, SamplerConfig};
use crate::model::{arm_probabilities, sample_prior_params, DecisionModel, Params, PriorConfig, StudyParams};

pub const DEFAULT_INTERVENTION_SIZE: u64 = 173;
pub const DEFAULT_CONTROL_SIZE: u64 = 500;

/// A fixed-parameter simulation scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SimScenario {
    pub num_studies: usize,
    /// `(intervention total, control total)` per study; empty means the
    /// default sizes for every study.
    pub arm_sizes: Vec<(u64, u64)>,
    pub true_theta: f64,
    pub true_beta: f64,
    pub base_rate: f64,
    /// Mean of the per-study thresholds.
    pub threshold_loc: f64,
    /// Beta concentration of the arm probabilities.
    pub eta: f64,
    /// Standard deviation of per-study `theta_i` around `true_theta`.
    pub theta_spread: f64,
    /// Puts the intervention arm above the threshold instead of below.
    pub swap_sides: bool,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            num_studies: 6,
            arm_sizes: Vec::new(),
            true_theta: 0.0,
            true_beta: 0.0,
            base_rate: 0.32,
            threshold_loc: 0.0,
            eta: 30.0,
            theta_spread: 0.0,
            swap_sides: false,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.num_studies == 0 {
            return Err(Error::InvalidParameter("num_studies must be at least 1"));
        }
        if !self.arm_sizes.is_empty() && self.arm_sizes.len() != self.num_studies {
            return Err(Error::InvalidParameter("arm_sizes must list one pair per study"));
        }
        if self.arm_sizes.iter().any(|&(i, c)| i == 0 || c == 0) {
            return Err(Error::InvalidParameter("arm sizes must be at least 1"));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::RateOutOfRange(self.base_rate));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter("eta must be positive"));
        }
        if !(self.theta_spread >= 0.0) {
            return Err(Error::InvalidParameter("theta_spread must be non-negative"));
        }
        if !(self.true_theta.is_finite() && self.true_beta.is_finite() && self.threshold_loc.is_finite()) {
            return Err(Error::InvalidParameter("scenario effects must be finite"));
        }
        Ok(())
    }

    pub fn arm_size(&self, study: usize) -> (u64, u64) {
        self.arm_sizes
            .get(study)
            .copied()
            .unwrap_or((DEFAULT_INTERVENTION_SIZE, DEFAULT_CONTROL_SIZE))
    }
}

/// Every latent value behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub theta: f64,
    pub beta: f64,
    pub mu: f64,
    pub eta: f64,
    pub threshold_loc: f64,
    pub studies: Vec<StudyParams>,
    pub total_rr: f64,
}

/// RNG stream `index` of `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_dataset(s: &SimScenario) -> Result<(MetaDataset, GroundTruth)> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    simulate_with(s, &mut rng)
}

/// Dataset, ground truth and sampler seed of replicate `index`, exactly as
/// [`confounding_demo`] sees them.
pub fn replicate_dataset(s: &SimScenario, index: u64) -> Result<(MetaDataset, GroundTruth, u64)> {
    s.validate()?;
    let mut rng = replicate_rng(s.seed, index);
    let sampler_seed = rng.next_u64();
    let (data, truth) = simulate_with(s, &mut rng)?;
    Ok((data, truth, sampler_seed))
}

fn simulate_with<R: RngCore>(s: &SimScenario, rng: &mut R) -> Result<(MetaDataset, GroundTruth)> {
    let mut studies = Vec::with_capacity(s.num_studies);
    let mut latent = Vec::with_capacity(s.num_studies);
    let spread = Kernel::normal(s.true_theta, s.theta_spread.max(f64::MIN_POSITIVE))?;
    for j in 0..s.num_studies {
        let delta_i = Kernel::normal(s.threshold_loc, 1.0)?.sample(rng);
        let below = Kernel::truncated_normal_right(0.0, 1.0, delta_i)?.sample(rng);
        let above = Kernel::truncated_normal_left(0.0, 1.0, delta_i)?.sample(rng);
        let (intervention_mediated, control_mediated) = if s.swap_sides { (above, below) } else { (below, above) };
        let theta_i = if s.theta_spread > 0.0 { spread.sample(rng) } else { s.true_theta };
        let (p_control, p_intervention) = arm_probabilities(
            s.base_rate,
            s.eta,
            s.true_beta,
            theta_i,
            control_mediated,
            intervention_mediated,
            rng,
        )?;
        let (n_i, n_c) = s.arm_size(j);
        let ie = Kernel::binomial(p_intervention, n_i)?.sample(rng) as u64;
        let ce = Kernel::binomial(p_control, n_c)?.sample(rng) as u64;
        studies.push(StudyRecord::new(format!("S{}", j + 1), ie, n_i - ie, ce, n_c - ce));
        latent.push(StudyParams {
            theta: theta_i,
            delta: delta_i,
            control_mediated,
            intervention_mediated,
            p_control,
            p_intervention,
        });
    }
    let mu = s.base_rate;
    let truth = GroundTruth {
        theta: s.true_theta,
        beta: s.true_beta,
        mu,
        eta: s.eta,
        threshold_loc: s.threshold_loc,
        studies: latent,
        total_rr: crate::math::sigmoid(crate::math::logit(mu) + s.true_theta) / mu,
    };
    Ok((MetaDataset::new(studies), truth))
}

/// Outcome of one confounding-experiment replicate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReplicateOutcome {
    pub index: usize,
    pub classical_rr: Option<f64>,
    pub classical_p: Option<f64>,
    pub bayes_total_rr: Option<f64>,
    pub bayes_hdi: Option<(f64, f64)>,
    pub max_rhat: Option<f64>,
    pub divergences: Option<usize>,
    pub errors: Vec<String>,
}

impl ReplicateOutcome {
    pub fn classical_significant(&self) -> Option<bool> {
        self.classical_p.map(|p| p < 0.05)
    }

    pub fn hdi_contains_one(&self) -> Option<bool> {
        self.bayes_hdi.map(|(lo, hi)| lo <= 1.0 && 1.0 <= hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfoundingReport {
    pub replicates: Vec<ReplicateOutcome>,
    /// Fraction of replicates whose classical test gave `p < 0.05`.
    pub spurious_detection: f64,
    /// Fraction of replicates whose total-RR HDI contains 1.
    pub null_coverage: f64,
}

/// Runs the classical and Bayesian pipelines on `replicates` datasets drawn
/// from `s`. Failed steps are recorded per replicate and count as misses in
/// both fractions.
pub fn confounding_demo(
    s: &SimScenario,
    replicates: usize,
    priors: &PriorConfig,
    sampler: &SamplerConfig,
) -> Result<ConfoundingReport> {
    s.validate()?;
    if s.true_theta != 0.0 {
        return Err(Error::InvalidParameter("confounding_demo requires true_theta = 0"));
    }
    let run = |index: usize| replicate(s, index, priors, sampler);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<ReplicateOutcome> = {
        use rayon::prelude::*;
        (0..replicates).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<ReplicateOutcome> = (0..replicates).map(run).collect();

    let n = outcomes.len().max(1) as f64;
    let spurious = outcomes.iter().filter(|o| o.classical_significant() == Some(true)).count() as f64;
    let covered = outcomes.iter().filter(|o| o.hdi_contains_one() == Some(true)).count() as f64;
    Ok(ConfoundingReport {
        spurious_detection: if outcomes.is_empty() { 0.0 } else { spurious / n },
        null_coverage: if outcomes.is_empty() { 0.0 } else { covered / n },
        replicates: outcomes,
    })
}

fn replicate(s: &SimScenario, index: usize, priors: &PriorConfig, sampler: &SamplerConfig) -> ReplicateOutcome {
    let mut out = ReplicateOutcome {
        index,
        classical_rr: None,
        classical_p: None,
        bayes_total_rr: None,
        bayes_hdi: None,
        max_rhat: None,
        divergences: None,
        errors: Vec::new(),
    };
    let (data, sampler) = match replicate_dataset(s, index as u64) {
        Ok((data, _, seed)) => (data, SamplerConfig { seed, ..*sampler }),
        Err(e) => {
            out.errors.push(format!("simulation: {e}"));
            return out;
        }
    };
    match fixed_effect_rr(&data, &ClassicalConfig::default()) {
        Ok(est) => {
            out.classical_rr = Some(est.ratio());
            out.classical_p = Some(est.p_value);
        }
        Err(e) => out.errors.push(format!("classical: {e}")),
    }
    let bayes = DecisionModel::from_dataset(&data, *priors).and_then(|model| {
        let chains = run_chains(&model, &sampler)?;
        summarize(&chains, &model)
    });
    match bayes {
        Ok(summary) => {
            if let Some(q) = summary.get("total_rr") {
                out.bayes_total_rr = Some(q.median);
                out.bayes_hdi = Some((q.hdi_low, q.hdi_high));
            }
            out.max_rhat = summary.max_rhat();
            out.divergences = Some(summary.divergences);
        }
        Err(e) => out.errors.push(format!("sampler: {e}")),
    }
    out
}

/// Simulation-based calibration settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SbcConfig {
    pub sampler: SamplerConfig,
    pub num_sims: usize,
    pub num_studies: usize,
    pub arm_sizes: (u64, u64),
    /// Posterior draws kept per simulation after thinning; ranks take
    /// values in `0..=posterior_draws`.
    pub posterior_draws: usize,
    pub bins: usize,
    pub priors: PriorConfig,
    #[cfg_attr(feature = "serde", serde(skip))]
    #[doc(hidden)]
    pub broken_mu_jacobian: bool,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig {
                chains: 1,
                ..SamplerConfig::default()
            },
            num_sims: 100,
            num_studies: 2,
            arm_sizes: (DEFAULT_INTERVENTION_SIZE, DEFAULT_CONTROL_SIZE),
            posterior_draws: 99,
            bins: 20,
            priors: PriorConfig::default(),
            broken_mu_jacobian: false,
        }
    }
}

/// Rank histogram and uniformity test for one parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankHistogram {
    pub parameter: String,
    pub ranks: Vec<usize>,
    pub counts: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SbcReport {
    pub histograms: Vec<RankHistogram>,
    /// `(simulation index, message)` for every simulation that produced no ranks.
    pub failures: Vec<(usize, String)>,
    pub divergences: usize,
}

impl SbcReport {
    pub fn get(&self, parameter: &str) -> Option<&RankHistogram> {
        self.histograms.iter().find(|h| h.parameter == parameter)
    }
}

pub const SBC_PARAMETERS: [&str; 3] = ["theta", "beta", "mu"];

/// Draws ground truth from the full prior, simulates counts, samples the
/// posterior and records the rank of each true value among thinned draws.
pub fn sbc_ranks(cfg: &SbcConfig) -> Result<SbcReport> {
    if cfg.num_sims < 50 {
        return Err(Error::InsufficientSims(cfg.num_sims));
    }
    if cfg.bins == 0 || cfg.posterior_draws == 0 || !(cfg.posterior_draws + 1).is_multiple_of(cfg.bins) {
        return Err(Error::InvalidParameter("posterior_draws + 1 must be a multiple of bins"));
    }
    let total = cfg.sampler.chains * cfg.sampler.retained_draws;
    if total < cfg.posterior_draws {
        return Err(Error::InsufficientDraws);
    }
    let run = |i: usize| sbc_one(cfg, i);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<([usize; 3], usize)>> = {
        use rayon::prelude::*;
        (0..cfg.num_sims).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<([usize; 3], usize)>> = (0..cfg.num_sims).map(run).collect();

    let mut ranks: [Vec<usize>; 3] = Default::default();
    let mut failures = Vec::new();
    let mut divergences = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((rk, div)) => {
                for (dst, v) in ranks.iter_mut().zip(rk) {
                    dst.push(v);
                }
                divergences += div;
            }
            Err(e) => failures.push((i, format!("{e}"))),
        }
    }
    let histograms = SBC_PARAMETERS
        .iter()
        .zip(ranks)
        .map(|(name, r)| {
            let (counts, chi_square, p_value) = uniformity(&r, cfg.posterior_draws + 1, cfg.bins);
            RankHistogram {
                parameter: String::from(*name),
                ranks: r,
                counts,
                chi_square,
                p_value,
            }
        })
        .collect();
    Ok(SbcReport {
        histograms,
        failures,
        divergences,
    })
}

fn sbc_one(cfg: &SbcConfig, index: usize) -> Result<([usize; 3], usize)> {
    let mut rng = replicate_rng(cfg.sampler.seed, index as u64);
    let truth = sample_prior_params(&cfg.priors, cfg.num_studies, &mut rng)?;
    let (n_i, n_c) = cfg.arm_sizes;
    let studies = truth
        .studies
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let ie = Kernel::binomial(s.p_intervention, n_i)?.sample(&mut rng) as u64;
            let ce = Kernel::binomial(s.p_control, n_c)?.sample(&mut rng) as u64;
            Ok(StudyRecord::new(format!("S{}", j + 1), ie, n_i - ie, ce, n_c - ce))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = DecisionModel::new(&studies, cfg.priors)?;
    if cfg.broken_mu_jacobian {
        model = model.with_broken_mu_jacobian();
    }
    let sampler = SamplerConfig { seed: rng.next_u64(), ..cfg.sampler };
    let chains = run_chains(&model, &sampler)?;
    let draws: Vec<&[f64]> = chains.iter().flat_map(|c| c.draws_iter()).collect();
    let stride = draws.len() / cfg.posterior_draws;
    let thinned: Vec<Params> = (0..cfg.posterior_draws)
        .map(|i| crate::model::ParamVector::from_vec(draws[i * stride].to_vec()).map(|p| p.decode()))
        .collect::<Result<_>>()?;
    let truth_values = [truth.theta, truth.beta, truth.mu];
    let mut ranks = [0usize; 3];
    for p in &thinned {
        let vals = [p.theta, p.beta, p.mu];
        for k in 0..3 {
            ranks[k] += (vals[k] < truth_values[k]) as usize;
        }
    }
    let divergences = chains.iter().map(|c| c.divergence_count).sum();
    Ok((ranks, divergences))
}

/// Bins ranks in `0..levels` into `bins` equal groups and returns the counts,
/// the Pearson statistic and its chi-square upper-tail probability.
pub fn uniformity(ranks: &[usize], levels: usize, bins: usize) -> (Vec<usize>, f64, f64) {
    let mut counts = vec![0usize; bins];
    let width = levels / bins;
    for &r in ranks {
        counts[(r / width).min(bins - 1)] += 1;
    }
    if ranks.is_empty() {
        return (counts, 0.0, 1.0);
    }
    let expected = ranks.len() as f64 / bins as f64;
    let chi: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected)
        .sum();
    (counts, chi, chi_square_sf(chi, (bins - 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{logit, sigmoid};

    fn huge(s: SimScenario) -> SimScenario {
        SimScenario {
            arm_sizes: vec![(1_000_000, 1_000_000); s.num_studies],
            eta: 1e7,
            ..s
        }
    }

    #[test]
    fn null_scenario_reproduces_base_rate() {
        let s = huge(SimScenario { base_rate: 0.32, seed: 1, ..Default::default() });
        let (data, _) = simulate_dataset(&s).unwrap();
        for st in &data.studies {
            let ri = st.intervention_events as f64 / st.intervention_total() as f64;
            let rc = st.control_events as f64 / st.control_total() as f64;
            assert!((ri - 0.32).abs() < 0.01 && (rc - 0.32).abs() < 0.01, "{ri} {rc}");
        }
    }

    #[test]
    fn theta_shifts_log_odds() {
        let shift = 0.7;
        let s = huge(SimScenario { true_theta: shift, seed: 2, ..Default::default() });
        let (data, truth) = simulate_dataset(&s).unwrap();
        for st in &data.studies {
            let ri = st.intervention_events as f64 / st.intervention_total() as f64;
            let rc = st.control_events as f64 / st.control_total() as f64;
            assert!((logit(ri) - logit(rc) - shift).abs() < 0.02);
        }
        assert!((truth.total_rr - sigmoid(logit(0.32) + shift) / 0.32).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_ordered() {
        let s = SimScenario { true_beta: 1.5, seed: 9, ..Default::default() };
        let (a, ta) = simulate_dataset(&s).unwrap();
        let (b, tb) = simulate_dataset(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for st in &ta.studies {
            assert!(st.intervention_mediated <= st.delta && st.delta <= st.control_mediated);
        }
        assert_eq!(a.studies[0].intervention_total(), 173);
        assert_eq!(a.studies[0].control_total(), 500);
    }

    /// Control arms sit above the threshold, so their pooled rate centres on
    /// the base rate shifted by `beta` times the mean of the upper truncated
    /// mediator.
    #[test]
    fn control_rates_match_moment_oracle() {
        let beta = 0.8;
        let mut rates = Vec::new();
        let mut expected = Vec::new();
        for r in 0..100 {
            let s = SimScenario { true_beta: beta, seed: 1000 + r, ..Default::default() };
            let (data, truth) = simulate_dataset(&s).unwrap();
            for (st, lat) in data.studies.iter().zip(&truth.studies) {
                rates.push(st.control_events as f64 / st.control_total() as f64);
                let w = -lat.delta;
                let mills = libm::exp(crate::math::ln_std_normal_pdf(w) - crate::math::log_ndtr(w));
                expected.push(sigmoid(logit(0.32) + beta * mills));
            }
        }
        let n = rates.len() as f64;
        let diff: Vec<f64> = rates.iter().zip(&expected).map(|(a, b)| a - b).collect();
        let mean = diff.iter().sum::<f64>() / n;
        let sd = libm::sqrt(diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0));
        assert!(mean.abs() < 3.0 * sd / libm::sqrt(n), "mean {mean} sd {sd}");
    }

    #[test]
    fn swapping_sides_flips_confounding_direction() {
        let pooled = |swap: bool| {
            let mut ri = 0.0;
            let mut rc = 0.0;
            for r in 0..20 {
                let s = SimScenario { true_beta: 1.5, swap_sides: swap, seed: 50 + r, ..Default::default() };
                let (data, _) = simulate_dataset(&s).unwrap();
                for st in &data.studies {
                    ri += st.intervention_events as f64 / st.intervention_total() as f64;
                    rc += st.control_events as f64 / st.control_total() as f64;
                }
            }
            ri - rc
        };
        assert!(pooled(false) < 0.0);
        assert!(pooled(true) > 0.0);
    }

    #[test]
    fn scenario_validation() {
        assert!(simulate_dataset(&SimScenario { base_rate: 1.0, ..Default::default() }).is_err());
        assert!(simulate_dataset(&SimScenario { num_studies: 0, ..Default::default() }).is_err());
        assert!(simulate_dataset(&SimScenario { arm_sizes: vec![(0, 10)], num_studies: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn zero_replicates_is_empty() {
        let s = SimScenario { true_beta: 1.5, ..Default::default() };
        let r = confounding_demo(&s, 0, &PriorConfig::default(), &SamplerConfig::default()).unwrap();
        assert!(r.replicates.is_empty());
        let bad = SimScenario { true_theta: 0.3, ..Default::default() };
        assert!(confounding_demo(&bad, 1, &PriorConfig::default(), &SamplerConfig::default()).is_err());
    }

    #[test]
    fn sbc_needs_fifty_sims() {
        let cfg = SbcConfig { num_sims: 10, ..Default::default() };
        assert_eq!(sbc_ranks(&cfg), Err(Error::InsufficientSims(10)));
    }

    #[test]
    fn uniformity_statistic() {
        let flat: Vec<usize> = (0..1000).map(|i| i % 100).collect();
        let (counts, chi, p) = uniformity(&flat, 100, 20);
        assert!(counts.iter().all(|&c| c == 50));
        assert_eq!(chi, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let piled = vec![0usize; 100];
        assert!(uniformity(&piled, 100, 20).2 < 1e-10);
    }
}
