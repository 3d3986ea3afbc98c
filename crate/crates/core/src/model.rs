//! The decision-mediated hierarchical model.
//!
//! Each study's arms sit on opposite sides of a provider threshold on an
//! unobserved mediator: the intervention arm draws its mediator from the
//! population truncated above the study threshold, the control arm from the
//! population truncated below it. Arm event probabilities are Beta draws
//! centred on `sigmoid(logit(mu) + beta * mediator [+ theta_i])`.
//!
//! Parameters live in an unconstrained vector of `8 + 6k` reals:
//!
//! | slot | coordinate | decoded as |
//! |------|------------|------------|
//! | 0 | `log_eta` | `eta = exp(log_eta)` |
//! | 1 | `mu_logit` | `mu = sigmoid(.)` |
//! | 2 | `log_tau` | `tau = exp(.)` |
//! | 3 | `log_tau_b` | `tau_b = exp(.)` |
//! | 4 | `theta` | identity |
//! | 5 | `beta` | identity |
//! | 6 | `mediator_prior` | identity |
//! | 7 | `delta` | identity |
//! | per study | `theta_i` | identity |
//! | | `delta_i` | identity |
//! | | `control_mediated_raw` | `delta_i + exp(.)` |
//! | | `intervention_mediated_raw` | `delta_i - exp(.)` |
//! | | `p_control_logit` | `sigmoid(.)` |
//! | | `p_intervention_logit` | `sigmoid(.)` |
//!
//! The normal priors on `theta`, `beta` and `theta_i` take `tau^2` (resp.
//! `tau_b^2`) as their *scale*.
//!
//! The [`Target`] implementation samples a smooth bijective reparameterization
//! of this vector and maps every retained draw back, so chain draws are always
//! in the layout above.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{MetaDataset, StudyRecord};
use crate::dists::{beta_logit_with_jacobian, Kernel, Transform};
use crate::error::{Error, Result};
use crate::math::{
    exp, ln, ln_beta, ln_gamma, ln_std_normal_pdf, log_ndtr, log_sigmoid, logit, sigmoid,
    softplus, sqrt,
};
use crate::mcmc::{Quantities, Target};

pub const GLOBAL_DIM: usize = 8;
pub const STUDY_DIM: usize = 6;

pub const LOG_ETA: usize = 0;
pub const MU_LOGIT: usize = 1;
pub const LOG_TAU: usize = 2;
pub const LOG_TAU_B: usize = 3;
pub const THETA: usize = 4;
pub const BETA: usize = 5;
pub const MEDIATOR_PRIOR: usize = 6;
pub const DELTA: usize = 7;

pub const THETA_I: usize = 0;
pub const DELTA_I: usize = 1;
pub const CONTROL_RAW: usize = 2;
pub const INTERVENTION_RAW: usize = 3;
pub const P_CONTROL_LOGIT: usize = 4;
pub const P_INTERVENTION_LOGIT: usize = 5;

const GLOBAL_NAMES: [&str; GLOBAL_DIM] = [
    "log_eta",
    "mu_logit",
    "log_tau",
    "log_tau_b",
    "theta",
    "beta",
    "mediator_prior",
    "delta",
];

const STUDY_NAMES: [&str; STUDY_DIM] = [
    "theta_i",
    "delta_i",
    "control_mediated_raw",
    "intervention_mediated_raw",
    "p_control_logit",
    "p_intervention_logit",
];

/// Location of `ln(2/pi)` for the half-Cauchy normaliser.
const LN_2_OVER_PI: f64 = -0.451_582_705_289_454_9;
/// Scale of the logistic prior on `ln eta`.
const LOG_ETA_SCALE: f64 = 1.0;

/// Hyper-prior constants.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PriorConfig {
    /// Location of the logistic prior on `ln eta`.
    pub eta_log_loc: f64,
    pub mu_alpha: f64,
    pub mu_beta: f64,
    pub tau_scale: f64,
    pub tau_b_scale: f64,
    pub mediator_prior_scale: f64,
    pub threshold_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let hc = sqrt(0.5 / 3.0);
        Self {
            eta_log_loc: ln(30.0),
            mu_alpha: 12.0,
            mu_beta: 25.0,
            tau_scale: hc,
            tau_b_scale: hc,
            mediator_prior_scale: 1.0,
            threshold_scale: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.mu_alpha, "mu_alpha must be positive"),
            (self.mu_beta, "mu_beta must be positive"),
            (self.tau_scale, "tau_scale must be positive"),
            (self.tau_b_scale, "tau_b_scale must be positive"),
            (self.mediator_prior_scale, "mediator_prior_scale must be positive"),
            (self.threshold_scale, "threshold_scale must be positive"),
        ];
        for (v, msg) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(msg));
            }
        }
        if !self.eta_log_loc.is_finite() {
            return Err(Error::InvalidParameter("eta_log_loc must be finite"));
        }
        Ok(())
    }

    /// Replaces the Beta prior on `mu` with one centred on a known rate.
    pub fn with_population_rate(mut self, rate: f64) -> Result<Self> {
        let (a, b) = beta_prior_from_rate(rate)?;
        self.mu_alpha = a;
        self.mu_beta = b;
        Ok(self)
    }
}

/// Beta pseudo-counts for a population event rate: 50 pseudo-observations
/// split as `(50 rate, 50 (1 - rate))`.
pub fn beta_prior_from_rate(population_rate: f64) -> Result<(f64, f64)> {
    if !(population_rate > 0.0 && population_rate < 1.0) {
        return Err(Error::RateOutOfRange(population_rate));
    }
    Ok((population_rate * 50.0, (1.0 - population_rate) * 50.0))
}

/// Per-study latent values on the constrained scale.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyParams {
    pub theta: f64,
    pub delta: f64,
    pub control_mediated: f64,
    pub intervention_mediated: f64,
    pub p_control: f64,
    pub p_intervention: f64,
}

/// Every model parameter on its natural scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Params {
    pub eta: f64,
    pub mu: f64,
    pub tau: f64,
    pub tau_b: f64,
    pub theta: f64,
    pub beta: f64,
    pub mediator_prior: f64,
    pub delta: f64,
    pub studies: Vec<StudyParams>,
}

/// Deterministic functions of a state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelDerived {
    pub rr_per_study: Vec<f64>,
    pub total_rr: f64,
}

/// Flat unconstrained state with the layout documented at module level.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn dim_for(num_studies: usize) -> usize {
        GLOBAL_DIM + STUDY_DIM * num_studies
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() < GLOBAL_DIM || !(values.len() - GLOBAL_DIM).is_multiple_of(STUDY_DIM) {
            return Err(Error::DimensionMismatch {
                expected: GLOBAL_DIM,
                found: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn num_studies(&self) -> usize {
        (self.values.len() - GLOBAL_DIM) / STUDY_DIM
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn study_index(study: usize, slot: usize) -> usize {
        GLOBAL_DIM + STUDY_DIM * study + slot
    }

    /// Coordinate names, with per-study slots suffixed by the study id.
    pub fn coordinate_names(ids: &[&str]) -> Vec<String> {
        let mut out: Vec<String> = GLOBAL_NAMES.iter().map(|s| String::from(*s)).collect();
        for id in ids {
            for slot in STUDY_NAMES {
                out.push(format!("{slot}[{id}]"));
            }
        }
        out
    }

    pub fn decode(&self) -> Params {
        decode(&self.values)
    }
}

fn decode(x: &[f64]) -> Params {
    let k = (x.len() - GLOBAL_DIM) / STUDY_DIM;
    let studies = (0..k)
        .map(|j| {
            let b = ParamVector::study_index(j, 0);
            let delta = x[b + DELTA_I];
            StudyParams {
                theta: x[b + THETA_I],
                delta,
                control_mediated: delta + exp(x[b + CONTROL_RAW]),
                intervention_mediated: delta - exp(x[b + INTERVENTION_RAW]),
                p_control: sigmoid(x[b + P_CONTROL_LOGIT]),
                p_intervention: sigmoid(x[b + P_INTERVENTION_LOGIT]),
            }
        })
        .collect();
    Params {
        eta: exp(x[LOG_ETA]),
        mu: sigmoid(x[MU_LOGIT]),
        tau: exp(x[LOG_TAU]),
        tau_b: exp(x[LOG_TAU_B]),
        theta: x[THETA],
        beta: x[BETA],
        mediator_prior: x[MEDIATOR_PRIOR],
        delta: x[DELTA],
        studies,
    }
}

impl Params {
    /// Maps back to the unconstrained layout.
    pub fn encode(&self) -> Result<ParamVector> {
        let mut x = vec![0.0; ParamVector::dim_for(self.studies.len())];
        if !(self.eta > 0.0) {
            return Err(Error::DomainError { transform: "log", value: self.eta });
        }
        x[LOG_ETA] = ln(self.eta);
        x[MU_LOGIT] = Transform::LogitUnit.forward(self.mu)?;
        x[LOG_TAU] = Transform::LogPositive.forward(self.tau)?;
        x[LOG_TAU_B] = Transform::LogPositive.forward(self.tau_b)?;
        x[THETA] = self.theta;
        x[BETA] = self.beta;
        x[MEDIATOR_PRIOR] = self.mediator_prior;
        x[DELTA] = self.delta;
        for (j, s) in self.studies.iter().enumerate() {
            let b = ParamVector::study_index(j, 0);
            x[b + THETA_I] = s.theta;
            x[b + DELTA_I] = s.delta;
            x[b + CONTROL_RAW] = Transform::LowerBoundedExpShift(s.delta).forward(s.control_mediated)?;
            x[b + INTERVENTION_RAW] =
                Transform::UpperBoundedExpShift(s.delta).forward(s.intervention_mediated)?;
            x[b + P_CONTROL_LOGIT] = Transform::LogitUnit.forward(s.p_control)?;
            x[b + P_INTERVENTION_LOGIT] = Transform::LogitUnit.forward(s.p_intervention)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDensity);
        }
        ParamVector::from_vec(x)
    }

    pub fn derived(&self) -> ModelDerived {
        ModelDerived {
            rr_per_study: self
                .studies
                .iter()
                .map(|s| s.p_intervention / s.p_control)
                .collect(),
            total_rr: sigmoid(logit(self.mu) + self.theta) / self.mu,
        }
    }
}

#[derive(Debug, Clone)]
struct StudyObs {
    id: String,
    control_events: u64,
    control_total: u64,
    intervention_events: u64,
    intervention_total: u64,
    /// Sum of both binomial log-coefficients.
    log_coef: f64,
    /// Control arm, then intervention arm.
    anchors: [Anchor; 2],
}

/// Gaussian summary of one arm's binomial likelihood on the logit scale.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    logit: f64,
    precision: f64,
}

impl Anchor {
    fn new(events: u64, total: u64) -> Self {
        let n = total as f64;
        let p = (events as f64 + 0.5) / (n + 1.0);
        Self {
            logit: logit(p),
            precision: n * p * (1.0 - p),
        }
    }
}

/// Affine map `y = mean + scale * w` from a standardised arm coordinate to
/// the arm's event logit, where `mean` and `scale^-2` are the precision
/// weighted blend of the arm's Beta prior around `l` and its [`Anchor`].
struct ArmMap {
    mean: f64,
    scale: f64,
    prior_precision: f64,
    total_precision: f64,
}

impl ArmMap {
    fn new(log_eta: f64, l: f64, anchor: Anchor) -> Self {
        let prior_precision = exp(log_eta + log_sigmoid(l) + log_sigmoid(-l));
        let total_precision = prior_precision + anchor.precision;
        Self {
            mean: (prior_precision * l + anchor.precision * anchor.logit) / total_precision,
            scale: 1.0 / sqrt(total_precision),
            prior_precision,
            total_precision,
        }
    }

    fn forward(&self, w: f64) -> f64 {
        self.mean + self.scale * w
    }

    fn inverse(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    /// Gradient of `gy * y(w, ln eta, l) + ln scale` with respect to
    /// `(w, ln eta, l)`.
    fn pull_back(&self, w: f64, l: f64, gy: f64) -> (f64, f64, f64) {
        let (p, s) = (self.prior_precision, self.total_precision);
        let g_p = gy * ((l - self.mean) / s - 0.5 * w * self.scale / s) - 0.5 / s;
        let dp_dl = p * (sigmoid(-l) - sigmoid(l));
        (gy * self.scale, g_p * p, gy * p / s + g_p * dp_dl)
    }
}

/// Control and intervention mediators and event-logit means of study slot `b`.
fn arm_logits(x: &[f64], b: usize) -> ([f64; 2], [f64; 2]) {
    let c = x[b + DELTA_I] + exp(x[b + CONTROL_RAW]);
    let t = x[b + DELTA_I] - exp(x[b + INTERVENTION_RAW]);
    let u = x[MU_LOGIT];
    ([c, t], [u + x[BETA] * c, u + x[BETA] * t + x[b + THETA_I]])
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Joint density of the model for a fixed set of studies.
#[derive(Debug, Clone)]
pub struct DecisionModel {
    obs: Vec<StudyObs>,
    priors: PriorConfig,
    broken_mu_jacobian: bool,
}

impl DecisionModel {
    pub fn new(studies: &[StudyRecord], priors: PriorConfig) -> Result<Self> {
        priors.validate()?;
        let obs = studies
            .iter()
            .map(|s| StudyObs {
                id: s.id.clone(),
                control_events: s.control_events,
                control_total: s.control_total(),
                intervention_events: s.intervention_events,
                intervention_total: s.intervention_total(),
                log_coef: ln_choose(s.control_total(), s.control_events)
                    + ln_choose(s.intervention_total(), s.intervention_events),
                anchors: [
                    Anchor::new(s.control_events, s.control_total()),
                    Anchor::new(s.intervention_events, s.intervention_total()),
                ],
            })
            .collect();
        Ok(Self {
            obs,
            priors,
            broken_mu_jacobian: false,
        })
    }

    pub fn from_dataset(data: &MetaDataset, priors: PriorConfig) -> Result<Self> {
        Self::new(&data.studies, priors)
    }

    /// A model with no studies: the posterior is the prior.
    pub fn prior_only(priors: PriorConfig) -> Result<Self> {
        Self::new(&[], priors)
    }

    /// Test fixture: applies the logit Jacobian of `mu` with the wrong sign.
    #[doc(hidden)]
    pub fn with_broken_mu_jacobian(mut self) -> Self {
        self.broken_mu_jacobian = true;
        self
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn num_studies(&self) -> usize {
        self.obs.len()
    }

    pub fn dim(&self) -> usize {
        ParamVector::dim_for(self.obs.len())
    }

    pub fn study_ids(&self) -> Vec<&str> {
        self.obs.iter().map(|o| o.id.as_str()).collect()
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Log joint density on the unconstrained space, Jacobians included.
    pub fn log_joint(&self, q: &[f64]) -> Result<f64> {
        self.check_dim(q)?;
        self.evaluate(q, None)
    }

    /// Log joint density and its gradient, written into `grad`.
    pub fn log_joint_and_grad(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_dim(q)?;
        if grad.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                found: grad.len(),
            });
        }
        self.evaluate(q, Some(grad))
    }

    pub fn grad_log_joint(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; q.len()];
        self.log_joint_and_grad(q, &mut g)?;
        Ok(g)
    }

    pub fn derived_quantities(&self, q: &[f64]) -> Result<ModelDerived> {
        self.check_dim(q)?;
        Ok(decode(q).derived())
    }

    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let mut scratch;
        let g: &mut [f64] = match grad {
            Some(g) => g,
            None => {
                scratch = vec![0.0; x.len()];
                &mut scratch
            }
        };
        let lp = self.natural_log_density(x, g);
        if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDensity);
        }
        Ok(lp)
    }

    /// Sampler coordinates to the [`ParamVector`] layout.
    ///
    /// In sampler coordinates `theta`, `beta` and `theta_i` are standardised
    /// by `tau^2` and `tau_b^2`, `delta` is measured from `mediator_prior`,
    /// `delta_i` from `delta`, `mu_logit` is shifted by
    /// `beta * mediator_prior`, and each event logit is standardised by its
    /// [`ArmMap`].
    fn to_natural(&self, q: &[f64], x: &mut [f64]) {
        x.copy_from_slice(q);
        let tau2 = exp(2.0 * q[LOG_TAU]);
        let theta = tau2 * q[THETA];
        let beta = exp(2.0 * q[LOG_TAU_B]) * q[BETA];
        let delta = q[MEDIATOR_PRIOR] + q[DELTA];
        x[THETA] = theta;
        x[BETA] = beta;
        x[DELTA] = delta;
        x[MU_LOGIT] = q[MU_LOGIT] - beta * q[MEDIATOR_PRIOR];
        for (j, o) in self.obs.iter().enumerate() {
            let b = ParamVector::study_index(j, 0);
            x[b + THETA_I] = theta + tau2 * q[b + THETA_I];
            x[b + DELTA_I] = delta + q[b + DELTA_I];
            let (_, l) = arm_logits(x, b);
            for (arm, slot) in [P_CONTROL_LOGIT, P_INTERVENTION_LOGIT].into_iter().enumerate() {
                x[b + slot] = ArmMap::new(q[LOG_ETA], l[arm], o.anchors[arm]).forward(q[b + slot]);
            }
        }
    }

    fn from_natural(&self, x: &[f64], q: &mut [f64]) {
        q.copy_from_slice(x);
        let tau2 = exp(2.0 * x[LOG_TAU]);
        q[THETA] = x[THETA] / tau2;
        q[BETA] = x[BETA] / exp(2.0 * x[LOG_TAU_B]);
        q[DELTA] = x[DELTA] - x[MEDIATOR_PRIOR];
        q[MU_LOGIT] = x[MU_LOGIT] + x[BETA] * x[MEDIATOR_PRIOR];
        for (j, o) in self.obs.iter().enumerate() {
            let b = ParamVector::study_index(j, 0);
            q[b + THETA_I] = (x[b + THETA_I] - x[THETA]) / tau2;
            q[b + DELTA_I] = x[b + DELTA_I] - x[DELTA];
            let (_, l) = arm_logits(x, b);
            for (arm, slot) in [P_CONTROL_LOGIT, P_INTERVENTION_LOGIT].into_iter().enumerate() {
                q[b + slot] = ArmMap::new(x[LOG_ETA], l[arm], o.anchors[arm]).inverse(x[b + slot]);
            }
        }
    }

    /// Chains the gradient `gx` at `x = to_natural(q)` back to sampler
    /// coordinates and returns the log Jacobian determinant of the map.
    fn pull_back(&self, q: &[f64], x: &[f64], gx: &[f64], g: &mut [f64]) -> f64 {
        g.copy_from_slice(gx);
        let mut log_det = 0.0;
        for (j, o) in self.obs.iter().enumerate() {
            let b = ParamVector::study_index(j, 0);
            let (mediated, l) = arm_logits(x, b);
            for (arm, slot) in [P_CONTROL_LOGIT, P_INTERVENTION_LOGIT].into_iter().enumerate() {
                let map = ArmMap::new(x[LOG_ETA], l[arm], o.anchors[arm]);
                let (g_w, g_eta, g_l) = map.pull_back(q[b + slot], l[arm], gx[b + slot]);
                log_det += ln(map.scale);
                g[b + slot] = g_w;
                g[LOG_ETA] += g_eta;
                g[MU_LOGIT] += g_l;
                g[BETA] += g_l * mediated[arm];
                g[b + DELTA_I] += g_l * x[BETA];
                if arm == 0 {
                    g[b + CONTROL_RAW] += g_l * x[BETA] * (mediated[0] - x[b + DELTA_I]);
                } else {
                    g[b + INTERVENTION_RAW] += g_l * x[BETA] * (mediated[1] - x[b + DELTA_I]);
                    g[b + THETA_I] += g_l;
                }
            }
        }

        let tau2 = exp(2.0 * q[LOG_TAU]);
        let mut g_theta = g[THETA];
        let mut g_delta = g[DELTA];
        for j in 0..self.obs.len() {
            let b = ParamVector::study_index(j, 0);
            let g_theta_i = g[b + THETA_I];
            g_theta += g_theta_i;
            g[b + THETA_I] = g_theta_i * tau2;
            g[LOG_TAU] += g_theta_i * 2.0 * (x[b + THETA_I] - x[THETA]) + 2.0;
            log_det += 2.0 * q[LOG_TAU];
            g_delta += g[b + DELTA_I];
        }
        g[THETA] = g_theta * tau2;
        g[LOG_TAU] += g_theta * 2.0 * x[THETA] + 2.0;
        log_det += 2.0 * q[LOG_TAU];

        g[DELTA] = g_delta;
        g[MEDIATOR_PRIOR] += g_delta - x[BETA] * g[MU_LOGIT];
        let g_beta = g[BETA] - x[MEDIATOR_PRIOR] * g[MU_LOGIT];
        g[BETA] = g_beta * exp(2.0 * q[LOG_TAU_B]);
        g[LOG_TAU_B] += g_beta * 2.0 * x[BETA] + 2.0;
        log_det += 2.0 * q[LOG_TAU_B];
        log_det
    }

    /// Log density in sampler coordinates, the target of [`run_chains`].
    ///
    /// [`run_chains`]: crate::mcmc::run_chains
    fn sampler_density(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_dim(q)?;
        let mut x = vec![0.0; q.len()];
        let mut gx = vec![0.0; q.len()];
        self.to_natural(q, &mut x);
        let lp = self.natural_log_density(&x, &mut gx) + self.pull_back(q, &x, &gx, grad);
        if !lp.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDensity);
        }
        Ok(lp)
    }

    /// Log density in the [`ParamVector`] layout, writing the gradient into `g`.
    fn natural_log_density(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let pr = &self.priors;
        g.iter_mut().for_each(|v| *v = 0.0);

        let log_eta = x[LOG_ETA];
        let u = x[MU_LOGIT];
        let eta = exp(log_eta);
        let tau = exp(x[LOG_TAU]);
        let tau2 = tau * tau;
        let tau_b = exp(x[LOG_TAU_B]);
        let tau_b2 = tau_b * tau_b;
        let theta = x[THETA];
        let beta = x[BETA];
        let m = x[MEDIATOR_PRIOR];
        let delta = x[DELTA];

        // ln eta ~ Logistic(loc, 1)
        let z = (log_eta - pr.eta_log_loc) / LOG_ETA_SCALE;
        let mut lp = -z - 2.0 * softplus(-z) - ln(LOG_ETA_SCALE);
        g[LOG_ETA] -= libm::tanh(0.5 * z) / LOG_ETA_SCALE;

        // mu ~ Beta, plus logit Jacobian ln mu + ln(1 - mu)
        let jac = if self.broken_mu_jacobian { -1.0 } else { 1.0 };
        let (a_exp, b_exp) = (pr.mu_alpha - 1.0 + jac, pr.mu_beta - 1.0 + jac);
        lp += a_exp * log_sigmoid(u) + b_exp * log_sigmoid(-u) - ln_beta(pr.mu_alpha, pr.mu_beta);
        g[MU_LOGIT] += a_exp * sigmoid(-u) - b_exp * sigmoid(u);

        // tau, tau_b ~ HalfCauchy, plus log Jacobian
        for (slot, t, sc) in [(LOG_TAU, tau, pr.tau_scale), (LOG_TAU_B, tau_b, pr.tau_b_scale)] {
            let r = t / sc;
            lp += LN_2_OVER_PI - ln(sc) - libm::log1p(r * r) + x[slot];
            g[slot] += 1.0 - 2.0 * r * r / (1.0 + r * r);
        }

        // theta ~ N(0, scale tau^2), beta ~ N(0, scale tau_b^2)
        for (slot, scale_slot, v, sc) in [(THETA, LOG_TAU, theta, tau2), (BETA, LOG_TAU_B, beta, tau_b2)] {
            let r = v / sc;
            lp += ln_std_normal_pdf(r) - ln(sc);
            g[slot] -= r / sc;
            g[scale_slot] += 2.0 * (r * r - 1.0);
        }

        let ms = pr.mediator_prior_scale;
        lp += ln_std_normal_pdf(m / ms) - ln(ms);
        g[MEDIATOR_PRIOR] -= m / (ms * ms);
        let ts = pr.threshold_scale;
        lp += ln_std_normal_pdf(delta / ts) - ln(ts);
        g[DELTA] -= delta / (ts * ts);

        for (j, o) in self.obs.iter().enumerate() {
            let b = ParamVector::study_index(j, 0);
            let theta_j = x[b + THETA_I];
            let d = x[b + DELTA_I];
            let rc = x[b + CONTROL_RAW];
            let rt = x[b + INTERVENTION_RAW];
            let yc = x[b + P_CONTROL_LOGIT];
            let yt = x[b + P_INTERVENTION_LOGIT];

            let r = (theta_j - theta) / tau2;
            lp += ln_std_normal_pdf(r) - ln(tau2);
            g[b + THETA_I] -= r / tau2;
            g[THETA] += r / tau2;
            g[LOG_TAU] += 2.0 * (r * r - 1.0);

            lp += ln_std_normal_pdf(d - delta);
            g[b + DELTA_I] -= d - delta;
            g[DELTA] += d - delta;

            // control mediator on [d, inf), renormalised by Phi(m - d)
            let ec = exp(rc);
            let c = d + ec;
            let w = m - d;
            let log_mass_c = log_ndtr(w);
            let lam_c = exp(ln_std_normal_pdf(w) - log_mass_c);
            lp += ln_std_normal_pdf(c - m) - log_mass_c + rc;
            let mut dc = -(c - m);
            g[MEDIATOR_PRIOR] += (c - m) - lam_c;
            g[b + DELTA_I] += lam_c;
            g[b + CONTROL_RAW] += 1.0;

            // intervention mediator on (-inf, d], renormalised by Phi(d - m)
            let et = exp(rt);
            let t = d - et;
            let v = d - m;
            let log_mass_t = log_ndtr(v);
            let lam_t = exp(ln_std_normal_pdf(v) - log_mass_t);
            lp += ln_std_normal_pdf(t - m) - log_mass_t + rt;
            let mut dt = -(t - m);
            g[MEDIATOR_PRIOR] += (t - m) + lam_t;
            g[b + DELTA_I] -= lam_t;
            g[b + INTERVENTION_RAW] += 1.0;

            // arm probabilities
            let lc = u + beta * c;
            let lt = u + beta * t + theta_j;
            let (ac, bc) = (eta * sigmoid(lc), eta * sigmoid(-lc));
            let (at, bt) = (eta * sigmoid(lt), eta * sigmoid(-lt));
            let (vc, dyc, dac, dbc) = beta_logit_with_jacobian(yc, ac, bc);
            let (vt, dyt, dat, dbt) = beta_logit_with_jacobian(yt, at, bt);
            lp += vc + vt;
            let g_lc = (dac - dbc) * ac * sigmoid(-lc);
            let g_lt = (dat - dbt) * at * sigmoid(-lt);
            g[LOG_ETA] += dac * ac + dbc * bc + dat * at + dbt * bt;

            // likelihood
            let (kc, nc) = (o.control_events as f64, o.control_total as f64);
            let (ki, ni) = (o.intervention_events as f64, o.intervention_total as f64);
            lp += o.log_coef
                + kc * log_sigmoid(yc)
                + (nc - kc) * log_sigmoid(-yc)
                + ki * log_sigmoid(yt)
                + (ni - ki) * log_sigmoid(-yt);
            g[b + P_CONTROL_LOGIT] += dyc + kc - nc * sigmoid(yc);
            g[b + P_INTERVENTION_LOGIT] += dyt + ki - ni * sigmoid(yt);

            g[MU_LOGIT] += g_lc + g_lt;
            g[BETA] += g_lc * c + g_lt * t;
            dc += g_lc * beta;
            dt += g_lt * beta;
            g[b + THETA_I] += g_lt;

            g[b + CONTROL_RAW] += dc * ec;
            g[b + DELTA_I] += dc;
            g[b + INTERVENTION_RAW] -= dt * et;
            g[b + DELTA_I] += dt;
        }
        lp
    }

    /// One forward draw of every parameter from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Params> {
        sample_prior_params(&self.priors, self.obs.len(), rng)
    }

    /// Names of the summarised quantities: decoded parameters, then derived
    /// relative risks, then per-study blocks in study order.
    pub fn quantity_names(&self) -> Vec<String> {
        let mut out: Vec<String> = [
            "eta",
            "mu",
            "tau",
            "tau_b",
            "theta",
            "beta",
            "mediator_prior",
            "delta",
            "total_rr",
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect();
        for o in &self.obs {
            let id = &o.id;
            for name in [
                "theta_i",
                "delta_i",
                "control_mediated",
                "intervention_mediated",
                "p_control",
                "p_intervention",
                "rr",
            ] {
                out.push(format!("{name}[{id}]"));
            }
        }
        out
    }

    /// Values matching [`DecisionModel::quantity_names`].
    pub fn quantities_into(&self, q: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let p = decode(q);
        let derived = p.derived();
        out.extend_from_slice(&[
            p.eta,
            p.mu,
            p.tau,
            p.tau_b,
            p.theta,
            p.beta,
            p.mediator_prior,
            p.delta,
            derived.total_rr,
        ]);
        for (s, rr) in p.studies.iter().zip(&derived.rr_per_study) {
            out.extend_from_slice(&[
                s.theta,
                s.delta,
                s.control_mediated,
                s.intervention_mediated,
                s.p_control,
                s.p_intervention,
                *rr,
            ]);
        }
    }
}

/// Forward draw of every parameter for `k` studies.
pub fn sample_prior_params<R: Rng + ?Sized>(
    priors: &PriorConfig,
    k: usize,
    rng: &mut R,
) -> Result<Params> {
    let log_eta = Kernel::logistic(priors.eta_log_loc, LOG_ETA_SCALE)?.sample(rng);
    let eta = exp(log_eta);
    let mu = Kernel::beta(priors.mu_alpha, priors.mu_beta)?.sample(rng);
    let tau = Kernel::half_cauchy(priors.tau_scale)?.sample(rng);
    let tau_b = Kernel::half_cauchy(priors.tau_b_scale)?.sample(rng);
    let theta = Kernel::normal(0.0, tau * tau)?.sample(rng);
    let beta = Kernel::normal(0.0, tau_b * tau_b)?.sample(rng);
    let mediator_prior = Kernel::normal(0.0, priors.mediator_prior_scale)?.sample(rng);
    let delta = Kernel::normal(0.0, priors.threshold_scale)?.sample(rng);
    let mut studies = Vec::with_capacity(k);
    for _ in 0..k {
        let theta_i = Kernel::normal(theta, tau * tau)?.sample(rng);
        let delta_i = Kernel::normal(delta, 1.0)?.sample(rng);
        let intervention_mediated =
            Kernel::truncated_normal_right(mediator_prior, 1.0, delta_i)?.sample(rng);
        let control_mediated =
            Kernel::truncated_normal_left(mediator_prior, 1.0, delta_i)?.sample(rng);
        let (p_control, p_intervention) = arm_probabilities(
            mu,
            eta,
            beta,
            theta_i,
            control_mediated,
            intervention_mediated,
            rng,
        )?;
        studies.push(StudyParams {
            theta: theta_i,
            delta: delta_i,
            control_mediated,
            intervention_mediated,
            p_control,
            p_intervention,
        });
    }
    Ok(Params {
        eta,
        mu,
        tau,
        tau_b,
        theta,
        beta,
        mediator_prior,
        delta,
        studies,
    })
}

/// Beta draws of both arms' event probabilities around their mediated means.
pub(crate) fn arm_probabilities<R: Rng + ?Sized>(
    mu: f64,
    eta: f64,
    beta: f64,
    theta_i: f64,
    control_mediated: f64,
    intervention_mediated: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let lc = logit(mu) + beta * control_mediated;
    let lt = logit(mu) + beta * intervention_mediated + theta_i;
    Ok((mediated_draw(eta, lc, rng)?, mediated_draw(eta, lt, rng)?))
}

/// `Beta(eta*sigmoid(l), eta*sigmoid(-l))`, or its point-mass limit when one
/// shape underflows to zero.
fn mediated_draw<R: Rng + ?Sized>(eta: f64, l: f64, rng: &mut R) -> Result<f64> {
    let (a, b) = (eta * sigmoid(l), eta * sigmoid(-l));
    if b == 0.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    Ok(Kernel::beta(a, b)?.sample(rng))
}

impl Target for DecisionModel {
    fn dim(&self) -> usize {
        DecisionModel::dim(self)
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.sampler_density(q, grad)
    }

    fn initial_point(&self, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let x = self.sample_prior(rng)?.encode()?.into_vec();
        let mut q = vec![0.0; x.len()];
        self.from_natural(&x, &mut q);
        Ok(q)
    }

    fn constrain(&self, q: &[f64], out: &mut [f64]) {
        self.to_natural(q, out);
    }
}

impl Quantities for DecisionModel {
    fn quantity_names(&self) -> Vec<String> {
        DecisionModel::quantity_names(self)
    }

    fn quantities_into(&self, q: &[f64], out: &mut Vec<f64>) {
        DecisionModel::quantities_into(self, q, out)
    }
}

/// Free-function form of [`DecisionModel::log_joint`].
pub fn log_joint(params: &ParamVector, data: &MetaDataset, priors: &PriorConfig) -> Result<f64> {
    DecisionModel::from_dataset(data, *priors)?.log_joint(params.as_slice())
}

/// Free-function form of [`DecisionModel::grad_log_joint`].
pub fn grad_log_joint(
    params: &ParamVector,
    data: &MetaDataset,
    priors: &PriorConfig,
) -> Result<Vec<f64>> {
    DecisionModel::from_dataset(data, *priors)?.grad_log_joint(params.as_slice())
}

/// Per-study relative risks and the population-level relative risk.
pub fn derived_quantities(params: &ParamVector, data: &MetaDataset) -> Result<ModelDerived> {
    if params.num_studies() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: ParamVector::dim_for(data.len()),
            found: params.as_slice().len(),
        });
    }
    Ok(params.decode().derived())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn study(id: &str, ie: u64, n_i: u64, ce: u64, n_c: u64) -> StudyRecord {
        StudyRecord::new(id, ie, n_i - ie, ce, n_c - ce)
    }

    fn random_state(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..ParamVector::dim_for(k))
            .map(|_| Kernel::normal(0.0, 0.8).unwrap().sample(rng))
            .collect()
    }

    /// Term-by-term oracle built only from kernel log densities and
    /// transform Jacobians.
    fn oracle(q: &[f64], studies: &[StudyRecord], pr: &PriorConfig) -> f64 {
        let p = decode(q);
        let mut lp = Kernel::logistic(pr.eta_log_loc, 1.0).unwrap().log_pdf(q[LOG_ETA]).unwrap();
        lp += Kernel::beta(pr.mu_alpha, pr.mu_beta).unwrap().log_pdf(p.mu).unwrap()
            + Transform::LogitUnit.log_abs_det_jacobian(q[MU_LOGIT]).unwrap();
        lp += Kernel::half_cauchy(pr.tau_scale).unwrap().log_pdf(p.tau).unwrap() + q[LOG_TAU];
        lp += Kernel::half_cauchy(pr.tau_b_scale).unwrap().log_pdf(p.tau_b).unwrap() + q[LOG_TAU_B];
        lp += Kernel::normal(0.0, p.tau * p.tau).unwrap().log_pdf(p.theta).unwrap();
        lp += Kernel::normal(0.0, p.tau_b * p.tau_b).unwrap().log_pdf(p.beta).unwrap();
        lp += Kernel::normal(0.0, pr.mediator_prior_scale).unwrap().log_pdf(p.mediator_prior).unwrap();
        lp += Kernel::normal(0.0, pr.threshold_scale).unwrap().log_pdf(p.delta).unwrap();
        for (j, (s, rec)) in p.studies.iter().zip(studies).enumerate() {
            let b = ParamVector::study_index(j, 0);
            lp += Kernel::normal(p.theta, p.tau * p.tau).unwrap().log_pdf(s.theta).unwrap();
            lp += Kernel::normal(p.delta, 1.0).unwrap().log_pdf(s.delta).unwrap();
            lp += Kernel::truncated_normal_left(p.mediator_prior, 1.0, s.delta)
                .unwrap()
                .log_pdf(s.control_mediated)
                .unwrap()
                + Transform::LowerBoundedExpShift(s.delta).log_abs_det_jacobian(q[b + CONTROL_RAW]).unwrap();
            lp += Kernel::truncated_normal_right(p.mediator_prior, 1.0, s.delta)
                .unwrap()
                .log_pdf(s.intervention_mediated)
                .unwrap()
                + Transform::UpperBoundedExpShift(s.delta)
                    .log_abs_det_jacobian(q[b + INTERVENTION_RAW])
                    .unwrap();
            let lc = logit(p.mu) + p.beta * s.control_mediated;
            let li = logit(p.mu) + p.beta * s.intervention_mediated + s.theta;
            lp += Kernel::beta(sigmoid(lc) * p.eta, sigmoid(-lc) * p.eta)
                .unwrap()
                .log_pdf(s.p_control)
                .unwrap()
                + Transform::LogitUnit.log_abs_det_jacobian(q[b + P_CONTROL_LOGIT]).unwrap();
            lp += Kernel::beta(sigmoid(li) * p.eta, sigmoid(-li) * p.eta)
                .unwrap()
                .log_pdf(s.p_intervention)
                .unwrap()
                + Transform::LogitUnit.log_abs_det_jacobian(q[b + P_INTERVENTION_LOGIT]).unwrap();
            lp += Kernel::binomial(s.p_intervention, rec.intervention_total())
                .unwrap()
                .log_pdf(rec.intervention_events as f64)
                .unwrap();
            lp += Kernel::binomial(s.p_control, rec.control_total())
                .unwrap()
                .log_pdf(rec.control_events as f64)
                .unwrap();
        }
        lp
    }

    #[test]
    fn log_joint_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let studies = vec![study("A", 70, 173, 150, 500)];
        let pr = PriorConfig::default();
        let model = DecisionModel::new(&studies, pr).unwrap();
        for _ in 0..20 {
            let q = random_state(1, &mut rng);
            let a = model.log_joint(&q).unwrap();
            let b = oracle(&q, &studies, &pr);
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_dataset_is_prior_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = PriorConfig::default();
        let model = DecisionModel::prior_only(pr).unwrap();
        let q = random_state(0, &mut rng);
        assert_abs_diff_eq!(model.log_joint(&q).unwrap(), oracle(&q, &[], &pr), epsilon = 1e-10);
    }

    fn check_gradient(f: &dyn Fn(&[f64], &mut [f64]) -> Result<f64>, q: &[f64]) {
        let mut g = vec![0.0; q.len()];
        let mut scratch = g.clone();
        f(q, &mut g).unwrap();
        let h = 1e-5;
        for i in 0..q.len() {
            let mut up = q.to_vec();
            let mut dn = q.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (f(&up, &mut scratch).unwrap() - f(&dn, &mut scratch).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(fd.abs()).max(1.0),
                "coordinate {i}: analytic {} vs fd {fd}",
                g[i]
            );
        }
    }

    fn natural(model: &DecisionModel) -> impl Fn(&[f64], &mut [f64]) -> Result<f64> + '_ {
        |q, g| model.log_joint_and_grad(q, g)
    }

    fn sampler(model: &DecisionModel) -> impl Fn(&[f64], &mut [f64]) -> Result<f64> + '_ {
        |q, g| model.log_density_grad(q, g)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let studies = vec![
            study("A", 70, 173, 150, 500),
            study("B", 3, 40, 0, 35),
            study("C", 20, 20, 1, 60),
        ];
        let model = DecisionModel::new(&studies, PriorConfig::default()).unwrap();
        for _ in 0..10 {
            let q = random_state(3, &mut rng);
            check_gradient(&natural(&model), &q);
            check_gradient(&sampler(&model), &q);
        }
        let broken = model.clone().with_broken_mu_jacobian();
        check_gradient(&natural(&broken), &random_state(3, &mut rng));
        check_gradient(&sampler(&broken), &random_state(3, &mut rng));
    }

    fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut out = 0.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            out += ln(a[c][c].abs());
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        out
    }

    #[test]
    fn sampler_density_is_pushforward_of_log_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let studies = vec![study("A", 70, 173, 150, 500), study("B", 3, 40, 0, 35)];
        let model = DecisionModel::new(&studies, PriorConfig::default()).unwrap();
        let n = DecisionModel::dim(&model);
        let h = 1e-6;
        for _ in 0..5 {
            let q = random_state(2, &mut rng);
            let mut x = vec![0.0; n];
            model.to_natural(&q, &mut x);
            let mut back = vec![0.0; n];
            model.from_natural(&x, &mut back);
            for (a, b) in q.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
            }
            let mut jac = vec![vec![0.0; n]; n];
            let (mut up, mut dn) = (vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let mut qi = q.clone();
                qi[i] += h;
                model.to_natural(&qi, &mut up);
                qi[i] -= 2.0 * h;
                model.to_natural(&qi, &mut dn);
                for r in 0..n {
                    jac[r][i] = (up[r] - dn[r]) / (2.0 * h);
                }
            }
            let mut g = vec![0.0; n];
            let lq = model.log_density_grad(&q, &mut g).unwrap();
            let lx = model.log_joint(&x).unwrap();
            assert!((lq - lx - log_abs_det(jac)).abs() < 1e-6, "{lq} vs {lx}");
        }
    }

    #[test]
    fn theta_gradient_zero_at_prior_mode() {
        let model = DecisionModel::prior_only(PriorConfig::default()).unwrap();
        let mut q = vec![0.0; GLOBAL_DIM];
        q[LOG_ETA] = ln(30.0);
        let g = model.grad_log_joint(&q).unwrap();
        assert_eq!(g[THETA], 0.0);
    }

    #[test]
    fn study_order_is_exchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let studies = vec![study("A", 70, 173, 150, 500), study("B", 12, 80, 20, 90)];
        let reversed = vec![studies[1].clone(), studies[0].clone()];
        let m1 = DecisionModel::new(&studies, PriorConfig::default()).unwrap();
        let m2 = DecisionModel::new(&reversed, PriorConfig::default()).unwrap();
        let q = random_state(2, &mut rng);
        let mut q2 = q.clone();
        let (a, b) = (ParamVector::study_index(0, 0), ParamVector::study_index(1, 0));
        for s in 0..STUDY_DIM {
            q2.swap(a + s, b + s);
        }
        assert!((m1.log_joint(&q).unwrap() - m2.log_joint(&q2).unwrap()).abs() < 1e-12);
        let g1 = m1.grad_log_joint(&q).unwrap();
        let g2 = m2.grad_log_joint(&q2).unwrap();
        for s in 0..STUDY_DIM {
            assert!((g1[a + s] - g2[b + s]).abs() < 1e-12);
            assert!((g1[b + s] - g2[a + s]).abs() < 1e-12);
        }
        for i in 0..GLOBAL_DIM {
            assert!((g1[i] - g2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn derived_examples() {
        let mut p = Params {
            eta: 30.0,
            mu: 0.317,
            tau: 0.4,
            tau_b: 0.4,
            theta: 0.0,
            beta: 0.0,
            mediator_prior: 0.0,
            delta: 0.0,
            studies: vec![StudyParams {
                theta: 0.0,
                delta: 0.0,
                control_mediated: 0.5,
                intervention_mediated: -0.5,
                p_control: 0.3,
                p_intervention: 0.3,
            }],
        };
        let d = p.derived();
        assert_eq!(d.total_rr, 1.0);
        assert_eq!(d.rr_per_study[0], 1.0);
        p.theta = logit(0.4) - logit(0.317);
        assert_abs_diff_eq!(p.derived().total_rr, 1.261_829_652, epsilon = 1e-6);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let q = random_state(4, &mut rng);
            let back = ParamVector::from_vec(q.clone()).unwrap().decode().encode().unwrap();
            for (a, b) in q.iter().zip(back.as_slice()) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn decoded_states_respect_mediator_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q: Vec<f64> = (0..ParamVector::dim_for(3))
                .map(|_| Kernel::normal(0.0, 5.0).unwrap().sample(&mut rng))
                .collect();
            let p = decode(&q);
            assert!(p.mu > 0.0 && p.mu < 1.0 && p.tau > 0.0 && p.tau_b > 0.0);
            for s in &p.studies {
                assert!(s.intervention_mediated <= s.delta && s.delta <= s.control_mediated);
                assert!(s.p_control >= 0.0 && s.p_control <= 1.0);
            }
        }
    }

    #[test]
    fn beta_prior_heuristic() {
        let (a, b) = beta_prior_from_rate(0.317).unwrap();
        assert_abs_diff_eq!(a, 15.85, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 34.15, epsilon = 1e-12);
        assert_eq!(beta_prior_from_rate(0.5).unwrap(), (25.0, 25.0));
        assert!(matches!(beta_prior_from_rate(1.0), Err(Error::RateOutOfRange(_))));
        assert!(matches!(beta_prior_from_rate(0.0), Err(Error::RateOutOfRange(_))));
        let d = PriorConfig::default();
        assert_eq!((d.mu_alpha, d.mu_beta), (12.0, 25.0));
        assert_abs_diff_eq!(d.mu_alpha / (d.mu_alpha + d.mu_beta), 0.324, epsilon = 1e-3);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let model = DecisionModel::prior_only(PriorConfig::default()).unwrap();
        assert!(matches!(model.log_joint(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let model = DecisionModel::new(&[study("A", 5, 10, 5, 10)], PriorConfig::default()).unwrap();
        let mut q = vec![0.0; model.dim()];
        q[LOG_ETA] = 800.0;
        assert_eq!(model.log_joint(&q), Err(Error::NonFiniteDensity));
    }

    /// Importance-sampling oracle: unconstrained draws from a wide normal,
    /// weighted by prior density times Jacobian, must reproduce constrained
    /// prior moments.
    #[test]
    fn jacobians_reproduce_constrained_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let proposal = Kernel::normal(0.0, 3.0).unwrap();
        let n = 100_000;
        let check = |t: Transform, prior: Kernel, f: &dyn Fn(f64) -> f64, expected: f64, rng: &mut ChaCha8Rng| {
            let mut sw = 0.0;
            let mut swf = 0.0;
            let mut swf2 = 0.0;
            let mut sw2 = 0.0;
            for _ in 0..n {
                let y = proposal.sample(rng);
                let x = t.inverse(y).unwrap();
                let Ok(lp) = prior.log_pdf(x) else { continue };
                let w = exp(lp + t.log_abs_det_jacobian(y).unwrap() - proposal.log_pdf(y).unwrap());
                sw += w;
                sw2 += w * w;
                swf += w * f(x);
                swf2 += w * f(x) * f(x);
            }
            let mean = swf / sw;
            let var = swf2 / sw - mean * mean;
            let ess = sw * sw / sw2;
            let se = sqrt(var / ess);
            assert!((mean - expected).abs() < 3.0 * se + 1e-12, "{t:?}: {mean} vs {expected} (se {se})");
        };
        check(Transform::LogitUnit, Kernel::beta(12.0, 25.0).unwrap(), &|x| x, 12.0 / 37.0, &mut rng);
        let hc = sqrt(0.5 / 3.0);
        check(
            Transform::LogPositive,
            Kernel::half_cauchy(hc).unwrap(),
            &|x| if x < hc { 1.0 } else { 0.0 },
            0.5,
            &mut rng,
        );
        let (m, low) = (0.3, -0.2);
        let w = m - low;
        check(
            Transform::LowerBoundedExpShift(low),
            Kernel::truncated_normal_left(m, 1.0, low).unwrap(),
            &|x| x,
            m + exp(ln_std_normal_pdf(w) - log_ndtr(w)),
            &mut rng,
        );
        let high = 0.1;
        let v = high - m;
        check(
            Transform::UpperBoundedExpShift(high),
            Kernel::truncated_normal_right(m, 1.0, high).unwrap(),
            &|x| x,
            m - exp(ln_std_normal_pdf(v) - log_ndtr(v)),
            &mut rng,
        );
    }

    #[test]
    fn prior_draws_encode() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = DecisionModel::new(&[study("A", 5, 10, 5, 10)], PriorConfig::default()).unwrap();
        let mut ok = 0;
        for _ in 0..200 {
            if let Ok(p) = model.sample_prior(&mut rng) {
                if let Ok(q) = p.encode() {
                    if model.log_joint(q.as_slice()).is_ok() {
                        ok += 1;
                    }
                }
            }
        }
        assert!(ok > 150, "{ok}");
    }

    #[test]
    fn extreme_logits_give_point_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (pc, pt) = arm_probabilities(0.3, 30.0, 1e4, 0.0, -0.5, 0.5, &mut rng).unwrap();
        assert_eq!((pc, pt), (0.0, 1.0));
    }
}
