//! Density kernels, their gradients, samplers and the constrained to
//! unconstrained transforms used by the hierarchical model.
//!
//! "scale" is always the standard-deviation-like parameter. Truncated normals
//! keep the closed half-line at the truncation point and renormalize by the
//! parent mass of the kept region.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{
    self, digamma, ln, ln_beta, ln_gamma, ln_std_normal_pdf, log_ndtr, log_sigmoid, ndtri_log,
    softplus,
};

const LN_2_OVER_PI: f64 = -0.451_582_705_289_454_9;

/// A parameterised distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Normal { loc: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
    Beta { alpha: f64, beta: f64 },
    HalfCauchy { scale: f64 },
    /// Normal restricted to `[low, inf)`.
    TruncatedNormalLeft { loc: f64, scale: f64, low: f64 },
    /// Normal restricted to `(-inf, high]`.
    TruncatedNormalRight { loc: f64, scale: f64, high: f64 },
    BinomialProbs { p: f64, n: u64 },
}

/// Gradient of a log-density: `d/dx` and the partials with respect to each
/// parameter, in the order the variant declares them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelGrad {
    pub dx: f64,
    pub dparams: [f64; 3],
    pub nparams: usize,
}

impl KernelGrad {
    fn new(dx: f64, params: &[f64]) -> Self {
        let mut dparams = [0.0; 3];
        dparams[..params.len()].copy_from_slice(params);
        Self {
            dx,
            dparams,
            nparams: params.len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.dparams[..self.nparams]
    }
}

fn positive(v: f64, what: &'static str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(what))
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(what))
    }
}

impl Kernel {
    pub fn normal(loc: f64, scale: f64) -> Result<Self> {
        Ok(Kernel::Normal {
            loc: finite(loc, "normal loc must be finite")?,
            scale: positive(scale, "normal scale must be positive")?,
        })
    }

    pub fn logistic(loc: f64, scale: f64) -> Result<Self> {
        Ok(Kernel::Logistic {
            loc: finite(loc, "logistic loc must be finite")?,
            scale: positive(scale, "logistic scale must be positive")?,
        })
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Kernel::Beta {
            alpha: positive(alpha, "beta alpha must be positive")?,
            beta: positive(beta, "beta beta must be positive")?,
        })
    }

    pub fn half_cauchy(scale: f64) -> Result<Self> {
        Ok(Kernel::HalfCauchy {
            scale: positive(scale, "half-cauchy scale must be positive")?,
        })
    }

    pub fn truncated_normal_left(loc: f64, scale: f64, low: f64) -> Result<Self> {
        Ok(Kernel::TruncatedNormalLeft {
            loc: finite(loc, "truncated normal loc must be finite")?,
            scale: positive(scale, "truncated normal scale must be positive")?,
            low: finite(low, "truncation point must be finite")?,
        })
    }

    pub fn truncated_normal_right(loc: f64, scale: f64, high: f64) -> Result<Self> {
        Ok(Kernel::TruncatedNormalRight {
            loc: finite(loc, "truncated normal loc must be finite")?,
            scale: positive(scale, "truncated normal scale must be positive")?,
            high: finite(high, "truncation point must be finite")?,
        })
    }

    pub fn binomial(p: f64, n: u64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Kernel::BinomialProbs { p, n })
        } else {
            Err(Error::InvalidParameter("binomial p must lie in [0, 1]"))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Normal { .. } => "Normal",
            Kernel::Logistic { .. } => "Logistic",
            Kernel::Beta { .. } => "Beta",
            Kernel::HalfCauchy { .. } => "HalfCauchy",
            Kernel::TruncatedNormalLeft { .. } => "TruncatedNormalLeft",
            Kernel::TruncatedNormalRight { .. } => "TruncatedNormalRight",
            Kernel::BinomialProbs { .. } => "BinomialProbs",
        }
    }

    /// Closed support membership.
    pub fn in_support(&self, x: f64) -> bool {
        if x.is_nan() {
            return false;
        }
        match *self {
            Kernel::Normal { .. } | Kernel::Logistic { .. } => x.is_finite(),
            Kernel::Beta { .. } => (0.0..=1.0).contains(&x),
            Kernel::HalfCauchy { .. } => x >= 0.0 && x.is_finite(),
            Kernel::TruncatedNormalLeft { low, .. } => x >= low && x.is_finite(),
            Kernel::TruncatedNormalRight { high, .. } => x <= high && x.is_finite(),
            Kernel::BinomialProbs { n, .. } => x >= 0.0 && x <= n as f64 && x == libm::floor(x),
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.in_support(x) {
            Ok(())
        } else {
            Err(Error::OutOfSupport {
                kernel: self.name(),
                value: x,
            })
        }
    }

    /// Natural-log density (log pmf for the binomial).
    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match *self {
            Kernel::Normal { loc, scale } => ln_std_normal_pdf((x - loc) / scale) - ln(scale),
            Kernel::Logistic { loc, scale } => {
                let z = (x - loc) / scale;
                -z - 2.0 * softplus(-z) - ln(scale)
            }
            Kernel::Beta { alpha, beta } => {
                (alpha - 1.0) * ln(x) + (beta - 1.0) * libm::log1p(-x) - ln_beta(alpha, beta)
            }
            Kernel::HalfCauchy { scale } => {
                let r = x / scale;
                LN_2_OVER_PI - ln(scale) - libm::log1p(r * r)
            }
            Kernel::TruncatedNormalLeft { loc, scale, low } => {
                ln_std_normal_pdf((x - loc) / scale) - ln(scale) - log_ndtr((loc - low) / scale)
            }
            Kernel::TruncatedNormalRight { loc, scale, high } => {
                ln_std_normal_pdf((x - loc) / scale) - ln(scale) - log_ndtr((high - loc) / scale)
            }
            Kernel::BinomialProbs { p, n } => binomial_log_pmf(x as u64, n, p),
        })
    }

    /// Gradient of [`Kernel::log_pdf`]. `x` must be interior to the support.
    ///
    /// Parameter order: Normal/Logistic `[loc, scale]`, Beta `[alpha, beta]`,
    /// HalfCauchy `[scale]`, truncated normals `[loc, scale, bound]`,
    /// binomial `[p]`. For the binomial, `dx` is the derivative of the
    /// log-gamma continuation of the pmf in `k`.
    pub fn grad_log_pdf(&self, x: f64) -> Result<KernelGrad> {
        self.check(x)?;
        let interior = match *self {
            Kernel::Beta { .. } => x > 0.0 && x < 1.0,
            Kernel::HalfCauchy { .. } => x > 0.0,
            _ => true,
        };
        if !interior {
            return Err(Error::OutOfSupport {
                kernel: self.name(),
                value: x,
            });
        }
        Ok(match *self {
            Kernel::Normal { loc, scale } => {
                let z = (x - loc) / scale;
                KernelGrad::new(-z / scale, &[z / scale, (z * z - 1.0) / scale])
            }
            Kernel::Logistic { loc, scale } => {
                let z = (x - loc) / scale;
                let t = libm::tanh(0.5 * z);
                KernelGrad::new(-t / scale, &[t / scale, (z * t - 1.0) / scale])
            }
            Kernel::Beta { alpha, beta } => {
                let ds = digamma(alpha + beta);
                KernelGrad::new(
                    (alpha - 1.0) / x - (beta - 1.0) / (1.0 - x),
                    &[ln(x) - digamma(alpha) + ds, libm::log1p(-x) - digamma(beta) + ds],
                )
            }
            Kernel::HalfCauchy { scale } => {
                let d = scale * scale + x * x;
                KernelGrad::new(-2.0 * x / d, &[-1.0 / scale + 2.0 * x * x / (scale * d)])
            }
            Kernel::TruncatedNormalLeft { loc, scale, low } => {
                let z = (x - loc) / scale;
                let w = (loc - low) / scale;
                let lam = math::inv_mills(w);
                KernelGrad::new(
                    -z / scale,
                    &[(z - lam) / scale, (z * z - 1.0 + lam * w) / scale, lam / scale],
                )
            }
            Kernel::TruncatedNormalRight { loc, scale, high } => {
                let z = (x - loc) / scale;
                let v = (high - loc) / scale;
                let lam = math::inv_mills(v);
                KernelGrad::new(
                    -z / scale,
                    &[(z + lam) / scale, (z * z - 1.0 + lam * v) / scale, -lam / scale],
                )
            }
            Kernel::BinomialProbs { p, n } => {
                let k = x;
                let n = n as f64;
                KernelGrad::new(
                    digamma(n - k + 1.0) - digamma(k + 1.0) + math::logit(p),
                    &[k / p - (n - k) / (1.0 - p)],
                )
            }
        })
    }

    /// One draw. Truncated normals use inverse-CDF sampling on the kept mass.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Kernel::Normal { loc, scale } => {
                let z: f64 = StandardNormal.sample(rng);
                loc + scale * z
            }
            Kernel::Logistic { loc, scale } => {
                let u: f64 = Open01.sample(rng);
                loc + scale * math::logit(u)
            }
            Kernel::Beta { alpha, beta } => rand_distr::Beta::new(alpha, beta)
                .expect("validated beta parameters")
                .sample(rng),
            Kernel::HalfCauchy { scale } => {
                let u: f64 = Open01.sample(rng);
                scale * libm::tan(0.5 * core::f64::consts::PI * u)
            }
            Kernel::TruncatedNormalLeft { loc, scale, low } => {
                let u: f64 = Open01.sample(rng);
                sample_upper_tail(loc, scale, low, u)
            }
            Kernel::TruncatedNormalRight { loc, scale, high } => {
                let u: f64 = Open01.sample(rng);
                -sample_upper_tail(-loc, scale, -high, u)
            }
            Kernel::BinomialProbs { p, n } => rand_distr::Binomial::new(n, p)
                .expect("validated binomial parameters")
                .sample(rng) as f64,
        }
    }
}

/// Inverse-CDF draw from Normal(loc, scale) restricted to `[low, inf)`,
/// computed through the survival function in log space so extreme
/// truncation points never underflow.
fn sample_upper_tail(loc: f64, scale: f64, low: f64, u: f64) -> f64 {
    let w = (low - loc) / scale;
    let log_kept = log_ndtr(-w);
    let z = -ndtri_log(ln(u) + log_kept);
    // Rounding can put z a hair below w in the far tail.
    loc + scale * if z < w { w } else { z }
}

fn binomial_log_pmf(k: u64, n: u64, p: f64) -> f64 {
    let kf = k as f64;
    let nf = n as f64;
    let coef = ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    let events = if k == 0 { 0.0 } else { kf * ln(p) };
    let nonevents = if k == n { 0.0 } else { (nf - kf) * libm::log1p(-p) };
    coef + events + nonevents
}

/// Beta log-density of `p = sigmoid(y)` plus the logit Jacobian, written in
/// `y` so that probabilities near 0 or 1 stay representable.
/// Returns `(value, d/dy, d/dalpha, d/dbeta)`.
pub fn beta_logit_with_jacobian(y: f64, alpha: f64, beta: f64) -> (f64, f64, f64, f64) {
    let lp = log_sigmoid(y);
    let lq = log_sigmoid(-y);
    let value = alpha * lp + beta * lq - ln_beta(alpha, beta);
    let p = math::sigmoid(y);
    let q = math::sigmoid(-y);
    let ds = digamma(alpha + beta);
    (
        value,
        alpha * q - beta * p,
        lp - digamma(alpha) + ds,
        lq - digamma(beta) + ds,
    )
}

/// Binomial log pmf with logit-parameterised success probability.
/// Returns `(value, d/dy)`.
pub fn binomial_logit(k: u64, n: u64, y: f64) -> (f64, f64) {
    let kf = k as f64;
    let nf = n as f64;
    let coef = ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    let value = coef + kf * log_sigmoid(y) + (nf - kf) * log_sigmoid(-y);
    (value, kf - nf * math::sigmoid(y))
}

/// Bijection between a constrained domain and the real line. `forward` maps
/// constrained to unconstrained; `inverse` maps back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `(0, inf) <-> R` via `ln`.
    LogPositive,
    /// `(0, 1) <-> R` via logit.
    LogitUnit,
    /// `(-inf, bound) <-> R` with `x = bound - exp(y)`.
    UpperBoundedExpShift(f64),
    /// `(bound, inf) <-> R` with `x = bound + exp(y)`.
    LowerBoundedExpShift(f64),
}

impl Transform {
    fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::LogPositive => "log",
            Transform::LogitUnit => "logit",
            Transform::UpperBoundedExpShift(_) => "upper-bounded",
            Transform::LowerBoundedExpShift(_) => "lower-bounded",
        }
    }

    fn domain_error(&self, value: f64) -> Error {
        Error::DomainError {
            transform: self.name(),
            value,
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        let y = match *self {
            Transform::Identity => x,
            Transform::LogPositive if x > 0.0 => ln(x),
            Transform::LogitUnit if x > 0.0 && x < 1.0 => math::logit(x),
            Transform::UpperBoundedExpShift(b) if x < b => ln(b - x),
            Transform::LowerBoundedExpShift(b) if x > b => ln(x - b),
            _ => return Err(self.domain_error(x)),
        };
        if y.is_nan() {
            return Err(self.domain_error(x));
        }
        Ok(y)
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(self.domain_error(y));
        }
        Ok(match *self {
            Transform::Identity => y,
            Transform::LogPositive => math::exp(y),
            Transform::LogitUnit => math::sigmoid(y),
            Transform::UpperBoundedExpShift(b) => b - math::exp(y),
            Transform::LowerBoundedExpShift(b) => b + math::exp(y),
        })
    }

    /// `ln |d inverse(y) / dy|`.
    pub fn log_abs_det_jacobian(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(self.domain_error(y));
        }
        Ok(match *self {
            Transform::Identity => 0.0,
            Transform::LogPositive
            | Transform::UpperBoundedExpShift(_)
            | Transform::LowerBoundedExpShift(_) => y,
            Transform::LogitUnit => log_sigmoid(y) + log_sigmoid(-y),
        })
    }
}
