//! Fixed-effect pooling: inverse-variance log relative risk, Peto log odds
//! ratio, Cochran's Q and the E-value.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{MetaDataset, StudyRecord};
use crate::error::{Error, Result};
use crate::math::{chi_square_sf, ln, ndtr, ndtri, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Measure {
    LogRelativeRisk,
    PetoLogOddsRatio,
}

/// How the relative-risk path treats a study with a zero cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ZeroCellPolicy {
    /// Add 0.5 to all four cells of the affected study only.
    #[default]
    HaldaneAnscombe05,
    ExcludeStudy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassicalConfig {
    pub confidence_level: f64,
    pub zero_cell_policy: ZeroCellPolicy,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            confidence_level: 0.95,
            zero_cell_policy: ZeroCellPolicy::default(),
        }
    }
}

impl ClassicalConfig {
    pub fn with_confidence(confidence_level: f64) -> Result<Self> {
        let cfg = Self {
            confidence_level,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.confidence_level > 0.0 && self.confidence_level < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("confidence_level must lie in (0, 1)"))
        }
    }

    /// Two-sided normal critical value.
    pub fn z_critical(&self) -> f64 {
        ndtri(0.5 + 0.5 * self.confidence_level)
    }
}

/// One study's contribution to a pooled estimate. For Peto pooling
/// `o_minus_e` and `variance` are set and `point`/`se` are the implied
/// one-step log odds ratio (absent when the variance is zero).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyContribution {
    pub id: String,
    pub label: String,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub weight: f64,
    pub corrected: bool,
    pub excluded: bool,
    pub o_minus_e: Option<f64>,
    pub variance: Option<f64>,
}

/// A pooled fixed-effect estimate on the log scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectEstimate {
    pub measure: Measure,
    pub confidence_level: f64,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: f64,
    pub p_value: f64,
    pub per_study: Vec<StudyContribution>,
    pub q_statistic: f64,
    pub q_df: usize,
    pub q_p_value: f64,
    pub i_squared: f64,
}

impl EffectEstimate {
    /// Pooled ratio on the natural scale.
    pub fn ratio(&self) -> f64 {
        libm::exp(self.point)
    }

    pub fn ratio_ci(&self) -> (f64, f64) {
        (libm::exp(self.ci_low), libm::exp(self.ci_high))
    }

    /// Studies that carry weight in the pooled value.
    pub fn contributing(&self) -> impl Iterator<Item = &StudyContribution> {
        self.per_study
            .iter()
            .filter(|s| !s.excluded && s.weight > 0.0 && s.point.is_some())
    }
}

fn two_sided_p(z: f64) -> f64 {
    (2.0 * ndtr(-z.abs())).min(1.0)
}

/// Weighted dispersion of the contributing studies around `pooled`.
fn heterogeneity(per_study: &[StudyContribution], pooled: f64) -> (f64, usize, f64, f64) {
    let mut q = 0.0;
    let mut k = 0usize;
    for s in per_study.iter().filter(|s| !s.excluded && s.weight > 0.0) {
        if let Some(y) = s.point {
            q += s.weight * (y - pooled) * (y - pooled);
            k += 1;
        }
    }
    let df = k.saturating_sub(1);
    let p = if df == 0 { 1.0 } else { chi_square_sf(q, df as f64) };
    let i2 = if q > 0.0 { ((q - df as f64) / q).max(0.0) } else { 0.0 };
    (q, df, p.clamp(0.0, 1.0), i2)
}

fn finish(
    measure: Measure,
    cfg: &ClassicalConfig,
    point: f64,
    se: f64,
    per_study: Vec<StudyContribution>,
) -> EffectEstimate {
    let half = cfg.z_critical() * se;
    let z = point / se;
    let (q, q_df, q_p, i2) = heterogeneity(&per_study, point);
    EffectEstimate {
        measure,
        confidence_level: cfg.confidence_level,
        point,
        se,
        ci_low: point - half,
        ci_high: point + half,
        z,
        p_value: two_sided_p(z),
        per_study,
        q_statistic: q,
        q_df,
        q_p_value: q_p,
        i_squared: i2,
    }
}

fn log_rr_contribution(s: &StudyRecord, policy: ZeroCellPolicy) -> StudyContribution {
    let mut out = StudyContribution {
        id: s.id.clone(),
        label: s.label.clone(),
        point: None,
        se: None,
        weight: 0.0,
        corrected: false,
        excluded: false,
        o_minus_e: None,
        variance: None,
    };
    let (a, b, c, d) = (
        s.intervention_events as f64,
        s.intervention_nonevents as f64,
        s.control_events as f64,
        s.control_nonevents as f64,
    );
    let (a, b, c, d) = if s.has_zero_cell() {
        match policy {
            ZeroCellPolicy::ExcludeStudy => {
                out.excluded = true;
                return out;
            }
            ZeroCellPolicy::HaldaneAnscombe05 => {
                out.corrected = true;
                (a + 0.5, b + 0.5, c + 0.5, d + 0.5)
            }
        }
    } else {
        (a, b, c, d)
    };
    let n1 = a + b;
    let n2 = c + d;
    let point = ln((a / n1) / (c / n2));
    let se = sqrt(1.0 / a - 1.0 / n1 + 1.0 / c - 1.0 / n2);
    out.point = Some(point);
    out.se = Some(se);
    out.weight = if se.is_finite() && se > 0.0 { 1.0 / (se * se) } else { 0.0 };
    out
}

/// Inverse-variance fixed-effect pooling of log relative risks.
pub fn fixed_effect_rr(data: &MetaDataset, cfg: &ClassicalConfig) -> Result<EffectEstimate> {
    cfg.validate()?;
    let per_study: Vec<StudyContribution> = data
        .studies
        .iter()
        .map(|s| log_rr_contribution(s, cfg.zero_cell_policy))
        .collect();
    if per_study.iter().all(|s| s.excluded) {
        return Err(Error::NoUsableStudies);
    }
    let (mut sw, mut swy) = (0.0, 0.0);
    for s in per_study.iter().filter(|s| s.weight > 0.0) {
        sw += s.weight;
        swy += s.weight * s.point.unwrap_or(0.0);
    }
    if !(sw > 0.0 && sw.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    let pooled = swy / sw;
    Ok(finish(Measure::LogRelativeRisk, cfg, pooled, 1.0 / sqrt(sw), per_study))
}

/// Peto one-step log odds ratio from observed-minus-expected counts and
/// hypergeometric variances. Zero cells need no correction; a study with no
/// events (or only events) contributes nothing.
pub fn peto_or(data: &MetaDataset, cfg: &ClassicalConfig) -> Result<EffectEstimate> {
    cfg.validate()?;
    let mut sum_oe = 0.0;
    let mut sum_v = 0.0;
    let mut per_study = Vec::with_capacity(data.studies.len());
    for s in &data.studies {
        let n1 = s.intervention_total() as f64;
        let n2 = s.control_total() as f64;
        let n = s.total();
        let m = s.total_events();
        let (oe, v) = if m == 0 || m == n || n < 2 {
            (0.0, 0.0)
        } else {
            let (nf, mf) = (n as f64, m as f64);
            let expected = n1 * mf / nf;
            let v = n1 * n2 * mf * (nf - mf) / (nf * nf * (nf - 1.0));
            (s.intervention_events as f64 - expected, v)
        };
        sum_oe += oe;
        sum_v += v;
        per_study.push(StudyContribution {
            id: s.id.clone(),
            label: s.label.clone(),
            point: (v > 0.0).then(|| oe / v),
            se: (v > 0.0).then(|| 1.0 / sqrt(v)),
            weight: v,
            corrected: false,
            excluded: false,
            o_minus_e: Some(oe),
            variance: Some(v),
        });
    }
    if sum_v <= 0.0 {
        return Err(Error::AllZeroVariance);
    }
    Ok(finish(
        Measure::PetoLogOddsRatio,
        cfg,
        sum_oe / sum_v,
        1.0 / sqrt(sum_v),
        per_study,
    ))
}

/// Cochran's Q from the per-study points and weights of a pooled estimate.
/// Returns `(q, df, p)` with `p` the chi-square upper tail.
pub fn cochran_q_test(estimate: &EffectEstimate) -> Result<(f64, usize, f64)> {
    let k = estimate.contributing().count();
    if k < 2 {
        return Err(Error::InsufficientStudies(k));
    }
    let (q, df, p, _) = heterogeneity(&estimate.per_study, estimate.point);
    Ok((q, df, p))
}

/// Minimum confounder association (risk-ratio scale) that could explain away
/// an observed relative risk.
pub fn e_value(rr_point: f64) -> Result<f64> {
    if !(rr_point > 0.0 && rr_point.is_finite()) {
        return Err(Error::NonPositiveRR(rr_point));
    }
    let rr = if rr_point < 1.0 { 1.0 / rr_point } else { rr_point };
    Ok(rr + sqrt(rr * (rr - 1.0)))
}
