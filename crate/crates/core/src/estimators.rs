//! Estimators of prediction inaccuracy on a realized observation mask.
//!
//! Static family: `L_real` (full-information oracle), `L_naive` (observed
//! mean), `L_EIB` (error imputation), `L_IPS` (inverse propensity), SNIPS
//! (self-normalized IPS), and `L_DR` (doubly robust). Dynamic family:
//! D-IPS, D-DR, and D-SNIPS, which replace the inverse weight `1/p̂` with
//! `1/f^α(p̂)` for a shaping function `f` and per-cell exponents `α`.
//! The general coefficient form covers all of them plus regularized
//! variants.
//!
//! All sums run in fixed row-major order through compensated accumulation,
//! so values are deterministic regardless of platform or thread count.

use serde::{Deserialize, Serialize};

use crate::matrix::{GeneralEstimatorForm, LabeledMatrix, ObservationMask};
use crate::numeric::KahanSum;
use crate::shaping::ShapingFunction;
use crate::{Error, Result};

/// Estimator family tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorFamily {
    Real,
    Naive,
    Eib,
    Ips,
    Snips,
    Dr,
    DIps,
    DDr,
    DSnips,
    General,
}

impl EstimatorFamily {
    pub fn is_dynamic(self) -> bool {
        matches!(self, Self::DIps | Self::DDr | Self::DSnips)
    }

    /// Families whose bias/variance have closed forms in the analytics
    /// module (ratio estimators and the general form do not).
    pub fn has_closed_form(self) -> bool {
        matches!(
            self,
            Self::Naive | Self::Eib | Self::Ips | Self::Dr | Self::DIps | Self::DDr
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Naive => "naive",
            Self::Eib => "eib",
            Self::Ips => "ips",
            Self::Snips => "snips",
            Self::Dr => "dr",
            Self::DIps => "d_ips",
            Self::DDr => "d_dr",
            Self::DSnips => "d_snips",
            Self::General => "general",
        }
    }
}

impl std::str::FromStr for EstimatorFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Self::Real),
            "naive" => Ok(Self::Naive),
            "eib" => Ok(Self::Eib),
            "ips" => Ok(Self::Ips),
            "snips" => Ok(Self::Snips),
            "dr" => Ok(Self::Dr),
            "d_ips" | "d-ips" => Ok(Self::DIps),
            "d_dr" | "d-dr" => Ok(Self::DDr),
            "d_snips" | "d-snips" => Ok(Self::DSnips),
            "general" => Ok(Self::General),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator family '{other}'"
            ))),
        }
    }
}

/// Which sum normalizes the self-normalized dynamic estimator.
///
/// The default divides by Σ o/f^α(p̂), the same weights the numerator uses.
/// The raw-propensity alternative (Σ o/p̂) is exposed because the reference
/// material never writes the D-SNIPS normalizer down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnipsNormalizer {
    #[default]
    ShapedPropensity,
    RawPropensity,
}

/// `L_real`: mean error over every cell, observed or not.
pub fn eval_real(e: &LabeledMatrix) -> Result<f64> {
    let mut acc = KahanSum::new();
    for &v in e.values() {
        acc.add(v);
    }
    Ok(acc.value() / e.len() as f64)
}

/// `L_naive`: mean error over observed cells only.
pub fn eval_naive(e: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    mask.check_same_shape(e)?;
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    eval_naive_with_normalizer(e, mask, mask.observed_count() as f64)
}

/// Naive estimator with a caller-fixed normalizer in place of the realized
/// count |𝒪|.
///
/// The closed-form bias and variance of the naive family describe this
/// fixed-normalizer statistic (the realized count enters those formulas as
/// a constant), so the verification oracles evaluate it with the normalizer
/// pinned — typically to E[|𝒪|] = Σ p.
pub fn eval_naive_with_normalizer(
    e: &LabeledMatrix,
    mask: &ObservationMask,
    normalizer: f64,
) -> Result<f64> {
    mask.check_same_shape(e)?;
    if !normalizer.is_finite() || normalizer <= 0.0 {
        return Err(Error::domain("naive normalizer", normalizer));
    }
    let mut acc = KahanSum::new();
    for (&v, o) in e.values().iter().zip(mask.indicators()) {
        acc.add(o * v);
    }
    Ok(acc.value() / normalizer)
}

/// `L_EIB`: observed errors plus imputed errors on missing cells.
pub fn eval_eib(e: &LabeledMatrix, e_hat: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    e.check_same_shape(e_hat)?;
    mask.check_same_shape(e)?;
    let mut acc = KahanSum::new();
    for ((&ev, &ih), o) in e.values().iter().zip(e_hat.values()).zip(mask.indicators()) {
        acc.add(o * ev + (1.0 - o) * ih);
    }
    Ok(acc.value() / e.len() as f64)
}

/// `L_IPS`: observed errors reweighted by inverse estimated propensity.
pub fn eval_ips(e: &LabeledMatrix, p_hat: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    e.check_same_shape(p_hat)?;
    mask.check_same_shape(e)?;
    p_hat.check_propensity()?;
    let mut acc = KahanSum::new();
    for ((&ev, &p), o) in e.values().iter().zip(p_hat.values()).zip(mask.indicators()) {
        acc.add(o / p * ev);
    }
    Ok(acc.value() / e.len() as f64)
}

/// SNIPS: IPS numerator divided by the sum of realized weights instead of |𝒟|.
pub fn eval_snips(e: &LabeledMatrix, p_hat: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    e.check_same_shape(p_hat)?;
    mask.check_same_shape(e)?;
    p_hat.check_propensity()?;
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for ((&ev, &p), o) in e.values().iter().zip(p_hat.values()).zip(mask.indicators()) {
        let w = o / p;
        num.add(w * ev);
        den.add(w);
    }
    if den.value() <= 0.0 {
        return Err(Error::EmptyObservation);
    }
    Ok(num.value() / den.value())
}

/// `L_DR`: imputed errors everywhere plus propensity-weighted corrections on
/// observed cells.
pub fn eval_dr(
    e: &LabeledMatrix,
    e_hat: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
) -> Result<f64> {
    e.check_same_shape(e_hat)?;
    e.check_same_shape(p_hat)?;
    mask.check_same_shape(e)?;
    p_hat.check_propensity()?;
    let mut acc = KahanSum::new();
    for (((&ev, &ih), &p), o) in e
        .values()
        .iter()
        .zip(e_hat.values())
        .zip(p_hat.values())
        .zip(mask.indicators())
    {
        acc.add(ih + o / p * (ev - ih));
    }
    Ok(acc.value() / e.len() as f64)
}

fn check_dynamic_inputs(
    e: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
    alpha: &LabeledMatrix,
) -> Result<()> {
    e.check_same_shape(p_hat)?;
    e.check_same_shape(alpha)?;
    mask.check_same_shape(e)?;
    p_hat.check_propensity()?;
    alpha.check_unit_interval("alpha")?;
    Ok(())
}

/// D-IPS: observed errors weighted by 1/f^α(p̂).
pub fn eval_d_ips(
    e: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
) -> Result<f64> {
    check_dynamic_inputs(e, p_hat, mask, alpha)?;
    let mut acc = KahanSum::new();
    for (((&ev, &p), &a), o) in e
        .values()
        .iter()
        .zip(p_hat.values())
        .zip(alpha.values())
        .zip(mask.indicators())
    {
        let fa = ShapingFunction::powered(shaping.eval(p)?, a);
        acc.add(o / fa * ev);
    }
    Ok(acc.value() / e.len() as f64)
}

/// D-DR: imputed errors plus 1/f^α(p̂)-weighted corrections.
pub fn eval_d_dr(
    e: &LabeledMatrix,
    e_hat: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
) -> Result<f64> {
    e.check_same_shape(e_hat)?;
    check_dynamic_inputs(e, p_hat, mask, alpha)?;
    let mut acc = KahanSum::new();
    for ((((&ev, &ih), &p), &a), o) in e
        .values()
        .iter()
        .zip(e_hat.values())
        .zip(p_hat.values())
        .zip(alpha.values())
        .zip(mask.indicators())
    {
        let fa = ShapingFunction::powered(shaping.eval(p)?, a);
        acc.add(ih + o / fa * (ev - ih));
    }
    Ok(acc.value() / e.len() as f64)
}

/// D-SNIPS: self-normalized D-IPS.
pub fn eval_d_snips(
    e: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
    normalizer: SnipsNormalizer,
) -> Result<f64> {
    check_dynamic_inputs(e, p_hat, mask, alpha)?;
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for (((&ev, &p), &a), o) in e
        .values()
        .iter()
        .zip(p_hat.values())
        .zip(alpha.values())
        .zip(mask.indicators())
    {
        let fa = ShapingFunction::powered(shaping.eval(p)?, a);
        num.add(o / fa * ev);
        den.add(match normalizer {
            SnipsNormalizer::ShapedPropensity => o / fa,
            SnipsNormalizer::RawPropensity => o / p,
        });
    }
    if den.value() <= 0.0 {
        return Err(Error::EmptyObservation);
    }
    Ok(num.value() / den.value())
}

/// Dispatcher over the three dynamic families.
pub fn eval_dynamic(
    family: EstimatorFamily,
    e: &LabeledMatrix,
    e_hat: Option<&LabeledMatrix>,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
) -> Result<f64> {
    match family {
        EstimatorFamily::DIps => eval_d_ips(e, p_hat, mask, shaping, alpha),
        EstimatorFamily::DDr => {
            let e_hat = e_hat
                .ok_or_else(|| Error::InvalidSpec("d_dr requires imputed errors".to_string()))?;
            eval_d_dr(e, e_hat, p_hat, mask, shaping, alpha)
        }
        EstimatorFamily::DSnips => {
            eval_d_snips(e, p_hat, mask, shaping, alpha, SnipsNormalizer::default())
        }
        other => Err(Error::InvalidSpec(format!(
            "eval_dynamic called with non-dynamic family '{}'",
            other.name()
        ))),
    }
}

/// Value breakdown of the general estimator-with-regularizer form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralEstimate {
    pub est_value: f64,
    pub reg_value: f64,
    pub total: f64,
}

/// Evaluates the general form: est = (1/|𝒟|) Σ [f(o,p̂)e + g(o,p̂)ê],
/// reg = (1/|𝒟|) Σ h(o,p̂), total = est + λ·reg.
pub fn eval_general(
    form: &GeneralEstimatorForm,
    e: &LabeledMatrix,
    e_hat: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    mask: &ObservationMask,
) -> Result<GeneralEstimate> {
    e.check_same_shape(e_hat)?;
    e.check_same_shape(p_hat)?;
    mask.check_same_shape(e)?;
    p_hat.check_propensity()?;
    let cols = e.cols();
    let mut est = KahanSum::new();
    let mut reg = KahanSum::new();
    for (idx, ((&ev, &ih), &p)) in e
        .values()
        .iter()
        .zip(e_hat.values())
        .zip(p_hat.values())
        .enumerate()
    {
        let o = mask.bits()[idx];
        let term = form.f_coeff(o, p) * ev + form.g_coeff(o, p) * ih;
        let h = form.h_coeff(o, p);
        if !term.is_finite() || !h.is_finite() {
            return Err(Error::NonFinite {
                what: "general-form coefficient output".to_string(),
                row: idx / cols,
                col: idx % cols,
            });
        }
        est.add(term);
        reg.add(h);
    }
    let n = e.len() as f64;
    let est_value = est.value() / n;
    let reg_value = reg.value() / n;
    Ok(GeneralEstimate {
        est_value,
        reg_value,
        total: est_value + form.reg_weight() * reg_value,
    })
}

/// A fully-specified estimator: family plus whatever pieces that family
/// needs. The α matrix is always per-cell, even when constant.
#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub family: EstimatorFamily,
    pub shaping: Option<ShapingFunction>,
    pub alpha: Option<LabeledMatrix>,
    pub snips_normalizer: SnipsNormalizer,
    /// Fixed normalizer for the naive family (verification-oracle
    /// convention). None means the realized count |𝒪|.
    pub naive_normalizer: Option<f64>,
    pub general_form: Option<GeneralEstimatorForm>,
}

impl EstimatorSpec {
    pub fn new(family: EstimatorFamily) -> Self {
        Self {
            family,
            shaping: None,
            alpha: None,
            snips_normalizer: SnipsNormalizer::default(),
            naive_normalizer: None,
            general_form: None,
        }
    }

    pub fn with_shaping(mut self, shaping: ShapingFunction) -> Self {
        self.shaping = Some(shaping);
        self
    }

    pub fn with_alpha(mut self, alpha: LabeledMatrix) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_snips_normalizer(mut self, normalizer: SnipsNormalizer) -> Self {
        self.snips_normalizer = normalizer;
        self
    }

    pub fn with_naive_normalizer(mut self, normalizer: f64) -> Self {
        self.naive_normalizer = Some(normalizer);
        self
    }

    pub fn with_general_form(mut self, form: GeneralEstimatorForm) -> Self {
        self.general_form = Some(form);
        self
    }

    fn shaping_and_alpha(&self) -> Result<(&ShapingFunction, &LabeledMatrix)> {
        let shaping = self.shaping.as_ref().ok_or_else(|| {
            Error::InvalidSpec(format!(
                "{} requires a shaping function",
                self.family.name()
            ))
        })?;
        let alpha = self.alpha.as_ref().ok_or_else(|| {
            Error::InvalidSpec(format!("{} requires an alpha matrix", self.family.name()))
        })?;
        Ok((shaping, alpha))
    }

    /// Evaluates the estimator on one realized mask.
    pub fn evaluate(
        &self,
        e: &LabeledMatrix,
        e_hat: Option<&LabeledMatrix>,
        p_hat: Option<&LabeledMatrix>,
        mask: &ObservationMask,
    ) -> Result<f64> {
        let need_e_hat = || {
            e_hat.ok_or_else(|| {
                Error::InvalidSpec(format!("{} requires imputed errors", self.family.name()))
            })
        };
        let need_p_hat = || {
            p_hat.ok_or_else(|| {
                Error::InvalidSpec(format!("{} requires propensities", self.family.name()))
            })
        };
        match self.family {
            EstimatorFamily::Real => eval_real(e),
            EstimatorFamily::Naive => match self.naive_normalizer {
                Some(m) => eval_naive_with_normalizer(e, mask, m),
                None => eval_naive(e, mask),
            },
            EstimatorFamily::Eib => eval_eib(e, need_e_hat()?, mask),
            EstimatorFamily::Ips => eval_ips(e, need_p_hat()?, mask),
            EstimatorFamily::Snips => eval_snips(e, need_p_hat()?, mask),
            EstimatorFamily::Dr => eval_dr(e, need_e_hat()?, need_p_hat()?, mask),
            EstimatorFamily::DIps => {
                let (shaping, alpha) = self.shaping_and_alpha()?;
                eval_d_ips(e, need_p_hat()?, mask, shaping, alpha)
            }
            EstimatorFamily::DDr => {
                let (shaping, alpha) = self.shaping_and_alpha()?;
                eval_d_dr(e, need_e_hat()?, need_p_hat()?, mask, shaping, alpha)
            }
            EstimatorFamily::DSnips => {
                let (shaping, alpha) = self.shaping_and_alpha()?;
                eval_d_snips(
                    e,
                    need_p_hat()?,
                    mask,
                    shaping,
                    alpha,
                    self.snips_normalizer,
                )
            }
            EstimatorFamily::General => {
                let form = self.general_form.as_ref().ok_or_else(|| {
                    Error::InvalidSpec("general family requires a coefficient form".to_string())
                })?;
                Ok(eval_general(form, e, need_e_hat()?, need_p_hat()?, mask)?.total)
            }
        }
    }
}
