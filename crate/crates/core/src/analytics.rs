//! Closed-form bias, variance, tail bounds, and generalization bounds.
//!
//! Every estimator here is a sum of independent per-cell Bernoulli terms, so
//! its exact bias and variance have closed forms in the true propensities.
//! For the dynamic families the per-cell determining factors are
//!
//! ```text
//! h_B(p̂, p, α) = 1 − p / f^α(p̂)          (bias factor)
//! h_V(p̂, p, α) = p(1−p) / f^{2α}(p̂)      (variance factor)
//! ```
//!
//! with the static families recovered at the α corners. The tail and
//! generalization bounds are Hoeffding-style; `log` is always the natural
//! logarithm.

use serde::{Deserialize, Serialize};

use crate::estimators::EstimatorFamily;
use crate::matrix::LabeledMatrix;
use crate::numeric::{kahan_sum, mean_and_variance, sample_covariance, KahanSum};
use crate::shaping::ShapingFunction;
use crate::{Error, Result};

/// Which closed form to use for the naive estimator's bias.
///
/// The two normalizations disagree; the domain-normalized form is the one
/// consistent with the fixed-normalizer statistic the variance formula
/// describes, and is the default. The observed-normalized form is kept for
/// cross-checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveBiasFormula {
    /// (1/|𝒟|) |Σ (1 − (|𝒟|/|𝒪|)·p) e|
    #[default]
    DomainNormalized,
    /// (1/|𝒪|) |Σ (1 − p) e|
    ObservedNormalized,
}

/// Denominator convention inside the tail bound: 2|𝒟|² (shared Hoeffding
/// derivation, default) or 2|𝒟| (an alternative reading for D-DR).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDenominator {
    #[default]
    CellCountSquared,
    CellCount,
}

/// Flags selecting between formula variants. Defaults are the conventions
/// used everywhere else in the crate.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AnalyticsOptions {
    pub naive_bias_formula: NaiveBiasFormula,
    pub tail_denominator: TailDenominator,
}

/// Per-cell bias determining factor h_B(p̂, p, α) = 1 − p/f^α(p̂).
pub fn h_b(shaping: &ShapingFunction, p_hat: f64, p_true: f64, alpha: f64) -> Result<f64> {
    check_p_true(p_true)?;
    let fa = shaping.eval_alpha(p_hat, alpha)?;
    Ok(1.0 - p_true / fa)
}

/// Per-cell variance determining factor h_V(p̂, p, α) = p(1−p)/f^{2α}(p̂).
pub fn h_v(shaping: &ShapingFunction, p_hat: f64, p_true: f64, alpha: f64) -> Result<f64> {
    check_p_true(p_true)?;
    let fa = shaping.eval_alpha(p_hat, alpha)?;
    Ok(p_true * (1.0 - p_true) / (fa * fa))
}

fn check_p_true(p_true: f64) -> Result<()> {
    if !(p_true > 0.0 && p_true <= 1.0) {
        return Err(Error::domain("true propensity p", p_true));
    }
    Ok(())
}

/// Matrices a closed-form computation may need. Families ignore the fields
/// they do not use; missing required fields are reported by name.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormInputs<'a> {
    /// Prediction errors e.
    pub e: &'a LabeledMatrix,
    /// Imputed errors ê (families built on δ = e − ê).
    pub e_hat: Option<&'a LabeledMatrix>,
    /// True propensities p.
    pub p_true: &'a LabeledMatrix,
    /// Estimated propensities p̂ (IPS/DR and dynamic families).
    pub p_hat: Option<&'a LabeledMatrix>,
    /// Normalizer |𝒪| for the naive family: the realized count when
    /// analyzing one mask, or E[|𝒪|] = Σp in expectation analyses.
    pub observed_count: Option<f64>,
    pub shaping: Option<&'a ShapingFunction>,
    pub alpha: Option<&'a LabeledMatrix>,
}

impl<'a> ClosedFormInputs<'a> {
    pub fn new(e: &'a LabeledMatrix, p_true: &'a LabeledMatrix) -> Self {
        Self {
            e,
            e_hat: None,
            p_true,
            p_hat: None,
            observed_count: None,
            shaping: None,
            alpha: None,
        }
    }

    pub fn with_e_hat(mut self, e_hat: &'a LabeledMatrix) -> Self {
        self.e_hat = Some(e_hat);
        self
    }

    pub fn with_p_hat(mut self, p_hat: &'a LabeledMatrix) -> Self {
        self.p_hat = Some(p_hat);
        self
    }

    pub fn with_observed_count(mut self, count: f64) -> Self {
        self.observed_count = Some(count);
        self
    }

    pub fn with_shaping(mut self, shaping: &'a ShapingFunction) -> Self {
        self.shaping = Some(shaping);
        self
    }

    pub fn with_alpha(mut self, alpha: &'a LabeledMatrix) -> Self {
        self.alpha = Some(alpha);
        self
    }

    fn validate(&self, family: EstimatorFamily) -> Result<()> {
        self.e.check_same_shape(self.p_true)?;
        self.p_true.check_propensity()?;
        let need = |opt: bool, what: &str| {
            if opt {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!(
                    "closed form for {} requires {what}",
                    family.name()
                )))
            }
        };
        match family {
            EstimatorFamily::Naive => need(self.observed_count.is_some(), "observed_count")?,
            EstimatorFamily::Eib => need(self.e_hat.is_some(), "imputed errors")?,
            EstimatorFamily::Ips => need(self.p_hat.is_some(), "estimated propensities")?,
            EstimatorFamily::Dr => {
                need(self.e_hat.is_some(), "imputed errors")?;
                need(self.p_hat.is_some(), "estimated propensities")?;
            }
            EstimatorFamily::DIps => {
                need(self.p_hat.is_some(), "estimated propensities")?;
                need(self.shaping.is_some(), "a shaping function")?;
                need(self.alpha.is_some(), "an alpha matrix")?;
            }
            EstimatorFamily::DDr => {
                need(self.e_hat.is_some(), "imputed errors")?;
                need(self.p_hat.is_some(), "estimated propensities")?;
                need(self.shaping.is_some(), "a shaping function")?;
                need(self.alpha.is_some(), "an alpha matrix")?;
            }
            other => {
                return Err(Error::InvalidSpec(format!(
                    "no closed form for estimator family '{}'",
                    other.name()
                )))
            }
        }
        if let Some(e_hat) = self.e_hat {
            self.e.check_same_shape(e_hat)?;
        }
        if let Some(p_hat) = self.p_hat {
            self.e.check_same_shape(p_hat)?;
            p_hat.check_propensity()?;
        }
        if let Some(alpha) = self.alpha {
            self.e.check_same_shape(alpha)?;
            alpha.check_unit_interval("alpha")?;
        }
        if let Some(m) = self.observed_count {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::EmptyObservation);
            }
        }
        Ok(())
    }

    /// δ = e − ê for the families that correct imputed errors.
    fn deviation(&self, idx: usize) -> f64 {
        self.e.values()[idx] - self.e_hat.expect("validated").values()[idx]
    }
}

/// Per-cell bias weight entering the closed-form bias sum.
fn bias_factor(
    family: EstimatorFamily,
    inputs: &ClosedFormInputs,
    opts: &AnalyticsOptions,
    idx: usize,
) -> Result<f64> {
    let p = inputs.p_true.values()[idx];
    Ok(match family {
        EstimatorFamily::Naive => match opts.naive_bias_formula {
            NaiveBiasFormula::DomainNormalized => {
                let m = inputs.observed_count.expect("validated");
                1.0 - inputs.e.len() as f64 / m * p
            }
            NaiveBiasFormula::ObservedNormalized => 1.0 - p,
        },
        EstimatorFamily::Eib => 1.0 - p,
        EstimatorFamily::Ips | EstimatorFamily::Dr => {
            1.0 - p / inputs.p_hat.expect("validated").values()[idx]
        }
        EstimatorFamily::DIps | EstimatorFamily::DDr => {
            let shaping = inputs.shaping.expect("validated");
            let p_hat = inputs.p_hat.expect("validated").values()[idx];
            let alpha = inputs.alpha.expect("validated").values()[idx];
            1.0 - p / ShapingFunction::powered(shaping.eval(p_hat)?, alpha)
        }
        _ => unreachable!("validated"),
    })
}

/// Per-cell variance weight entering the closed-form variance sum.
fn variance_factor(family: EstimatorFamily, inputs: &ClosedFormInputs, idx: usize) -> Result<f64> {
    let p = inputs.p_true.values()[idx];
    let bernoulli = p * (1.0 - p);
    Ok(match family {
        EstimatorFamily::Naive | EstimatorFamily::Eib => bernoulli,
        EstimatorFamily::Ips | EstimatorFamily::Dr => {
            let ph = inputs.p_hat.expect("validated").values()[idx];
            bernoulli / (ph * ph)
        }
        EstimatorFamily::DIps | EstimatorFamily::DDr => {
            let shaping = inputs.shaping.expect("validated");
            let ph = inputs.p_hat.expect("validated").values()[idx];
            let alpha = inputs.alpha.expect("validated").values()[idx];
            let fa = ShapingFunction::powered(shaping.eval(ph)?, alpha);
            bernoulli / (fa * fa)
        }
        _ => unreachable!("validated"),
    })
}

/// Whether the family's bias/variance sums weight e or δ = e − ê.
fn uses_deviation(family: EstimatorFamily) -> bool {
    matches!(
        family,
        EstimatorFamily::Eib | EstimatorFamily::Dr | EstimatorFamily::DDr
    )
}

/// Exact bias of the estimator: |L_real − E[L]| in closed form.
pub fn closed_form_bias(
    family: EstimatorFamily,
    inputs: &ClosedFormInputs,
    opts: &AnalyticsOptions,
) -> Result<f64> {
    inputs.validate(family)?;
    let mut acc = KahanSum::new();
    for idx in 0..inputs.e.len() {
        let z = if uses_deviation(family) {
            inputs.deviation(idx)
        } else {
            inputs.e.values()[idx]
        };
        acc.add(bias_factor(family, inputs, opts, idx)? * z);
    }
    let normalizer = match (family, opts.naive_bias_formula) {
        (EstimatorFamily::Naive, NaiveBiasFormula::ObservedNormalized) => {
            inputs.observed_count.expect("validated")
        }
        _ => inputs.e.len() as f64,
    };
    Ok(acc.value().abs() / normalizer)
}

/// Exact variance of the estimator over the mask distribution.
pub fn closed_form_variance(
    family: EstimatorFamily,
    inputs: &ClosedFormInputs,
    _opts: &AnalyticsOptions,
) -> Result<f64> {
    inputs.validate(family)?;
    let mut acc = KahanSum::new();
    for idx in 0..inputs.e.len() {
        let z = if uses_deviation(family) {
            inputs.deviation(idx)
        } else {
            inputs.e.values()[idx]
        };
        acc.add(variance_factor(family, inputs, idx)? * z * z);
    }
    let normalizer = match family {
        EstimatorFamily::Naive => inputs.observed_count.expect("validated"),
        _ => inputs.e.len() as f64,
    };
    Ok(acc.value() / (normalizer * normalizer))
}

/// Closed-form bias and variance paired with their per-cell factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub estimator: EstimatorFamily,
    pub bias: f64,
    pub variance: f64,
    pub per_cell_bias_factor: LabeledMatrix,
    pub per_cell_variance_factor: LabeledMatrix,
}

/// Builds the full report for one family.
pub fn bias_variance_report(
    family: EstimatorFamily,
    inputs: &ClosedFormInputs,
    opts: &AnalyticsOptions,
) -> Result<BiasVarianceReport> {
    inputs.validate(family)?;
    let bias = closed_form_bias(family, inputs, opts)?;
    let variance = closed_form_variance(family, inputs, opts)?;
    let rows = inputs.e.rows();
    let cols = inputs.e.cols();
    let mut bias_cells = Vec::with_capacity(rows * cols);
    let mut var_cells = Vec::with_capacity(rows * cols);
    for idx in 0..inputs.e.len() {
        bias_cells.push(bias_factor(family, inputs, opts, idx)?);
        var_cells.push(variance_factor(family, inputs, idx)?);
    }
    Ok(BiasVarianceReport {
        estimator: family,
        bias,
        variance,
        per_cell_bias_factor: LabeledMatrix::new(rows, cols, bias_cells)?,
        per_cell_variance_factor: LabeledMatrix::new(rows, cols, var_cells)?,
    })
}

/// Eq.-style aggregate objective w₁·Bias + w₂·Variance of the whole
/// estimator. Inspection-level counterpart of the per-cell optimization in
/// [`crate::dynamic`]; the per-cell route is the one used for α selection.
pub fn aggregate_objective(
    w1: f64,
    w2: f64,
    family: EstimatorFamily,
    inputs: &ClosedFormInputs,
    opts: &AnalyticsOptions,
) -> Result<f64> {
    Ok(w1 * closed_form_bias(family, inputs, opts)?
        + w2 * closed_form_variance(family, inputs, opts)?)
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho <= 0.0 || rho >= 1.0 {
        return Err(Error::domain("confidence parameter rho", rho));
    }
    Ok(())
}

/// Σ (z/f^α(p̂))² over all cells.
fn shaped_square_sum(
    z: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
) -> Result<f64> {
    z.check_same_shape(p_hat)?;
    z.check_same_shape(alpha)?;
    p_hat.check_propensity()?;
    alpha.check_unit_interval("alpha")?;
    let mut acc = KahanSum::new();
    for ((&zv, &p), &a) in z.values().iter().zip(p_hat.values()).zip(alpha.values()) {
        let fa = ShapingFunction::powered(shaping.eval(p)?, a);
        let t = zv / fa;
        acc.add(t * t);
    }
    Ok(acc.value())
}

/// High-probability deviation bound of a dynamic estimator from its
/// expectation: with probability 1−ρ,
/// |L − E[L]| ≤ sqrt( ln(2/ρ) / (2|𝒟|²) · Σ (z/f^α(p̂))² ), where z is e for
/// D-IPS and δ for D-DR.
pub fn tail_bound(
    family: EstimatorFamily,
    z: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
    rho: f64,
    opts: &AnalyticsOptions,
) -> Result<f64> {
    if !matches!(family, EstimatorFamily::DIps | EstimatorFamily::DDr) {
        return Err(Error::InvalidSpec(format!(
            "tail bound defined for d_ips and d_dr, not '{}'",
            family.name()
        )));
    }
    check_rho(rho)?;
    let n = z.len() as f64;
    let denom = match opts.tail_denominator {
        TailDenominator::CellCountSquared => 2.0 * n * n,
        TailDenominator::CellCount => 2.0 * n,
    };
    let sum = shaped_square_sum(z, p_hat, shaping, alpha)?;
    Ok(((2.0 / rho).ln() / denom * sum).sqrt())
}

/// Generalization-bound decomposition for a dynamic estimator over a finite
/// hypothesis space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub rho: f64,
    pub hypothesis_count: u64,
    /// Single-hypothesis deviation bound at the same inputs (|ℋ| = 1).
    pub tail_bound: f64,
    pub point_estimate: f64,
    pub bias_term: f64,
    pub variance_term: f64,
    /// point_estimate + bias_term + variance_term.
    pub generalization_bound: f64,
}

/// With probability 1−ρ the true inaccuracy of the selected hypothesis is at
/// most `point_estimate + bias_term + variance_term`:
///
/// - `bias_term` = Σ |h_B(p̂, p, α) · z⁻| / |𝒟| over the selected
///   hypothesis's errors (z⁻ = e⁻ for D-IPS, δ⁻ for D-DR);
/// - `variance_term` = sqrt( ln(2|ℋ|/ρ)/(2|𝒟|²) · Σ (z⁺/f^α(p̂))² ) over the
///   worst-case hypothesis's errors.
///
/// The hypothesis space is abstract: callers supply the error matrices of
/// the selected (z⁻) and worst-case (z⁺) hypotheses; nothing is enumerated.
#[allow(clippy::too_many_arguments)]
pub fn generalization_bound(
    family: EstimatorFamily,
    point_estimate: f64,
    z_minus: &LabeledMatrix,
    z_plus: &LabeledMatrix,
    p_true: &LabeledMatrix,
    p_hat: &LabeledMatrix,
    shaping: &ShapingFunction,
    alpha: &LabeledMatrix,
    rho: f64,
    hypothesis_count: u64,
) -> Result<BoundReport> {
    if !matches!(family, EstimatorFamily::DIps | EstimatorFamily::DDr) {
        return Err(Error::InvalidSpec(format!(
            "generalization bound defined for d_ips and d_dr, not '{}'",
            family.name()
        )));
    }
    check_rho(rho)?;
    if hypothesis_count < 1 {
        return Err(Error::InvalidSpec(
            "hypothesis count must be at least 1".to_string(),
        ));
    }
    z_minus.check_same_shape(z_plus)?;
    z_minus.check_same_shape(p_true)?;
    z_minus.check_same_shape(p_hat)?;
    z_minus.check_same_shape(alpha)?;
    p_true.check_propensity()?;
    p_hat.check_propensity()?;
    alpha.check_unit_interval("alpha")?;

    let n = z_minus.len() as f64;
    let mut bias_acc = KahanSum::new();
    for idx in 0..z_minus.len() {
        let hb = h_b(
            shaping,
            p_hat.values()[idx],
            p_true.values()[idx],
            alpha.values()[idx],
        )?;
        bias_acc.add((hb * z_minus.values()[idx]).abs());
    }
    let bias_term = bias_acc.value() / n;

    let square_sum = shaped_square_sum(z_plus, p_hat, shaping, alpha)?;
    let variance_term =
        ((2.0 * hypothesis_count as f64 / rho).ln() / (2.0 * n * n) * square_sum).sqrt();
    let tail = ((2.0 / rho).ln() / (2.0 * n * n) * square_sum).sqrt();

    Ok(BoundReport {
        rho,
        hypothesis_count,
        tail_bound: tail,
        point_estimate,
        bias_term,
        variance_term,
        generalization_bound: point_estimate + bias_term + variance_term,
    })
}

/// Sample statistics of paired estimator/regularizer draws.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegularizerAnalysis {
    pub cov: f64,
    pub var_reg: f64,
    /// λ minimizing the combined variance: −Cov/Var (0 in the degenerate
    /// all-zero case).
    pub lambda_opt: f64,
    /// Whether adding the regularizer with some λ > 0 can reduce variance,
    /// i.e. Cov < 0.
    pub reducible: bool,
}

/// Unbiased sample covariance/variance over paired draws of `L_Est` and
/// `L_Reg`, with the variance-optimal regularizer weight.
pub fn regularizer_analysis(
    est_samples: &[f64],
    reg_samples: &[f64],
) -> Result<RegularizerAnalysis> {
    if est_samples.len() != reg_samples.len() {
        return Err(Error::InvalidSpec(format!(
            "sample sequences differ in length: {} vs {}",
            est_samples.len(),
            reg_samples.len()
        )));
    }
    if est_samples.len() < 2 {
        return Err(Error::TooFewSamples {
            got: est_samples.len(),
            min: 2,
        });
    }
    let mean_est = kahan_sum(est_samples.iter().copied()) / est_samples.len() as f64;
    let (mean_reg, var_reg) = mean_and_variance(reg_samples);
    let cov = sample_covariance(est_samples, reg_samples, mean_est, mean_reg);
    let lambda_opt = if var_reg == 0.0 {
        if cov == 0.0 {
            0.0
        } else {
            return Err(Error::DegenerateRegularizer);
        }
    } else {
        -cov / var_reg
    };
    Ok(RegularizerAnalysis {
        cov,
        var_reg,
        lambda_opt,
        reducible: cov < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f64]) -> LabeledMatrix {
        LabeledMatrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn h_b_examples() {
        let id = ShapingFunction::identity();
        assert_eq!(h_b(&id, 0.25, 0.25, 1.0).unwrap(), 0.0);
        assert!((h_b(&id, 0.25, 0.25, 0.5).unwrap() - 0.5).abs() < 1e-15);
        for s in ShapingFunction::builtins() {
            assert!((h_b(&s, 0.7, 0.3, 0.0).unwrap() - 0.7).abs() < 1e-15);
        }
        assert!(h_b(&id, 0.25, 0.0, 0.5).is_err());
        assert!(h_b(&id, 0.25, 1.5, 0.5).is_err());
    }

    #[test]
    fn h_v_examples() {
        let id = ShapingFunction::identity();
        assert!((h_v(&id, 0.25, 0.25, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((h_v(&id, 0.25, 0.25, 0.0).unwrap() - 0.1875).abs() < 1e-15);
        // deterministic observation: Bernoulli variance vanishes
        assert_eq!(h_v(&id, 0.5, 1.0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_bias_examples() {
        let opts = AnalyticsOptions::default();
        // IPS with accurate propensities is unbiased
        let e = m(&[1.0, 2.0, 0.5]);
        let p = m(&[0.3, 0.6, 0.9]);
        let inputs = ClosedFormInputs::new(&e, &p).with_p_hat(&p);
        assert_eq!(
            closed_form_bias(EstimatorFamily::Ips, &inputs, &opts).unwrap(),
            0.0
        );

        // EIB with symmetric deviations cancels
        let e = m(&[1.0, 0.0]);
        let e_hat = m(&[0.0, 1.0]); // δ = [1, −1]
        let p = m(&[0.5, 0.5]);
        let inputs = ClosedFormInputs::new(&e, &p).with_e_hat(&e_hat);
        assert!(closed_form_bias(EstimatorFamily::Eib, &inputs, &opts).unwrap() < 1e-15);

        // D-IPS worked example: h_B = 0.5 per cell, e ≡ 1
        let e = m(&[1.0, 1.0]);
        let p = m(&[0.25, 0.25]);
        let alpha = m(&[0.5, 0.5]);
        let id = ShapingFunction::identity();
        let inputs = ClosedFormInputs::new(&e, &p)
            .with_p_hat(&p)
            .with_shaping(&id)
            .with_alpha(&alpha);
        assert!(
            (closed_form_bias(EstimatorFamily::DIps, &inputs, &opts).unwrap() - 0.5).abs() < 1e-15
        );
    }

    #[test]
    fn naive_bias_formula_variants() {
        let e = m(&[1.0, 2.0]);
        let p = m(&[0.5, 0.5]);
        let inputs = ClosedFormInputs::new(&e, &p).with_observed_count(1.0);
        let domain = closed_form_bias(
            EstimatorFamily::Naive,
            &inputs,
            &AnalyticsOptions::default(),
        )
        .unwrap();
        // (1/2)|Σ(1 − 2·0.5)e| = 0
        assert_eq!(domain, 0.0);
        let table = closed_form_bias(
            EstimatorFamily::Naive,
            &inputs,
            &AnalyticsOptions {
                naive_bias_formula: NaiveBiasFormula::ObservedNormalized,
                ..Default::default()
            },
        )
        .unwrap();
        // (1/1)|Σ(1−0.5)e| = 1.5
        assert!((table - 1.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_variance_examples() {
        let opts = AnalyticsOptions::default();
        // IPS worked example → 1.25
        let e = m(&[1.0, 2.0]);
        let p = m(&[0.5, 0.5]);
        let inputs = ClosedFormInputs::new(&e, &p).with_p_hat(&p);
        assert!(
            (closed_form_variance(EstimatorFamily::Ips, &inputs, &opts).unwrap() - 1.25).abs()
                < 1e-15
        );

        // deterministic observation → zero variance for every family
        let ones = m(&[1.0, 1.0]);
        let e_hat = m(&[0.3, 0.4]);
        let alpha = m(&[0.5, 0.5]);
        let id = ShapingFunction::identity();
        let inputs = ClosedFormInputs::new(&e, &ones)
            .with_p_hat(&ones)
            .with_e_hat(&e_hat)
            .with_observed_count(2.0)
            .with_shaping(&id)
            .with_alpha(&alpha);
        for family in [
            EstimatorFamily::Naive,
            EstimatorFamily::Eib,
            EstimatorFamily::Ips,
            EstimatorFamily::Dr,
            EstimatorFamily::DIps,
            EstimatorFamily::DDr,
        ] {
            assert_eq!(closed_form_variance(family, &inputs, &opts).unwrap(), 0.0);
        }

        // zero errors → zero variance for the e-weighted families
        let zeros = m(&[0.0, 0.0]);
        let p = m(&[0.5, 0.5]);
        let inputs = ClosedFormInputs::new(&zeros, &p)
            .with_p_hat(&p)
            .with_observed_count(1.0)
            .with_shaping(&id)
            .with_alpha(&alpha);
        for family in [
            EstimatorFamily::Naive,
            EstimatorFamily::Ips,
            EstimatorFamily::DIps,
        ] {
            assert_eq!(closed_form_variance(family, &inputs, &opts).unwrap(), 0.0);
        }
    }

    #[test]
    fn ips_variance_blow_up_by_decade() {
        // p̂ = p = 10^−k, e ≡ 1: variance grows by ~10 per decade
        let opts = AnalyticsOptions::default();
        let mut prev = None;
        for k in 2..=7 {
            let p_val = 10f64.powi(-k);
            let e = m(&[1.0]);
            let p = m(&[p_val]);
            let inputs = ClosedFormInputs::new(&e, &p).with_p_hat(&p);
            let v = closed_form_variance(EstimatorFamily::Ips, &inputs, &opts).unwrap();
            if let Some(prev) = prev {
                let ratio: f64 = v / prev;
                assert!((ratio - 10.0).abs() < 0.5, "k={k}: ratio {ratio}");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn tail_bound_examples() {
        let opts = AnalyticsOptions::default();
        let id = ShapingFunction::identity();
        let alpha_zero = m(&[0.0, 0.0]); // f^0 ≡ 1
        let p = m(&[0.5, 0.5]);

        let zeros = m(&[0.0, 0.0]);
        assert_eq!(
            tail_bound(
                EstimatorFamily::DIps,
                &zeros,
                &p,
                &id,
                &alpha_zero,
                0.05,
                &opts
            )
            .unwrap(),
            0.0
        );

        let e = m(&[1.0, 2.0]);
        let got = tail_bound(EstimatorFamily::DIps, &e, &p, &id, &alpha_zero, 0.05, &opts).unwrap();
        let expect = (40f64.ln() * 5.0 / 8.0).sqrt();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

        // monotone in ρ
        let looser =
            tail_bound(EstimatorFamily::DIps, &e, &p, &id, &alpha_zero, 0.9, &opts).unwrap();
        assert!(looser < got);

        // the linear-denominator variant is larger by sqrt(|𝒟|)
        let linear = tail_bound(
            EstimatorFamily::DDr,
            &e,
            &p,
            &id,
            &alpha_zero,
            0.05,
            &AnalyticsOptions {
                tail_denominator: TailDenominator::CellCount,
                ..Default::default()
            },
        )
        .unwrap();
        let squared =
            tail_bound(EstimatorFamily::DDr, &e, &p, &id, &alpha_zero, 0.05, &opts).unwrap();
        assert!((linear / squared - 2f64.sqrt()).abs() < 1e-12);

        assert!(tail_bound(EstimatorFamily::DIps, &e, &p, &id, &alpha_zero, 0.0, &opts).is_err());
        assert!(tail_bound(EstimatorFamily::DIps, &e, &p, &id, &alpha_zero, 1.0, &opts).is_err());
        assert!(tail_bound(EstimatorFamily::Ips, &e, &p, &id, &alpha_zero, 0.5, &opts).is_err());
    }

    #[test]
    fn generalization_bound_examples() {
        let id = ShapingFunction::identity();
        let e_minus = m(&[0.2, 0.1]);
        let e_plus = m(&[1.0, 2.0]);
        let p = m(&[0.5, 0.5]);
        let alpha = m(&[1.0, 1.0]);

        // |ℋ| = 1: variance term equals the tail bound
        let report = generalization_bound(
            EstimatorFamily::DIps,
            0.3,
            &e_minus,
            &e_plus,
            &p,
            &p,
            &id,
            &alpha,
            0.05,
            1,
        )
        .unwrap();
        assert_eq!(report.variance_term, report.tail_bound);
        // α = 1, p̂ = p, identity shaping: h_B ≡ 0
        assert_eq!(report.bias_term, 0.0);
        assert!(
            (report.generalization_bound
                - (report.point_estimate + report.bias_term + report.variance_term))
                .abs()
                < 1e-15
        );

        // doubling |ℋ| scales the variance term by sqrt(ln(4/ρ)/ln(2/ρ))
        let doubled = generalization_bound(
            EstimatorFamily::DIps,
            0.3,
            &e_minus,
            &e_plus,
            &p,
            &p,
            &id,
            &alpha,
            0.05,
            2,
        )
        .unwrap();
        let expect_ratio = ((4.0 / 0.05f64).ln() / (2.0 / 0.05f64).ln()).sqrt();
        assert!((doubled.variance_term / report.variance_term - expect_ratio).abs() < 1e-12);

        assert!(generalization_bound(
            EstimatorFamily::DIps,
            0.3,
            &e_minus,
            &e_plus,
            &p,
            &p,
            &id,
            &alpha,
            0.05,
            0
        )
        .is_err());
    }

    #[test]
    fn regularizer_analysis_examples() {
        // uncorrelated: reg deviations orthogonal to est deviations
        let est = [1.0, 2.0, 1.0, 2.0];
        let reg = [3.0, 3.0, 5.0, 5.0];
        let r = regularizer_analysis(&est, &reg).unwrap();
        assert_eq!(r.cov, 0.0);
        assert_eq!(r.lambda_opt, 0.0);
        assert!(!r.reducible);

        // two-sample hand example: cov = −0.5, var = 0.25 ⇒ λ = 2
        let d = 0.5f64.sqrt();
        let c = 0.125f64.sqrt();
        let r = regularizer_analysis(&[-d, d], &[c, -c]).unwrap();
        assert!((r.cov + 0.5).abs() < 1e-15);
        assert!((r.var_reg - 0.25).abs() < 1e-15);
        assert!((r.lambda_opt - 2.0).abs() < 1e-12);
        assert!((r.lambda_opt - (-r.cov / r.var_reg)).abs() < 1e-12);
        assert!(r.reducible);

        // positively correlated: not reducible
        let r = regularizer_analysis(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.cov > 0.0);
        assert!(!r.reducible);

        // degenerate cases
        assert!(regularizer_analysis(&[1.0], &[1.0]).is_err());
        assert!(regularizer_analysis(&[1.0, 2.0], &[1.0]).is_err());
        let r = regularizer_analysis(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.lambda_opt, 0.0);
    }

    #[test]
    fn monotonicity_in_alpha_at_accurate_propensities() {
        for s in ShapingFunction::builtins() {
            for pk in 1..=9 {
                let p = pk as f64 / 10.0;
                let mut prev_b = f64::INFINITY;
                let mut prev_v = f64::NEG_INFINITY;
                for ak in 0..=100 {
                    let a = ak as f64 / 100.0;
                    let hb = h_b(&s, p, p, a).unwrap();
                    let hv = h_v(&s, p, p, a).unwrap();
                    assert!(hb < prev_b, "{} p={p} alpha={a}", s.label());
                    assert!(hv > prev_v, "{} p={p} alpha={a}", s.label());
                    prev_b = hb;
                    prev_v = hv;
                }
            }
        }
    }

    #[test]
    fn report_serializes_with_expected_field_names() {
        let e = m(&[1.0, 2.0]);
        let p = m(&[0.5, 0.5]);
        let inputs = ClosedFormInputs::new(&e, &p).with_p_hat(&p);
        let report =
            bias_variance_report(EstimatorFamily::Ips, &inputs, &AnalyticsOptions::default())
                .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "estimator",
            "bias",
            "variance",
            "per_cell_bias_factor",
            "per_cell_variance_factor",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["estimator"], "ips");
    }
}
