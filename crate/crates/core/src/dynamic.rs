//! Per-cell bias-variance joint optimization: choosing the exponent α.
//!
//! For one cell with accurate propensities the objective is
//!
//! ```text
//! minimize over α ∈ [0,1]:   w1·E_B(h_B(α)) + w2·E_V(h_V(α))
//! ```
//!
//! where E_B/E_V are penalty metrics applied to the determining factors.
//! With identity metrics the minimizer has the closed form
//!
//! ```text
//! α_opt = clamp( ln(2(w2/w1)(1−p)) / ln(f(p)), 0, 1 )
//! ```
//!
//! (p = 1 maps to 1 by continuity). Other metrics route to a seeded
//! golden-section search. Either way, h_V at the optimum is uniformly capped
//! by E_V⁻¹(w1·E_B(1)/w2 + E_V(0.25)) — w1/w2 + 0.25 for identity metrics —
//! which is what keeps the dynamic estimators' variances bounded.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{h_b, h_v};
use crate::matrix::LabeledMatrix;
use crate::shaping::ShapingFunction;
use crate::{Error, Result};

/// Penalty metric applied to a determining factor inside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMetric {
    #[default]
    Identity,
    Square,
    #[serde(rename = "logcosh")]
    LogCosh,
}

impl PenaltyMetric {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Square => x * x,
            Self::LogCosh => x.cosh().ln(),
        }
    }

    /// Inverse on the nonnegative branch.
    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::Square => y.sqrt(),
            Self::LogCosh => y.exp().acosh(),
        }
    }
}

/// Weights and penalty metrics of the per-cell objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObjective")]
pub struct JointObjective {
    /// Bias weight w1 > 0.
    pub w1: f64,
    /// Variance weight w2 > 0.
    pub w2: f64,
    pub bias_metric: PenaltyMetric,
    pub variance_metric: PenaltyMetric,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    w1: f64,
    w2: f64,
    #[serde(default)]
    bias_metric: PenaltyMetric,
    #[serde(default)]
    variance_metric: PenaltyMetric,
}

impl TryFrom<RawObjective> for JointObjective {
    type Error = Error;
    fn try_from(raw: RawObjective) -> Result<Self> {
        JointObjective::new(raw.w1, raw.w2, raw.bias_metric, raw.variance_metric)
    }
}

impl JointObjective {
    pub fn new(
        w1: f64,
        w2: f64,
        bias_metric: PenaltyMetric,
        variance_metric: PenaltyMetric,
    ) -> Result<Self> {
        if !w1.is_finite() || w1 <= 0.0 {
            return Err(Error::domain("bias weight w1", w1));
        }
        if !w2.is_finite() || w2 <= 0.0 {
            return Err(Error::domain("variance weight w2", w2));
        }
        Ok(Self {
            w1,
            w2,
            bias_metric,
            variance_metric,
        })
    }

    /// Identity metrics with the given weights.
    pub fn identity(w1: f64, w2: f64) -> Result<Self> {
        Self::new(w1, w2, PenaltyMetric::Identity, PenaltyMetric::Identity)
    }

    pub fn has_identity_metrics(&self) -> bool {
        self.bias_metric == PenaltyMetric::Identity
            && self.variance_metric == PenaltyMetric::Identity
    }
}

/// Objective value for one cell: w1·E_B(h_B) + w2·E_V(h_V).
pub fn objective_value(
    obj: &JointObjective,
    shaping: &ShapingFunction,
    p_hat: f64,
    p_true: f64,
    alpha: f64,
) -> Result<f64> {
    let hb = h_b(shaping, p_hat, p_true, alpha)?;
    let hv = h_v(shaping, p_hat, p_true, alpha)?;
    Ok(obj.w1 * obj.bias_metric.apply(hb) + obj.w2 * obj.variance_metric.apply(hv))
}

/// Closed-form minimizer under accurate propensities and identity metrics.
///
/// p = 1 returns 1 by continuity: the log ratio diverges to +∞ there.
pub fn alpha_opt_closed_form(
    obj: &JointObjective,
    shaping: &ShapingFunction,
    p: f64,
) -> Result<f64> {
    if !obj.has_identity_metrics() {
        return Err(Error::UnsupportedMetric(
            "closed-form alpha requires identity bias and variance metrics; use alpha_opt_numerical"
                .to_string(),
        ));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain("propensity p", p));
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let f = shaping.eval(p)?;
    let raw = (2.0 * (obj.w2 / obj.w1) * (1.0 - p)).ln() / f.ln();
    Ok(raw.clamp(0.0, 1.0))
}

const SEED_GRID: usize = 101;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Numerical minimizer over α ∈ [0, 1]: a 101-point grid scan brackets the
/// minimum, then golden-section search refines it to `tolerance`.
///
/// Works for any penalty metric and does not assume p̂ = p. Non-identity
/// objectives are only known unimodal near the identity case, hence the grid
/// seeding.
pub fn alpha_opt_numerical(
    obj: &JointObjective,
    shaping: &ShapingFunction,
    p_hat: f64,
    p_true: f64,
    tolerance: f64,
) -> Result<f64> {
    if !tolerance.is_finite() || tolerance <= 0.0 {
        return Err(Error::domain("tolerance", tolerance));
    }
    let eval = |alpha: f64| -> Result<f64> {
        let v = objective_value(obj, shaping, p_hat, p_true, alpha)?;
        if !v.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "objective is non-finite at alpha = {alpha} (p_hat = {p_hat}, p_true = {p_true})"
            )));
        }
        Ok(v)
    };

    let mut best_idx = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..SEED_GRID {
        let alpha = i as f64 / (SEED_GRID - 1) as f64;
        let v = eval(alpha)?;
        if v < best_val {
            best_val = v;
            best_idx = i;
        }
    }
    let step = 1.0 / (SEED_GRID - 1) as f64;
    let mut a = (best_idx as f64 * step - step).max(0.0);
    let mut b = (best_idx as f64 * step + step).min(1.0);

    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while b - a > tolerance {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Per-cell α matrix from an estimated propensity matrix.
///
/// The theory's premise treats p̂ as accurate, so p̂ is plugged in for the
/// true propensity either way; `assume_accurate` selects the closed form
/// (identity metrics only) versus the numerical search. Cells with p̂ = 1
/// map to α = 1 by continuity. To see what a schedule costs when p̂ ≠ p,
/// evaluate the resulting bias/variance through the analytics module with
/// the real p.
pub fn alpha_schedule(
    obj: &JointObjective,
    shaping: &ShapingFunction,
    p_hat: &LabeledMatrix,
    assume_accurate: bool,
) -> Result<LabeledMatrix> {
    p_hat.check_propensity()?;
    let closed = assume_accurate && obj.has_identity_metrics();
    let cell = |p: f64| -> Result<f64> {
        if p == 1.0 {
            return Ok(1.0);
        }
        if closed {
            alpha_opt_closed_form(obj, shaping, p)
        } else {
            alpha_opt_numerical(obj, shaping, p, p, 1e-9)
        }
    };
    let values: Vec<f64> = if closed {
        p_hat
            .values()
            .iter()
            .map(|&p| cell(p))
            .collect::<Result<_>>()?
    } else {
        // Deterministic despite the parallelism: cells are independent and
        // collected in index order.
        p_hat
            .values()
            .par_iter()
            .map(|&p| cell(p))
            .collect::<Result<_>>()?
    };
    LabeledMatrix::new(p_hat.rows(), p_hat.cols(), values)
}

/// Uniform cap on h_V at the per-cell optimum, over all propensities:
/// E_V⁻¹(w1·E_B(1)/w2 + E_V(0.25)). Identity metrics give w1/w2 + 0.25.
pub fn variance_cap(obj: &JointObjective) -> Result<f64> {
    let arg = obj.w1 * obj.bias_metric.apply(1.0) / obj.w2 + obj.variance_metric.apply(0.25);
    Ok(obj.variance_metric.inverse(arg))
}
