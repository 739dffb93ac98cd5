//! Shaping functions f(p̂) for the dynamic estimators.
//!
//! A shaping function remaps the estimated propensity before it is used as
//! an inverse weight: the dynamic estimators weight observed cells by
//! `o / f^α(p̂)` instead of `o / p̂`. Exponent α = 1 with the identity shape
//! recovers the raw inverse-propensity weight; α = 0 removes the weight
//! entirely. Valid shapes must satisfy two design principles:
//!
//! - **isotonic propensity**: f is monotonically increasing with f(0⁺) → 0,
//!   f(1) = 1, and f(p̂) ≥ p̂ (identity attains equality);
//! - **same order**: p̂ / f(p̂) converges to a positive constant C as p̂ → 0,
//!   so shaped weights stay within a constant factor of the raw ones.
//!
//! Built-in shapes: identity, sin(p̂)/sin(1), log(p̂+1)/log(2), and
//! tanh(p̂)/tanh(1).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid size used for the monotonicity and dominance checks.
const VALIDATION_GRID: usize = 10_000;
/// Probe point for the f(0⁺) → 0 boundary check; f is never evaluated at 0.
const BOUNDARY_PROBE: f64 = 1e-12;
/// Shrinking probe points for the same-order limit.
const SAME_ORDER_PROBES: [f64; 3] = [1e-3, 1e-5, 1e-7];
/// Relative-change tolerance for declaring the same-order limit converged.
const SAME_ORDER_TOL: f64 = 1e-3;

/// Built-in shaping families plus user-supplied custom functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingKind {
    Identity,
    Sine,
    Log1p,
    Tanh,
    Custom,
}

/// A validated shaping function.
#[derive(Clone)]
pub struct ShapingFunction {
    kind: ShapingKind,
    label: String,
    custom_eval: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    same_order_constant: f64,
}

impl std::fmt::Debug for ShapingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShapingFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .field("same_order_constant", &self.same_order_constant)
            .finish()
    }
}

/// Numerical check of the two design principles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignPrincipleReport {
    /// f strictly increases along the validation grid.
    pub isotonic: bool,
    /// f(0⁺) → 0 and f(1) = 1 within 1e−12.
    pub boundary: bool,
    /// f(p̂) ≥ p̂ on the grid.
    pub dominates_identity: bool,
    /// p̂/f(p̂) converged at the shrinking probe points.
    pub same_order: bool,
    /// Extrapolated limit of p̂/f(p̂).
    #[serde(rename = "estimated_C")]
    pub estimated_c: f64,
}

impl DesignPrincipleReport {
    pub fn all_pass(&self) -> bool {
        self.isotonic && self.boundary && self.dominates_identity && self.same_order
    }
}

impl ShapingFunction {
    pub fn identity() -> Self {
        Self {
            kind: ShapingKind::Identity,
            label: "identity".to_string(),
            custom_eval: None,
            same_order_constant: 1.0,
        }
    }

    pub fn sine() -> Self {
        Self {
            kind: ShapingKind::Sine,
            label: "sine".to_string(),
            custom_eval: None,
            same_order_constant: 1.0_f64.sin(),
        }
    }

    pub fn log1p() -> Self {
        Self {
            kind: ShapingKind::Log1p,
            label: "log1p".to_string(),
            custom_eval: None,
            same_order_constant: std::f64::consts::LN_2,
        }
    }

    pub fn tanh() -> Self {
        Self {
            kind: ShapingKind::Tanh,
            label: "tanh".to_string(),
            custom_eval: None,
            same_order_constant: 1.0_f64.tanh(),
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 4] = ["identity", "sine", "log1p", "tanh"];

    pub fn builtins() -> Vec<Self> {
        vec![Self::identity(), Self::sine(), Self::log1p(), Self::tanh()]
    }

    /// Looks up a built-in by its config name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity()),
            "sine" => Ok(Self::sine()),
            "log1p" => Ok(Self::log1p()),
            "tanh" => Ok(Self::tanh()),
            other => Err(Error::InvalidConfig(format!(
                "unknown shaping '{other}' (expected one of identity, sine, log1p, tanh)"
            ))),
        }
    }

    pub fn from_kind(kind: ShapingKind) -> Result<Self> {
        match kind {
            ShapingKind::Identity => Ok(Self::identity()),
            ShapingKind::Sine => Ok(Self::sine()),
            ShapingKind::Log1p => Ok(Self::log1p()),
            ShapingKind::Tanh => Ok(Self::tanh()),
            ShapingKind::Custom => Err(Error::InvalidConfig(
                "custom shaping functions must be constructed with ShapingFunction::custom".into(),
            )),
        }
    }

    /// Wraps a user-supplied shape. Accepted only if it passes both design
    /// principles; the theory behind α selection presupposes them.
    pub fn custom(
        label: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let mut shaped = Self {
            kind: ShapingKind::Custom,
            label: label.into(),
            custom_eval: Some(Arc::new(eval)),
            same_order_constant: f64::NAN,
        };
        let report = shaped.validate_design_principles()?;
        if !report.all_pass() {
            return Err(Error::InvalidSpec(format!(
                "shaping '{}' violates the design principles: {report:?}",
                shaped.label
            )));
        }
        shaped.same_order_constant = report.estimated_c;
        Ok(shaped)
    }

    pub fn kind(&self) -> ShapingKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// The constant C = lim_{p̂→0} p̂/f(p̂). Analytic for built-ins,
    /// numerically estimated for custom shapes.
    pub fn same_order_constant(&self) -> f64 {
        self.same_order_constant
    }

    #[inline]
    fn eval_raw(&self, p_hat: f64) -> f64 {
        match self.kind {
            ShapingKind::Identity => p_hat,
            ShapingKind::Sine => p_hat.sin() / 1.0_f64.sin(),
            ShapingKind::Log1p => p_hat.ln_1p() / std::f64::consts::LN_2,
            ShapingKind::Tanh => p_hat.tanh() / 1.0_f64.tanh(),
            ShapingKind::Custom => (self.custom_eval.as_ref().expect("custom eval"))(p_hat),
        }
    }

    /// f(p̂) for p̂ ∈ (0, 1].
    pub fn eval(&self, p_hat: f64) -> Result<f64> {
        if !(p_hat > 0.0 && p_hat <= 1.0) {
            return Err(Error::domain("shaping input p_hat", p_hat));
        }
        Ok(self.eval_raw(p_hat))
    }

    /// f^α(p̂) for p̂ ∈ (0, 1], α ∈ [0, 1].
    ///
    /// The α = 0 and α = 1 corners return exactly 1 and exactly f(p̂), so the
    /// dynamic estimators reduce bitwise to their static counterparts there.
    pub fn eval_alpha(&self, p_hat: f64, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::domain("shaping exponent alpha", alpha));
        }
        let f = self.eval(p_hat)?;
        Ok(Self::powered(f, alpha))
    }

    /// f^α given an already-evaluated f.
    #[inline]
    pub(crate) fn powered(f: f64, alpha: f64) -> f64 {
        if alpha == 0.0 {
            1.0
        } else if alpha == 1.0 {
            f
        } else {
            f.powf(alpha)
        }
    }

    /// Checks both design principles numerically and estimates C.
    ///
    /// Fails with an error (rather than a false flag) if the function
    /// evaluates non-finite anywhere on the probe grid.
    pub fn validate_design_principles(&self) -> Result<DesignPrincipleReport> {
        let grid_value = |p: f64| -> Result<f64> {
            let v = self.eval_raw(p);
            if !v.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "shaping '{}' evaluates non-finite at p_hat = {p}",
                    self.label
                )));
            }
            Ok(v)
        };

        let mut isotonic = true;
        let mut dominates_identity = true;
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=VALIDATION_GRID {
            let p = k as f64 / VALIDATION_GRID as f64;
            let v = grid_value(p)?;
            if v <= prev {
                isotonic = false;
            }
            if v < p - 1e-12 {
                dominates_identity = false;
            }
            prev = v;
        }

        let near_zero = grid_value(BOUNDARY_PROBE)?;
        let at_one = grid_value(1.0)?;
        let boundary = near_zero.abs() <= 1e-6 && (at_one - 1.0).abs() <= 1e-12;

        // Same-order limit: p̂/f(p̂) at shrinking probes must settle to a
        // positive constant within the relative-change tolerance.
        let mut ratios = [0.0f64; 3];
        for (slot, &p) in ratios.iter_mut().zip(SAME_ORDER_PROBES.iter()) {
            let f = grid_value(p)?;
            *slot = p / f;
        }
        let estimated_c = ratios[2];
        let rel_change = (ratios[2] - ratios[1]).abs() / ratios[2].abs().max(f64::MIN_POSITIVE);
        let same_order =
            estimated_c.is_finite() && estimated_c > 0.0 && rel_change <= SAME_ORDER_TOL;

        Ok(DesignPrincipleReport {
            isotonic,
            boundary,
            dominates_identity,
            same_order,
            estimated_c,
        })
    }
}

/// Free-function form of [`ShapingFunction::eval`].
pub fn eval_f(shaping: &ShapingFunction, p_hat: f64) -> Result<f64> {
    shaping.eval(p_hat)
}

/// Free-function form of [`ShapingFunction::eval_alpha`].
pub fn eval_f_alpha(shaping: &ShapingFunction, p_hat: f64, alpha: f64) -> Result<f64> {
    shaping.eval_alpha(p_hat, alpha)
}

/// Free-function form of [`ShapingFunction::validate_design_principles`].
pub fn validate_design_principles(shaping: &ShapingFunction) -> Result<DesignPrincipleReport> {
    shaping.validate_design_principles()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let id = ShapingFunction::identity();
        assert_eq!(id.eval(0.5).unwrap(), 0.5);

        let lg = ShapingFunction::log1p();
        assert!((lg.eval(0.5).unwrap() - 0.584_962_500_721_156_2).abs() < 1e-12);

        let th = ShapingFunction::tanh();
        assert_eq!(th.eval(1.0).unwrap(), 1.0);

        assert!(id.eval(0.0).is_err());
        assert!(id.eval(1.5).is_err());
        assert!(id.eval(-0.1).is_err());
    }

    #[test]
    fn eval_alpha_examples() {
        for s in ShapingFunction::builtins() {
            assert_eq!(s.eval_alpha(0.3, 0.0).unwrap(), 1.0);
        }
        let id = ShapingFunction::identity();
        assert!((id.eval_alpha(0.25, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let lg = ShapingFunction::log1p();
        assert_eq!(lg.eval_alpha(0.5, 1.0).unwrap(), lg.eval(0.5).unwrap());
        assert!(id.eval_alpha(0.5, 1.5).is_err());
        assert!(id.eval_alpha(0.5, -0.1).is_err());
    }

    #[test]
    fn normalization_at_one() {
        for s in ShapingFunction::builtins() {
            assert!((s.eval(1.0).unwrap() - 1.0).abs() < 1e-12, "{}", s.label());
        }
    }

    #[test]
    fn builtin_design_principles_pass() {
        for s in ShapingFunction::builtins() {
            let report = s.validate_design_principles().unwrap();
            assert!(report.all_pass(), "{}: {report:?}", s.label());
        }
    }

    #[test]
    fn same_order_constants_match_analysis() {
        let expected = [
            ("identity", 1.0),
            ("sine", 1.0_f64.sin()),
            ("log1p", std::f64::consts::LN_2),
            ("tanh", 1.0_f64.tanh()),
        ];
        for (name, c) in expected {
            let s = ShapingFunction::from_name(name).unwrap();
            let report = s.validate_design_principles().unwrap();
            assert!(
                (report.estimated_c - c).abs() < 1e-3,
                "{name}: estimated {} vs {c}",
                report.estimated_c
            );
            assert!((s.same_order_constant() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn dominance_and_range_on_grid() {
        for s in ShapingFunction::builtins() {
            for k in 1..=1000 {
                let p = k as f64 / 1000.0;
                let f = s.eval(p).unwrap();
                assert!(f >= p - 1e-12, "{}: f({p}) = {f} < p", s.label());
                assert!(f <= 1.0 + 1e-12, "{}: f({p}) = {f} > 1", s.label());
            }
        }
    }

    #[test]
    fn f_alpha_decreasing_in_alpha_for_interior_p() {
        for s in ShapingFunction::builtins() {
            let p = 0.3;
            let mut prev = f64::INFINITY;
            for a in 0..=10 {
                let alpha = a as f64 / 10.0;
                let v = s.eval_alpha(p, alpha).unwrap();
                assert!(v < prev, "{}: f^{alpha}({p}) did not decrease", s.label());
                prev = v;
            }
        }
    }

    #[test]
    fn custom_shaping_validated() {
        // sqrt satisfies isotonic + boundary + dominance but fails same
        // order: p/sqrt(p) = sqrt(p) → 0, not a positive constant.
        let rejected = ShapingFunction::custom("sqrt", |p: f64| p.sqrt());
        assert!(rejected.is_err());

        // 1.5p − 0.5p² keeps all four principles with C = 1/1.5.
        let accepted = ShapingFunction::custom("quadratic", |p: f64| 1.5 * p - 0.5 * p * p);
        assert!(accepted.is_ok());
        let accepted = accepted.unwrap();
        assert!((accepted.same_order_constant() - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(ShapingFunction::from_name("linear").is_err());
    }
}
