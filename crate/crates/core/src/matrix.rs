//! Dense matrices, observation masks, error construction, and the general
//! coefficient-form estimator.
//!
//! Everything is dense, row-major, double precision: the toolkit targets
//! desk-scale problems (M, N up to a few thousand) where sparse storage buys
//! nothing and exact reproducibility matters. All types are immutable after
//! construction and safe to share across threads.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense M×N matrix of finite doubles.
///
/// One container plays every matrix role in the toolkit: true labels,
/// predictions, prediction errors, imputed errors, and propensities. The
/// role is fixed by the constructor used — [`LabeledMatrix::new_propensity`]
/// additionally requires every cell in (0, 1], [`LabeledMatrix::new_binary`]
/// requires cells in {0, 1} — and does not change the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct LabeledMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawMatrix> for LabeledMatrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        LabeledMatrix::new(raw.rows, raw.cols, raw.values)
    }
}

impl From<LabeledMatrix> for RawMatrix {
    fn from(m: LabeledMatrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            values: m.values,
        }
    }
}

impl LabeledMatrix {
    /// General-role constructor: requires a nonempty shape and finite cells.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidSpec(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "matrix".to_string(),
                row: idx / cols,
                col: idx % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    /// Propensity-role constructor: every cell must lie in (0, 1].
    ///
    /// A cell of exactly 0 is rejected: zero-propensity cells are studied
    /// only as a limit, never realized.
    pub fn new_propensity(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::new(rows, cols, values)?;
        for (idx, &p) in m.values.iter().enumerate() {
            if p <= 0.0 || p > 1.0 {
                return Err(Error::domain(
                    format!("propensity at cell ({}, {})", idx / m.cols, idx % m.cols),
                    p,
                ));
            }
        }
        Ok(m)
    }

    /// Binarized-label constructor: every cell must be exactly 0 or 1.
    pub fn new_binary(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::new(rows, cols, values)?;
        for (idx, &y) in m.values.iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(Error::domain(
                    format!("binary label at cell ({}, {})", idx / m.cols, idx % m.cols),
                    y,
                ));
            }
        }
        Ok(m)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for u in 0..rows {
            for i in 0..cols {
                values.push(f(u, i));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total cell count |𝒟| = M·N.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Row-major cell values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &LabeledMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_same_shape(&self, other: &LabeledMatrix) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                got_rows: other.rows,
                got_cols: other.cols,
            })
        }
    }

    /// Validates the propensity-role invariant on an existing matrix.
    pub fn check_propensity(&self) -> Result<()> {
        for (idx, &p) in self.values.iter().enumerate() {
            if p <= 0.0 || p > 1.0 {
                return Err(Error::domain(
                    format!(
                        "propensity at cell ({}, {})",
                        idx / self.cols,
                        idx % self.cols
                    ),
                    p,
                ));
            }
        }
        Ok(())
    }

    /// Cells required to lie in [0, 1]; used for per-cell α matrices.
    pub fn check_unit_interval(&self, what: &str) -> Result<()> {
        for (idx, &a) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::domain(
                    format!("{what} at cell ({}, {})", idx / self.cols, idx % self.cols),
                    a,
                ));
            }
        }
        Ok(())
    }

    /// Cellwise map; the result passes the general-role invariants.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Binary realization of the observation indicators o_{u,i}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMask", into = "RawMask")]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    observed_count: usize,
}

#[derive(Serialize, Deserialize)]
struct RawMask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl TryFrom<RawMask> for ObservationMask {
    type Error = Error;
    fn try_from(raw: RawMask) -> Result<Self> {
        ObservationMask::new(raw.rows, raw.cols, raw.bits)
    }
}

impl From<ObservationMask> for RawMask {
    fn from(m: ObservationMask) -> Self {
        RawMask {
            rows: m.rows,
            cols: m.cols,
            bits: m.bits,
        }
    }
}

impl ObservationMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if bits.len() != rows * cols {
            return Err(Error::InvalidSpec(format!(
                "expected {} bits for a {rows}x{cols} mask, got {}",
                rows * cols,
                bits.len()
            )));
        }
        if let Some(idx) = bits.iter().position(|&b| b > 1) {
            return Err(Error::domain(
                format!("mask bit at cell ({}, {})", idx / cols, idx % cols),
                bits[idx] as f64,
            ));
        }
        let observed_count = bits.iter().filter(|&&b| b == 1).count();
        Ok(Self {
            rows,
            cols,
            bits,
            observed_count,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(rows * cols);
        for u in 0..rows {
            for i in 0..cols {
                bits.push(u8::from(f(u, i)));
            }
        }
        Self::new(rows, cols, bits)
    }

    pub fn all_ones(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![1; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// |𝒪|: number of observed cells.
    pub fn observed_count(&self) -> usize {
        self.observed_count
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col] == 1
    }

    /// Row-major bits as 0/1 bytes.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Row-major iterator over indicators as 0.0/1.0.
    pub fn indicators(&self) -> impl Iterator<Item = f64> + '_ {
        self.bits.iter().map(|&b| b as f64)
    }

    pub fn check_same_shape(&self, m: &LabeledMatrix) -> Result<()> {
        if self.rows == m.rows() && self.cols == m.cols() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                got_rows: m.rows(),
                got_cols: m.cols(),
            })
        }
    }
}

/// Which pointwise error function to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// |ŷ − y|
    Absolute,
    /// (ŷ − y)²
    Squared,
}

/// Error construction: the pointwise error kind plus the imputation
/// hyper-parameters. Imputed errors are ê = w·|ŷ − γ| or ê = w·(ŷ − γ)².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub kind: ErrorKind,
    /// Imputation scale w > 0.
    pub imputation_scale: f64,
    /// Imputation center γ.
    pub imputation_center: f64,
}

impl ErrorSpec {
    pub fn new(kind: ErrorKind, imputation_scale: f64, imputation_center: f64) -> Result<Self> {
        if !imputation_scale.is_finite() || imputation_scale <= 0.0 {
            return Err(Error::domain("imputation scale w", imputation_scale));
        }
        if !imputation_center.is_finite() {
            return Err(Error::domain("imputation center gamma", imputation_center));
        }
        Ok(Self {
            kind,
            imputation_scale,
            imputation_center,
        })
    }

    /// Squared error with w = 1, γ = 0.
    pub fn squared() -> Self {
        Self {
            kind: ErrorKind::Squared,
            imputation_scale: 1.0,
            imputation_center: 0.0,
        }
    }

    #[inline]
    fn apply(kind: ErrorKind, diff: f64) -> f64 {
        match kind {
            ErrorKind::Absolute => diff.abs(),
            ErrorKind::Squared => diff * diff,
        }
    }
}

/// Pointwise prediction error e_{u,i} = |ŷ − y| or (ŷ − y)².
pub fn pointwise_error(
    y_true: &LabeledMatrix,
    y_pred: &LabeledMatrix,
    spec: &ErrorSpec,
) -> Result<LabeledMatrix> {
    y_true.check_same_shape(y_pred)?;
    LabeledMatrix::new(
        y_true.rows(),
        y_true.cols(),
        y_true
            .values()
            .iter()
            .zip(y_pred.values())
            .map(|(&y, &yh)| ErrorSpec::apply(spec.kind, yh - y))
            .collect(),
    )
}

/// Imputed error ê_{u,i} = w·|ŷ − γ| or w·(ŷ − γ)².
pub fn imputed_error(y_pred: &LabeledMatrix, spec: &ErrorSpec) -> Result<LabeledMatrix> {
    LabeledMatrix::new(
        y_pred.rows(),
        y_pred.cols(),
        y_pred
            .values()
            .iter()
            .map(|&yh| {
                spec.imputation_scale * ErrorSpec::apply(spec.kind, yh - spec.imputation_center)
            })
            .collect(),
    )
}

/// Error deviation δ_{u,i} = e_{u,i} − ê_{u,i}.
pub fn error_deviation(e: &LabeledMatrix, e_hat: &LabeledMatrix) -> Result<LabeledMatrix> {
    e.check_same_shape(e_hat)?;
    LabeledMatrix::new(
        e.rows(),
        e.cols(),
        e.values()
            .iter()
            .zip(e_hat.values())
            .map(|(&a, &b)| a - b)
            .collect(),
    )
}

/// Coefficient function of the general estimator form: takes the observation
/// indicator o ∈ {0, 1} and the propensity estimate p̂ ∈ (0, 1].
pub type CoeffFn = Arc<dyn Fn(u8, f64) -> f64 + Send + Sync>;

/// General estimator-with-regularizer form:
///
/// ```text
/// L = (1/|𝒟|) Σ [f(o, p̂)·e + g(o, p̂)·ê]  +  λ · (1/|𝒟|) Σ h(o, p̂)
/// ```
///
/// with the structural constraint f(0, p̂) = 0 (missing cells contribute no
/// direct error term). The constraint is checked on a propensity sample grid
/// at construction.
#[derive(Clone)]
pub struct GeneralEstimatorForm {
    f_coeff: CoeffFn,
    g_coeff: CoeffFn,
    h_coeff: CoeffFn,
    reg_weight: f64,
}

impl std::fmt::Debug for GeneralEstimatorForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralEstimatorForm")
            .field("reg_weight", &self.reg_weight)
            .finish_non_exhaustive()
    }
}

impl GeneralEstimatorForm {
    /// Builds the form, verifying f(0, p̂) = 0 on a 64-point grid over (0, 1].
    pub fn new(
        f_coeff: CoeffFn,
        g_coeff: CoeffFn,
        h_coeff: CoeffFn,
        reg_weight: f64,
    ) -> Result<Self> {
        if !reg_weight.is_finite() || reg_weight < 0.0 {
            return Err(Error::domain("regularizer weight lambda", reg_weight));
        }
        for k in 1..=64 {
            let p = k as f64 / 64.0;
            let v = f_coeff(0, p);
            if v != 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "f_coeff(0, {p}) = {v}, must be 0 for unobserved cells"
                )));
            }
        }
        Ok(Self {
            f_coeff,
            g_coeff,
            h_coeff,
            reg_weight,
        })
    }

    pub fn f_coeff(&self, o: u8, p_hat: f64) -> f64 {
        (self.f_coeff)(o, p_hat)
    }

    pub fn g_coeff(&self, o: u8, p_hat: f64) -> f64 {
        (self.g_coeff)(o, p_hat)
    }

    pub fn h_coeff(&self, o: u8, p_hat: f64) -> f64 {
        (self.h_coeff)(o, p_hat)
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg_weight
    }
}
