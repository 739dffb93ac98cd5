//! Matrix-factorization training with estimator losses.
//!
//! The base model predicts ŷ_{u,i} = sigmoid(uᵀv + b_u + b_i + b₀); the
//! training loss is any estimator family evaluated on the per-cell errors
//! e = (ŷ − y)² and imputed errors ê = w(ŷ − γ)². Because every estimator is
//! a fixed-coefficient sum c_e·e + c_ê·ê per cell (the coefficients depend
//! only on the mask, propensities, and α — never on Ŷ), training reduces to
//! SGD with precomputed per-cell weights, and the dynamic/static corner
//! equivalences hold step for step.
//!
//! For the dynamic families α is computed once from p̂ before training and
//! held fixed: the schedule depends only on p̂ and the objective weights,
//! neither of which changes while the prediction model trains. Joint
//! learning keeps that static schedule too.
//!
//! Training is single-threaded and deterministic: (seed, config, data)
//! fully determine the final model.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamic::{alpha_schedule, JointObjective};
use crate::estimators::{EstimatorFamily, SnipsNormalizer};
use crate::matrix::{ErrorKind, ErrorSpec, LabeledMatrix, ObservationMask};
use crate::numeric::{sigmoid, KahanSum};
use crate::propensity::PropensityModel;
use crate::shaping::ShapingFunction;
use crate::simulation::replica_rng;
use crate::{Error, Result};

/// Default hyper-parameter tuning grids for sweeps.
pub const LEARNING_RATE_GRID: [f64; 4] = [0.001, 0.005, 0.01, 0.05];
pub const WEIGHT_DECAY_GRID: [f64; 7] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Matrix-factorization model with user/item biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMfModel")]
pub struct MfModel {
    rows: usize,
    cols: usize,
    latent_dim: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    global_bias: f64,
}

#[derive(Deserialize)]
struct RawMfModel {
    rows: usize,
    cols: usize,
    latent_dim: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    global_bias: f64,
}

impl TryFrom<RawMfModel> for MfModel {
    type Error = Error;
    fn try_from(raw: RawMfModel) -> Result<Self> {
        let m = MfModel {
            rows: raw.rows,
            cols: raw.cols,
            latent_dim: raw.latent_dim,
            user_factors: raw.user_factors,
            item_factors: raw.item_factors,
            user_bias: raw.user_bias,
            item_bias: raw.item_bias,
            global_bias: raw.global_bias,
        };
        m.check_consistent()?;
        Ok(m)
    }
}

impl MfModel {
    fn check_consistent(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidSpec(
                "model dimensions must be positive".into(),
            ));
        }
        if self.user_factors.len() != self.rows * self.latent_dim
            || self.item_factors.len() != self.cols * self.latent_dim
            || self.user_bias.len() != self.rows
            || self.item_bias.len() != self.cols
        {
            return Err(Error::InvalidSpec(
                "model parameter lengths inconsistent".into(),
            ));
        }
        if !self.params_finite() {
            return Err(Error::InvalidSpec("model parameters must be finite".into()));
        }
        Ok(())
    }

    fn init(rows: usize, cols: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let scale = 0.1 / (latent_dim as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
                .collect()
        };
        MfModel {
            rows,
            cols,
            latent_dim,
            user_factors: sample(rows * latent_dim),
            item_factors: sample(cols * latent_dim),
            user_bias: vec![0.0; rows],
            item_bias: vec![0.0; cols],
            global_bias: 0.0,
        }
    }

    /// Fresh model with small random factors, seeded for reproducibility.
    pub fn random(rows: usize, cols: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 || latent_dim == 0 {
            return Err(Error::InvalidSpec(
                "model dimensions must be positive".into(),
            ));
        }
        let mut rng = replica_rng(seed, 0);
        Ok(Self::init(rows, cols, latent_dim, &mut rng))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Pre-sigmoid score.
    pub fn raw_score(&self, u: usize, i: usize) -> f64 {
        let k = self.latent_dim;
        let mut dot = 0.0;
        for f in 0..k {
            dot += self.user_factors[u * k + f] * self.item_factors[i * k + f];
        }
        dot + self.user_bias[u] + self.item_bias[i] + self.global_bias
    }

    /// ŷ_{u,i} = sigmoid(raw score).
    pub fn predict(&self, u: usize, i: usize) -> f64 {
        sigmoid(self.raw_score(u, i))
    }

    /// Full prediction matrix.
    pub fn predictions(&self) -> Result<LabeledMatrix> {
        LabeledMatrix::from_fn(self.rows, self.cols, |u, i| self.predict(u, i))
    }

    fn params_finite(&self) -> bool {
        self.global_bias.is_finite()
            && self.user_factors.iter().all(|v| v.is_finite())
            && self.item_factors.iter().all(|v| v.is_finite())
            && self.user_bias.iter().all(|v| v.is_finite())
            && self.item_bias.iter().all(|v| v.is_finite())
    }

    fn param_count(&self) -> usize {
        self.user_factors.len() + self.item_factors.len() + self.rows + self.cols + 1
    }

    fn param(&self, idx: usize) -> f64 {
        let uf = self.user_factors.len();
        let it = self.item_factors.len();
        if idx < uf {
            self.user_factors[idx]
        } else if idx < uf + it {
            self.item_factors[idx - uf]
        } else if idx < uf + it + self.rows {
            self.user_bias[idx - uf - it]
        } else if idx < uf + it + self.rows + self.cols {
            self.item_bias[idx - uf - it - self.rows]
        } else {
            self.global_bias
        }
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let uf = self.user_factors.len();
        let it = self.item_factors.len();
        if idx < uf {
            &mut self.user_factors[idx]
        } else if idx < uf + it {
            &mut self.item_factors[idx - uf]
        } else if idx < uf + it + self.rows {
            &mut self.user_bias[idx - uf - it]
        } else if idx < uf + it + self.rows + self.cols {
            &mut self.item_bias[idx - uf - it - self.rows]
        } else {
            &mut self.global_bias
        }
    }
}

/// Optimizer settings: plain SGD with weight decay on the latent factors
/// and user/item biases (the global bias is left undecayed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Cells per mini-batch, drawn uniformly from all of 𝒟 so imputation
    /// terms receive gradient mass.
    pub batch_size: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 1024,
            latent_dim: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::domain("learning rate", self.learning_rate));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::domain("weight decay", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidSpec(
                "epochs, batch_size, and latent_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which estimator to minimize and the pieces it needs.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub family: EstimatorFamily,
    /// Shaping function (dynamic families).
    pub shaping: Option<ShapingFunction>,
    /// Objective weights used to derive the static α schedule from p̂
    /// (dynamic families without an explicit override).
    pub objective: Option<JointObjective>,
    /// Fixed α matrix, bypassing the schedule; used for corner checks and
    /// diagnostics.
    pub alpha_override: Option<LabeledMatrix>,
    /// Imputation hyper-parameters. None means squared error with w = 1 and
    /// γ = the observed-label mean.
    pub imputation: Option<ErrorSpec>,
    pub snips_normalizer: SnipsNormalizer,
}

impl LossSpec {
    pub fn new(family: EstimatorFamily) -> Self {
        Self {
            family,
            shaping: None,
            objective: None,
            alpha_override: None,
            imputation: None,
            snips_normalizer: SnipsNormalizer::default(),
        }
    }

    pub fn with_shaping(mut self, shaping: ShapingFunction) -> Self {
        self.shaping = Some(shaping);
        self
    }

    pub fn with_objective(mut self, objective: JointObjective) -> Self {
        self.objective = Some(objective);
        self
    }

    pub fn with_alpha_override(mut self, alpha: LabeledMatrix) -> Self {
        self.alpha_override = Some(alpha);
        self
    }

    pub fn with_imputation(mut self, imputation: ErrorSpec) -> Self {
        self.imputation = Some(imputation);
        self
    }

    fn needs_propensities(&self) -> bool {
        matches!(
            self.family,
            EstimatorFamily::Ips
                | EstimatorFamily::Snips
                | EstimatorFamily::Dr
                | EstimatorFamily::DIps
                | EstimatorFamily::DDr
                | EstimatorFamily::DSnips
        )
    }

    /// Resolves the per-cell α matrix for dynamic families.
    pub fn resolve_alpha(&self, p_hat: Option<&LabeledMatrix>) -> Result<Option<LabeledMatrix>> {
        if !self.family.is_dynamic() {
            return Ok(None);
        }
        if let Some(alpha) = &self.alpha_override {
            return Ok(Some(alpha.clone()));
        }
        let shaping = self
            .shaping
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("dynamic loss requires a shaping function".into()))?;
        let objective = self.objective.as_ref().ok_or_else(|| {
            Error::InvalidSpec(
                "dynamic loss requires objective weights (or an alpha override)".into(),
            )
        })?;
        let p_hat =
            p_hat.ok_or_else(|| Error::InvalidSpec("dynamic loss requires propensities".into()))?;
        Ok(Some(alpha_schedule(objective, shaping, p_hat, true)?))
    }
}

/// Per-cell loss coefficients: loss = (1/|𝒟|) Σ [c_e·e(ŷ) + c_ê·ê(ŷ)].
/// They depend only on mask, p̂, and α, so they are computed once.
struct LossAssembly {
    c_e: Vec<f64>,
    c_ehat: Vec<f64>,
    err: ErrorSpec,
    /// Externally-supplied imputed errors (joint learning freezes these per
    /// epoch); when present, ê does not depend on the prediction model.
    external_e_hat: Option<LabeledMatrix>,
}

impl LossAssembly {
    fn build(
        loss: &LossSpec,
        mask: &ObservationMask,
        p_hat: Option<&LabeledMatrix>,
        alpha: Option<&LabeledMatrix>,
        err: ErrorSpec,
    ) -> Result<Self> {
        let n = mask.len();
        let total = n as f64;
        let mut c_e = vec![0.0; n];
        let mut c_ehat = vec![0.0; n];
        if loss.needs_propensities() {
            let p = p_hat.ok_or_else(|| {
                Error::InvalidSpec(format!("{} loss requires propensities", loss.family.name()))
            })?;
            mask.check_same_shape(p)?;
            p.check_propensity()?;
        }
        let p_of = |idx: usize| -> f64 { p_hat.expect("propensities checked").values()[idx] };
        let shaped_weight = |idx: usize| -> Result<f64> {
            let shaping = loss.shaping.as_ref().ok_or_else(|| {
                Error::InvalidSpec("dynamic loss requires a shaping function".into())
            })?;
            let alpha = alpha.ok_or_else(|| {
                Error::InvalidSpec("dynamic loss requires an alpha matrix".into())
            })?;
            let fa = ShapingFunction::powered(shaping.eval(p_of(idx))?, alpha.values()[idx]);
            Ok(1.0 / fa)
        };

        match loss.family {
            EstimatorFamily::Real => c_e.fill(1.0),
            EstimatorFamily::Naive => {
                if mask.observed_count() == 0 {
                    return Err(Error::EmptyObservation);
                }
                let scale = total / mask.observed_count() as f64;
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = scale * o;
                }
            }
            EstimatorFamily::Eib => {
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = o;
                    c_ehat[idx] = 1.0 - o;
                }
            }
            EstimatorFamily::Ips => {
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = o / p_of(idx);
                }
            }
            EstimatorFamily::Snips => {
                let mut w = KahanSum::new();
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = o / p_of(idx);
                    w.add(c_e[idx]);
                }
                if w.value() <= 0.0 {
                    return Err(Error::EmptyObservation);
                }
                let scale = total / w.value();
                for c in &mut c_e {
                    *c *= scale;
                }
            }
            EstimatorFamily::Dr => {
                for (idx, o) in mask.indicators().enumerate() {
                    let w = o / p_of(idx);
                    c_e[idx] = w;
                    c_ehat[idx] = 1.0 - w;
                }
            }
            EstimatorFamily::DIps => {
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = o * shaped_weight(idx)?;
                }
            }
            EstimatorFamily::DDr => {
                for (idx, o) in mask.indicators().enumerate() {
                    let w = o * shaped_weight(idx)?;
                    c_e[idx] = w;
                    c_ehat[idx] = 1.0 - w;
                }
            }
            EstimatorFamily::DSnips => {
                let mut norm = KahanSum::new();
                for (idx, o) in mask.indicators().enumerate() {
                    c_e[idx] = o * shaped_weight(idx)?;
                    norm.add(match loss.snips_normalizer {
                        SnipsNormalizer::ShapedPropensity => c_e[idx],
                        SnipsNormalizer::RawPropensity => o / p_of(idx),
                    });
                }
                if norm.value() <= 0.0 {
                    return Err(Error::EmptyObservation);
                }
                let scale = total / norm.value();
                for c in &mut c_e {
                    *c *= scale;
                }
            }
            EstimatorFamily::General => {
                return Err(Error::InvalidSpec(
                    "the general coefficient form is evaluated, not trained".into(),
                ))
            }
        }
        Ok(Self {
            c_e,
            c_ehat,
            err,
            external_e_hat: None,
        })
    }

    fn with_external_e_hat(mut self, e_hat: LabeledMatrix) -> Self {
        self.external_e_hat = Some(e_hat);
        self
    }

    #[inline]
    fn pointwise(&self, kind: ErrorKind, diff: f64) -> (f64, f64) {
        match kind {
            ErrorKind::Squared => (diff * diff, 2.0 * diff),
            ErrorKind::Absolute => (diff.abs(), diff.signum()),
        }
    }

    /// Loss term and its derivative w.r.t. ŷ at one cell.
    #[inline]
    fn cell_term(&self, idx: usize, y: f64, y_hat: f64) -> (f64, f64) {
        let (e, de) = self.pointwise(self.err.kind, y_hat - y);
        let mut value = self.c_e[idx] * e;
        let mut deriv = self.c_e[idx] * de;
        if self.c_ehat[idx] != 0.0 {
            match &self.external_e_hat {
                Some(fixed) => {
                    value += self.c_ehat[idx] * fixed.values()[idx];
                }
                None => {
                    let (ih, dih) =
                        self.pointwise(self.err.kind, y_hat - self.err.imputation_center);
                    value += self.c_ehat[idx] * self.err.imputation_scale * ih;
                    deriv += self.c_ehat[idx] * self.err.imputation_scale * dih;
                }
            }
        }
        (value, deriv)
    }

    /// Full estimator value at the current model.
    fn full_loss(&self, model: &MfModel, y: &LabeledMatrix) -> f64 {
        let cols = model.cols;
        let mut acc = KahanSum::new();
        for idx in 0..y.len() {
            let (u, i) = (idx / cols, idx % cols);
            let (value, _) = self.cell_term(idx, y.values()[idx], model.predict(u, i));
            acc.add(value);
        }
        acc.value() / y.len() as f64
    }

    /// Full-batch analytic gradient, laid out like the model parameters.
    fn full_gradient(&self, model: &MfModel, y: &LabeledMatrix) -> Vec<f64> {
        let mut grad = vec![0.0; model.param_count()];
        let k = model.latent_dim;
        let uf = model.user_factors.len();
        let it = model.item_factors.len();
        let n = y.len() as f64;
        let cols = model.cols;
        for idx in 0..y.len() {
            let (u, i) = (idx / cols, idx % cols);
            let y_hat = model.predict(u, i);
            let (_, dldy) = self.cell_term(idx, y.values()[idx], y_hat);
            let g = dldy * y_hat * (1.0 - y_hat) / n;
            for f in 0..k {
                grad[u * k + f] += g * model.item_factors[i * k + f];
                grad[uf + i * k + f] += g * model.user_factors[u * k + f];
            }
            grad[uf + it + u] += g;
            grad[uf + it + model.rows + i] += g;
            grad[uf + it + model.rows + model.cols] += g;
        }
        grad
    }
}

/// A trained model with its per-epoch loss trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: MfModel,
    /// Full training-loss value at the end of each epoch.
    pub epoch_losses: Vec<f64>,
    /// The static α schedule used (dynamic families).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<LabeledMatrix>,
    /// Resolved imputation center γ.
    pub gamma: f64,
}

/// Observed-label mean, the default imputation center γ.
fn observed_mean(y: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    let mut acc = KahanSum::new();
    for (&v, o) in y.values().iter().zip(mask.indicators()) {
        acc.add(o * v);
    }
    Ok(acc.value() / mask.observed_count() as f64)
}

fn resolve_error_spec(
    loss: &LossSpec,
    y: &LabeledMatrix,
    mask: &ObservationMask,
) -> Result<ErrorSpec> {
    match loss.imputation {
        Some(spec) => Ok(spec),
        None => ErrorSpec::new(ErrorKind::Squared, 1.0, observed_mean(y, mask)?),
    }
}

/// One SGD epoch over a shuffled permutation of all cells.
fn sgd_epoch(
    model: &mut MfModel,
    y: &LabeledMatrix,
    assembly: &LossAssembly,
    cfg: &TrainConfig,
    order: &mut [usize],
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<()> {
    order.shuffle(rng);
    let k = model.latent_dim;
    let cols = model.cols;
    let uf = model.user_factors.len();
    let it = model.item_factors.len();
    let mut grad = vec![0.0f64; model.param_count()];
    for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
        grad.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        for &idx in batch {
            let (u, i) = (idx / cols, idx % cols);
            let y_hat = model.predict(u, i);
            let (_, dldy) = assembly.cell_term(idx, y.values()[idx], y_hat);
            let g = dldy * y_hat * (1.0 - y_hat) * scale;
            for f in 0..k {
                grad[u * k + f] += g * model.item_factors[i * k + f];
                grad[uf + i * k + f] += g * model.user_factors[u * k + f];
            }
            grad[uf + it + u] += g;
            grad[uf + it + model.rows + i] += g;
            grad[uf + it + model.rows + model.cols] += g;
        }
        let lr = cfg.learning_rate;
        let wd = cfg.weight_decay;
        let decayed = uf + it + model.rows + model.cols;
        for (p, &g) in grad.iter().enumerate() {
            let decay = if p < decayed {
                wd * model.param(p)
            } else {
                0.0
            };
            *model.param_mut(p) -= lr * (g + decay);
        }
        if !model.params_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batch_idx,
            });
        }
    }
    Ok(())
}

/// Trains the prediction model by minimizing the chosen estimator.
pub fn train(
    y: &LabeledMatrix,
    mask: &ObservationMask,
    propensity: &PropensityModel,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    mask.check_same_shape(y)?;
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    let p_hat = if loss.needs_propensities() {
        Some(propensity.propensities(y.rows(), y.cols())?)
    } else {
        None
    };
    let err = resolve_error_spec(loss, y, mask)?;
    let alpha = loss.resolve_alpha(p_hat.as_ref())?;
    let assembly = LossAssembly::build(loss, mask, p_hat.as_ref(), alpha.as_ref(), err)?;

    let mut init_rng = replica_rng(cfg.seed, 0);
    let mut shuffle_rng = replica_rng(cfg.seed, 2);
    let mut model = MfModel::init(y.rows(), y.cols(), cfg.latent_dim, &mut init_rng);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        sgd_epoch(
            &mut model,
            y,
            &assembly,
            cfg,
            &mut order,
            &mut shuffle_rng,
            epoch,
        )?;
        let loss_value = assembly.full_loss(&model, y);
        if !loss_value.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        epoch_losses.push(loss_value);
    }
    Ok(TrainedModel {
        model,
        epoch_losses,
        alpha,
        gamma: err.imputation_center,
    })
}

/// Prediction and imputation models from alternating joint learning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTrainedModel {
    pub prediction: MfModel,
    pub imputation: MfModel,
    pub prediction_losses: Vec<f64>,
    pub imputation_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<LabeledMatrix>,
}

/// Alternating joint learning: each epoch first fits the imputation model to
/// the realized prediction errors under inverse-propensity weighting
/// (Σ (o/p̂)(ê − e)² over observed cells), then advances the prediction
/// model one epoch on the DR or D-DR loss with the imputed errors frozen.
///
/// The imputation model emits ê = sigmoid(score), the right range for
/// squared errors of sigmoid predictions on binary labels. The α schedule
/// is static, computed once from p̂ before the first epoch.
pub fn train_joint(
    y: &LabeledMatrix,
    mask: &ObservationMask,
    propensity: &PropensityModel,
    loss: &LossSpec,
    cfg: &TrainConfig,
    imputation_cfg: &TrainConfig,
) -> Result<JointTrainedModel> {
    cfg.validate()?;
    imputation_cfg.validate()?;
    mask.check_same_shape(y)?;
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    if !matches!(loss.family, EstimatorFamily::Dr | EstimatorFamily::DDr) {
        return Err(Error::InvalidSpec(
            "joint learning trains the imputation model for dr or d_dr losses".into(),
        ));
    }
    let p_hat = propensity.propensities(y.rows(), y.cols())?;
    let alpha = loss.resolve_alpha(Some(&p_hat))?;
    let err = resolve_error_spec(loss, y, mask)?;

    let mut pred_init = replica_rng(cfg.seed, 0);
    let mut imp_init = replica_rng(cfg.seed, 1);
    let mut pred_shuffle = replica_rng(cfg.seed, 2);
    let mut imp_shuffle = replica_rng(cfg.seed, 3);
    let mut prediction = MfModel::init(y.rows(), y.cols(), cfg.latent_dim, &mut pred_init);
    let mut imputation =
        MfModel::init(y.rows(), y.cols(), imputation_cfg.latent_dim, &mut imp_init);

    let observed: Vec<usize> = (0..y.len()).filter(|&idx| mask.bits()[idx] == 1).collect();
    let mut pred_order: Vec<usize> = (0..y.len()).collect();
    let mut imp_order = observed.clone();
    let cols = y.cols();

    let mut prediction_losses = Vec::with_capacity(cfg.epochs);
    let mut imputation_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // (1) imputation step against the current prediction errors
        let target_e: Vec<f64> = (0..y.len())
            .map(|idx| {
                let (u, i) = (idx / cols, idx % cols);
                let diff = prediction.predict(u, i) - y.values()[idx];
                match err.kind {
                    ErrorKind::Squared => diff * diff,
                    ErrorKind::Absolute => diff.abs(),
                }
            })
            .collect();
        imp_order.shuffle(&mut imp_shuffle);
        let k = imputation.latent_dim;
        let uf = imputation.user_factors.len();
        let it = imputation.item_factors.len();
        let mut grad = vec![0.0f64; imputation.param_count()];
        for (batch_idx, batch) in imp_order.chunks(imputation_cfg.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let (u, i) = (idx / cols, idx % cols);
                let e_hat = imputation.predict(u, i);
                let w = 1.0 / p_hat.values()[idx];
                let dldy = 2.0 * w * (e_hat - target_e[idx]);
                let g = dldy * e_hat * (1.0 - e_hat) * scale;
                for f in 0..k {
                    grad[u * k + f] += g * imputation.item_factors[i * k + f];
                    grad[uf + i * k + f] += g * imputation.user_factors[u * k + f];
                }
                grad[uf + it + u] += g;
                grad[uf + it + imputation.rows + i] += g;
                grad[uf + it + imputation.rows + imputation.cols] += g;
            }
            let decayed = uf + it + imputation.rows + imputation.cols;
            for (p, &g) in grad.iter().enumerate() {
                let decay = if p < decayed {
                    imputation_cfg.weight_decay * imputation.param(p)
                } else {
                    0.0
                };
                *imputation.param_mut(p) -= imputation_cfg.learning_rate * (g + decay);
            }
            if !imputation.params_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
        }
        let mut imp_loss = KahanSum::new();
        for &idx in &observed {
            let (u, i) = (idx / cols, idx % cols);
            let d = imputation.predict(u, i) - target_e[idx];
            imp_loss.add(d * d / p_hat.values()[idx]);
        }
        imputation_losses.push(imp_loss.value() / observed.len() as f64);

        // (2) prediction step on the DR/D-DR loss with ê frozen
        let e_hat_matrix = imputation.predictions()?;
        let assembly = LossAssembly::build(loss, mask, Some(&p_hat), alpha.as_ref(), err)?
            .with_external_e_hat(e_hat_matrix);
        sgd_epoch(
            &mut prediction,
            y,
            &assembly,
            cfg,
            &mut pred_order,
            &mut pred_shuffle,
            epoch,
        )?;
        let loss_value = assembly.full_loss(&prediction, y);
        if !loss_value.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        prediction_losses.push(loss_value);
    }

    Ok(JointTrainedModel {
        prediction,
        imputation,
        prediction_losses,
        imputation_losses,
        alpha,
    })
}

/// Compares the analytic gradient of the full training loss against central
/// finite differences (step 1e−5) over every parameter; returns the largest
/// relative deviation. Meant for small instances.
pub fn gradient_check(
    y: &LabeledMatrix,
    mask: &ObservationMask,
    p_hat: Option<&LabeledMatrix>,
    loss: &LossSpec,
    model: &MfModel,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    mask.check_same_shape(y)?;
    let err = resolve_error_spec(loss, y, mask)?;
    let alpha = loss.resolve_alpha(p_hat)?;
    let assembly = LossAssembly::build(loss, mask, p_hat, alpha.as_ref(), err)?;
    let analytic = assembly.full_gradient(model, y);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (p, &reference) in analytic.iter().enumerate() {
        let original = probe.param(p);
        *probe.param_mut(p) = original + STEP;
        let plus = assembly.full_loss(&probe, y);
        *probe.param_mut(p) = original - STEP;
        let minus = assembly.full_loss(&probe, y);
        *probe.param_mut(p) = original;
        let fd = (plus - minus) / (2.0 * STEP);
        let denom = reference.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((reference - fd).abs() / denom);
    }
    Ok(worst)
}

/// Full training-loss value for an externally-built model.
pub fn training_loss(
    y: &LabeledMatrix,
    mask: &ObservationMask,
    p_hat: Option<&LabeledMatrix>,
    loss: &LossSpec,
    model: &MfModel,
) -> Result<f64> {
    let err = resolve_error_spec(loss, y, mask)?;
    let alpha = loss.resolve_alpha(p_hat)?;
    let assembly = LossAssembly::build(loss, mask, p_hat, alpha.as_ref(), err)?;
    Ok(assembly.full_loss(model, y))
}
