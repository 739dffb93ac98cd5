//! JSON run configurations. Every struct rejects unknown keys so typos
//! fail loudly, and every run's artifacts embed the resolved config.

use serde::{Deserialize, Serialize};

use crate::analytics::{NaiveBiasFormula, TailDenominator};
use crate::dynamic::JointObjective;
use crate::estimators::{EstimatorFamily, SnipsNormalizer};
use crate::matrix::{ErrorKind, ErrorSpec, LabeledMatrix, ObservationMask};
use crate::propensity::{PropensityKind, DEFAULT_CLIP_FLOOR};
use crate::shaping::ShapingFunction;
use crate::simulation::LabelMode;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// On-disk dataset: labels plus whatever ground truth the source provides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub y_true: LabeledMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<LabeledMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mask: Option<ObservationMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mask: Option<ObservationMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// One `user<TAB>item<TAB>rating` per line; ids remapped densely.
    Triples,
    /// Whitespace-separated matrix; 0 means unobserved, not label 0.
    DenseAscii,
    /// A [`Dataset`] JSON file (the `generate` output).
    Dataset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: String,
    pub format: DataFormat,
    /// Ratings strictly greater than this binarize to 1, otherwise 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarize_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityConfig {
    pub kind: PropensityKind,
    #[serde(default = "default_clip_floor")]
    pub clip_floor: f64,
}

fn default_clip_floor() -> f64 {
    DEFAULT_CLIP_FLOOR
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            kind: PropensityKind::Oracle,
            clip_floor: DEFAULT_CLIP_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    pub kind: ErrorKind,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Imputation center γ; omitted means the observed-label mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
}

fn default_scale() -> f64 {
    1.0
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            kind: ErrorKind::Squared,
            scale: 1.0,
            center: None,
        }
    }
}

impl ErrorConfig {
    pub fn resolve(&self, observed_mean: f64) -> Result<ErrorSpec> {
        ErrorSpec::new(self.kind, self.scale, self.center.unwrap_or(observed_mean))
    }
}

/// How the per-cell α matrix is chosen for a dynamic estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum AlphaConfig {
    /// The same α everywhere.
    Constant(f64),
    /// Per-cell α from the bias-variance objective applied to p̂.
    Objective(JointObjective),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub family: EstimatorFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shaping: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaConfig>,
    #[serde(default)]
    pub snips_normalizer: SnipsNormalizer,
}

impl EstimatorConfig {
    pub fn shaping_function(&self) -> Result<Option<ShapingFunction>> {
        self.shaping
            .as_deref()
            .map(ShapingFunction::from_name)
            .transpose()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub rows: usize,
    pub cols: usize,
    pub latent_rank: usize,
    pub propensity_slope: f64,
    pub propensity_center: f64,
    pub propensity_floor: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
    /// Also draw one train mask from the generated propensities.
    #[serde(default = "default_true")]
    pub sample_mask: bool,
    /// Hold out a uniform (MAR) test split of this fraction of cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mar_test_fraction: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: DataConfig,
    /// Path to a prediction-matrix JSON; omitted means a constant predictor
    /// at the observed-label mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityConfig>,
    #[serde(default)]
    pub error: ErrorConfig,
    /// Mask-sampling seed when the dataset carries no train mask.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityConfig>,
    #[serde(default)]
    pub error: ErrorConfig,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_hypotheses")]
    pub hypothesis_count: u64,
    /// Monte Carlo replicas for the empirical comparison; 0 skips it.
    #[serde(default)]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub naive_bias_formula: NaiveBiasFormula,
    #[serde(default)]
    pub tail_denominator: TailDenominator,
}

fn default_rho() -> f64 {
    0.05
}

fn default_hypotheses() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridConfig {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2
            || !self.stop.is_finite()
            || !self.start.is_finite()
            || self.stop <= self.start
        {
            return Err(Error::InvalidConfig(
                "grid needs at least 2 points and stop > start".into(),
            ));
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| self.start + i as f64 * step)
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaCmdConfig {
    pub objective: JointObjective,
    pub shaping: String,
    pub p_grid: GridConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McVerifyConfig {
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityConfig>,
    #[serde(default)]
    pub error: ErrorConfig,
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also stream raw replica values to replicas.csv.
    #[serde(default)]
    pub replica_csv: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    1024
}

fn default_latent() -> usize {
    8
}

impl From<TrainParams> for TrainConfig {
    fn from(p: TrainParams) -> Self {
        TrainConfig {
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            epochs: p.epochs,
            batch_size: p.batch_size,
            latent_dim: p.latent_dim,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub family: EstimatorFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shaping: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<JointObjective>,
    #[serde(default)]
    pub error: ErrorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: DataConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub propensity: PropensityConfig,
    pub train: TrainParams,
    /// Alternate DR-style joint learning of the imputation model.
    #[serde(default)]
    pub joint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation_train: Option<TrainParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub data: DataConfig,
    pub checkpoint: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub generate: GenerateConfig,
    pub shapings: Vec<String>,
    /// Variance weights; the bias weight is fixed at w1.
    pub w2_values: Vec<f64>,
    #[serde(default = "default_w1")]
    pub w1: f64,
    pub seeds: usize,
    pub base_family: EstimatorFamily,
    pub dynamic_family: EstimatorFamily,
    #[serde(default)]
    pub propensity: PropensityConfig,
    pub train: TrainParams,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_w1() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub objective: JointObjective,
    pub shaping: String,
    #[serde(default = "default_grid_points")]
    pub p_points: usize,
    #[serde(default = "default_grid_points")]
    pub alpha_points: usize,
}

fn default_grid_points() -> usize {
    50
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"rows": 4, "cols": 4, "latent_rank": 2, "propensity_slope": 1.0,
                      "propensity_center": 0.0, "propensity_floor": 0.05,
                      "label_mode": "binary", "seed": 1, "typo_key": true}"#;
        assert!(serde_json::from_str::<GenerateConfig>(bad).is_err());

        let bad = r#"{"kind": "oracle", "clip": 0.1}"#;
        assert!(serde_json::from_str::<PropensityConfig>(bad).is_err());
    }

    #[test]
    fn estimator_config_parses_families_and_shapes() {
        let cfg: EstimatorConfig = serde_json::from_str(
            r#"{"family": "d_dr", "shaping": "log1p",
                "alpha": {"objective": {"w1": 1.0, "w2": 0.1}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.family, EstimatorFamily::DDr);
        assert!(cfg.shaping_function().unwrap().is_some());
        match cfg.alpha {
            Some(AlphaConfig::Objective(obj)) => {
                assert_eq!(obj.w1, 1.0);
                assert_eq!(obj.w2, 0.1);
            }
            other => panic!("unexpected alpha {other:?}"),
        }
    }

    #[test]
    fn objective_weights_validated_on_parse() {
        let bad = r#"{"family": "d_ips", "alpha": {"objective": {"w1": 0.0, "w2": 0.1}}}"#;
        assert!(serde_json::from_str::<EstimatorConfig>(bad).is_err());
    }

    #[test]
    fn grid_values() {
        let g = GridConfig {
            start: 0.1,
            stop: 0.9,
            points: 5,
        };
        let v = g.values().unwrap();
        assert_eq!(v.len(), 5);
        assert!((v[0] - 0.1).abs() < 1e-15);
        assert!((v[4] - 0.9).abs() < 1e-15);
        assert!(GridConfig {
            start: 0.5,
            stop: 0.2,
            points: 5
        }
        .values()
        .is_err());
    }
}
