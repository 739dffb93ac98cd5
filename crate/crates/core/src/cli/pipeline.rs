//! Shared experiment plumbing: MNAR train / MAR test splits and the
//! train-then-evaluate trial used by the sweep command and the verification
//! suites.

use crate::cli::config::PropensityConfig;
use crate::matrix::{LabeledMatrix, ObservationMask};
use crate::metrics::{evaluate_model, EvalResult};
use crate::propensity::{fit_propensity, oracle_propensity, PropensityKind, PropensityModel};
use crate::simulation::{replica_rng, sample_mask, SyntheticData};
use crate::training::{train, LossSpec, TrainConfig, TrainedModel};
use crate::{Error, Result};

/// RNG stream offsets for the split draws, disjoint from the Monte Carlo
/// replica streams by construction of the caller's seeds.
const TEST_SPLIT_STREAM: u64 = 1_000_003;
const TRAIN_MASK_STREAM: u64 = 1_000_004;

/// A ready-to-train problem: MNAR-observed training cells and a uniformly
/// held-out (MAR) test set.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub y: LabeledMatrix,
    pub p_true: LabeledMatrix,
    pub train_mask: ObservationMask,
    pub test_mask: ObservationMask,
}

/// Splits synthetic ground truth into an MNAR training realization and a
/// MAR test set: test cells are a uniform Bernoulli(test_fraction) draw,
/// and the training mask is a propensity-driven draw on the remaining
/// cells.
pub fn mnar_split(data: &SyntheticData, test_fraction: f64, seed: u64) -> Result<ExperimentData> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain("test fraction", test_fraction));
    }
    use rand::Rng;
    let rows = data.y_true.rows();
    let cols = data.y_true.cols();
    let mut test_rng = replica_rng(seed, TEST_SPLIT_STREAM);
    let test_mask =
        ObservationMask::from_fn(rows, cols, |_, _| test_rng.gen::<f64>() < test_fraction)?;
    let mut train_rng = replica_rng(seed, TRAIN_MASK_STREAM);
    let raw_train = sample_mask(&data.p_true, &mut train_rng)?;
    let train_mask = ObservationMask::from_fn(rows, cols, |u, i| {
        raw_train.is_observed(u, i) && !test_mask.is_observed(u, i)
    })?;
    if train_mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    Ok(ExperimentData {
        y: data.y_true.clone(),
        p_true: data.p_true.clone(),
        train_mask,
        test_mask,
    })
}

/// Builds the propensity source for a run: the oracle wraps known true
/// propensities, the estimators fit the realized mask.
pub fn build_propensity(
    cfg: &PropensityConfig,
    p_true: Option<&LabeledMatrix>,
    mask: &ObservationMask,
) -> Result<PropensityModel> {
    match cfg.kind {
        PropensityKind::Oracle => {
            let p = p_true.ok_or_else(|| {
                Error::InvalidConfig("oracle propensities need p_true in the dataset".to_string())
            })?;
            oracle_propensity(p)
        }
        kind => fit_propensity(mask, kind, cfg.clip_floor),
    }
}

/// Trains one model on the experiment's training realization and scores it
/// on the MAR test set.
pub fn run_trial(
    exp: &ExperimentData,
    loss: &LossSpec,
    propensity_cfg: &PropensityConfig,
    train_cfg: &TrainConfig,
    k: usize,
) -> Result<(TrainedModel, EvalResult)> {
    let propensity = build_propensity(propensity_cfg, Some(&exp.p_true), &exp.train_mask)?;
    let trained = train(&exp.y, &exp.train_mask, &propensity, loss, train_cfg)?;
    let eval = evaluate_model(&trained.model, &exp.y, &exp.test_mask, k)?;
    Ok((trained, eval))
}
