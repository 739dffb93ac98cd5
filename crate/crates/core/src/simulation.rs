//! Synthetic MNAR ground truth and the empirical oracles for the closed
//! forms: a Monte Carlo harness over mask draws and, for tiny instances, an
//! exhaustive enumeration of every possible mask.
//!
//! Replica RNG streams are derived from (seed, replica index) with a
//! counter-based generator, so results are a pure function of the inputs no
//! matter how replicas are scheduled; the final reduction runs in replica
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    bias_variance_report, AnalyticsOptions, BiasVarianceReport, ClosedFormInputs,
};
use crate::estimators::{eval_real, EstimatorFamily, EstimatorSpec};
use crate::matrix::{LabeledMatrix, ObservationMask};
use crate::numeric::{kahan_sum, mean_and_variance, sigmoid, KahanSum};
use crate::{Error, Result};

/// Cell-count limit for exhaustive mask enumeration (2^cells masks).
pub const MAX_EXHAUSTIVE_CELLS: usize = 12;

/// Per-replica cap on empty-mask resampling before declaring the
/// propensities degenerate.
const RESAMPLE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Binary,
    RatingOneToFive,
}

/// Recipe for a synthetic MNAR problem.
///
/// Labels come from low-rank latent factors plus noise; the observation
/// propensity is a sigmoid in the same raw score, so likely-positive cells
/// are observed more often (the MNAR mechanism). Slope 0 collapses to a
/// constant-propensity MAR design.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub latent_rank: usize,
    /// Sigmoid slope a: strength of the label-observation coupling.
    pub propensity_slope: f64,
    /// Sigmoid center b.
    pub propensity_center: f64,
    /// Lower clamp on generated propensities, in (0, 1).
    pub propensity_floor: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if self.latent_rank == 0 {
            return Err(Error::InvalidSpec("latent rank must be at least 1".into()));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor < 1.0) {
            return Err(Error::domain("propensity floor", self.propensity_floor));
        }
        if !self.propensity_slope.is_finite() || !self.propensity_center.is_finite() {
            return Err(Error::InvalidSpec(
                "propensity slope/center must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Generated ground truth: labels, true propensities, and the underlying
/// raw scores that couple them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticData {
    pub y_true: LabeledMatrix,
    pub p_true: LabeledMatrix,
    pub raw_scores: LabeledMatrix,
}

/// Deterministic synthetic generator. Same spec (including seed) gives
/// bitwise-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.latent_rank;
    let scale = 1.0 / (k as f64).sqrt();
    let user_factors: Vec<f64> = (0..spec.rows * k)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let item_factors: Vec<f64> = (0..spec.cols * k)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut raw = Vec::with_capacity(spec.rows * spec.cols);
    for u in 0..spec.rows {
        for i in 0..spec.cols {
            let mut dot = 0.0;
            for f in 0..k {
                dot += user_factors[u * k + f] * item_factors[i * k + f];
            }
            let noise: f64 = rng.sample(StandardNormal);
            raw.push(dot * scale + 0.3 * noise);
        }
    }
    let raw_scores = LabeledMatrix::new(spec.rows, spec.cols, raw)?;

    let y_true = match spec.label_mode {
        LabelMode::Binary => LabeledMatrix::new_binary(
            spec.rows,
            spec.cols,
            raw_scores
                .values()
                .iter()
                .map(|&r| f64::from(u8::from(r > 0.0)))
                .collect(),
        )?,
        LabelMode::RatingOneToFive => LabeledMatrix::new(
            spec.rows,
            spec.cols,
            raw_scores
                .values()
                .iter()
                .map(|&r| (3.0 + 1.5 * r).round().clamp(1.0, 5.0))
                .collect(),
        )?,
    };

    let p_true = LabeledMatrix::new_propensity(
        spec.rows,
        spec.cols,
        raw_scores
            .values()
            .iter()
            .map(|&r| {
                sigmoid(spec.propensity_slope * (r - spec.propensity_center))
                    .clamp(spec.propensity_floor, 1.0)
            })
            .collect(),
    )?;

    Ok(SyntheticData {
        y_true,
        p_true,
        raw_scores,
    })
}

/// Independent RNG stream for one replica: the stream index rides in the
/// generator's counter, so streams never overlap.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// One Bernoulli mask draw: cell (u, i) observed with probability p_{u,i}.
pub fn sample_mask(p_true: &LabeledMatrix, rng: &mut impl Rng) -> Result<ObservationMask> {
    p_true.check_propensity()?;
    let bits = p_true
        .values()
        .iter()
        .map(|&p| u8::from(rng.gen::<f64>() < p))
        .collect();
    ObservationMask::new(p_true.rows(), p_true.cols(), bits)
}

/// Monte Carlo summary over replica mask draws, paired with the closed-form
/// prediction where the family has one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub replicas: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    /// |empirical_mean − L_real(e)|.
    pub empirical_bias: f64,
    /// sqrt(empirical_variance / replicas).
    pub standard_error: f64,
    /// Empty-mask draws that were resampled (families undefined on |𝒪| = 0).
    pub resampled_empty: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<BiasVarianceReport>,
}

/// Families whose value is undefined on an empty mask and therefore use the
/// resample-and-count convention.
fn needs_nonempty(spec: &EstimatorSpec) -> bool {
    match spec.family {
        EstimatorFamily::Naive => spec.naive_normalizer.is_none(),
        EstimatorFamily::Snips | EstimatorFamily::DSnips => true,
        _ => false,
    }
}

/// Runs `replicas` independent mask draws and evaluates the estimator on
/// each. Results are a pure function of (inputs, seed, replicas); replicas
/// run in parallel but reduce in fixed order.
///
/// Replicas drawing an empty mask are resampled and counted when the family
/// is undefined there; if more than 1% of total draws come up empty the
/// propensities are declared degenerate.
pub fn monte_carlo(
    estimator: &EstimatorSpec,
    e: &LabeledMatrix,
    e_hat: Option<&LabeledMatrix>,
    p_true: &LabeledMatrix,
    p_hat: Option<&LabeledMatrix>,
    replicas: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    let (result, _) = monte_carlo_with_values(estimator, e, e_hat, p_true, p_hat, replicas, seed)?;
    Ok(result)
}

/// Like [`monte_carlo`], also returning the raw replica values (for CSV
/// export and external plotting).
pub fn monte_carlo_with_values(
    estimator: &EstimatorSpec,
    e: &LabeledMatrix,
    e_hat: Option<&LabeledMatrix>,
    p_true: &LabeledMatrix,
    p_hat: Option<&LabeledMatrix>,
    replicas: usize,
    seed: u64,
) -> Result<(MonteCarloResult, Vec<f64>)> {
    if replicas < 2 {
        return Err(Error::TooFewSamples {
            got: replicas,
            min: 2,
        });
    }
    e.check_same_shape(p_true)?;
    p_true.check_propensity()?;
    let resample = needs_nonempty(estimator);

    let draws: Vec<Result<(f64, usize)>> = (0..replicas as u64)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, replica);
            let mut empties = 0usize;
            loop {
                let mask = sample_mask(p_true, &mut rng)?;
                if resample && mask.observed_count() == 0 {
                    empties += 1;
                    if empties > RESAMPLE_CAP {
                        return Err(Error::DegeneratePropensity {
                            empty_draws: empties,
                            total_draws: empties,
                        });
                    }
                    continue;
                }
                let value = estimator.evaluate(e, e_hat, p_hat, &mask)?;
                return Ok((value, empties));
            }
        })
        .collect();

    let mut values = Vec::with_capacity(replicas);
    let mut resampled_empty = 0usize;
    for draw in draws {
        let (value, empties) = draw?;
        values.push(value);
        resampled_empty += empties;
    }
    let total_draws = replicas + resampled_empty;
    if resampled_empty as f64 > 0.01 * total_draws as f64 {
        return Err(Error::DegeneratePropensity {
            empty_draws: resampled_empty,
            total_draws,
        });
    }

    let (empirical_mean, empirical_variance) = mean_and_variance(&values);
    let real = eval_real(e)?;
    let closed_form = if estimator.family.has_closed_form() {
        let expected_count = kahan_sum(p_true.values().iter().copied());
        let mut inputs = ClosedFormInputs::new(e, p_true).with_observed_count(expected_count);
        if let Some(e_hat) = e_hat {
            inputs = inputs.with_e_hat(e_hat);
        }
        if let Some(p_hat) = p_hat {
            inputs = inputs.with_p_hat(p_hat);
        }
        if let Some(shaping) = estimator.shaping.as_ref() {
            inputs = inputs.with_shaping(shaping);
        }
        if let Some(alpha) = estimator.alpha.as_ref() {
            inputs = inputs.with_alpha(alpha);
        }
        Some(bias_variance_report(
            estimator.family,
            &inputs,
            &AnalyticsOptions::default(),
        )?)
    } else {
        None
    };

    Ok((
        MonteCarloResult {
            replicas,
            empirical_mean,
            empirical_variance,
            empirical_bias: (empirical_mean - real).abs(),
            standard_error: (empirical_variance / replicas as f64).sqrt(),
            resampled_empty,
            closed_form,
        },
        values,
    ))
}

/// Exact mean and variance of an estimator over the full mask distribution,
/// by enumerating all 2^cells masks with their probabilities. Ground-truth
/// tier of the verification stack; limited to [`MAX_EXHAUSTIVE_CELLS`].
pub fn exhaustive_moments(
    p_true: &LabeledMatrix,
    mut eval: impl FnMut(&ObservationMask) -> Result<f64>,
) -> Result<(f64, f64)> {
    p_true.check_propensity()?;
    let cells = p_true.len();
    if cells > MAX_EXHAUSTIVE_CELLS {
        return Err(Error::InvalidSpec(format!(
            "exhaustive enumeration limited to {MAX_EXHAUSTIVE_CELLS} cells, got {cells}"
        )));
    }
    let p = p_true.values();
    let mut outcomes = Vec::with_capacity(1usize << cells);
    for mask_bits in 0u64..(1u64 << cells) {
        let bits: Vec<u8> = (0..cells).map(|c| ((mask_bits >> c) & 1) as u8).collect();
        let mut prob = 1.0;
        for (c, &b) in bits.iter().enumerate() {
            prob *= if b == 1 { p[c] } else { 1.0 - p[c] };
        }
        let mask = ObservationMask::new(p_true.rows(), p_true.cols(), bits)?;
        let value = eval(&mask)?;
        outcomes.push((prob, value));
    }
    let mut mean_acc = KahanSum::new();
    for &(prob, value) in &outcomes {
        mean_acc.add(prob * value);
    }
    let mean = mean_acc.value();
    let mut var_acc = KahanSum::new();
    for &(prob, value) in &outcomes {
        let d = value - mean;
        var_acc.add(prob * d * d);
    }
    Ok((mean, var_acc.value()))
}
