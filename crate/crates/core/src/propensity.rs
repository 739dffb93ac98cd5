//! Propensity sources: known (oracle) propensities, and simple estimators
//! fit to a realized observation mask for real-data runs.
//!
//! Estimated propensities are always clipped into [clip_floor, 1]. The
//! default floor of 0.05 caps any single inverse-propensity weight at 20,
//! which keeps desk-scale variance finite; tiny propensities are exactly
//! the regime where the unshaped estimators blow up.

use serde::{Deserialize, Serialize};

use crate::matrix::{LabeledMatrix, ObservationMask};
use crate::numeric::sigmoid;
use crate::{Error, Result};

pub const DEFAULT_CLIP_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    /// Emits the known true propensities exactly (simulation settings).
    Oracle,
    /// p̂_{u,i} = clip(row rate · column rate / global rate).
    FactorizedPopularity,
    /// Per-cell sigmoid of fitted user/item/global bias terms.
    Logistic,
}

#[derive(Debug, Clone)]
enum ModelParams {
    Oracle(LabeledMatrix),
    Factorized {
        row_rates: Vec<f64>,
        col_rates: Vec<f64>,
        global_rate: f64,
    },
    Logistic {
        user_bias: Vec<f64>,
        item_bias: Vec<f64>,
        global_bias: f64,
    },
}

/// A fitted propensity model. Immutable after fit; evaluation is pure.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    kind: PropensityKind,
    clip_floor: f64,
    params: ModelParams,
}

impl PropensityModel {
    pub fn kind(&self) -> PropensityKind {
        self.kind
    }

    pub fn clip_floor(&self) -> f64 {
        self.clip_floor
    }

    /// Emits the p̂ matrix for the given shape.
    pub fn propensities(&self, rows: usize, cols: usize) -> Result<LabeledMatrix> {
        match &self.params {
            ModelParams::Oracle(p) => {
                if p.rows() != rows || p.cols() != cols {
                    return Err(Error::ShapeMismatch {
                        expected_rows: p.rows(),
                        expected_cols: p.cols(),
                        got_rows: rows,
                        got_cols: cols,
                    });
                }
                Ok(p.clone())
            }
            ModelParams::Factorized {
                row_rates,
                col_rates,
                global_rate,
            } => {
                if row_rates.len() != rows || col_rates.len() != cols {
                    return Err(Error::ShapeMismatch {
                        expected_rows: row_rates.len(),
                        expected_cols: col_rates.len(),
                        got_rows: rows,
                        got_cols: cols,
                    });
                }
                LabeledMatrix::from_fn(rows, cols, |u, i| {
                    (row_rates[u] * col_rates[i] / global_rate).clamp(self.clip_floor, 1.0)
                })
            }
            ModelParams::Logistic {
                user_bias,
                item_bias,
                global_bias,
            } => {
                if user_bias.len() != rows || item_bias.len() != cols {
                    return Err(Error::ShapeMismatch {
                        expected_rows: user_bias.len(),
                        expected_cols: item_bias.len(),
                        got_rows: rows,
                        got_cols: cols,
                    });
                }
                LabeledMatrix::from_fn(rows, cols, |u, i| {
                    sigmoid(global_bias + user_bias[u] + item_bias[i]).clamp(self.clip_floor, 1.0)
                })
            }
        }
    }
}

fn check_clip_floor(clip_floor: f64) -> Result<()> {
    if !(clip_floor > 0.0 && clip_floor < 1.0) {
        return Err(Error::domain("clip floor", clip_floor));
    }
    Ok(())
}

/// Fits a propensity estimator to a realized mask.
pub fn fit_propensity(
    mask: &ObservationMask,
    kind: PropensityKind,
    clip_floor: f64,
) -> Result<PropensityModel> {
    check_clip_floor(clip_floor)?;
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    let (rows, cols) = (mask.rows(), mask.cols());
    let params = match kind {
        PropensityKind::Oracle => {
            return Err(Error::InvalidSpec(
                "oracle propensities come from oracle_propensity(p_true), not a mask fit".into(),
            ))
        }
        PropensityKind::FactorizedPopularity => {
            let mut row_counts = vec![0usize; rows];
            let mut col_counts = vec![0usize; cols];
            for (idx, &bit) in mask.bits().iter().enumerate() {
                if bit == 1 {
                    row_counts[idx / cols] += 1;
                    col_counts[idx % cols] += 1;
                }
            }
            ModelParams::Factorized {
                row_rates: row_counts.iter().map(|&c| c as f64 / cols as f64).collect(),
                col_rates: col_counts.iter().map(|&c| c as f64 / rows as f64).collect(),
                global_rate: mask.observed_count() as f64 / mask.len() as f64,
            }
        }
        PropensityKind::Logistic => fit_logistic(mask),
    };
    Ok(PropensityModel {
        kind,
        clip_floor,
        params,
    })
}

/// Fixed-step full-batch gradient descent on the Bernoulli likelihood of the
/// observation indicators, with user, item, and global bias terms.
fn fit_logistic(mask: &ObservationMask) -> ModelParams {
    // User, item, and global terms update simultaneously from shared
    // residuals, so the per-cell step is roughly tripled; the rate must
    // stay under ~4/3 for stability.
    const ITERATIONS: usize = 500;
    const LEARNING_RATE: f64 = 0.7;
    let (rows, cols) = (mask.rows(), mask.cols());
    let n = (rows * cols) as f64;
    let mut user_bias = vec![0.0f64; rows];
    let mut item_bias = vec![0.0f64; cols];
    let rate = mask.observed_count() as f64 / n;
    // Start at the global base rate so early iterations are well-scaled.
    let mut global_bias = (rate / (1.0 - rate).max(1e-12)).max(1e-12).ln();

    for _ in 0..ITERATIONS {
        let mut grad_user = vec![0.0f64; rows];
        let mut grad_item = vec![0.0f64; cols];
        let mut grad_global = 0.0f64;
        for u in 0..rows {
            for i in 0..cols {
                let pred = sigmoid(global_bias + user_bias[u] + item_bias[i]);
                let resid = pred - f64::from(u8::from(mask.is_observed(u, i)));
                grad_user[u] += resid;
                grad_item[i] += resid;
                grad_global += resid;
            }
        }
        for (b, g) in user_bias.iter_mut().zip(&grad_user) {
            *b -= LEARNING_RATE * g / cols as f64;
        }
        for (b, g) in item_bias.iter_mut().zip(&grad_item) {
            *b -= LEARNING_RATE * g / rows as f64;
        }
        global_bias -= LEARNING_RATE * grad_global / n;
    }
    ModelParams::Logistic {
        user_bias,
        item_bias,
        global_bias,
    }
}

/// Wraps known true propensities: emits p̂ = p exactly, no clipping.
pub fn oracle_propensity(p_true: &LabeledMatrix) -> Result<PropensityModel> {
    p_true.check_propensity()?;
    let min_p = p_true
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(PropensityModel {
        kind: PropensityKind::Oracle,
        clip_floor: min_p,
        params: ModelParams::Oracle(p_true.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factorized_on_uniform_mask() {
        // deterministic mask with exactly 30% of each row and column observed
        let mask = ObservationMask::from_fn(10, 10, |u, i| (i + u * 3) % 10 < 3).unwrap();
        let model = fit_propensity(&mask, PropensityKind::FactorizedPopularity, 0.05).unwrap();
        let p = model.propensities(10, 10).unwrap();
        for &v in p.values() {
            assert!((v - 0.3).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn clipping_bounds_respected() {
        // empty column clips at the floor, full matrix emits 1
        let mask = ObservationMask::from_fn(4, 4, |_, i| i < 3).unwrap();
        let model = fit_propensity(&mask, PropensityKind::FactorizedPopularity, 0.05).unwrap();
        let p = model.propensities(4, 4).unwrap();
        for u in 0..4 {
            assert_eq!(p.get(u, 3), 0.05);
        }

        let full = ObservationMask::all_ones(3, 3).unwrap();
        let model = fit_propensity(&full, PropensityKind::FactorizedPopularity, 0.05).unwrap();
        let p = model.propensities(3, 3).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn emitted_propensities_always_in_range() {
        let mask = ObservationMask::from_fn(8, 6, |u, i| (u * i) % 3 == 0).unwrap();
        for kind in [
            PropensityKind::FactorizedPopularity,
            PropensityKind::Logistic,
        ] {
            let model = fit_propensity(&mask, kind, 0.1).unwrap();
            let p = model.propensities(8, 6).unwrap();
            for &v in p.values() {
                assert!((0.1..=1.0).contains(&v), "{kind:?}: {v}");
            }
        }
    }

    #[test]
    fn oracle_round_trip() {
        let p = LabeledMatrix::new_propensity(2, 2, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let model = oracle_propensity(&p).unwrap();
        assert_eq!(model.propensities(2, 2).unwrap(), p);
        assert!(model.propensities(3, 2).is_err());
    }

    #[test]
    fn all_zero_mask_rejected() {
        let mask = ObservationMask::new(2, 2, vec![0, 0, 0, 0]).unwrap();
        assert!(fit_propensity(&mask, PropensityKind::FactorizedPopularity, 0.05).is_err());
    }

    #[test]
    fn invalid_clip_floor_rejected() {
        let mask = ObservationMask::all_ones(2, 2).unwrap();
        assert!(fit_propensity(&mask, PropensityKind::FactorizedPopularity, 0.0).is_err());
        assert!(fit_propensity(&mask, PropensityKind::FactorizedPopularity, 1.0).is_err());
    }

    #[test]
    fn factorized_recovers_rank_one_rates() {
        // Bernoulli mask with p = r_u · c_i; the fitted rates should land
        // within 3 standard errors of the generators.
        let m = 200;
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let row_rates: Vec<f64> = (0..m).map(|u| 0.2 + 0.6 * (u as f64 / m as f64)).collect();
        let col_rates: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * (i as f64 / n as f64)).collect();
        let mask =
            ObservationMask::from_fn(m, n, |u, i| rng.gen::<f64>() < row_rates[u] * col_rates[i])
                .unwrap();
        let model = fit_propensity(&mask, PropensityKind::FactorizedPopularity, 0.01).unwrap();
        let p = model.propensities(m, n).unwrap();
        // spot-check interior cells
        for (u, i) in [(10, 190), (100, 100), (190, 10), (50, 150)] {
            let truth = row_rates[u] * col_rates[i];
            let se = (truth * (1.0 - truth) / n as f64).sqrt()
                + (truth * (1.0 - truth) / m as f64).sqrt();
            assert!(
                (p.get(u, i) - truth).abs() < 3.0 * se + 0.02,
                "cell ({u},{i}): {} vs {truth}",
                p.get(u, i)
            );
        }
    }

    #[test]
    fn logistic_tracks_row_column_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mask = ObservationMask::from_fn(60, 60, |u, _| {
            let p = if u < 30 { 0.15 } else { 0.6 };
            rng.gen::<f64>() < p
        })
        .unwrap();
        let model = fit_propensity(&mask, PropensityKind::Logistic, 0.01).unwrap();
        let p = model.propensities(60, 60).unwrap();
        let group_rate = |range: std::ops::Range<usize>| {
            let observed: usize = range
                .clone()
                .map(|u| (0..60).filter(|&i| mask.is_observed(u, i)).count())
                .sum();
            observed as f64 / (range.len() * 60) as f64
        };
        let fitted = |range: std::ops::Range<usize>| {
            let total: f64 = range
                .clone()
                .map(|u| (0..60).map(|i| p.get(u, i)).sum::<f64>())
                .sum();
            total / (range.len() * 60) as f64
        };
        assert!((fitted(0..30) - group_rate(0..30)).abs() < 0.02);
        assert!((fitted(30..60) - group_rate(30..60)).abs() < 0.02);
    }
}
