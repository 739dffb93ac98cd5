//! Ranking metrics for MAR-test evaluation: AUC, NDCG@k, and the relative
//! gain statistic used to compare a dynamic estimator against its static
//! base.

use serde::{Deserialize, Serialize};

use crate::matrix::{LabeledMatrix, ObservationMask};
use crate::training::MfModel;
use crate::{Error, Result};

/// Metric bundle for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub per_user_ndcg: Vec<f64>,
}

/// Rank-sum (Mann–Whitney) AUC with ties counting 1/2.
///
/// Needs at least one positive and one negative label.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidSpec(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both a positive and a negative label".to_string(),
        ));
    }
    // average ranks with ties shared
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let mut tie_end = idx;
        while tie_end + 1 < order.len() && scores[order[tie_end + 1]] == scores[order[idx]] {
            tie_end += 1;
        }
        // ranks are 1-based; tied entries share the average rank
        let avg_rank = (idx + tie_end) as f64 / 2.0 + 1.0;
        for &item in &order[idx..=tie_end] {
            if labels[item] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        idx = tie_end + 1;
    }
    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// NDCG@k averaged over users that have at least one positive among their
/// candidates; users without positives are skipped. Gains are 2^rel − 1 with
/// a log₂(rank + 1) discount; score ties break by candidate order, so the
/// metric is deterministic.
///
/// Returns the mean and the per-user values (in user order, skipped users
/// omitted).
pub fn ndcg_at_k(users: &[(Vec<f64>, Vec<u8>)], k: usize) -> Result<(f64, Vec<f64>)> {
    if k == 0 {
        return Err(Error::domain("ndcg cutoff k", 0.0));
    }
    let mut per_user = Vec::new();
    for (scores, relevances) in users {
        if scores.len() != relevances.len() {
            return Err(Error::InvalidSpec(
                "per-user scores and relevances differ in length".to_string(),
            ));
        }
        let positives = relevances.iter().filter(|&&r| r == 1).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let discount = |rank: usize| 1.0 / ((rank as f64 + 2.0).log2());
        let dcg: f64 = order
            .iter()
            .take(k)
            .enumerate()
            .map(|(rank, &item)| (2f64.powi(relevances[item] as i32) - 1.0) * discount(rank))
            .sum();
        let ideal: f64 = (0..positives.min(k)).map(discount).sum();
        per_user.push(dcg / ideal);
    }
    if per_user.is_empty() {
        return Err(Error::UndefinedMetric(
            "NDCG needs at least one user with a positive candidate".to_string(),
        ));
    }
    let mean = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok((mean, per_user))
}

/// Relative improvement of a dynamic estimator over its static base:
/// (dynamic − base) / base. Positive when the dynamic variant is better.
pub fn gain(base_metric: f64, dynamic_metric: f64) -> Result<f64> {
    if !base_metric.is_finite() || base_metric <= 0.0 {
        return Err(Error::domain("gain base metric", base_metric));
    }
    Ok((dynamic_metric - base_metric) / base_metric)
}

/// Evaluates a trained model on held-out cells: global AUC over all test
/// cells, NDCG@k per user over that user's test items.
pub fn evaluate_model(
    model: &MfModel,
    y_true: &LabeledMatrix,
    test_mask: &ObservationMask,
    k: usize,
) -> Result<EvalResult> {
    test_mask.check_same_shape(y_true)?;
    let mut scores = Vec::with_capacity(test_mask.observed_count());
    let mut labels = Vec::with_capacity(test_mask.observed_count());
    let mut users: Vec<(Vec<f64>, Vec<u8>)> = Vec::new();
    for u in 0..y_true.rows() {
        let mut user_scores = Vec::new();
        let mut user_labels = Vec::new();
        for i in 0..y_true.cols() {
            if test_mask.is_observed(u, i) {
                let s = model.predict(u, i);
                let label = u8::from(y_true.get(u, i) > 0.5);
                scores.push(s);
                labels.push(label);
                user_scores.push(s);
                user_labels.push(label);
            }
        }
        if !user_scores.is_empty() {
            users.push((user_scores, user_labels));
        }
    }
    let auc_value = auc(&scores, &labels)?;
    let (ndcg, per_user) = ndcg_at_k(&users, k)?;
    Ok(EvalResult {
        auc: auc_value,
        ndcg_at_k: ndcg,
        k,
        per_user_ndcg: per_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert!(auc(&[0.1, 0.9], &[1, 1]).is_err());
        assert!(auc(&[0.1, 0.9], &[0, 0]).is_err());
    }

    #[test]
    fn auc_handles_partial_ties() {
        // one tie pair among four candidates
        let scores = [0.9, 0.5, 0.5, 0.1];
        let labels = [1, 1, 0, 0];
        // pairs: (0.9,0.5)=1, (0.9,0.1)=1, (0.5,0.5)=0.5, (0.5,0.1)=1
        assert!((auc(&scores, &labels).unwrap() - 3.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.11, 0.42, 0.33, 0.74, 0.05, 0.96];
        let labels = [0, 1, 0, 1, 0, 1];
        let base = auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).exp() - 2.0).collect();
        assert_eq!(auc(&transformed, &labels).unwrap(), base);
    }

    #[test]
    fn ndcg_examples() {
        // positives ranked first → 1.0
        let (v, _) = ndcg_at_k(&[(vec![0.9, 0.8, 0.1], vec![1, 1, 0])], 5).unwrap();
        assert_eq!(v, 1.0);

        // single positive at rank 2 of 2: (1/log₂3) / 1
        let (v, _) = ndcg_at_k(&[(vec![0.9, 0.8], vec![0, 1])], 5).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);

        // users without positives are skipped
        let (v, per_user) = ndcg_at_k(
            &[(vec![0.9, 0.8], vec![0, 0]), (vec![0.9, 0.8], vec![0, 1])],
            5,
        )
        .unwrap();
        assert_eq!(per_user.len(), 1);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);

        // no user with positives → undefined
        assert!(ndcg_at_k(&[(vec![0.9], vec![0])], 5).is_err());
        assert!(ndcg_at_k(&[(vec![0.9], vec![1])], 0).is_err());
    }

    #[test]
    fn ndcg_stays_in_unit_interval() {
        let users = vec![
            (vec![0.3, 0.9, 0.5, 0.2], vec![1, 0, 0, 1]),
            (vec![0.8, 0.1], vec![0, 1]),
            (vec![0.4, 0.6, 0.9], vec![1, 1, 1]),
        ];
        let (v, per_user) = ndcg_at_k(&users, 2).unwrap();
        assert!((0.0..=1.0).contains(&v));
        for p in per_user {
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn gain_examples() {
        // relative improvements match the reported reference points
        let g = gain(0.7539, 0.7777).unwrap();
        assert!((g - 0.0316).abs() < 2e-4, "{g}");
        let g = gain(0.6624, 0.6767).unwrap();
        assert!((g - 0.0216).abs() < 2e-4, "{g}");
        assert_eq!(gain(0.5, 0.5).unwrap(), 0.0);
        // exact identity: gain(x, x(1+g)) = g
        let g = 0.0375;
        let got = gain(0.64, 0.64 * (1.0 + g)).unwrap();
        assert!((got - g).abs() < 1e-12);
        assert!(gain(0.0, 0.5).is_err());
        assert!(gain(-0.1, 0.5).is_err());
    }
}
