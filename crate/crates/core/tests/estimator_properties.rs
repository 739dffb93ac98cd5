//! Property-based invariants of the estimator family.

use std::sync::Arc;

use proptest::prelude::*;

use mnar_core::estimators::{
    eval_d_dr, eval_d_ips, eval_dr, eval_eib, eval_general, eval_ips, eval_naive, eval_real,
    eval_snips,
};
use mnar_core::matrix::{
    error_deviation, imputed_error, pointwise_error, ErrorKind, ErrorSpec, GeneralEstimatorForm,
    LabeledMatrix, ObservationMask,
};
use mnar_core::shaping::ShapingFunction;

#[derive(Debug, Clone)]
struct Instance {
    e: LabeledMatrix,
    e_hat: LabeledMatrix,
    p_hat: LabeledMatrix,
    mask: ObservationMask,
    alpha: LabeledMatrix,
}

fn instance_strategy() -> impl Strategy<Value = Instance> {
    (1usize..=4, 1usize..=5)
        .prop_flat_map(|(rows, cols)| {
            let n = rows * cols;
            (
                Just(rows),
                Just(cols),
                prop::collection::vec(0.0..2.0f64, n),
                prop::collection::vec(0.0..2.0f64, n),
                prop::collection::vec(0.05..1.0f64, n),
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(0.0..=1.0f64, n),
            )
        })
        .prop_map(|(rows, cols, e, e_hat, p, bits, alpha)| Instance {
            e: LabeledMatrix::new(rows, cols, e).unwrap(),
            e_hat: LabeledMatrix::new(rows, cols, e_hat).unwrap(),
            p_hat: LabeledMatrix::new_propensity(rows, cols, p).unwrap(),
            mask: ObservationMask::new(rows, cols, bits.into_iter().map(u8::from).collect())
                .unwrap(),
            alpha: LabeledMatrix::new(rows, cols, alpha).unwrap(),
        })
}

proptest! {
    // The general coefficient form reproduces every named estimator.
    #[test]
    fn general_form_specializes(inst in instance_strategy()) {
        let Instance { e, e_hat, p_hat, mask, .. } = &inst;
        let n = e.len() as f64;
        let m = mask.observed_count() as f64;

        if mask.observed_count() > 0 {
            let scale = n / m;
            let naive_form = GeneralEstimatorForm::new(
                Arc::new(move |o, _| scale * o as f64),
                Arc::new(|_, _| 0.0),
                Arc::new(|_, _| 0.0),
                0.0,
            ).unwrap();
            let got = eval_general(&naive_form, e, e_hat, p_hat, mask).unwrap().est_value;
            prop_assert!((got - eval_naive(e, mask).unwrap()).abs() <= 1e-12);
        }

        let eib_form = GeneralEstimatorForm::new(
            Arc::new(|o, _| o as f64),
            Arc::new(|o, _| 1.0 - o as f64),
            Arc::new(|_, _| 0.0),
            0.0,
        ).unwrap();
        let got = eval_general(&eib_form, e, e_hat, p_hat, mask).unwrap().est_value;
        prop_assert!((got - eval_eib(e, e_hat, mask).unwrap()).abs() <= 1e-12);

        let ips_form = GeneralEstimatorForm::new(
            Arc::new(|o, p| o as f64 / p),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            0.0,
        ).unwrap();
        let got = eval_general(&ips_form, e, e_hat, p_hat, mask).unwrap().est_value;
        prop_assert!((got - eval_ips(e, p_hat, mask).unwrap()).abs() <= 1e-12);

        let dr_form = GeneralEstimatorForm::new(
            Arc::new(|o, p| o as f64 / p),
            Arc::new(|o, p| 1.0 - o as f64 / p),
            Arc::new(|_, _| 0.0),
            0.0,
        ).unwrap();
        let got = eval_general(&dr_form, e, e_hat, p_hat, mask).unwrap().est_value;
        prop_assert!((got - eval_dr(e, e_hat, p_hat, mask).unwrap()).abs() <= 1e-12);
    }

    // |L(α) − L(α + 1e−6)| stays within 1e−4 · Σ|e| cellwise.
    #[test]
    fn dynamic_value_continuous_in_alpha(inst in instance_strategy()) {
        let Instance { e, e_hat, p_hat, mask, alpha } = &inst;
        let sum_abs_e: f64 = e.values().iter().map(|v| v.abs()).sum();
        let bumped = LabeledMatrix::new(
            alpha.rows(),
            alpha.cols(),
            alpha.values().iter().map(|a| (a + 1e-6).min(1.0)).collect(),
        ).unwrap();
        for shaping in ShapingFunction::builtins() {
            let a0 = eval_d_ips(e, p_hat, mask, &shaping, alpha).unwrap();
            let a1 = eval_d_ips(e, p_hat, mask, &shaping, &bumped).unwrap();
            prop_assert!((a0 - a1).abs() <= 1e-4 * sum_abs_e.max(1e-9));
            let b0 = eval_d_dr(e, e_hat, p_hat, mask, &shaping, alpha).unwrap();
            let b1 = eval_d_dr(e, e_hat, p_hat, mask, &shaping, &bumped).unwrap();
            let sum_abs_delta: f64 = e.values().iter().zip(e_hat.values())
                .map(|(a, b)| (a - b).abs()).sum();
            prop_assert!((b0 - b1).abs() <= 1e-4 * sum_abs_delta.max(1e-9));
        }
    }

    // Perfect imputation makes DR equal the full-information loss exactly.
    #[test]
    fn dr_with_perfect_imputation_is_exact(inst in instance_strategy()) {
        let Instance { e, p_hat, mask, .. } = &inst;
        let dr = eval_dr(e, e, p_hat, mask).unwrap();
        prop_assert_eq!(dr, eval_real(e).unwrap());
    }

    // SNIPS is a weighted mean: it stays inside the observed-value range.
    #[test]
    fn snips_within_observed_range(inst in instance_strategy()) {
        let Instance { e, p_hat, mask, .. } = &inst;
        prop_assume!(mask.observed_count() > 0);
        let snips = eval_snips(e, p_hat, mask).unwrap();
        let observed: Vec<f64> = e.values().iter()
            .zip(mask.indicators())
            .filter(|(_, o)| *o == 1.0)
            .map(|(&v, _)| v)
            .collect();
        let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(snips >= lo - 1e-12 && snips <= hi + 1e-12);
    }

    // Pointwise errors are nonnegative for both kinds; the imputed error is
    // the centered pointwise error scaled by w; δ(e, e) ≡ 0.
    #[test]
    fn error_construction_identities(
        y in prop::collection::vec(0.0..=1.0f64, 6),
        y_hat in prop::collection::vec(-1.0..2.0f64, 6),
        w in 0.1..5.0f64,
        gamma in -1.0..2.0f64,
    ) {
        for kind in [ErrorKind::Absolute, ErrorKind::Squared] {
            let spec = ErrorSpec::new(kind, w, gamma).unwrap();
            let y_m = LabeledMatrix::new(2, 3, y.clone()).unwrap();
            let y_hat_m = LabeledMatrix::new(2, 3, y_hat.clone()).unwrap();
            let e = pointwise_error(&y_m, &y_hat_m, &spec).unwrap();
            prop_assert!(e.values().iter().all(|&v| v >= 0.0));

            // ê = w · pointwise(γ·1, ŷ) with unit scale
            let e_hat = imputed_error(&y_hat_m, &spec).unwrap();
            let centered = LabeledMatrix::constant(2, 3, gamma).unwrap();
            let unit = ErrorSpec::new(kind, 1.0, gamma).unwrap();
            let reference = pointwise_error(&centered, &y_hat_m, &unit).unwrap();
            for (a, b) in e_hat.values().iter().zip(reference.values()) {
                prop_assert!((a - w * b).abs() <= 1e-12 * w.max(1.0));
            }

            let z = error_deviation(&e, &e).unwrap();
            prop_assert!(z.values().iter().all(|&v| v == 0.0));
        }
    }

    // Shaped propensities stay within [p̂, 1] for all built-in kinds.
    #[test]
    fn shaping_brackets_propensity(p in 0.001..1.0f64) {
        for shaping in ShapingFunction::builtins() {
            let f = shaping.eval(p).unwrap();
            prop_assert!(f >= p - 1e-12, "{}: f({p}) = {f}", shaping.label());
            prop_assert!(f <= 1.0 + 1e-12, "{}: f({p}) = {f}", shaping.label());
        }
    }
}
