//! The nine subcommands: generate, estimate, analyze, alpha, mc-verify,
//! train, evaluate, sweep, report.
//!
//! Each takes its JSON config, runs library calls, and writes deterministic
//! artifacts (JSON reports, CSV tables, model checkpoints) into the output
//! directory. Artifact bodies embed the resolved config and its hash;
//! rerunning a config reproduces the bytes exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    bias_variance_report, generalization_bound, tail_bound, AnalyticsOptions, BiasVarianceReport,
    BoundReport,
};
use crate::cli::artifacts::{csv_float, write_csv, write_json};
use crate::cli::config::{
    AlphaCmdConfig, AlphaConfig, AnalyzeConfig, DataConfig, Dataset, ErrorConfig, EstimateConfig,
    EstimatorConfig, EvaluateConfig, GenerateConfig, McVerifyConfig, PropensityConfig,
    ReportConfig, SweepConfig, TrainCmdConfig,
};
use crate::cli::ingest::ingest;
use crate::cli::pipeline::{build_propensity, mnar_split, run_trial, ExperimentData};
use crate::dynamic::{
    alpha_opt_closed_form, alpha_opt_numerical, alpha_schedule, objective_value, JointObjective,
    PenaltyMetric,
};
use crate::estimators::{EstimatorFamily, EstimatorSpec};
use crate::matrix::{
    error_deviation, imputed_error, pointwise_error, LabeledMatrix, ObservationMask,
};
use crate::metrics::{evaluate_model, gain, EvalResult};
use crate::numeric::{kahan_sum, mean_and_variance};
use crate::shaping::ShapingFunction;
use crate::simulation::{
    generate_synthetic, monte_carlo_with_values, replica_rng, sample_mask, MonteCarloResult,
    SyntheticSpec,
};
use crate::training::{train, train_joint, LossSpec, MfModel, TrainConfig};
use crate::{Error, Result};

/// Mask-sampling stream for datasets that carry no train mask.
const CLI_MASK_STREAM: u64 = 2_000_001;

/// Artifact paths written by a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
}

/// Dispatches a subcommand by name on an already-parsed config value.
pub fn run_subcommand(name: &str, config: serde_json::Value, out_dir: &Path) -> Result<RunSummary> {
    let artifacts = match name {
        "generate" => cmd_generate(serde_json::from_value(config)?, out_dir)?,
        "estimate" => cmd_estimate(serde_json::from_value(config)?, out_dir)?,
        "analyze" => cmd_analyze(serde_json::from_value(config)?, out_dir)?,
        "alpha" => cmd_alpha(serde_json::from_value(config)?, out_dir)?,
        "mc-verify" => cmd_mc_verify(serde_json::from_value(config)?, out_dir)?,
        "train" => cmd_train(serde_json::from_value(config)?, out_dir)?,
        "evaluate" => cmd_evaluate(serde_json::from_value(config)?, out_dir)?,
        "sweep" => cmd_sweep(serde_json::from_value(config)?, out_dir)?,
        "report" => cmd_report(serde_json::from_value(config)?, out_dir)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown subcommand '{other}'"
            )));
        }
    };
    Ok(RunSummary { artifacts })
}

/// Applies a `--seed` override to the right place in a subcommand config.
pub fn override_seed(name: &str, config: &mut serde_json::Value, seed: u64) {
    let target = match name {
        "generate" | "estimate" | "analyze" | "mc-verify" => Some("seed"),
        "train" | "sweep" => None, // nested under "train"
        _ => return,
    };
    match target {
        Some(key) => {
            config[key] = serde_json::json!(seed);
        }
        None => {
            if config.get("train").is_some() {
                config["train"]["seed"] = serde_json::json!(seed);
            }
        }
    }
}

impl From<&GenerateConfig> for SyntheticSpec {
    fn from(cfg: &GenerateConfig) -> Self {
        SyntheticSpec {
            rows: cfg.rows,
            cols: cfg.cols,
            latent_rank: cfg.latent_rank,
            propensity_slope: cfg.propensity_slope,
            propensity_center: cfg.propensity_center,
            propensity_floor: cfg.propensity_floor,
            label_mode: cfg.label_mode,
            seed: cfg.seed,
        }
    }
}

fn cmd_generate(cfg: GenerateConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = generate_synthetic(&SyntheticSpec::from(&cfg))?;
    let dataset = if let Some(fraction) = cfg.mar_test_fraction {
        let split = mnar_split(&data, fraction, cfg.seed)?;
        Dataset {
            y_true: split.y,
            p_true: Some(split.p_true),
            train_mask: Some(split.train_mask),
            test_mask: Some(split.test_mask),
        }
    } else {
        let train_mask = if cfg.sample_mask {
            let mut rng = replica_rng(cfg.seed, CLI_MASK_STREAM);
            Some(sample_mask(&data.p_true, &mut rng)?)
        } else {
            None
        };
        Dataset {
            y_true: data.y_true,
            p_true: Some(data.p_true),
            train_mask,
            test_mask: None,
        }
    };
    Ok(vec![write_json(
        out_dir,
        "dataset.json",
        "mnar.dataset.v1",
        &cfg,
        cfg.seed,
        &dataset,
    )?])
}

/// Everything an estimator evaluation needs, assembled from configs.
struct EstimationContext {
    y: LabeledMatrix,
    mask: ObservationMask,
    p_true: Option<LabeledMatrix>,
    p_hat: Option<LabeledMatrix>,
    e: LabeledMatrix,
    e_hat: LabeledMatrix,
    spec: EstimatorSpec,
    observed_mean: f64,
    duplicates: usize,
}

fn observed_mean_of(y: &LabeledMatrix, mask: &ObservationMask) -> Result<f64> {
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservation);
    }
    let sum = kahan_sum(
        y.values()
            .iter()
            .zip(mask.indicators())
            .map(|(&v, o)| o * v),
    );
    Ok(sum / mask.observed_count() as f64)
}

fn load_predictions(
    path: Option<&str>,
    like: &LabeledMatrix,
    fallback: f64,
) -> Result<LabeledMatrix> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let m: LabeledMatrix = serde_json::from_str(&text)?;
            like.check_same_shape(&m)?;
            Ok(m)
        }
        None => LabeledMatrix::constant(like.rows(), like.cols(), fallback),
    }
}

fn build_estimation(
    data_cfg: &DataConfig,
    predictions: Option<&str>,
    estimator_cfg: &EstimatorConfig,
    propensity_cfg: Option<&PropensityConfig>,
    error_cfg: &ErrorConfig,
    seed: u64,
) -> Result<EstimationContext> {
    let ingested = ingest(data_cfg)?;
    let dataset = ingested.dataset;
    let y = dataset.y_true;
    let mask = match dataset.train_mask {
        Some(mask) => mask,
        None => {
            let p = dataset.p_true.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "dataset has neither a train mask nor propensities to sample one".into(),
                )
            })?;
            let mut rng = replica_rng(seed, CLI_MASK_STREAM);
            sample_mask(p, &mut rng)?
        }
    };
    let observed_mean = observed_mean_of(&y, &mask)?;
    let err = error_cfg.resolve(observed_mean)?;
    let y_pred = load_predictions(predictions, &y, observed_mean)?;
    let e = pointwise_error(&y, &y_pred, &err)?;
    let e_hat = imputed_error(&y_pred, &err)?;

    let needs_p_hat = matches!(
        estimator_cfg.family,
        EstimatorFamily::Ips
            | EstimatorFamily::Snips
            | EstimatorFamily::Dr
            | EstimatorFamily::DIps
            | EstimatorFamily::DDr
            | EstimatorFamily::DSnips
    );
    let p_hat = if needs_p_hat {
        let cfg = propensity_cfg.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "estimator '{}' needs a propensity config",
                estimator_cfg.family.name()
            ))
        })?;
        let model = build_propensity(cfg, dataset.p_true.as_ref(), &mask)?;
        Some(model.propensities(y.rows(), y.cols())?)
    } else {
        None
    };

    let shaping = estimator_cfg.shaping_function()?;
    let alpha = match (&estimator_cfg.alpha, estimator_cfg.family.is_dynamic()) {
        (Some(AlphaConfig::Constant(c)), _) => {
            Some(LabeledMatrix::constant(y.rows(), y.cols(), *c)?)
        }
        (Some(AlphaConfig::Objective(obj)), _) => {
            let shaping = shaping.as_ref().ok_or_else(|| {
                Error::InvalidConfig("alpha objective needs a shaping function".into())
            })?;
            let p_hat = p_hat
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("alpha objective needs propensities".into()))?;
            Some(alpha_schedule(obj, shaping, p_hat, true)?)
        }
        (None, true) => {
            return Err(Error::InvalidConfig(
                "dynamic estimators need an alpha config (constant or objective)".into(),
            ))
        }
        (None, false) => None,
    };

    let mut spec = EstimatorSpec::new(estimator_cfg.family)
        .with_snips_normalizer(estimator_cfg.snips_normalizer);
    if let Some(shaping) = shaping {
        spec = spec.with_shaping(shaping);
    }
    if let Some(alpha) = alpha {
        spec = spec.with_alpha(alpha);
    }

    Ok(EstimationContext {
        y,
        mask,
        p_true: dataset.p_true,
        p_hat,
        e,
        e_hat,
        spec,
        observed_mean,
        duplicates: ingested.duplicates,
    })
}

fn cmd_estimate(cfg: EstimateConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ctx = build_estimation(
        &cfg.data,
        cfg.predictions.as_deref(),
        &cfg.estimator,
        cfg.propensity.as_ref(),
        &cfg.error,
        cfg.seed,
    )?;
    let value = ctx
        .spec
        .evaluate(&ctx.e, Some(&ctx.e_hat), ctx.p_hat.as_ref(), &ctx.mask)?;
    let result = serde_json::json!({
        "family": ctx.spec.family.name(),
        "value": value,
        "observed_count": ctx.mask.observed_count(),
        "cells": ctx.y.len(),
        "observed_mean": ctx.observed_mean,
        "duplicates": ctx.duplicates,
    });
    Ok(vec![write_json(
        out_dir,
        "estimate.json",
        "mnar.estimate.v1",
        &cfg,
        cfg.seed,
        &result,
    )?])
}

/// Closed-form analytics paired with their empirical counterparts.
#[derive(Debug, Serialize)]
struct AnalysisReport {
    closed_form: BiasVarianceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generalization_bound: Option<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<MonteCarloResult>,
}

fn cmd_analyze(cfg: AnalyzeConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ctx = build_estimation(
        &cfg.data,
        cfg.predictions.as_deref(),
        &cfg.estimator,
        cfg.propensity.as_ref(),
        &cfg.error,
        cfg.seed,
    )?;
    let p_true = ctx.p_true.as_ref().ok_or_else(|| {
        Error::InvalidConfig("closed-form analytics need true propensities (p_true)".into())
    })?;
    let opts = AnalyticsOptions {
        naive_bias_formula: cfg.naive_bias_formula,
        tail_denominator: cfg.tail_denominator,
    };
    let expected_count = kahan_sum(p_true.values().iter().copied());
    let mut inputs = crate::analytics::ClosedFormInputs::new(&ctx.e, p_true)
        .with_e_hat(&ctx.e_hat)
        .with_observed_count(expected_count);
    if let Some(p_hat) = ctx.p_hat.as_ref() {
        inputs = inputs.with_p_hat(p_hat);
    }
    if let Some(shaping) = ctx.spec.shaping.as_ref() {
        inputs = inputs.with_shaping(shaping);
    }
    if let Some(alpha) = ctx.spec.alpha.as_ref() {
        inputs = inputs.with_alpha(alpha);
    }
    let closed_form = bias_variance_report(ctx.spec.family, &inputs, &opts)?;

    let (tail, bound) =
        if ctx.spec.family.is_dynamic() && ctx.spec.family != EstimatorFamily::DSnips {
            let shaping = ctx.spec.shaping.as_ref().expect("dynamic spec");
            let alpha = ctx.spec.alpha.as_ref().expect("dynamic spec");
            let p_hat = ctx.p_hat.as_ref().expect("dynamic spec");
            let z = match ctx.spec.family {
                EstimatorFamily::DIps => ctx.e.clone(),
                _ => error_deviation(&ctx.e, &ctx.e_hat)?,
            };
            let t = tail_bound(ctx.spec.family, &z, p_hat, shaping, alpha, cfg.rho, &opts)?;
            let point =
                ctx.spec
                    .evaluate(&ctx.e, Some(&ctx.e_hat), ctx.p_hat.as_ref(), &ctx.mask)?;
            // The current errors stand in for both the selected and worst-case
            // hypotheses; the hypothesis space itself is never enumerated.
            let b = generalization_bound(
                ctx.spec.family,
                point,
                &z,
                &z,
                p_true,
                p_hat,
                shaping,
                alpha,
                cfg.rho,
                cfg.hypothesis_count,
            )?;
            (Some(t), Some(b))
        } else {
            (None, None)
        };

    let monte_carlo = if cfg.replicas > 0 {
        let (mc, _) = monte_carlo_with_values(
            &ctx.spec,
            &ctx.e,
            Some(&ctx.e_hat),
            p_true,
            ctx.p_hat.as_ref(),
            cfg.replicas,
            cfg.seed,
        )?;
        Some(mc)
    } else {
        None
    };

    let report = AnalysisReport {
        closed_form,
        tail_bound: tail,
        generalization_bound: bound,
        monte_carlo,
    };
    Ok(vec![write_json(
        out_dir,
        "analysis.json",
        "mnar.analysis.v1",
        &cfg,
        cfg.seed,
        &report,
    )?])
}

fn cmd_alpha(cfg: AlphaCmdConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let shaping = ShapingFunction::from_name(&cfg.shaping)?;
    let ps = cfg.p_grid.values()?;
    let mut rows = Vec::with_capacity(ps.len());
    for &p in &ps {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain("grid propensity", p));
        }
        let alpha = if cfg.objective.has_identity_metrics() {
            alpha_opt_closed_form(&cfg.objective, &shaping, p)?
        } else {
            alpha_opt_numerical(&cfg.objective, &shaping, p, p, 1e-9)?
        };
        let hb = crate::analytics::h_b(&shaping, p, p, alpha)?;
        let hv = crate::analytics::h_v(&shaping, p, p, alpha)?;
        let obj = objective_value(&cfg.objective, &shaping, p, p, alpha)?;
        rows.push(vec![
            csv_float(p),
            csv_float(alpha),
            csv_float(hb),
            csv_float(hv),
            csv_float(obj),
        ]);
    }
    Ok(vec![write_csv(
        out_dir,
        "alpha.csv",
        &cfg,
        0,
        &["p", "alpha_opt", "h_b", "h_v", "objective"],
        &rows,
    )?])
}

fn cmd_mc_verify(cfg: McVerifyConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ctx = build_estimation(
        &cfg.data,
        cfg.predictions.as_deref(),
        &cfg.estimator,
        cfg.propensity.as_ref(),
        &cfg.error,
        cfg.seed,
    )?;
    let p_true = ctx.p_true.as_ref().ok_or_else(|| {
        Error::InvalidConfig("mc-verify needs true propensities (p_true) to draw masks".into())
    })?;
    let (mc, values) = monte_carlo_with_values(
        &ctx.spec,
        &ctx.e,
        Some(&ctx.e_hat),
        p_true,
        ctx.p_hat.as_ref(),
        cfg.replicas,
        cfg.seed,
    )?;
    let bias_within_4_se = mc.empirical_bias <= 4.0 * mc.standard_error + 1e-12;
    let variance_within_3_percent = mc.closed_form.as_ref().map(|cf| {
        if cf.variance == 0.0 {
            mc.empirical_variance == 0.0
        } else {
            (mc.empirical_variance - cf.variance).abs() <= 0.03 * cf.variance
        }
    });
    let result = serde_json::json!({
        "monte_carlo": mc,
        "checks": {
            "bias_within_4_se": bias_within_4_se,
            "variance_within_3_percent": variance_within_3_percent,
        },
    });
    let mut artifacts = vec![write_json(
        out_dir,
        "mc_verify.json",
        "mnar.mc_verify.v1",
        &cfg,
        cfg.seed,
        &result,
    )?];
    if cfg.replica_csv {
        let rows: Vec<Vec<String>> = values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), csv_float(*v)])
            .collect();
        artifacts.push(write_csv(
            out_dir,
            "replicas.csv",
            &cfg,
            cfg.seed,
            &["replica", "value"],
            &rows,
        )?);
    }
    Ok(artifacts)
}

/// Model checkpoint: binary-free JSON, readable by `evaluate`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: MfModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation: Option<MfModel>,
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation_losses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<LabeledMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

fn loss_spec_from_config(
    loss_cfg: &crate::cli::config::LossConfig,
    observed_mean: f64,
) -> Result<LossSpec> {
    let mut loss =
        LossSpec::new(loss_cfg.family).with_imputation(loss_cfg.error.resolve(observed_mean)?);
    if let Some(name) = &loss_cfg.shaping {
        loss = loss.with_shaping(ShapingFunction::from_name(name)?);
    }
    if let Some(obj) = &loss_cfg.objective {
        loss = loss.with_objective(*obj);
    }
    Ok(loss)
}

fn cmd_train(cfg: TrainCmdConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ingested = ingest(&cfg.data)?;
    let dataset = ingested.dataset;
    let y = dataset.y_true;
    let mask = dataset
        .train_mask
        .ok_or_else(|| Error::InvalidConfig("training needs a train mask in the dataset".into()))?;
    let observed_mean = observed_mean_of(&y, &mask)?;
    let loss = loss_spec_from_config(&cfg.loss, observed_mean)?;
    let propensity = build_propensity(&cfg.propensity, dataset.p_true.as_ref(), &mask)?;
    let train_cfg = TrainConfig::from(cfg.train);

    let checkpoint = if cfg.joint {
        let imp_cfg = TrainConfig::from(cfg.imputation_train.unwrap_or(cfg.train));
        let joint = train_joint(&y, &mask, &propensity, &loss, &train_cfg, &imp_cfg)?;
        Checkpoint {
            model: joint.prediction,
            imputation: Some(joint.imputation),
            epoch_losses: joint.prediction_losses,
            imputation_losses: Some(joint.imputation_losses),
            alpha: joint.alpha,
            gamma: Some(observed_mean),
        }
    } else {
        let trained = train(&y, &mask, &propensity, &loss, &train_cfg)?;
        Checkpoint {
            model: trained.model,
            imputation: None,
            epoch_losses: trained.epoch_losses,
            imputation_losses: None,
            alpha: trained.alpha,
            gamma: Some(trained.gamma),
        }
    };

    let checkpoint_path = write_json(
        out_dir,
        "checkpoint.json",
        "mnar.checkpoint.v1",
        &cfg,
        cfg.train.seed,
        &checkpoint,
    )?;
    let report = serde_json::json!({
        "epoch_losses": checkpoint.epoch_losses,
        "imputation_losses": checkpoint.imputation_losses,
        "gamma": checkpoint.gamma,
        "observed_count": mask.observed_count(),
        "duplicates": ingested.duplicates,
        "checkpoint": checkpoint_path,
    });
    let report_path = write_json(
        out_dir,
        "train_report.json",
        "mnar.train.v1",
        &cfg,
        cfg.train.seed,
        &report,
    )?;
    Ok(vec![checkpoint_path, report_path])
}

fn cmd_evaluate(cfg: EvaluateConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ingested = ingest(&cfg.data)?;
    let dataset = ingested.dataset;
    let test_mask = dataset.test_mask.ok_or_else(|| {
        Error::InvalidConfig("evaluation needs a test mask in the dataset".into())
    })?;
    let checkpoint: Checkpoint = crate::cli::artifacts::read_enveloped(Path::new(&cfg.checkpoint))?;
    let eval = evaluate_model(&checkpoint.model, &dataset.y_true, &test_mask, cfg.k)?;
    Ok(vec![write_json(
        out_dir,
        "evaluation.json",
        "mnar.evaluation.v1",
        &cfg,
        0,
        &eval,
    )?])
}

fn aggregate(evals: &[EvalResult]) -> (f64, f64, f64, f64) {
    let aucs: Vec<f64> = evals.iter().map(|e| e.auc).collect();
    let ndcgs: Vec<f64> = evals.iter().map(|e| e.ndcg_at_k).collect();
    let (auc_mean, auc_var) = mean_and_variance(&aucs);
    let (ndcg_mean, ndcg_var) = mean_and_variance(&ndcgs);
    (auc_mean, auc_var.sqrt(), ndcg_mean, ndcg_var.sqrt())
}

fn cmd_sweep(cfg: SweepConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if cfg.seeds == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one seed".into()));
    }
    if !cfg.dynamic_family.is_dynamic() {
        return Err(Error::InvalidConfig(format!(
            "'{}' is not a dynamic family",
            cfg.dynamic_family.name()
        )));
    }
    let data = generate_synthetic(&SyntheticSpec::from(&cfg.generate))?;
    let test_fraction = cfg.generate.mar_test_fraction.unwrap_or(0.2);
    let train_cfg = TrainConfig::from(cfg.train);

    // one split per seed; every family sees the same realizations
    let mut splits: Vec<ExperimentData> = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds {
        splits.push(mnar_split(
            &data,
            test_fraction,
            cfg.generate.seed + s as u64,
        )?);
    }

    let trial = |exp: &ExperimentData, loss: &LossSpec, seed: u64| -> Result<EvalResult> {
        let cfg_seeded = TrainConfig { seed, ..train_cfg };
        let (_, eval) = run_trial(exp, loss, &cfg.propensity, &cfg_seeded, cfg.k)?;
        Ok(eval)
    };

    let base_evals: Vec<EvalResult> = splits
        .iter()
        .enumerate()
        .map(|(s, exp)| trial(exp, &LossSpec::new(cfg.base_family), s as u64))
        .collect::<Result<_>>()?;
    let (base_auc, _, base_ndcg, _) = aggregate(&base_evals);

    let mut rows = Vec::new();
    for shaping_name in &cfg.shapings {
        let shaping = ShapingFunction::from_name(shaping_name)?;
        for &w2 in &cfg.w2_values {
            let objective = JointObjective::identity(cfg.w1, w2)?;
            let evals: Vec<EvalResult> = splits
                .iter()
                .enumerate()
                .map(|(s, exp)| {
                    let loss = LossSpec::new(cfg.dynamic_family)
                        .with_shaping(shaping.clone())
                        .with_objective(objective);
                    trial(exp, &loss, s as u64)
                })
                .collect::<Result<_>>()?;
            let (auc_mean, auc_std, ndcg_mean, ndcg_std) = aggregate(&evals);
            rows.push(vec![
                shaping_name.clone(),
                csv_float(w2 / cfg.w1),
                csv_float(auc_mean),
                csv_float(auc_std),
                csv_float(ndcg_mean),
                csv_float(ndcg_std),
                csv_float(gain(base_auc, auc_mean)?),
                csv_float(gain(base_ndcg, ndcg_mean)?),
            ]);
        }
    }
    Ok(vec![write_csv(
        out_dir,
        "sweep.csv",
        &cfg,
        cfg.generate.seed,
        &[
            "shaping",
            "w2_over_w1",
            "auc_mean",
            "auc_std",
            "ndcg_mean",
            "ndcg_std",
            "gain_auc",
            "gain_ndcg",
        ],
        &rows,
    )?])
}

fn cmd_report(cfg: ReportConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let shaping = ShapingFunction::from_name(&cfg.shaping)?;
    if cfg.p_points < 2 || cfg.alpha_points < 2 {
        return Err(Error::InvalidConfig(
            "report grids need at least 2 points".into(),
        ));
    }
    // p stays inside (0, 1); the surfaces blow up at the ends otherwise
    let p_at = |i: usize| 0.01 + (0.98 * i as f64) / (cfg.p_points - 1) as f64;
    let alpha_at = |j: usize| j as f64 / (cfg.alpha_points - 1) as f64;
    let square_bias = JointObjective::new(
        cfg.objective.w1,
        cfg.objective.w2,
        PenaltyMetric::Square,
        cfg.objective.variance_metric,
    )?;

    let mut grid_rows = Vec::with_capacity(cfg.p_points * cfg.alpha_points);
    for i in 0..cfg.p_points {
        let p = p_at(i);
        for j in 0..cfg.alpha_points {
            let a = alpha_at(j);
            let hb = crate::analytics::h_b(&shaping, p, p, a)?;
            let hv = crate::analytics::h_v(&shaping, p, p, a)?;
            grid_rows.push(vec![
                csv_float(p),
                csv_float(a),
                csv_float(hb),
                csv_float(hv),
                csv_float(objective_value(&cfg.objective, &shaping, p, p, a)?),
                csv_float(objective_value(&square_bias, &shaping, p, p, a)?),
            ]);
        }
    }
    let grid = write_csv(
        out_dir,
        "report_grid.csv",
        &cfg,
        0,
        &[
            "p",
            "alpha",
            "h_b",
            "h_v",
            "objective",
            "objective_square_bias",
        ],
        &grid_rows,
    )?;

    let mut opt_rows = Vec::with_capacity(cfg.p_points);
    for i in 0..cfg.p_points {
        let p = p_at(i);
        let alpha = if cfg.objective.has_identity_metrics() {
            alpha_opt_closed_form(&cfg.objective, &shaping, p)?
        } else {
            alpha_opt_numerical(&cfg.objective, &shaping, p, p, 1e-9)?
        };
        opt_rows.push(vec![
            csv_float(p),
            csv_float(alpha),
            csv_float(objective_value(&cfg.objective, &shaping, p, p, alpha)?),
        ]);
    }
    let optimal = write_csv(
        out_dir,
        "report_optimal.csv",
        &cfg,
        0,
        &["p", "alpha_opt", "objective_opt"],
        &opt_rows,
    )?;
    Ok(vec![grid, optimal])
}
