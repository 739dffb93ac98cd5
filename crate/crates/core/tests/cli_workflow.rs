//! End-to-end runs of the `mnar` binary: artifact determinism, config
//! validation, exit codes, and agreement between CLI output and direct
//! library calls.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mnar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mnar"))
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("mnar-cli-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        Workdir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, content).unwrap();
        p
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        fs::remove_dir_all(&self.0).ok();
    }
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    mnar()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn generate_config() -> &'static str {
    r#"{
        "rows": 12, "cols": 10, "latent_rank": 2,
        "propensity_slope": 3.0, "propensity_center": 0.0, "propensity_floor": 0.1,
        "label_mode": "binary", "seed": 7,
        "mar_test_fraction": 0.25
    }"#
}

#[test]
fn generate_is_byte_deterministic() {
    let work = Workdir::new("gen");
    let cfg = work.write("gen.json", generate_config());
    let out_a = work.path("a");
    let out_b = work.path("b");
    assert!(run("generate", &cfg, &out_a).status.success());
    assert!(run("generate", &cfg, &out_b).status.success());
    let a = fs::read(out_a.join("dataset.json")).unwrap();
    let b = fs::read(out_b.join("dataset.json")).unwrap();
    assert_eq!(a, b, "same config must reproduce identical bytes");
}

#[test]
fn estimate_matches_library_call() {
    let work = Workdir::new("estimate");
    let cfg = work.write("gen.json", generate_config());
    let out = work.path("out");
    assert!(run("generate", &cfg, &out).status.success());

    let dataset_path = out.join("dataset.json");
    let est_cfg = work.write(
        "est.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "dataset"}},
                "estimator": {{"family": "d_ips", "shaping": "log1p",
                               "alpha": {{"objective": {{"w1": 1.0, "w2": 0.1}}}}}},
                "propensity": {{"kind": "oracle"}},
                "seed": 3
            }}"#,
            dataset_path.to_string_lossy()
        ),
    );
    let output = run("estimate", &est_cfg, &out);
    assert!(output.status.success());
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    let cli_value = body["result"]["value"].as_f64().unwrap();

    // identical computation through the library
    use mnar_core::dynamic::{alpha_schedule, JointObjective};
    use mnar_core::estimators::{EstimatorFamily, EstimatorSpec};
    use mnar_core::matrix::{imputed_error, pointwise_error, ErrorKind, ErrorSpec};
    use mnar_core::shaping::ShapingFunction;

    let dataset: mnar_core::cli::config::Dataset = serde_json::from_value(
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&dataset_path).unwrap())
            .unwrap()["result"]
            .clone(),
    )
    .unwrap();
    let y = dataset.y_true;
    let mask = dataset.train_mask.unwrap();
    let p_true = dataset.p_true.unwrap();
    let observed_mean = {
        let mut s = 0.0;
        for u in 0..y.rows() {
            for i in 0..y.cols() {
                if mask.is_observed(u, i) {
                    s += y.get(u, i);
                }
            }
        }
        s / mask.observed_count() as f64
    };
    let err = ErrorSpec::new(ErrorKind::Squared, 1.0, observed_mean).unwrap();
    let y_pred =
        mnar_core::matrix::LabeledMatrix::constant(y.rows(), y.cols(), observed_mean).unwrap();
    let e = pointwise_error(&y, &y_pred, &err).unwrap();
    let e_hat = imputed_error(&y_pred, &err).unwrap();
    let shaping = ShapingFunction::log1p();
    let objective = JointObjective::identity(1.0, 0.1).unwrap();
    let alpha = alpha_schedule(&objective, &shaping, &p_true, true).unwrap();
    let spec = EstimatorSpec::new(EstimatorFamily::DIps)
        .with_shaping(shaping)
        .with_alpha(alpha);
    let lib_value = spec
        .evaluate(&e, Some(&e_hat), Some(&p_true), &mask)
        .unwrap();
    assert!(
        (cli_value - lib_value).abs() <= 1e-12,
        "cli {cli_value} vs library {lib_value}"
    );
}

#[test]
fn unknown_config_key_is_domain_error() {
    let work = Workdir::new("badkey");
    let cfg = work.write(
        "gen.json",
        r#"{"rows": 4, "cols": 4, "latent_rank": 2, "propensity_slope": 1.0,
            "propensity_center": 0.0, "propensity_floor": 0.1,
            "label_mode": "binary", "seed": 1, "not_a_key": 1}"#,
    );
    let out = work.path("out");
    let output = run("generate", &cfg, &out);
    assert_eq!(output.status.code(), Some(1)); // config content is a domain error
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("error"), "stdout: {stdout}");
}

#[test]
fn missing_file_is_io_error() {
    let work = Workdir::new("noent");
    let out = work.path("out");
    let output = run("generate", &work.path("missing.json"), &out);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn domain_error_exits_one() {
    let work = Workdir::new("domain");
    // propensity floor of 0 violates the generator domain
    let cfg = work.write(
        "gen.json",
        r#"{"rows": 4, "cols": 4, "latent_rank": 2, "propensity_slope": 1.0,
            "propensity_center": 0.0, "propensity_floor": 0.0,
            "label_mode": "binary", "seed": 1}"#,
    );
    let out = work.path("out");
    let output = run("generate", &cfg, &out);
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let body: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("floor"));
}

#[test]
fn alpha_csv_matches_closed_form() {
    let work = Workdir::new("alpha");
    let cfg = work.write(
        "alpha.json",
        r#"{"objective": {"w1": 1.0, "w2": 0.25}, "shaping": "identity",
            "p_grid": {"start": 0.2, "stop": 0.5, "points": 2}}"#,
    );
    let out = work.path("out");
    assert!(run("alpha", &cfg, &out).status.success());
    let csv = fs::read_to_string(out.join("alpha.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "p,alpha_opt,h_b,h_v,objective");
    // p = 0.2 row: α = ln(0.4)/ln(0.2) ≈ 0.569323
    let row: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row[0], "0.2");
    let alpha: f64 = row[1].parse().unwrap();
    assert!((alpha - 0.569323).abs() < 1e-5, "{alpha}");
    // p = 0.5 clamps to the unbiased corner at this weight ratio
    let row: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(row[0], "0.5");
    assert_eq!(row[1], "1");
}

#[test]
fn mc_verify_flags_unbiasedness() {
    let work = Workdir::new("mcv");
    let cfg = work.write("gen.json", generate_config());
    let out = work.path("out");
    assert!(run("generate", &cfg, &out).status.success());
    let mc_cfg = work.write(
        "mc.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "dataset"}},
                "estimator": {{"family": "ips"}},
                "propensity": {{"kind": "oracle"}},
                "replicas": 20000,
                "seed": 5,
                "replica_csv": true
            }}"#,
            out.join("dataset.json").to_string_lossy()
        ),
    );
    assert!(run("mc-verify", &mc_cfg, &out).status.success());
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mc_verify.json")).unwrap()).unwrap();
    assert_eq!(body["result"]["checks"]["bias_within_4_se"], true);
    let replicas = fs::read_to_string(out.join("replicas.csv")).unwrap();
    assert_eq!(replicas.lines().count(), 20000 + 2); // provenance + header
}

#[test]
fn analyze_pairs_closed_forms_with_monte_carlo() {
    let work = Workdir::new("analyze");
    let cfg = work.write("gen.json", generate_config());
    let out = work.path("out");
    assert!(run("generate", &cfg, &out).status.success());
    let analyze_cfg = work.write(
        "an.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "dataset"}},
                "estimator": {{"family": "d_dr", "shaping": "log1p",
                               "alpha": {{"objective": {{"w1": 1.0, "w2": 0.1}}}}}},
                "propensity": {{"kind": "oracle"}},
                "rho": 0.05,
                "hypothesis_count": 16,
                "replicas": 5000,
                "seed": 9
            }}"#,
            out.join("dataset.json").to_string_lossy()
        ),
    );
    let output = run("analyze", &analyze_cfg, &out);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    let result = &body["result"];
    assert!(result["closed_form"]["bias"].is_f64());
    assert!(result["closed_form"]["variance"].is_f64());
    assert!(result["closed_form"]["per_cell_bias_factor"]["values"].is_array());
    assert!(result["tail_bound"].is_f64());
    let bound = &result["generalization_bound"];
    assert_eq!(bound["hypothesis_count"], 16);
    let total = bound["generalization_bound"].as_f64().unwrap();
    let parts = bound["point_estimate"].as_f64().unwrap()
        + bound["bias_term"].as_f64().unwrap()
        + bound["variance_term"].as_f64().unwrap();
    assert!((total - parts).abs() < 1e-12);
    // empirical counterpart attached and consistent with the closed form
    let mc = &result["monte_carlo"];
    let emp_var = mc["empirical_variance"].as_f64().unwrap();
    let cf_var = mc["closed_form"]["variance"].as_f64().unwrap();
    assert!(
        (emp_var - cf_var).abs() / cf_var < 0.2,
        "{emp_var} vs {cf_var}"
    );
}

#[test]
fn train_evaluate_round_trip() {
    let work = Workdir::new("train");
    let cfg = work.write("gen.json", generate_config());
    let out = work.path("out");
    assert!(run("generate", &cfg, &out).status.success());
    let dataset = out.join("dataset.json");
    let train_cfg = work.write(
        "train.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "dataset"}},
                "loss": {{"family": "d_dr", "shaping": "log1p",
                          "objective": {{"w1": 1.0, "w2": 0.1}}}},
                "propensity": {{"kind": "oracle"}},
                "train": {{"learning_rate": 10.0, "weight_decay": 1e-6,
                           "epochs": 10, "batch_size": 64, "latent_dim": 2, "seed": 4}}
            }}"#,
            dataset.to_string_lossy()
        ),
    );
    let output = run("train", &train_cfg, &out);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    assert!(out.join("checkpoint.json").exists());

    let eval_cfg = work.write(
        "eval.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "dataset"}},
                "checkpoint": {:?},
                "k": 5
            }}"#,
            dataset.to_string_lossy(),
            out.join("checkpoint.json").to_string_lossy()
        ),
    );
    assert!(run("evaluate", &eval_cfg, &out).status.success());
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    let auc = body["result"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn sweep_emits_one_row_per_combination() {
    let work = Workdir::new("sweep");
    let out = work.path("out");
    let cfg = work.write(
        "sweep.json",
        r#"{
            "generate": {"rows": 16, "cols": 12, "latent_rank": 2,
                         "propensity_slope": 3.0, "propensity_center": 0.0,
                         "propensity_floor": 0.1, "label_mode": "binary",
                         "seed": 11, "mar_test_fraction": 0.25},
            "shapings": ["identity", "log1p"],
            "w2_values": [0.05, 0.1],
            "seeds": 2,
            "base_family": "dr",
            "dynamic_family": "d_dr",
            "propensity": {"kind": "oracle"},
            "train": {"learning_rate": 10.0, "weight_decay": 1e-6,
                      "epochs": 6, "batch_size": 64, "latent_dim": 2, "seed": 0}
        }"#,
    );
    let output = run("sweep", &cfg, &out);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[1],
        "shaping,w2_over_w1,auc_mean,auc_std,ndcg_mean,ndcg_std,gain_auc,gain_ndcg"
    );
    assert_eq!(lines.len(), 2 + 2 * 2, "one row per shaping × ratio");
}

#[test]
fn report_emits_surface_grids() {
    let work = Workdir::new("report");
    let out = work.path("out");
    let cfg = work.write(
        "report.json",
        r#"{"objective": {"w1": 1.0, "w2": 0.1}, "shaping": "log1p",
            "p_points": 5, "alpha_points": 4}"#,
    );
    assert!(run("report", &cfg, &out).status.success());
    let grid = fs::read_to_string(out.join("report_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2 + 5 * 4);
    assert!(grid
        .lines()
        .nth(1)
        .unwrap()
        .contains("objective_square_bias"));
    let optimal = fs::read_to_string(out.join("report_optimal.csv")).unwrap();
    assert_eq!(optimal.lines().count(), 2 + 5);
}

#[test]
fn triples_ingestion_through_estimate() {
    let work = Workdir::new("triples");
    let out = work.path("out");
    let data = work.write("ratings.tsv", "0\t0\t5\n0\t1\t2\n1\t0\t4\n1\t1\t1\n");
    let cfg = work.write(
        "est.json",
        &format!(
            r#"{{
                "data": {{"path": {:?}, "format": "triples", "binarize_threshold": 3.0}},
                "estimator": {{"family": "naive"}},
                "seed": 1
            }}"#,
            data.to_string_lossy()
        ),
    );
    let output = run("estimate", &cfg, &out);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    let body: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(body["result"]["observed_count"], 4);
}
