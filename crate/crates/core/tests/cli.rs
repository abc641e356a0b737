use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bayeslayers::cli::{self, cmd_report, MetricSummary};
use bayeslayers::datasets::{DatasetManifest, IdxArray, IdxData, MANIFEST_FILE};
use bayeslayers::evalmetrics::{BenchmarkReport, ConfigEcho, ReportMetrics, REPORT_SCHEMA};
use serde_json::{json, Value};
use tempfile::TempDir;

fn write_config(dir: &Path, config: Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn blobs_config(extra: Value) -> Value {
    let mut base = json!({
        "dataset": {"kind": "blobs", "n_per_class": 60},
        "architecture": "micro-mlp",
        "train": {"epochs": 10},
        "bayes": {"policy": "linear_all", "mc_samples": 8},
        "out": "."
    });
    merge(&mut base, extra);
    base
}

fn dir_config(path: &Path) -> Value {
    let mut cfg = blobs_config(json!({}));
    cfg["dataset"] = json!({"kind": "dir", "path": path});
    cfg
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["bayeslayers", cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli::run(args)
}

fn workspace(config: Value) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), config);
    (dir, cfg)
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let (dir, cfg) = workspace(blobs_config(json!({})));
    for cmd in ["gen-data", "train", "eval", "calibrate", "ablate-layers"] {
        assert_eq!(run(cmd, &cfg, &[]), 0, "{cmd}");
    }
    for f in [
        MANIFEST_FILE,
        cli::MODEL_FILE,
        cli::TRAIN_LOG_FILE,
        cli::REPORT_FILE,
        cli::ROC_FILE,
        cli::SCORES_FILE,
        cli::CALIBRATION_FILE,
        cli::ABLATION_CSV,
        cli::ABLATION_JSON,
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(dir.path().join(cli::TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,loss,accuracy"));
    assert_eq!(log.lines().count(), 11);
    let roc = fs::read_to_string(dir.path().join(cli::ROC_FILE)).unwrap();
    assert!(roc.starts_with("threshold,tpr,fpr\ninf,0,0\n"));
    assert!(roc.trim_end().ends_with(",1,1"));
}

#[test]
fn gen_data_is_deterministic_and_reloadable() {
    let (a, cfg_a) = workspace(blobs_config(json!({})));
    let (b, cfg_b) = workspace(blobs_config(json!({})));
    assert_eq!(run("gen-data", &cfg_a, &[]), 0);
    assert_eq!(run("gen-data", &cfg_b, &[]), 0);
    let manifest = |d: &TempDir| -> DatasetManifest {
        serde_json::from_str(&fs::read_to_string(d.path().join(MANIFEST_FILE)).unwrap()).unwrap()
    };
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(manifest(&a).digest.len(), 64);
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".idx") {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
    }

    // A different generator seed changes the digest.
    let (c, cfg_c) = workspace(blobs_config(json!({"dataset": {"seed": 1}})));
    assert_eq!(run("gen-data", &cfg_c, &[]), 0);
    assert_ne!(manifest(&a).digest, manifest(&c).digest);

    // The written directory trains like the generator it came from.
    let (d, cfg_d) = workspace(dir_config(a.path()));
    assert_eq!(run("train", &cfg_d, &[]), 0);
    assert_eq!(run("train", &cfg_b, &[]), 0);
    assert_eq!(fs::read(d.path().join(cli::MODEL_FILE)).unwrap(), fs::read(b.path().join(cli::MODEL_FILE)).unwrap());
}

#[test]
fn tampered_dataset_directory_is_rejected() {
    let (a, cfg_a) = workspace(blobs_config(json!({})));
    assert_eq!(run("gen-data", &cfg_a, &[]), 0);
    let labels = a.path().join("id_train_labels.idx");
    let mut bytes = fs::read(&labels).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&labels, bytes).unwrap();
    let (_d, cfg_d) = workspace(dir_config(a.path()));
    assert_eq!(run("train", &cfg_d, &[]), 3);
}

#[test]
fn exit_codes() {
    let (dir, cfg) = workspace(blobs_config(json!({})));
    assert_eq!(cli::run(["bayeslayers"]), 2);
    assert_eq!(cli::run(["bayeslayers", "--help"]), 0);
    assert_eq!(cli::run(["bayeslayers", "train", "--config", "/nonexistent/config.json"]), 2);
    assert_eq!(run("train", &cfg, &["--out", dir.path().join("missing").to_str().unwrap()]), 3);
    assert_eq!(run("eval", &cfg, &[]), 3, "no model yet");

    let (_bad, bad_cfg) = workspace(json!({"bayes": {"sigma": 1.0}}));
    assert_eq!(run("train", &bad_cfg, &[]), 2);
    let (_bad, bad_cfg) = workspace(blobs_config(json!({"bayes": {"epsilon_quantile": 1.5}})));
    assert_eq!(run("eval", &bad_cfg, &[]), 2);

    let (_div, div_cfg) = workspace(blobs_config(json!({"train": {"learning_rate": 1e200}})));
    assert_eq!(run("train", &div_cfg, &[]), 4);

    let (ex, ex_cfg) =
        workspace(blobs_config(json!({"bayes": {"policy": "full", "epsilon_quantile": 0.999999, "max_rejection_attempts": 1}})));
    assert_eq!(run("train", &ex_cfg, &[]), 0);
    assert_eq!(run("eval", &ex_cfg, &[]), 5);
    assert!(!ex.path().join(cli::REPORT_FILE).exists());
}

#[test]
fn flags_override_config() {
    let (dir, cfg) = workspace(blobs_config(json!({"seed": 1})));
    let other = tempfile::tempdir().unwrap();
    assert_eq!(run("train", &cfg, &["--seed", "2", "--out", other.path().to_str().unwrap()]), 0);
    assert_eq!(run("eval", &cfg, &["--seed", "2", "--out", other.path().to_str().unwrap()]), 0);
    assert!(!dir.path().join(cli::MODEL_FILE).exists());
    let report: BenchmarkReport =
        serde_json::from_str(&fs::read_to_string(other.path().join(cli::REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report.seed, 2);
    assert_eq!(report.config.seed, 2);
}

#[test]
fn policy_none_ignores_sample_count() {
    let outputs: Vec<(Vec<u8>, ReportMetrics)> = [1, 30]
        .iter()
        .map(|&t| {
            let (dir, cfg) = workspace(blobs_config(json!({"bayes": {"policy": "none", "mc_samples": t}})));
            assert_eq!(run("train", &cfg, &[]), 0);
            assert_eq!(run("eval", &cfg, &[]), 0);
            let report: BenchmarkReport =
                serde_json::from_str(&fs::read_to_string(dir.path().join(cli::REPORT_FILE)).unwrap()).unwrap();
            assert_eq!(report.metrics.score_std_nonzero_fraction, 0.0);
            (fs::read(dir.path().join(cli::SCORES_FILE)).unwrap(), report.metrics)
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

fn report(seed: u64, fpr95: f64, auroc: f64, alpha: f64) -> BenchmarkReport {
    BenchmarkReport {
        schema: REPORT_SCHEMA.into(),
        metrics: ReportMetrics {
            fpr95,
            auroc,
            id_accuracy: 0.9,
            box_iou_accuracy: None,
            gamma: 0.5,
            nll: 0.25,
            mean_score_id: 0.8,
            mean_score_ood: 0.4,
            score_std_nonzero_fraction: 1.0,
        },
        config: ConfigEcho {
            policy: "conv_all".into(),
            layers: vec!["conv1".into(), "conv2".into()],
            alpha,
            epsilon_quantile: 0.05,
            mc_samples: 30,
            temperature: 1.0,
            phi: 1.0,
            aggregation: "mean_score".into(),
            tpr_target: 0.95,
            seed,
        },
        seed,
        timings: BTreeMap::from([("total_seconds".to_string(), 1.5)]),
    }
}

fn write_reports(dir: &Path, reports: &[BenchmarkReport]) -> Vec<PathBuf> {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = dir.join(format!("report{i}.json"));
            fs::write(&p, serde_json::to_string(r).unwrap()).unwrap();
            p
        })
        .collect()
}

fn summary<'a>(rows: &'a [MetricSummary], metric: &str) -> &'a MetricSummary {
    rows.iter().find(|r| r.metric == metric).unwrap()
}

#[test]
fn report_aggregates_mean_and_sample_std() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_reports(dir.path(), &[report(0, 0.2, 0.9, 0.05), report(1, 0.4, 0.7, 0.05), report(2, 0.3, 0.8, 0.05)]);
    let (rows, text) = cmd_report(&paths, Some(dir.path())).unwrap();
    let fpr = summary(&rows, "fpr95");
    assert!((fpr.mean - 0.3).abs() < 1e-15);
    assert!((fpr.std - 0.1).abs() < 1e-15);
    assert_eq!(fpr.n, 3);
    assert_eq!(summary(&rows, "nll").std, 0.0);
    assert!(rows.iter().all(|r| r.metric != "box_iou_accuracy"));
    assert!(text.contains("policy conv_all"));
    let csv = fs::read_to_string(dir.path().join(cli::SUMMARY_CSV)).unwrap();
    assert!(csv.starts_with("metric,mean,std,n\nfpr95,"));
    assert!(dir.path().join(cli::SUMMARY_TXT).is_file());

    let (single, _) = cmd_report(&paths[..1], None).unwrap();
    assert!(single.iter().all(|r| r.std == 0.0 && r.n == 1));
    assert_eq!(summary(&single, "fpr95").mean, 0.2);
}

#[test]
fn report_refuses_mixed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_reports(dir.path(), &[report(0, 0.2, 0.9, 0.05), report(1, 0.4, 0.7, 0.1)]);
    let args: Vec<&str> =
        ["bayeslayers", "report"].into_iter().chain(paths.iter().map(|p| p.to_str().unwrap())).collect();
    assert_eq!(cli::run(args), 2);
    fs::write(&paths[1], "{\"schema\": \"other\"}").unwrap();
    assert_eq!(cmd_report(&paths, None).unwrap_err().exit_code(), 2);
}

#[test]
fn emitted_report_round_trips() {
    let (dir, cfg) = workspace(blobs_config(json!({})));
    assert_eq!(run("train", &cfg, &[]), 0);
    assert_eq!(run("eval", &cfg, &[]), 0);
    let text = fs::read_to_string(dir.path().join(cli::REPORT_FILE)).unwrap();
    let report: BenchmarkReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.schema, REPORT_SCHEMA);
    let again: BenchmarkReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
    let reports = [dir.path().join(cli::REPORT_FILE)];
    let (rows, _) = cmd_report(&reports, None).unwrap();
    assert_eq!(summary(&rows, "auroc").mean, report.metrics.auroc);
}

/// Four 8×8 patterns (horizontal bar, vertical bar, diagonal, border) with
/// pixel jitter; labels 0..4.
fn write_idx_pair(dir: &Path, n_per_label: usize) {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_per_label {
        for label in 0..4u8 {
            for y in 0..8 {
                for x in 0..8 {
                    let on = match label {
                        0 => y == 3 || y == 4,
                        1 => x == 3 || x == 4,
                        2 => x == y,
                        _ => x == 0 || y == 0 || x == 7 || y == 7,
                    };
                    let jitter = ((i * 31 + x * 7 + y * 13) % 40) as u8;
                    pixels.push(if on { 215 + jitter } else { jitter });
                }
            }
            labels.push(label);
        }
    }
    let n = labels.len();
    fs::write(dir.join("images.idx"), IdxArray { dims: vec![n, 8, 8], data: IdxData::U8(pixels) }.to_bytes()).unwrap();
    fs::write(dir.join("labels.idx"), IdxArray { dims: vec![n], data: IdxData::U8(labels) }.to_bytes()).unwrap();
}

#[test]
fn idx_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    write_idx_pair(dir.path(), 25);
    let cfg = write_config(
        dir.path(),
        json!({
            "dataset": {"kind": "idx", "images": "images.idx", "labels": "labels.idx", "id_labels": [0, 1, 2]},
            "architecture": "micro-cnn",
            "train": {"epochs": 15},
            "bayes": {"policy": "conv_all", "mc_samples": 4},
            "out": "."
        }),
    );
    for cmd in ["gen-data", "train", "eval"] {
        assert_eq!(run(cmd, &cfg, &[]), 0, "{cmd}");
    }
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.generator, "idx");
    assert_eq!((manifest.counts.id_train + manifest.counts.id_test, manifest.counts.ood_test), (75, 25));
    assert!(!manifest.has_boxes);
    let scores = fs::read_to_string(dir.path().join(cli::SCORES_FILE)).unwrap();
    assert_eq!(scores.lines().count(), 1 + manifest.counts.id_test + 25);
    let report: BenchmarkReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join(cli::REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report.config.layers, ["conv1", "conv2"]);
    assert!(report.metrics.box_iou_accuracy.is_none());
    assert!(report.metrics.id_accuracy > 0.9, "{}", report.metrics.id_accuracy);

    fs::write(dir.path().join("labels.idx"), [0u8, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2]).unwrap();
    assert_eq!(run("train", &cfg, &[]), 3);
}
