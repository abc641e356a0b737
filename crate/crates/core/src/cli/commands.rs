use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::bayes::{build_posteriors, predictive_mean, select_layers, Ensemble, EnsembleConfig, LayerSelection, SelectionPolicy};
use crate::datasets::{save_pairing, BenchmarkPairing, DatasetManifest, LabeledSample};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    auroc, format_g9, fpr_at_tpr, id_task_metrics, roc_curve, write_roc_csv, BenchmarkReport, ConfigEcho, Detection,
    ReportMetrics, RocPoint, ScoreSet, REPORT_SCHEMA,
};
use crate::network::{load_model, save_model, train_sgd, EpochLog, Model};
use crate::numerics::Tensor;
use crate::scoring::{calibrate_gamma, classify, nll, score_ensemble, Decision, OodScoreRecord};

pub const MODEL_FILE: &str = "model.blyr";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

fn io_context(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_context(path, e))
}

/// Output directories are never created implicitly.
fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(io_context(dir, io::Error::new(io::ErrorKind::NotFound, "output directory does not exist")))
    }
}

/// Materializes the configured benchmark into `cfg.out`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    let pairing = cfg.load_dataset()?;
    save_pairing(&pairing, &cfg.out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Trains from scratch on the ID training split.
pub fn train_model(cfg: &RunConfig, pairing: &BenchmarkPairing) -> Result<TrainOutcome> {
    let model = cfg.architecture()?.build(pairing.input_shape(), pairing.class_count, pairing.has_boxes(), cfg.seed)?;
    let (model, log) = train_sgd(model, &pairing.id_train, &cfg.train_config())?;
    Ok(TrainOutcome { model, log })
}

/// Trains and writes `model.blyr` and `train_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    require_dir(&cfg.out)?;
    let pairing = cfg.load_dataset()?;
    let outcome = train_model(cfg, &pairing)?;
    let path = cfg.out.join(MODEL_FILE);
    save_model(&outcome.model, &path).map_err(|e| match e {
        Error::Io(io) => io_context(&path, io),
        other => other,
    })?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for e in &outcome.log {
        writeln!(csv, "{},{},{}", e.epoch, e.loss, e.accuracy).expect("string write");
    }
    write_file(&cfg.out.join(TRAIN_LOG_FILE), csv)?;
    Ok(outcome)
}

/// Per-object outcome of the scoring pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub record: OodScoreRecord,
    pub label: usize,
    pub mean_probs: Vec<f64>,
}

/// Everything `eval` computes; files are rendered from this.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: BenchmarkReport,
    pub layers: Vec<String>,
    /// ID test samples first, then OOD, each in dataset order.
    pub samples: Vec<ScoredSample>,
    pub roc: Vec<RocPoint>,
}

impl Evaluation {
    pub fn score_set(&self) -> ScoreSet {
        let pick = |id: bool| self.samples.iter().filter(|s| s.record.is_id_truth == id).map(|s| s.record.score).collect();
        ScoreSet::new(pick(true), pick(false))
    }
}

/// Scores every sample of `tests` with a drawn ensemble, in parallel, gathered
/// positionally.
fn score_samples(
    ensemble: &Ensemble,
    tests: &[(&LabeledSample, bool)],
    cfg: &RunConfig,
    id_offset: usize,
) -> Result<Vec<ScoredSample>> {
    let scoring = cfg.scoring.scoring();
    tests
        .par_iter()
        .enumerate()
        .map(|(i, (sample, is_id))| {
            let preds = ensemble.predict(&sample.input, cfg.bayes.mc_samples)?;
            let s = score_ensemble(&preds, &scoring)?;
            let summary = predictive_mean(&preds)?;
            let predicted_class = Tensor::vector(summary.mean_probs.clone())?.argmax();
            Ok(ScoredSample {
                record: OodScoreRecord {
                    sample_id: id_offset + i,
                    energy_mean: s.energy_mean,
                    score: s.score,
                    score_std: s.score_std,
                    is_id_truth: *is_id,
                    predicted_class,
                    predicted_box: summary.mean_box,
                },
                label: sample.label,
                mean_probs: summary.mean_probs,
            })
        })
        .collect()
}

fn draw_ensemble(model: &Model, cfg: &RunConfig, selection: &LayerSelection) -> Result<(Vec<String>, Ensemble)> {
    let layers = select_layers(model, selection)?;
    let posteriors = build_posteriors(model, &layers, cfg.bayes.alpha, cfg.bayes.epsilon_quantile)?;
    let ens_cfg = EnsembleConfig {
        samples: cfg.bayes.mc_samples,
        seed: cfg.seed,
        max_rejection_attempts: cfg.bayes.max_rejection_attempts,
    };
    Ok((layers, Ensemble::draw(model, &posteriors, &ens_cfg)?))
}

fn config_echo(cfg: &RunConfig, selection: &LayerSelection, layers: &[String]) -> ConfigEcho {
    ConfigEcho {
        policy: if selection.explicit.is_some() { "explicit".into() } else { selection.policy.to_string() },
        layers: layers.to_vec(),
        alpha: cfg.bayes.alpha,
        epsilon_quantile: cfg.bayes.epsilon_quantile,
        mc_samples: cfg.bayes.mc_samples,
        temperature: cfg.scoring.temperature,
        phi: cfg.scoring.phi,
        aggregation: cfg.scoring.aggregation.to_string(),
        tpr_target: cfg.scoring.tpr_target,
        seed: cfg.seed,
    }
}

/// Full inference pipeline: ensemble scoring of every test object, γ
/// calibration on the ID test scores, and the benchmark metrics.
pub fn evaluate(model: &Model, pairing: &BenchmarkPairing, cfg: &RunConfig, selection: &LayerSelection) -> Result<Evaluation> {
    let t0 = Instant::now();
    if pairing.id_test.is_empty() || pairing.ood_test.is_empty() {
        return Err(Error::Dataset("evaluation needs non-empty ID and OOD test splits".into()));
    }
    if pairing.class_count != model.class_count() {
        return Err(Error::Dataset(format!(
            "model predicts {} classes but the dataset has {}",
            model.class_count(),
            pairing.class_count
        )));
    }
    let (layers, ensemble) = draw_ensemble(model, cfg, selection)?;
    let t_draw = t0.elapsed().as_secs_f64();

    let tests: Vec<(&LabeledSample, bool)> = pairing
        .id_test
        .iter()
        .map(|s| (s, true))
        .chain(pairing.ood_test.iter().map(|s| (s, false)))
        .collect();
    let samples = score_samples(&ensemble, &tests, cfg, 0)?;
    let t_score = t0.elapsed().as_secs_f64() - t_draw;

    let (id, ood) = samples.split_at(pairing.id_test.len());
    let scores = ScoreSet::new(id.iter().map(|s| s.record.score).collect(), ood.iter().map(|s| s.record.score).collect());
    let fpr = fpr_at_tpr(&scores, cfg.scoring.tpr_target)?;
    let area = auroc(&scores)?;
    let roc = roc_curve(&scores)?;

    let predictions: Vec<Detection> =
        id.iter().map(|s| Detection { class: s.record.predicted_class, bbox: s.record.predicted_box }).collect();
    let truths: Vec<Detection> = pairing.id_test.iter().map(|s| Detection { class: s.label, bbox: s.bbox }).collect();
    let (id_accuracy, box_iou_accuracy) = id_task_metrics(&predictions, &truths)?;
    let points: Vec<(Vec<f64>, usize)> = id.iter().map(|s| (s.mean_probs.clone(), s.label)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let nonzero = samples.iter().filter(|s| s.record.score_std > 0.0).count() as f64 / samples.len() as f64;

    let metrics = ReportMetrics {
        fpr95: fpr.fpr,
        auroc: area,
        id_accuracy,
        box_iou_accuracy,
        gamma: fpr.gamma,
        nll: nll(&points)?,
        mean_score_id: mean(&scores.id_scores),
        mean_score_ood: mean(&scores.ood_scores),
        score_std_nonzero_fraction: nonzero,
    };
    let timings = BTreeMap::from([
        ("draw_seconds".to_owned(), t_draw),
        ("score_seconds".to_owned(), t_score),
        ("total_seconds".to_owned(), t0.elapsed().as_secs_f64()),
    ]);
    let report = BenchmarkReport {
        schema: REPORT_SCHEMA.into(),
        metrics,
        config: config_echo(cfg, selection, &layers),
        seed: cfg.seed,
        timings,
    };
    Ok(Evaluation { report, layers, samples, roc })
}

fn resolve_model(cfg: &RunConfig, model_path: Option<&Path>) -> PathBuf {
    model_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(MODEL_FILE))
}

fn scores_csv(eval: &Evaluation) -> String {
    let gamma = eval.report.metrics.gamma;
    let mut csv = String::from("sample_id,split,label,energy_mean,score,score_std,predicted_class,decision,box_x_min,box_y_min,box_x_max,box_y_max\n");
    for s in &eval.samples {
        let r = &s.record;
        let split = if r.is_id_truth { "id_test" } else { "ood_test" };
        let decision = match classify(r.score, gamma) {
            Decision::Id => "id",
            Decision::Ood => "ood",
        };
        let bbox = match r.predicted_box {
            Some(b) => b.map(|v| v.to_string()).join(","),
            None => ",,,".into(),
        };
        writeln!(
            csv,
            "{},{split},{},{},{},{},{},{decision},{bbox}",
            r.sample_id, s.label, r.energy_mean, r.score, r.score_std, r.predicted_class
        )
        .expect("string write");
    }
    csv
}

fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    write_file(&dir.join(REPORT_FILE), serde_json::to_string_pretty(&eval.report)? + "\n")?;
    let mut roc = Vec::new();
    write_roc_csv(&eval.roc, &mut roc)?;
    write_file(&dir.join(ROC_FILE), roc)?;
    write_file(&dir.join(SCORES_FILE), scores_csv(eval))
}

/// Evaluates with the configured selection and writes the report, ROC curve
/// and per-sample scores.
pub fn cmd_eval(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Evaluation> {
    require_dir(&cfg.out)?;
    let t0 = Instant::now();
    let model = load_model(resolve_model(cfg, model_path))?;
    let pairing = cfg.load_dataset()?;
    let load = t0.elapsed().as_secs_f64();
    let mut eval = evaluate(&model, &pairing, cfg, &cfg.bayes.selection())?;
    eval.report.timings.insert("load_seconds".into(), load);
    write_evaluation(&eval, &cfg.out)?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub tpr_target: f64,
    pub id_count: usize,
    pub retained: usize,
    pub retained_fraction: f64,
    pub policy: String,
    pub layers: Vec<String>,
    pub seed: u64,
}

/// Calibrates `γ` on the ID test scores alone and writes `calibration.json`.
pub fn cmd_calibrate(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Calibration> {
    require_dir(&cfg.out)?;
    let model = load_model(resolve_model(cfg, model_path))?;
    let pairing = cfg.load_dataset()?;
    if pairing.id_test.is_empty() {
        return Err(Error::Dataset("calibration needs a non-empty ID test split".into()));
    }
    let selection = cfg.bayes.selection();
    let (layers, ensemble) = draw_ensemble(&model, cfg, &selection)?;
    let tests: Vec<(&LabeledSample, bool)> = pairing.id_test.iter().map(|s| (s, true)).collect();
    let scores: Vec<f64> = score_samples(&ensemble, &tests, cfg, 0)?.iter().map(|s| s.record.score).collect();
    let gamma = calibrate_gamma(&scores, cfg.scoring.tpr_target)?;
    let retained = scores.iter().filter(|&&s| classify(s, gamma) == Decision::Id).count();
    let cal = Calibration {
        gamma,
        tpr_target: cfg.scoring.tpr_target,
        id_count: scores.len(),
        retained,
        retained_fraction: retained as f64 / scores.len() as f64,
        policy: config_echo(cfg, &selection, &layers).policy,
        layers,
        seed: cfg.seed,
    };
    write_file(&cfg.out.join(CALIBRATION_FILE), serde_json::to_string_pretty(&cal)? + "\n")?;
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub policy: String,
    pub seed: u64,
    pub layers: Vec<String>,
    pub fpr95: f64,
    pub auroc: f64,
    pub id_accuracy: f64,
    pub box_iou_accuracy: Option<f64>,
    pub gamma: f64,
    pub mean_score_id: f64,
    pub mean_score_ood: f64,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub evaluations: Vec<Evaluation>,
}

/// One evaluation per selection policy, in the fixed ablation order.
pub fn ablate_layers(model: &Model, pairing: &BenchmarkPairing, cfg: &RunConfig) -> Result<Ablation> {
    let mut rows = Vec::with_capacity(SelectionPolicy::ALL.len());
    let mut evaluations = Vec::with_capacity(SelectionPolicy::ALL.len());
    for policy in SelectionPolicy::ALL {
        let eval = evaluate(model, pairing, cfg, &policy.into())?;
        let m = &eval.report.metrics;
        rows.push(AblationRow {
            policy: policy.to_string(),
            seed: cfg.seed,
            layers: eval.layers.clone(),
            fpr95: m.fpr95,
            auroc: m.auroc,
            id_accuracy: m.id_accuracy,
            box_iou_accuracy: m.box_iou_accuracy,
            gamma: m.gamma,
            mean_score_id: m.mean_score_id,
            mean_score_ood: m.mean_score_ood,
        });
        evaluations.push(eval);
    }
    Ok(Ablation { rows, evaluations })
}

/// Runs [`ablate_layers`] and writes `ablation.csv` and `ablation.json`.
pub fn cmd_ablate_layers(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Ablation> {
    require_dir(&cfg.out)?;
    let model = load_model(resolve_model(cfg, model_path))?;
    let pairing = cfg.load_dataset()?;
    let ablation = ablate_layers(&model, &pairing, cfg)?;
    let mut csv = String::from("policy,seed,layers,fpr95,auroc,id_accuracy,box_iou_accuracy,gamma,mean_score_id,mean_score_ood\n");
    for r in &ablation.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.seed,
            r.layers.join(";"),
            r.fpr95,
            r.auroc,
            r.id_accuracy,
            r.box_iou_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.gamma,
            r.mean_score_id,
            r.mean_score_ood
        )
        .expect("string write");
    }
    write_file(&cfg.out.join(ABLATION_CSV), csv)?;
    write_file(&cfg.out.join(ABLATION_JSON), serde_json::to_string_pretty(&ablation.rows)? + "\n")?;
    Ok(ablation)
}

/// Mean and sample standard deviation of one metric across reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// `n − 1` denominator; zero for a single report.
    pub std: f64,
    pub n: usize,
}

type MetricGetter = fn(&ReportMetrics) -> Option<f64>;

/// Aggregates reports that share one configuration (seeds may differ).
pub fn summarize_reports(reports: &[BenchmarkReport]) -> Result<Vec<MetricSummary>> {
    let first = reports.first().ok_or_else(|| Error::Config("no reports to summarize".into()))?;
    for (i, r) in reports.iter().enumerate() {
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Config(format!("report {i} has schema `{}`, expected `{REPORT_SCHEMA}`", r.schema)));
        }
        let strip = |c: &ConfigEcho| ConfigEcho { seed: 0, ..c.clone() };
        if strip(&r.config) != strip(&first.config) {
            return Err(Error::Config(format!(
                "report {i} was produced with a different configuration ({} vs {}); refusing to merge",
                serde_json::to_string(&r.config)?,
                serde_json::to_string(&first.config)?
            )));
        }
        if r.metrics.box_iou_accuracy.is_some() != first.metrics.box_iou_accuracy.is_some() {
            return Err(Error::Config(format!("report {i} disagrees on the presence of box_iou_accuracy")));
        }
    }
    let columns: [(&str, MetricGetter); 9] = [
        ("fpr95", |m| Some(m.fpr95)),
        ("auroc", |m| Some(m.auroc)),
        ("id_accuracy", |m| Some(m.id_accuracy)),
        ("box_iou_accuracy", |m| m.box_iou_accuracy),
        ("gamma", |m| Some(m.gamma)),
        ("nll", |m| Some(m.nll)),
        ("mean_score_id", |m| Some(m.mean_score_id)),
        ("mean_score_ood", |m| Some(m.mean_score_ood)),
        ("score_std_nonzero_fraction", |m| Some(m.score_std_nonzero_fraction)),
    ];
    Ok(columns
        .iter()
        .filter_map(|(name, get)| {
            let values: Vec<f64> = reports.iter().map(|r| get(&r.metrics)).collect::<Option<_>>()?;
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            Some(MetricSummary { metric: (*name).to_owned(), mean, std, n })
        })
        .collect())
}

pub fn render_summary(rows: &[MetricSummary], config: &ConfigEcho) -> String {
    let mut text = format!(
        "policy {} | alpha {} | q {} | T_mc {} | Temp {} | phi {} | {}\n",
        config.policy,
        config.alpha,
        config.epsilon_quantile,
        config.mc_samples,
        config.temperature,
        config.phi,
        config.aggregation
    );
    for r in rows {
        writeln!(text, "{:<28} {:>12} ± {:<12} (n={})", r.metric, format_g9(r.mean), format_g9(r.std), r.n)
            .expect("string write");
    }
    text
}

/// Reads report files, aggregates them and, when `out` is given, writes
/// `summary.csv` and `summary.txt` there.
pub fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<(Vec<MetricSummary>, String)> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_context(p, e))?;
            serde_json::from_str::<BenchmarkReport>(&text)
                .map_err(|e| Error::Config(format!("{}: not a valid report: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize_reports(&reports)?;
    let text = render_summary(&rows, &reports[0].config);
    if let Some(dir) = out {
        require_dir(dir)?;
        let mut csv = String::from("metric,mean,std,n\n");
        for r in &rows {
            writeln!(csv, "{},{},{},{}", r.metric, r.mean, r.std, r.n).expect("string write");
        }
        write_file(&dir.join(SUMMARY_CSV), csv)?;
        write_file(&dir.join(SUMMARY_TXT), &text)?;
    }
    Ok((rows, text))
}
