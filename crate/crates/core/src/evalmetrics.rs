//! Benchmark metrics over ID/OOD score populations. ID is the positive class
//! and a higher score is evidence of ID.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::calibrate_gamma;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Self {
        Self { id_scores, ood_scores }
    }

    fn check(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::invalid(format!(
                "need both populations, got {} ID and {} OOD scores",
                self.id_scores.len(),
                self.ood_scores.len()
            )));
        }
        if self.id_scores.iter().chain(&self.ood_scores).any(|s| s.is_nan()) {
            return Err(Error::NonFinite("score set"));
        }
        Ok(())
    }
}

/// FPR at a calibrated TPR together with the threshold it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprAtTpr {
    pub fpr: f64,
    pub gamma: f64,
}

/// Fraction of OOD scores at or above the `γ` calibrated on the ID scores.
pub fn fpr_at_tpr(scores: &ScoreSet, tpr_target: f64) -> Result<FprAtTpr> {
    scores.check()?;
    let gamma = calibrate_gamma(&scores.id_scores, tpr_target)?;
    let hits = scores.ood_scores.iter().filter(|&&s| s >= gamma).count();
    Ok(FprAtTpr { fpr: hits as f64 / scores.ood_scores.len() as f64, gamma })
}

/// Mann–Whitney AUROC with ties credited one half.
///
/// Sorts once and sweeps groups of equal scores, so the cost is O(n log n).
/// The statistic is accumulated as the integer `2U` and divided once.
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    scores.check()?;
    let mut all: Vec<(f64, bool)> = scores
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut twice_u, mut ood_below) = (0u128, 0u128);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut id_here, mut ood_here) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                id_here += 1;
            } else {
                ood_here += 1;
            }
            j += 1;
        }
        twice_u += id_here * (2 * ood_below + ood_here);
        ood_below += ood_here;
        i = j;
    }
    let pairs = 2 * scores.id_scores.len() as u128 * scores.ood_scores.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points for decreasing thresholds: the `(0, 0)` origin at `+∞`, then one
/// point per distinct observed score, the last of which is `(1, 1)`.
pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    scores.check()?;
    let (n_id, n_ood) = (scores.id_scores.len() as f64, scores.ood_scores.len() as f64);
    let mut all: Vec<(f64, bool)> = scores
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(RocPoint { threshold: t, tpr: tp as f64 / n_id, fpr: fp as f64 / n_ood });
    }
    Ok(curve)
}

/// Trapezoidal area under a curve ordered by non-decreasing FPR.
pub fn trapezoid_area(curve: &[RocPoint]) -> f64 {
    curve.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Renders like C's `%.9g`.
pub fn format_g9(v: f64) -> String {
    format_g(v, 9)
}

fn format_g(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", precision - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= precision as i32 {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - 1 - exp) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `threshold,tpr,fpr` rows.
pub fn write_roc_csv<W: Write>(curve: &[RocPoint], mut out: W) -> Result<()> {
    writeln!(out, "threshold,tpr,fpr")?;
    for p in curve {
        writeln!(out, "{},{},{}", format_g9(p.threshold), format_g9(p.tpr), format_g9(p.fpr))?;
    }
    Ok(())
}

/// Intersection over union of `[x_min, y_min, x_max, y_max]` boxes.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> Result<f64> {
    for bx in [a, b] {
        if bx.iter().any(|v| !v.is_finite()) || bx[0] > bx[2] || bx[1] > bx[3] {
            return Err(Error::invalid(format!("malformed box {bx:?}")));
        }
    }
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |bx: &[f64; 4]| (bx[2] - bx[0]) * (bx[3] - bx[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        // Two degenerate boxes: overlap only if identical.
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok(inter / union)
}

/// A predicted or ground-truth object: class and optional box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub bbox: Option<[f64; 4]>,
}

/// Detection counts as correct at `IoU ≥ 0.5`.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Classification accuracy, and detection accuracy when every pair carries boxes.
pub fn id_task_metrics(predictions: &[Detection], truths: &[Detection]) -> Result<(f64, Option<f64>)> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let n = predictions.len() as f64;
    let mut correct = 0usize;
    let mut detected = Some(0usize);
    for (p, t) in predictions.iter().zip(truths) {
        let hit = p.class == t.class;
        correct += hit as usize;
        detected = match (detected, p.bbox, t.bbox) {
            (Some(d), Some(pb), Some(tb)) => Some(d + (hit && iou(&pb, &tb)? >= IOU_THRESHOLD) as usize),
            _ => None,
        };
    }
    Ok((correct as f64 / n, detected.map(|d| d as f64 / n)))
}

pub const REPORT_SCHEMA: &str = "bayeslayers.report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMetrics {
    pub fpr95: f64,
    pub auroc: f64,
    pub id_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_iou_accuracy: Option<f64>,
    pub gamma: f64,
    pub nll: f64,
    pub mean_score_id: f64,
    pub mean_score_ood: f64,
    /// Fraction of test inputs whose ensemble score spread is non-zero.
    pub score_std_nonzero_fraction: f64,
}

/// Hyperparameters echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub policy: String,
    pub layers: Vec<String>,
    pub alpha: f64,
    pub epsilon_quantile: f64,
    pub mc_samples: usize,
    pub temperature: f64,
    pub phi: f64,
    pub aggregation: String,
    pub tpr_target: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub schema: String,
    pub metrics: ReportMetrics,
    pub config: ConfigEcho,
    pub seed: u64,
    /// Wall-clock seconds per phase; excluded from determinism checks.
    pub timings: BTreeMap<String, f64>,
}
