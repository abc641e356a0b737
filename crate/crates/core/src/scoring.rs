//! Energy score, the logistic OOD uncertainty score, threshold calibration and
//! the ID/OOD decision rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Prediction;
use crate::numerics::{log_sum_exp, mean, Tensor};

/// Largest `f64` strictly below one.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

/// Floor applied to probabilities before taking logs in [`nll`].
pub const PROB_FLOOR: f64 = 1e-300;

/// How ensemble members combine into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average of per-member scores.
    #[default]
    MeanScore,
    /// Score of the member-averaged logits.
    ScoreOfMeanLogits,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MeanScore => "mean_score",
            Self::ScoreOfMeanLogits => "score_of_mean_logits",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_score" => Ok(Self::MeanScore),
            "score_of_mean_logits" => Ok(Self::ScoreOfMeanLogits),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub temperature: f64,
    pub phi: f64,
    pub aggregation: Aggregation,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { temperature: 1.0, phi: 1.0, aggregation: Aggregation::MeanScore }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::Config(format!("phi must be positive, got {}", self.phi)));
        }
        Ok(())
    }
}

/// `E = −Temp · log Σ_k exp(f_k)`.
pub fn energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    Ok(-temperature * log_sum_exp(logits)?)
}

/// `S = exp(−φE) / (1 + exp(−φE))`, kept strictly inside `(0, 1)`.
pub fn uncertainty_score(energy: f64, phi: f64) -> f64 {
    let z = -phi * energy;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

/// Per-object scoring outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodScoreRecord {
    pub sample_id: usize,
    pub energy_mean: f64,
    pub score: f64,
    pub score_std: f64,
    pub is_id_truth: bool,
    pub predicted_class: usize,
    pub predicted_box: Option<[f64; 4]>,
}

/// Ensemble-level score without the bookkeeping fields of [`OodScoreRecord`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleScore {
    pub energy_mean: f64,
    pub score: f64,
    /// Population standard deviation of per-member scores.
    pub score_std: f64,
}

pub fn score_ensemble(samples: &[Prediction], cfg: &ScoringConfig) -> Result<EnsembleScore> {
    if samples.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    cfg.validate()?;
    let energies = samples
        .iter()
        .map(|s| energy(s.logits.data(), cfg.temperature))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = energies.iter().map(|&e| uncertainty_score(e, cfg.phi)).collect();
    let mean_s = mean(&scores);
    let score_std = (scores.iter().map(|s| (s - mean_s).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    let energy_mean = mean(&energies);
    let score = match cfg.aggregation {
        Aggregation::MeanScore => mean_s,
        Aggregation::ScoreOfMeanLogits => {
            let k = samples[0].logits.len();
            if samples.iter().any(|s| s.logits.len() != k) {
                return Err(Error::Shape("ensemble members disagree on logit count".into()));
            }
            let mean_logits: Vec<f64> =
                (0..k).map(|j| mean(&samples.iter().map(|s| s.logits.data()[j]).collect::<Vec<_>>())).collect();
            uncertainty_score(energy(&mean_logits, cfg.temperature)?, cfg.phi)
        }
    };
    Ok(EnsembleScore { energy_mean, score, score_std })
}

/// Builds the full record for one object: class from the mean softmax, box
/// from the mean box.
pub fn score_record(
    sample_id: usize,
    samples: &[Prediction],
    cfg: &ScoringConfig,
    is_id_truth: bool,
) -> Result<OodScoreRecord> {
    let s = score_ensemble(samples, cfg)?;
    let summary = crate::bayes::predictive_mean(samples)?;
    let predicted_class = Tensor::vector(summary.mean_probs)?.argmax();
    Ok(OodScoreRecord {
        sample_id,
        energy_mean: s.energy_mean,
        score: s.score,
        score_std: s.score_std,
        is_id_truth,
        predicted_class,
        predicted_box: summary.mean_box,
    })
}

/// Number of ID scores that must stay at or above the threshold: the smallest
/// `c` with `c / n ≥ tpr_target`.
pub fn retained_count(n: usize, tpr_target: f64) -> usize {
    (1..=n).find(|&c| c as f64 / n as f64 >= tpr_target).unwrap_or(n)
}

/// Largest observed score `γ` such that at least `tpr_target` of `id_scores`
/// satisfy `S ≥ γ`.
pub fn calibrate_gamma(id_scores: &[f64], tpr_target: f64) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty score list"));
    }
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!("tpr_target must lie in (0, 1], got {tpr_target}")));
    }
    if id_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("calibration scores"));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[retained_count(sorted.len(), tpr_target) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Id,
    Ood,
}

/// ID iff `S ≥ γ`.
pub fn classify(score: f64, gamma: f64) -> Decision {
    if score >= gamma {
        Decision::Id
    } else {
        Decision::Ood
    }
}

/// Mean negative log probability of the true labels.
pub fn nll(points: &[(Vec<f64>, usize)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("nll of an empty set"));
    }
    let mut total = 0.0;
    for (probs, label) in points {
        let p = probs
            .get(*label)
            .ok_or_else(|| Error::invalid(format!("label {label} out of range for {} classes", probs.len())))?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(logits: Vec<f64>) -> Prediction {
        Prediction { logits: Tensor::vector(logits).unwrap(), bbox: None }
    }

    #[test]
    fn energy_examples() {
        assert!((energy(&[0.0; 10], 1.0).unwrap() + 10f64.ln()).abs() < 1e-12);
        assert!((energy(&[0.0; 2], 2.0).unwrap() + 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(energy(&[], 1.0).is_err());
        assert!(energy(&[1e308, -1e308], 1.0).unwrap().is_finite());
    }

    #[test]
    fn score_examples() {
        assert_eq!(uncertainty_score(0.0, 1.0), 0.5);
        assert!((uncertainty_score(-10f64.ln(), 1.0) - 10.0 / 11.0).abs() < 1e-12);
        let tiny = uncertainty_score(1000.0, 1.0);
        assert!(tiny > 0.0 && tiny <= 1e-300);
        let big = uncertainty_score(-1000.0, 1.0);
        assert!(big < 1.0);
    }

    #[test]
    fn ensemble_modes() {
        let one = vec![pred(vec![0.3, -0.2])];
        for agg in [Aggregation::MeanScore, Aggregation::ScoreOfMeanLogits] {
            let cfg = ScoringConfig { aggregation: agg, ..Default::default() };
            let s = score_ensemble(&one, &cfg).unwrap();
            assert_eq!(s.score, uncertainty_score(energy(&[0.3, -0.2], 1.0).unwrap(), 1.0));
            assert_eq!(s.score_std, 0.0);
        }
        // Single-logit members: E = −f, S = logistic(f).
        let f = |s: f64| (s / (1.0 - s)).ln();
        let two = vec![pred(vec![f(0.2)]), pred(vec![f(0.8)])];
        let s = score_ensemble(&two, &ScoringConfig::default()).unwrap();
        assert!((s.score - 0.5).abs() < 1e-12);
        // Population estimator: deviations ±0.3.
        assert!((s.score_std - 0.3).abs() < 1e-12);
        assert!(score_ensemble(&[], &ScoringConfig::default()).is_err());
    }

    #[test]
    fn calibration_examples() {
        let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(calibrate_gamma(&tenths, 0.95).unwrap(), 0.1);
        let mut mixed = vec![0.9; 19];
        mixed.push(0.1);
        assert_eq!(calibrate_gamma(&mixed, 0.95).unwrap(), 0.9);
        assert_eq!(calibrate_gamma(&[0.4, 0.2, 0.7], 1.0).unwrap(), 0.2);
        assert!(calibrate_gamma(&[], 0.95).is_err());
        assert!(calibrate_gamma(&[0.5], 0.0).is_err());
    }

    #[test]
    fn decision_boundary() {
        assert_eq!(classify(0.7, 0.7), Decision::Id);
        assert_eq!(classify(0.7 - 1e-12, 0.7), Decision::Ood);
        assert_eq!(classify(f64::MIN_POSITIVE, 0.0), Decision::Id);
    }

    #[test]
    fn nll_examples() {
        let half = vec![(vec![0.5, 0.5], 0), (vec![0.5, 0.5], 1)];
        assert!((nll(&half).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(nll(&[(vec![1.0, 0.0], 0)]).unwrap(), 0.0);
        assert!((nll(&[(vec![0.0, 1.0], 0)]).unwrap() - 300.0 * 10f64.ln()).abs() < 1e-9);
        assert!(nll(&[]).is_err());
        assert!(nll(&[(vec![1.0], 3)]).is_err());
    }

    proptest! {
        // Strict below saturation (|φE| ≤ 30), non-increasing everywhere.
        #[test]
        fn score_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, phi in 0.1f64..3.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(uncertainty_score(lo, phi) > uncertainty_score(hi, phi));
        }

        #[test]
        fn score_never_increases(a in -1e3f64..1e3, b in -1e3f64..1e3, phi in 0.1f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (s_lo, s_hi) = (uncertainty_score(lo, phi), uncertainty_score(hi, phi));
            prop_assert!(s_lo >= s_hi);
            prop_assert!(s_hi > 0.0 && s_lo < 1.0);
        }

        #[test]
        fn energy_shift(logits in prop::collection::vec(-30.0f64..30.0, 1..12), c in -20.0f64..20.0, t in 0.1f64..4.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            let lhs = energy(&shifted, t).unwrap();
            let rhs = energy(&logits, t).unwrap() - t * c;
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn calibrated_gamma_is_sound_and_maximal(scores in prop::collection::vec(0.0f64..1.0, 1..80), tpr in 0.05f64..1.0) {
            let g = calibrate_gamma(&scores, tpr).unwrap();
            let n = scores.len() as f64;
            let kept = |t: f64| scores.iter().filter(|&&s| s >= t).count() as f64 / n;
            prop_assert!(kept(g) >= tpr);
            for &s in scores.iter().filter(|&&s| s > g) {
                prop_assert!(kept(s) < tpr);
            }
        }

        #[test]
        fn phi_preserves_ranking(es in prop::collection::vec(-8.0f64..8.0, 2..30)) {
            let rank = |phi: f64| {
                let mut idx: Vec<usize> = (0..es.len()).collect();
                idx.sort_by(|&i, &j| uncertainty_score(es[i], phi).total_cmp(&uncertainty_score(es[j], phi)).then(i.cmp(&j)));
                idx
            };
            let base = rank(1.0);
            prop_assert_eq!(&rank(0.5), &base);
            prop_assert_eq!(&rank(2.0), &base);
        }
    }
}
