use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::GaussianLayerPosterior;
use crate::error::{Error, Result};
use crate::network::{Model, Prediction};
use crate::numerics::{mean, softmax, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Monte-Carlo sample count `T_mc`.
    pub samples: usize,
    pub seed: u64,
    /// Per-layer rejection cap; `None` uses each posterior's default.
    pub max_rejection_attempts: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { samples: 30, seed: 0, max_rejection_attempts: None }
    }
}

/// Model for ensemble member `t`: each posterior's layer gets a draw from the
/// child stream `(seed, t, layer_index)`; all other layers keep their weights.
pub fn draw_member(model: &Model, posteriors: &[GaussianLayerPosterior], cfg: &EnsembleConfig, t: usize) -> Result<Model> {
    let mut member = model.clone();
    for post in posteriors {
        let idx = post.layer_index();
        let layer = member
            .layers_mut()
            .get_mut(idx)
            .filter(|l| l.name() == post.layer_name())
            .ok_or_else(|| Error::invalid(format!("posterior `{}` does not match this model", post.layer_name())))?;
        let mut rng = Rng::derive(cfg.seed, &[t as u64, idx as u64]);
        let cap = cfg.max_rejection_attempts.unwrap_or_else(|| post.default_max_attempts());
        let draw = post.sample(&mut rng, cap)?;
        for (pi, values) in draw.params.into_iter().enumerate() {
            layer.set_param(pi, values)?;
        }
    }
    Ok(member)
}

/// A drawn set of `T_mc` member models.
///
/// Member keys never involve the input, so drawing once and evaluating many
/// inputs gives exactly what per-input [`mc_predict`] calls give.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Model>,
    deterministic: bool,
}

impl Ensemble {
    pub fn draw(model: &Model, posteriors: &[GaussianLayerPosterior], cfg: &EnsembleConfig) -> Result<Self> {
        if cfg.samples == 0 {
            return Err(Error::Config("mc sample count must be ≥ 1".into()));
        }
        if posteriors.is_empty() {
            return Ok(Self { members: vec![model.clone()], deterministic: true });
        }
        let members = (0..cfg.samples)
            .into_par_iter()
            .map(|t| draw_member(model, posteriors, cfg, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, deterministic: false })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    /// One prediction per member, in member order. A deterministic ensemble
    /// repeats its single forward pass `samples` times.
    pub fn predict(&self, input: &Tensor, samples: usize) -> Result<Vec<Prediction>> {
        if self.deterministic {
            let p = self.members[0].forward(input)?;
            return Ok(vec![p; samples]);
        }
        self.members.iter().map(|m| m.forward(input)).collect()
    }
}

/// `T_mc` predictions for one input.
pub fn mc_predict(
    model: &Model,
    posteriors: &[GaussianLayerPosterior],
    input: &Tensor,
    cfg: &EnsembleConfig,
) -> Result<Vec<Prediction>> {
    if cfg.samples == 0 {
        return Err(Error::Config("mc sample count must be ≥ 1".into()));
    }
    (0..cfg.samples)
        .into_par_iter()
        .map(|t| draw_member(model, posteriors, cfg, t)?.forward(input))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    /// Mean of the per-member softmax vectors.
    pub mean_probs: Vec<f64>,
    pub mean_box: Option<[f64; 4]>,
    /// Unbiased per-logit variance; zero for a single member.
    pub logit_variance: Vec<f64>,
    pub mean_logits: Vec<f64>,
}

pub fn predictive_mean(samples: &[Prediction]) -> Result<PredictiveSummary> {
    let first = samples.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    let k = first.logits.len();
    let t = samples.len() as f64;
    let mut probs = Vec::with_capacity(samples.len());
    for s in samples {
        if s.logits.len() != k || s.bbox.is_some() != first.bbox.is_some() {
            return Err(Error::Shape("ensemble members disagree on output shape".into()));
        }
        probs.push(softmax(s.logits.data())?);
    }
    let column = |f: &dyn Fn(usize) -> f64| mean(&(0..samples.len()).map(f).collect::<Vec<_>>());
    let mean_probs: Vec<f64> = (0..k).map(|j| column(&|i| probs[i][j])).collect();
    let mean_logits: Vec<f64> = (0..k).map(|j| column(&|i| samples[i].logits.data()[j])).collect();
    let mean_box = first.bbox.as_ref().map(|_| {
        std::array::from_fn(|j| column(&|i| samples[i].bbox.as_ref().map_or(f64::NAN, |b| b.data()[j])))
    });
    let logit_variance = if samples.len() < 2 {
        vec![0.0; k]
    } else {
        (0..k)
            .map(|j| {
                samples.iter().map(|s| (s.logits.data()[j] - mean_logits[j]).powi(2)).sum::<f64>() / (t - 1.0)
            })
            .collect()
    };
    Ok(PredictiveSummary { mean_probs, mean_box, logit_variance, mean_logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(logits: Vec<f64>) -> Prediction {
        Prediction { logits: Tensor::vector(logits).unwrap(), bbox: None }
    }

    #[test]
    fn single_sample_mean() {
        let s = vec![pred(vec![0.5, -1.0, 2.0])];
        let m = predictive_mean(&s).unwrap();
        assert_eq!(m.mean_probs, softmax(&[0.5, -1.0, 2.0]).unwrap());
        assert_eq!(m.logit_variance, vec![0.0; 3]);
    }

    #[test]
    fn two_opposite_members() {
        // Softmax ≈ [1, 0] and [0, 1].
        let s = vec![pred(vec![800.0, 0.0]), pred(vec![0.0, 800.0])];
        let m = predictive_mean(&s).unwrap();
        assert_eq!(m.mean_probs, vec![0.5, 0.5]);
        // Unbiased: ((400)² + (400)²) / 1.
        assert_eq!(m.logit_variance, vec![320_000.0, 320_000.0]);
    }

    #[test]
    fn empty_is_error() {
        assert!(predictive_mean(&[]).is_err());
    }
}
