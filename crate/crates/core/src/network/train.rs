use serde::{Deserialize, Serialize};

use super::grad::{backward, Objective, Target};
use super::layer::LayerKind;
use super::model::Model;
use crate::datasets::{LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Running-statistics momentum for batchnorm: `r ← 0.9 r + 0.1 batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Decoupled weight decay ω, applied to conv/linear weights only.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// λ on the smooth-L1 box term.
    pub box_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            box_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.box_weight >= 0.0 && self.box_weight.is_finite()) {
            return Err(Error::Config(format!("box_weight must be ≥ 0, got {}", self.box_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Training accuracy measured on the training-mode forward passes.
    pub accuracy: f64,
}

/// SGD with momentum and decoupled weight decay.
///
/// Samples tagged as OOD are refused. A zero learning rate is allowed so that
/// the update rule can be checked to be the identity.
pub fn train_sgd(mut model: Model, data: &[LabeledSample], cfg: &TrainConfig) -> Result<(Model, Vec<EpochLog>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(i) = data.iter().position(|s| s.origin == Origin::OodTest) {
        return Err(Error::Dataset(format!("sample {i} is tagged OOD and may not be used for training")));
    }
    let obj = Objective { box_weight: cfg.box_weight, scale: 1.0 };
    let mut velocity: Vec<Vec<Tensor>> = model
        .layers()
        .iter()
        .map(|l| l.trainable().iter().map(|p| Tensor::zeros(p.shape())).collect())
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        Rng::derive(cfg.seed, &[0x5eed, epoch as u64]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<Tensor> = chunk.iter().map(|&i| data[i].input.clone()).collect();
            let targets: Vec<Target> = chunk.iter().map(|&i| data[i].target()).collect();
            let out = match backward(&model, &inputs, &targets, &obj) {
                Ok(o) => o,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Divergence { epoch, batch: bi, loss: f64::NAN });
                }
                Err(e) => return Err(e),
            };
            loss_sum += out.loss;
            correct += out.correct;
            batches += 1;

            for (li, layer) in model.layers_mut().iter_mut().enumerate() {
                let kind = layer.kind();
                let trainable = kind.trainable_count();
                let grads = &out.gradients.per_layer[li];
                let params = layer.params_mut();
                for pi in 0..trainable {
                    let v = velocity[li][pi].data_mut();
                    let g = grads[pi].data();
                    let decay = if pi == 0 && matches!(kind, LayerKind::Conv2d | LayerKind::Linear) {
                        cfg.weight_decay
                    } else {
                        0.0
                    };
                    for ((w, vi), gi) in params[pi].data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = cfg.momentum * *vi + gi;
                        let old = *w;
                        *w = old - cfg.learning_rate * *vi - cfg.learning_rate * decay * old;
                    }
                }
                if let Some(stats) = &out.bn_stats[li] {
                    let (mean, var) = (&stats.mean, &stats.var);
                    for (r, m) in params[2].data_mut().iter_mut().zip(mean) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                    }
                    for (r, v) in params[3].data_mut().iter_mut().zip(var) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                    }
                }
                if params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                    return Err(Error::Divergence { epoch, batch: bi, loss: out.loss });
                }
            }
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_blobs, BlobsParams};
    use crate::network::Architecture;

    fn blobs() -> Vec<LabeledSample> {
        gen_blobs(&BlobsParams { seed: 1, n_per_class: 40, ..BlobsParams::default() })
            .unwrap()
            .id_train
    }

    #[test]
    fn zero_rate_leaves_parameters_untouched() {
        let data = blobs();
        let m = Architecture::MicroMlp.build(&[2], 3, false, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, epochs: 2, ..TrainConfig::default() };
        let (trained, _) = train_sgd(m.clone(), &data, &cfg).unwrap();
        for (a, b) in m.layers().iter().flat_map(|l| l.params()).zip(trained.layers().iter().flat_map(|l| l.params())) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs();
        let m = Architecture::MicroMlp.build(&[2], 3, false, 0).unwrap();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let (a, la) = train_sgd(m.clone(), &data, &cfg).unwrap();
        let (b, lb) = train_sgd(m, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn refuses_ood_samples_and_bad_config() {
        let mut data = blobs();
        let m = Architecture::MicroMlp.build(&[2], 3, false, 0).unwrap();
        assert!(train_sgd(m.clone(), &data, &TrainConfig { momentum: 1.0, ..TrainConfig::default() }).is_err());
        assert!(train_sgd(m.clone(), &[], &TrainConfig::default()).is_err());
        data[5].origin = Origin::OodTest;
        assert!(matches!(train_sgd(m, &data, &TrainConfig::default()), Err(Error::Dataset(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = blobs();
        let m = Architecture::MicroMlp.build(&[2], 3, false, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 1e200, momentum: 0.0, epochs: 5, ..TrainConfig::default() };
        let err = train_sgd(m, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}
