use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{self, conv2d_bias, Tensor};

/// Variance floor added inside batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Layer kinds with their on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d = 0,
    Linear = 1,
    BatchNorm = 2,
    Relu = 3,
    MaxPool2 = 4,
    Flatten = 5,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Conv2d,
            1 => Self::Linear,
            2 => Self::BatchNorm,
            3 => Self::Relu,
            4 => Self::MaxPool2,
            5 => Self::Flatten,
            _ => return None,
        })
    }

    /// Number of parameter tensors a layer of this kind stores.
    pub fn tensor_count(self) -> usize {
        match self {
            Self::Conv2d | Self::Linear => 2,
            Self::BatchNorm => 4,
            Self::Relu | Self::MaxPool2 | Self::Flatten => 0,
        }
    }

    /// Leading parameter tensors that receive gradients.
    pub fn trainable_count(self) -> usize {
        match self {
            Self::Conv2d | Self::Linear | Self::BatchNorm => 2,
            _ => 0,
        }
    }

    /// Leading parameter tensors that form the layer's weights for posterior
    /// sampling: the weight tensor of conv2d/linear, scale and shift of batchnorm.
    pub fn weight_tensor_count(self) -> usize {
        match self {
            Self::Conv2d | Self::Linear => 1,
            Self::BatchNorm => 2,
            _ => 0,
        }
    }

    pub fn has_parameters(self) -> bool {
        self.tensor_count() > 0
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Conv2d => "conv2d",
            Self::Linear => "linear",
            Self::BatchNorm => "batchnorm",
            Self::Relu => "relu",
            Self::MaxPool2 => "maxpool2",
            Self::Flatten => "flatten",
        })
    }
}

/// Named layer with its parameters.
///
/// Parameter order: conv2d and linear hold `[weight, bias]`; batchnorm holds
/// `[scale, shift, running_mean, running_var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    name: String,
    kind: LayerKind,
    params: Vec<Tensor>,
    stride: usize,
    padding: usize,
}

impl LayerSpec {
    pub fn conv2d(name: &str, weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        Self::from_parts(name, LayerKind::Conv2d, vec![weight, bias], stride, padding)
    }

    pub fn linear(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        Self::from_parts(name, LayerKind::Linear, vec![weight, bias], 1, 0)
    }

    pub fn batchnorm(name: &str, scale: Tensor, shift: Tensor, mean: Tensor, var: Tensor) -> Result<Self> {
        Self::from_parts(name, LayerKind::BatchNorm, vec![scale, shift, mean, var], 1, 0)
    }

    pub fn relu(name: &str) -> Self {
        Self::simple(name, LayerKind::Relu)
    }

    pub fn max_pool2(name: &str) -> Self {
        Self::simple(name, LayerKind::MaxPool2)
    }

    pub fn flatten(name: &str) -> Self {
        Self::simple(name, LayerKind::Flatten)
    }

    fn simple(name: &str, kind: LayerKind) -> Self {
        Self { name: name.to_owned(), kind, params: Vec::new(), stride: 1, padding: 0 }
    }

    /// Validating constructor shared by the typed helpers and the loader.
    pub fn from_parts(
        name: &str,
        kind: LayerKind,
        params: Vec<Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bad = |detail: String| Error::LayerShape { layer: name.to_owned(), detail };
        if params.len() != kind.tensor_count() {
            return Err(bad(format!(
                "{kind} expects {} parameter tensors, got {}",
                kind.tensor_count(),
                params.len()
            )));
        }
        match kind {
            LayerKind::Conv2d => {
                let (w, b) = (&params[0], &params[1]);
                if w.rank() != 4 || b.shape() != [w.shape()[0]] {
                    return Err(bad(format!("conv2d weight {:?} / bias {:?}", w.shape(), b.shape())));
                }
                if stride == 0 {
                    return Err(bad("conv2d stride must be positive".into()));
                }
            }
            LayerKind::Linear => {
                let (w, b) = (&params[0], &params[1]);
                if w.rank() != 2 || b.shape() != [w.shape()[0]] {
                    return Err(bad(format!("linear weight {:?} / bias {:?}", w.shape(), b.shape())));
                }
            }
            LayerKind::BatchNorm => {
                let c = params[0].shape();
                if c.len() != 1 || params.iter().any(|p| p.shape() != c) {
                    return Err(bad("batchnorm tensors must be equal-length vectors".into()));
                }
                if params[3].data().iter().any(|&v| v <= 0.0) {
                    return Err(bad("batchnorm running variance must be positive".into()));
                }
            }
            _ => {}
        }
        let (stride, padding) = if kind == LayerKind::Conv2d { (stride, padding) } else { (1, 0) };
        Ok(Self { name: name.to_owned(), kind, params, stride, padding })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// Trainable tensors (weights and biases, or batchnorm affine).
    pub fn trainable(&self) -> &[Tensor] {
        &self.params[..self.kind.trainable_count()]
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable().iter().map(Tensor::len).sum()
    }

    /// Tensors covered by a weight posterior (see [`LayerKind::weight_tensor_count`]).
    pub fn weights(&self) -> &[Tensor] {
        &self.params[..self.kind.weight_tensor_count()]
    }

    /// Replaces one parameter tensor, keeping its shape.
    pub fn set_param(&mut self, index: usize, values: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("layer `{}` has no parameter {index}", self.name)))?;
        if slot.shape() != values.shape() {
            return Err(Error::LayerShape {
                layer: self.name.clone(),
                detail: format!("parameter {index} has shape {:?}, got {:?}", slot.shape(), values.shape()),
            });
        }
        if self.kind == LayerKind::BatchNorm && index == 3 && values.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("batchnorm running variance must be positive"));
        }
        *slot = values;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Inference-mode forward (batchnorm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wrap = |e: Error| match e {
            Error::Shape(detail) => Error::LayerShape { layer: self.name.clone(), detail },
            other => other,
        };
        match self.kind {
            LayerKind::Conv2d => {
                conv2d_bias(x, &self.params[0], Some(&self.params[1]), self.stride, self.padding).map_err(wrap)
            }
            LayerKind::Linear => linear_forward(&self.params[0], &self.params[1], x).map_err(wrap),
            LayerKind::BatchNorm => {
                let var = &self.params[3];
                let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                batchnorm_apply(x, &self.params[0], &self.params[1], self.params[2].data(), &inv).map_err(wrap)
            }
            LayerKind::Relu => Ok(numerics::relu(x)),
            LayerKind::MaxPool2 => numerics::max_pool2(x).map_err(wrap),
            LayerKind::Flatten => Ok(numerics::flatten(x)),
        }
    }
}

pub(crate) fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.shape() != [inp] {
        return Err(Error::Shape(format!("linear expects a vector of {inp}, got {:?}", x.shape())));
    }
    let wd = w.data();
    let xd = x.data();
    let y: Vec<f64> = (0..out)
        .map(|o| {
            let row = &wd[o * inp..(o + 1) * inp];
            b.data()[o] + row.iter().zip(xd).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect();
    Tensor::checked(vec![out], y, "linear")
}

/// Channel count and per-channel spatial size of a batchnorm input.
pub(crate) fn bn_layout(x: &Tensor, channels: usize) -> Result<usize> {
    let ok = match x.shape() {
        [c] => *c == channels,
        [c, _, _] => *c == channels,
        _ => false,
    };
    if !ok {
        return Err(Error::Shape(format!(
            "batchnorm over {channels} channels cannot take input {:?}",
            x.shape()
        )));
    }
    Ok(x.len() / channels)
}

pub(crate) fn batchnorm_apply(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<Tensor> {
    let c = scale.len();
    let spatial = bn_layout(x, c)?;
    let mut y = x.data().to_vec();
    for ci in 0..c {
        let (g, b) = (scale.data()[ci], shift.data()[ci]);
        for v in &mut y[ci * spatial..(ci + 1) * spatial] {
            *v = g * (*v - mean[ci]) * inv_std[ci] + b;
        }
    }
    Tensor::checked(x.shape().to_vec(), y, "batchnorm")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_codes_round_trip() {
        for code in 0..6u8 {
            assert_eq!(LayerKind::from_code(code).unwrap().code(), code);
        }
        assert!(LayerKind::from_code(6).is_none());
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        let w = Tensor::zeros(&[3, 2]);
        assert!(LayerSpec::linear("fc", w.clone(), Tensor::zeros(&[2])).is_err());
        assert!(LayerSpec::linear("fc", w, Tensor::zeros(&[3])).is_ok());
        let ones = Tensor::filled(&[2], 1.0);
        assert!(LayerSpec::batchnorm("bn", ones.clone(), ones.clone(), ones.clone(), Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn batchnorm_inference_uses_running_stats() {
        let bn = LayerSpec::batchnorm(
            "bn",
            Tensor::vector(vec![2.0]).unwrap(),
            Tensor::vector(vec![1.0]).unwrap(),
            Tensor::vector(vec![3.0]).unwrap(),
            Tensor::vector(vec![4.0 - BN_EPS]).unwrap(),
        )
        .unwrap();
        let y = bn.forward(&Tensor::vector(vec![5.0]).unwrap()).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let fc = LayerSpec::linear("head", Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])).unwrap();
        let err = fc.forward(&Tensor::zeros(&[4])).unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");
    }
}
