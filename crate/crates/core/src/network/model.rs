use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::numerics::{conv_out_extent, Rng, Tensor};

/// Class logits plus the optional 4-value box `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub bbox: Option<Tensor>,
}

/// Ordered layer stack whose last layer emits `K` logits followed by 4 box
/// values when the box head is enabled.
///
/// Layers before `backbone_end` form the backbone; the rest form the heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<LayerSpec>,
    backbone_end: usize,
    class_count: usize,
    has_box_head: bool,
}

impl Model {
    pub fn new(layers: Vec<LayerSpec>, backbone_end: usize, class_count: usize, has_box_head: bool) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        if backbone_end > layers.len() {
            return Err(Error::invalid(format!(
                "backbone_end {backbone_end} exceeds layer count {}",
                layers.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name()) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", l.name())));
            }
        }
        Ok(Self { layers, backbone_end, class_count, has_box_head })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerSpec] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name() == name)
    }

    pub fn backbone_end(&self) -> usize {
        self.backbone_end
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn has_box_head(&self) -> bool {
        self.has_box_head
    }

    /// Width of the final layer's output.
    pub fn output_len(&self) -> usize {
        self.class_count + if self.has_box_head { 4 } else { 0 }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(Tensor::len).sum()
    }

    /// Runs every layer in inference mode and splits the output into heads.
    pub fn forward(&self, input: &Tensor) -> Result<Prediction> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        self.split_output(x)
    }

    pub(crate) fn split_output(&self, out: Tensor) -> Result<Prediction> {
        if out.shape() != [self.output_len()] {
            return Err(Error::Shape(format!(
                "model output has shape {:?}, expected [{}]",
                out.shape(),
                self.output_len()
            )));
        }
        let mut data = out.into_data();
        let bbox = if self.has_box_head {
            let b = data.split_off(self.class_count);
            Some(Tensor::from_parts(vec![4], b))
        } else {
            None
        };
        Ok(Prediction { logits: Tensor::from_parts(vec![self.class_count], data), bbox })
    }
}

/// Built-in architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Architecture {
    #[serde(rename = "micro-mlp")]
    MicroMlp,
    #[serde(rename = "micro-cnn")]
    MicroCnn,
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro-mlp" => Ok(Self::MicroMlp),
            "micro-cnn" => Ok(Self::MicroCnn),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MicroMlp => "micro-mlp",
            Self::MicroCnn => "micro-cnn",
        })
    }
}

const HIDDEN: usize = 64;

impl Architecture {
    /// Freshly initialized model for inputs of `input_shape`.
    pub fn build(self, input_shape: &[usize], class_count: usize, has_box_head: bool, seed: u64) -> Result<Model> {
        let mut rng = Rng::derive(seed, &[0x1417]);
        let out = class_count + if has_box_head { 4 } else { 0 };
        match self {
            Self::MicroMlp => {
                let n: usize = input_shape.iter().product();
                let layers = vec![
                    LayerSpec::flatten("flatten"),
                    he_linear("fc1", n, HIDDEN, 2.0, &mut rng)?,
                    LayerSpec::relu("relu1"),
                    he_linear("head", HIDDEN, out, 1.0, &mut rng)?,
                ];
                Model::new(layers, 1, class_count, has_box_head)
            }
            Self::MicroCnn => {
                let &[c, h, w] = input_shape else {
                    return Err(Error::Config(format!("micro-cnn needs C×H×W input, got {input_shape:?}")));
                };
                // 3×3 convs with padding 1 keep extents; each pool halves them.
                let (h2, w2) = (h / 2 / 2, w / 2 / 2);
                if h2 == 0 || w2 == 0 || conv_out_extent(h, 3, 1, 1).is_none() {
                    return Err(Error::Config(format!("input {h}×{w} too small for micro-cnn")));
                }
                let layers = vec![
                    he_conv("conv1", c, 8, &mut rng)?,
                    LayerSpec::relu("relu1"),
                    LayerSpec::max_pool2("pool1"),
                    he_conv("conv2", 8, 16, &mut rng)?,
                    LayerSpec::relu("relu2"),
                    LayerSpec::max_pool2("pool2"),
                    LayerSpec::flatten("flatten"),
                    he_linear("fc1", 16 * h2 * w2, HIDDEN, 2.0, &mut rng)?,
                    LayerSpec::relu("relu3"),
                    he_linear("head", HIDDEN, out, 1.0, &mut rng)?,
                ];
                Model::new(layers, 7, class_count, has_box_head)
            }
        }
    }
}

fn he_linear(name: &str, inp: usize, out: usize, gain: f64, rng: &mut Rng) -> Result<LayerSpec> {
    let std = (gain / inp as f64).sqrt();
    let w = (0..inp * out).map(|_| std * rng.standard_normal()).collect();
    LayerSpec::linear(name, Tensor::matrix(out, inp, w)?, Tensor::zeros(&[out]))
}

fn he_conv(name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Result<LayerSpec> {
    let fan_in = cin * 9;
    let std = (2.0 / fan_in as f64).sqrt();
    let w = (0..cout * fan_in).map(|_| std * rng.standard_normal()).collect();
    LayerSpec::conv2d(name, Tensor::new(vec![cout, cin, 3, 3], w)?, Tensor::zeros(&[cout]), 1, 1)
}
