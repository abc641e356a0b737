use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, Model};

/// Which layers become Bayesian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Deterministic baseline.
    None,
    ConvBackbone,
    LinearBackbone,
    ConvAll,
    LinearAll,
    /// Every parameter-carrying layer, batchnorm affine included.
    Full,
}

impl SelectionPolicy {
    /// Ablation order.
    pub const ALL: [SelectionPolicy; 6] = [
        Self::None,
        Self::ConvBackbone,
        Self::LinearBackbone,
        Self::ConvAll,
        Self::LinearAll,
        Self::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::ConvBackbone => "conv_backbone",
            Self::LinearBackbone => "linear_backbone",
            Self::ConvAll => "conv_all",
            Self::LinearAll => "linear_all",
            Self::Full => "full",
        }
    }

    fn admits(self, kind: LayerKind, in_backbone: bool) -> bool {
        match self {
            Self::None => false,
            Self::ConvBackbone => kind == LayerKind::Conv2d && in_backbone,
            Self::LinearBackbone => kind == LayerKind::Linear && in_backbone,
            Self::ConvAll => kind == LayerKind::Conv2d,
            Self::LinearAll => kind == LayerKind::Linear,
            Self::Full => kind.has_parameters(),
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection policy `{s}`")))
    }
}

/// A policy, optionally overridden by an explicit list of layer names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub policy: SelectionPolicy,
    pub explicit: Option<Vec<String>>,
}

impl From<SelectionPolicy> for LayerSelection {
    fn from(policy: SelectionPolicy) -> Self {
        Self { policy, explicit: None }
    }
}

/// Resolves a selection to layer names, in model order.
pub fn select_layers(model: &Model, selection: &LayerSelection) -> Result<Vec<String>> {
    if let Some(names) = &selection.explicit {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            let i = model
                .layer_index(name)
                .ok_or_else(|| Error::Config(format!("selected layer `{name}` not found in model")))?;
            let kind = model.layers()[i].kind();
            if !matches!(kind, LayerKind::Conv2d | LayerKind::Linear) {
                return Err(Error::Config(format!(
                    "layer `{name}` is {kind}; only conv2d and linear layers can be named explicitly"
                )));
            }
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        idx.sort_unstable();
        return Ok(idx.into_iter().map(|i| model.layers()[i].name().to_owned()).collect());
    }
    Ok(model
        .layers()
        .iter()
        .enumerate()
        .filter(|(i, l)| selection.policy.admits(l.kind(), *i < model.backbone_end()))
        .map(|(_, l)| l.name().to_owned())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;
    use crate::numerics::Tensor;

    fn model() -> Model {
        let conv = |n: &str| {
            LayerSpec::conv2d(n, Tensor::filled(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap()
        };
        let ones = Tensor::filled(&[1], 1.0);
        let layers = vec![
            conv("c0"),
            LayerSpec::batchnorm("bn", ones.clone(), Tensor::zeros(&[1]), Tensor::zeros(&[1]), ones).unwrap(),
            LayerSpec::relu("r"),
            conv("c3"),
            LayerSpec::linear("fc", Tensor::filled(&[2, 1], 1.0), Tensor::zeros(&[2])).unwrap(),
        ];
        Model::new(layers, 4, 2, false).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn policies_resolve() {
        let m = model();
        let sel = |p: SelectionPolicy| select_layers(&m, &p.into()).unwrap();
        assert_eq!(sel(SelectionPolicy::ConvAll), names(&["c0", "c3"]));
        assert!(sel(SelectionPolicy::None).is_empty());
        assert_eq!(sel(SelectionPolicy::Full), names(&["c0", "bn", "c3", "fc"]));
        assert_eq!(sel(SelectionPolicy::ConvBackbone), names(&["c0", "c3"]));
        assert!(sel(SelectionPolicy::LinearBackbone).is_empty());
        assert_eq!(sel(SelectionPolicy::LinearAll), names(&["fc"]));
    }

    #[test]
    fn explicit_override() {
        let m = model();
        let s = LayerSelection { policy: SelectionPolicy::None, explicit: Some(names(&["fc", "c0"])) };
        assert_eq!(select_layers(&m, &s).unwrap(), names(&["c0", "fc"]));
        let bad = LayerSelection { policy: SelectionPolicy::None, explicit: Some(names(&["r"])) };
        assert!(select_layers(&m, &bad).is_err());
        let missing = LayerSelection { policy: SelectionPolicy::None, explicit: Some(names(&["zz"])) };
        assert!(select_layers(&m, &missing).is_err());
    }

    #[test]
    fn parse_names() {
        for p in SelectionPolicy::ALL {
            assert_eq!(p.as_str().parse::<SelectionPolicy>().unwrap(), p);
        }
        assert!("everything".parse::<SelectionPolicy>().is_err());
    }
}
