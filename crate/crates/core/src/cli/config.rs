use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::{LayerSelection, SelectionPolicy};
use crate::datasets::{gen_blobs, gen_shapes, load_idx, load_pairing, split_by_label, BenchmarkPairing, BlobsParams, Provenance, ShapesParams};
use crate::error::{Error, Result};
use crate::network::{Architecture, TrainConfig};
use crate::scoring::{Aggregation, ScoringConfig};

/// Where the benchmark comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs(BlobsParams),
    Shapes(ShapesParams),
    /// A directory written by `gen-data`.
    Dir { path: PathBuf },
    /// An IDX image/label pair split by label into ID and OOD.
    Idx { images: PathBuf, labels: PathBuf, id_labels: Vec<usize> },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Blobs(BlobsParams::default())
    }
}

impl DatasetSpec {
    /// Relative paths resolve against `base` (the config file's directory).
    pub fn load(&self, base: &Path) -> Result<BenchmarkPairing> {
        match self {
            Self::Blobs(p) => gen_blobs(p),
            Self::Shapes(p) => gen_shapes(p),
            Self::Dir { path } => load_pairing(base.join(path)),
            Self::Idx { images, labels, id_labels } => {
                let samples = load_idx(base.join(images), base.join(labels))?;
                let ids: BTreeSet<usize> = id_labels.iter().copied().collect();
                let mut pairing = split_by_label(&samples, &ids)?;
                pairing.provenance = Provenance {
                    generator: "idx".into(),
                    seed: None,
                    params: serde_json::json!({
                        "images": images,
                        "labels": labels,
                        "id_labels": ids,
                    }),
                };
                Ok(pairing)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesSection {
    pub policy: SelectionPolicy,
    /// Explicit layer names; overrides `policy` when present.
    pub layers: Option<Vec<String>>,
    pub alpha: f64,
    pub epsilon_quantile: f64,
    pub mc_samples: usize,
    pub max_rejection_attempts: Option<usize>,
}

impl Default for BayesSection {
    fn default() -> Self {
        Self {
            policy: SelectionPolicy::ConvAll,
            layers: None,
            alpha: 0.05,
            epsilon_quantile: 0.05,
            mc_samples: 30,
            max_rejection_attempts: None,
        }
    }
}

impl BayesSection {
    pub fn selection(&self) -> LayerSelection {
        LayerSelection { policy: self.policy, explicit: self.layers.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub temperature: f64,
    pub phi: f64,
    pub aggregation: Aggregation,
    pub tpr_target: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { temperature: 1.0, phi: 1.0, aggregation: Aggregation::MeanScore, tpr_target: 0.95 }
    }
}

impl ScoringSection {
    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig { temperature: self.temperature, phi: self.phi, aggregation: self.aggregation }
    }
}

/// One JSON document configuring every command.
///
/// The run `seed` drives model initialization, minibatch shuffling and weight
/// sampling; it replaces `train.seed`. Dataset generators carry their own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub architecture: String,
    pub train: TrainConfig,
    pub bayes: BayesSection,
    pub scoring: ScoringSection,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Directory relative dataset paths resolve against; set from the config
    /// file location, never read from JSON.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            architecture: Architecture::MicroMlp.to_string(),
            train: TrainConfig::default(),
            bayes: BayesSection::default(),
            scoring: ScoringSection::default(),
            seed: 0,
            threads: None,
            out: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file. An unreadable file is a config error.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.out.is_relative() {
            cfg.out = cfg.base_dir.join(&cfg.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.architecture.parse()
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.train.validate()?;
        self.scoring.scoring().validate()?;
        let b = &self.bayes;
        if !(b.alpha > 0.0 && b.alpha.is_finite()) {
            return Err(Error::Config(format!("bayes.alpha must be positive, got {}", b.alpha)));
        }
        if !(0.0..1.0).contains(&b.epsilon_quantile) {
            return Err(Error::Config(format!("bayes.epsilon_quantile must lie in [0, 1), got {}", b.epsilon_quantile)));
        }
        if b.mc_samples == 0 {
            return Err(Error::Config("bayes.mc_samples must be ≥ 1".into()));
        }
        if b.max_rejection_attempts == Some(0) {
            return Err(Error::Config("bayes.max_rejection_attempts must be ≥ 1".into()));
        }
        let t = self.scoring.tpr_target;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("scoring.tpr_target must lie in (0, 1], got {t}")));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<BenchmarkPairing> {
        self.dataset.load(&self.base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_document() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.bayes.alpha, 0.05);
        assert_eq!(cfg.bayes.epsilon_quantile, 0.05);
        assert_eq!(cfg.bayes.mc_samples, 30);
        assert_eq!(cfg.scoring.tpr_target, 0.95);
        assert_eq!(cfg.scoring.scoring(), ScoringConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn dataset_variants_parse() {
        let cfg = RunConfig::from_json(r#"{"dataset": {"kind": "shapes", "n_per_class": 5}}"#).unwrap();
        assert!(matches!(cfg.dataset, DatasetSpec::Shapes(ShapesParams { n_per_class: 5, .. })));
        let cfg = RunConfig::from_json(r#"{"dataset": {"kind": "dir", "path": "d"}}"#).unwrap();
        assert_eq!(cfg.dataset, DatasetSpec::Dir { path: "d".into() });
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in [
            r#"{"bogus": 1}"#,
            r#"{"bayes": {"sigma": 1}}"#,
            r#"{"dataset": {"kind": "blobs", "radius": 3}}"#,
            r#"{"dataset": {"kind": "moons"}}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{doc}");
        }
    }

    #[test]
    fn range_checks() {
        let bad = |doc: &str| RunConfig::from_json(doc).unwrap().validate().is_err();
        assert!(bad(r#"{"bayes": {"alpha": 0}}"#));
        assert!(bad(r#"{"bayes": {"epsilon_quantile": 1}}"#));
        assert!(bad(r#"{"bayes": {"mc_samples": 0}}"#));
        assert!(bad(r#"{"scoring": {"phi": -1}}"#));
        assert!(bad(r#"{"scoring": {"tpr_target": 0}}"#));
        assert!(bad(r#"{"architecture": "resnet"}"#));
    }
}
