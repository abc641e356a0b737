//! Synthetic ID/OOD benchmarks, IDX ingestion and dataset directories.

mod idx;
mod synthetic;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::Target;
use crate::numerics::Tensor;

pub use idx::{load_idx, parse_idx_pair, IdxArray, IdxData, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{gen_blobs, gen_shapes, render_shape, BlobsParams, Shape, ShapesParams};

/// Which split a sample belongs to. Training refuses `OodTest` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    IdTrain,
    IdTest,
    OodTest,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Feature vector or `C×H×W` image.
    pub input: Tensor,
    /// Class index; for OOD samples this is bookkeeping in the source label space.
    pub label: usize,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: Option<[f64; 4]>,
    pub origin: Origin,
}

impl LabeledSample {
    pub fn target(&self) -> Target {
        Target { class: self.label, bbox: self.bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
}

/// ID training data plus the ID/OOD evaluation populations.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPairing {
    pub id_train: Vec<LabeledSample>,
    pub id_test: Vec<LabeledSample>,
    pub ood_test: Vec<LabeledSample>,
    /// Number of ID classes `K`.
    pub class_count: usize,
    pub provenance: Provenance,
}

impl BenchmarkPairing {
    pub fn input_shape(&self) -> &[usize] {
        self.id_train.first().or(self.id_test.first()).map(|s| s.input.shape()).unwrap_or(&[])
    }

    pub fn has_boxes(&self) -> bool {
        !self.id_train.is_empty() && self.id_train.iter().all(|s| s.bbox.is_some())
    }
}

/// Splits a labelled collection into ID (labels in `id_labels`, densely
/// relabelled in ascending order) and OOD (everything else).
///
/// Every fifth ID sample, in collection order, goes to `id_test`.
pub fn split_by_label(collection: &[LabeledSample], id_labels: &BTreeSet<usize>) -> Result<BenchmarkPairing> {
    let observed: BTreeSet<usize> = collection.iter().map(|s| s.label).collect();
    if id_labels.is_empty() {
        return Err(Error::Config("id_labels must not be empty".into()));
    }
    if let Some(missing) = id_labels.iter().find(|l| !observed.contains(l)) {
        return Err(Error::Config(format!("ID label {missing} never occurs in the collection")));
    }
    if observed.iter().all(|l| id_labels.contains(l)) {
        return Err(Error::Config("id_labels cover every observed label; nothing left for OOD".into()));
    }
    let dense = |l: usize| id_labels.iter().position(|&x| x == l);
    let (mut id_train, mut id_test, mut ood_test) = (Vec::new(), Vec::new(), Vec::new());
    let mut id_seen = 0usize;
    for s in collection {
        let mut s = s.clone();
        match dense(s.label) {
            Some(k) => {
                s.label = k;
                if id_seen % 5 == 4 {
                    s.origin = Origin::IdTest;
                    id_test.push(s);
                } else {
                    s.origin = Origin::IdTrain;
                    id_train.push(s);
                }
                id_seen += 1;
            }
            None => {
                s.origin = Origin::OodTest;
                ood_test.push(s);
            }
        }
    }
    Ok(BenchmarkPairing {
        id_train,
        id_test,
        ood_test,
        class_count: id_labels.len(),
        provenance: Provenance {
            generator: "split_by_label".into(),
            seed: None,
            params: serde_json::json!({ "id_labels": id_labels }),
        },
    })
}

/// JSON manifest stored next to the split files of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub generator: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub class_count: usize,
    pub input_shape: Vec<usize>,
    pub counts: SplitCounts,
    pub has_boxes: bool,
    /// SHA-256 over the split files in fixed order.
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub id_train: usize,
    pub id_test: usize,
    pub ood_test: usize,
}

const SPLITS: [&str; 3] = ["id_train", "id_test", "ood_test"];
pub const MANIFEST_FILE: &str = "manifest.json";

fn split_files(samples: &[LabeledSample], shape: &[usize], boxes: bool) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut dims = vec![samples.len()];
    dims.extend_from_slice(shape);
    let mut inputs = Vec::with_capacity(samples.len() * shape.iter().product::<usize>());
    let mut labels = Vec::with_capacity(samples.len());
    let mut bbs = Vec::new();
    for s in samples {
        if s.input.shape() != shape {
            return Err(Error::Dataset(format!("mixed input shapes {:?} and {shape:?}", s.input.shape())));
        }
        inputs.extend_from_slice(s.input.data());
        labels.push(u8::try_from(s.label).map_err(|_| Error::Dataset(format!("label {} exceeds 255", s.label)))?);
        if boxes {
            bbs.extend_from_slice(&s.bbox.ok_or_else(|| Error::Dataset("sample without a box".into()))?);
        }
    }
    let mut files = vec![
        ("inputs", IdxArray { dims, data: IdxData::F64(inputs) }.to_bytes()),
        ("labels", IdxArray { dims: vec![samples.len()], data: IdxData::U8(labels) }.to_bytes()),
    ];
    if boxes {
        files.push(("boxes", IdxArray { dims: vec![samples.len(), 4], data: IdxData::F64(bbs) }.to_bytes()));
    }
    Ok(files)
}

/// Writes `<split>_<part>.idx` files plus `manifest.json` into `dir`, which must exist.
pub fn save_pairing(pairing: &BenchmarkPairing, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )));
    }
    let shape = pairing.input_shape().to_vec();
    let boxes = pairing.has_boxes();
    let mut hasher = Sha256::new();
    for (split, samples) in SPLITS.iter().zip([&pairing.id_train, &pairing.id_test, &pairing.ood_test]) {
        for (part, bytes) in split_files(samples, &shape, boxes)? {
            hasher.update(&bytes);
            fs::write(dir.join(format!("{split}_{part}.idx")), bytes)?;
        }
    }
    let manifest = DatasetManifest {
        generator: pairing.provenance.generator.clone(),
        seed: pairing.provenance.seed,
        params: pairing.provenance.params.clone(),
        class_count: pairing.class_count,
        input_shape: shape,
        counts: SplitCounts {
            id_train: pairing.id_train.len(),
            id_test: pairing.id_test.len(),
            ood_test: pairing.ood_test.len(),
        },
        has_boxes: boxes,
        digest: hex::encode(hasher.finalize()),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads a directory written by [`save_pairing`], verifying its digest.
pub fn load_pairing(dir: impl AsRef<Path>) -> Result<BenchmarkPairing> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
    let mut hasher = Sha256::new();
    let mut splits = Vec::with_capacity(3);
    for (split, origin) in SPLITS.iter().zip([Origin::IdTrain, Origin::IdTest, Origin::OodTest]) {
        let read = |part: &str, hasher: &mut Sha256| -> Result<IdxArray> {
            let bytes = fs::read(dir.join(format!("{split}_{part}.idx")))?;
            hasher.update(&bytes);
            IdxArray::from_bytes(&bytes)
        };
        let inputs = read("inputs", &mut hasher)?;
        let labels = read("labels", &mut hasher)?;
        let boxes = if manifest.has_boxes { Some(read("boxes", &mut hasher)?) } else { None };
        let (IdxData::F64(x), IdxData::U8(y)) = (inputs.data, labels.data) else {
            return Err(Error::Dataset(format!("{split}: unexpected element types")));
        };
        let n = y.len();
        let per: usize = manifest.input_shape.iter().product();
        if x.len() != n * per || inputs.dims[1..] != manifest.input_shape[..] {
            return Err(Error::Dataset(format!("{split}: inputs do not match manifest shape")));
        }
        let bb = match boxes {
            Some(IdxArray { data: IdxData::F64(b), .. }) if b.len() == 4 * n => Some(b),
            Some(_) => return Err(Error::Dataset(format!("{split}: malformed boxes file"))),
            None => None,
        };
        let samples = (0..n)
            .map(|i| {
                Ok(LabeledSample {
                    input: Tensor::new(manifest.input_shape.clone(), x[i * per..(i + 1) * per].to_vec())?,
                    label: y[i] as usize,
                    bbox: bb.as_ref().map(|b| [b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]]),
                    origin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(samples);
    }
    let digest = hex::encode(hasher.finalize());
    if digest != manifest.digest {
        return Err(Error::Dataset(format!("content digest {digest} does not match manifest {}", manifest.digest)));
    }
    let ood_test = splits.pop().expect("3 splits");
    let id_test = splits.pop().expect("3 splits");
    let id_train = splits.pop().expect("3 splits");
    Ok(BenchmarkPairing {
        id_train,
        id_test,
        ood_test,
        class_count: manifest.class_count,
        provenance: Provenance { generator: manifest.generator, seed: manifest.seed, params: manifest.params },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(labels: &[usize]) -> Vec<LabeledSample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledSample {
                input: Tensor::vector(vec![i as f64, 0.0]).unwrap(),
                label: l,
                bbox: None,
                origin: Origin::Unassigned,
            })
            .collect()
    }

    #[test]
    fn split_relabels_densely() {
        let c = labelled(&(0..50).map(|i| i % 10).collect::<Vec<_>>());
        let ids: BTreeSet<usize> = (0..5).collect();
        let p = split_by_label(&c, &ids).unwrap();
        assert_eq!(p.class_count, 5);
        assert_eq!(p.ood_test.len(), 25);
        assert!(p.ood_test.iter().all(|s| s.label >= 5));
        assert_eq!(p.id_train.len() + p.id_test.len(), 25);
        assert_eq!(p.id_test.len(), 5);
        assert!(p.id_train.iter().chain(&p.id_test).all(|s| s.label < 5));

        let odd: BTreeSet<usize> = [3, 7].into();
        let p = split_by_label(&c, &odd).unwrap();
        assert!(p.id_train.iter().all(|s| s.label < 2));
        // Label 3 maps to 0 and label 7 to 1: order preserved.
        let first = &p.id_train[0];
        assert_eq!(first.input.data()[0] as usize % 10, 3);
        assert_eq!(first.label, 0);
    }

    #[test]
    fn split_rejects_full_cover() {
        let c = labelled(&[0, 1, 2, 0, 1, 2]);
        let all: BTreeSet<usize> = (0..3).collect();
        assert!(split_by_label(&c, &all).is_err());
        assert!(split_by_label(&c, &BTreeSet::new()).is_err());
        assert!(split_by_label(&c, &[9].into()).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = gen_shapes(&ShapesParams { n_per_class: 4, n_test_per_class: 3, ..ShapesParams::default() }).unwrap();
        let m = save_pairing(&p, dir.path()).unwrap();
        assert_eq!(m.seed, Some(0));
        assert_eq!(m.counts.ood_test, 6);
        let back = load_pairing(dir.path()).unwrap();
        assert_eq!(back, p);

        let again = tempfile::tempdir().unwrap();
        assert_eq!(save_pairing(&p, again.path()).unwrap().digest, m.digest);

        let f = dir.path().join("id_test_labels.idx");
        let mut bytes = fs::read(&f).unwrap();
        bytes[8] ^= 1;
        fs::write(&f, bytes).unwrap();
        assert!(load_pairing(dir.path()).unwrap_err().to_string().contains("digest"));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let p = gen_blobs(&BlobsParams { n_per_class: 2, ..BlobsParams::default() }).unwrap();
        let err = save_pairing(&p, "/nonexistent/dir/for/test").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
