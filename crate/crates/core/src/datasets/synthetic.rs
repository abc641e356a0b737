//! Seeded synthetic ID/OOD benchmarks.

use serde::{Deserialize, Serialize};

use super::{BenchmarkPairing, LabeledSample, Origin, Provenance};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Gaussian blobs: `classes` unit-variance clusters whose centers sit on a
/// circle of radius `id_center_scale` (first two coordinates), plus one OOD
/// cluster moved `ood_offset` from the class-0 center toward the origin.
///
/// With `ood_offset == id_center_scale` the OOD cluster sits at the origin,
/// equidistant from every class; with `ood_offset == 0` it coincides with class 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsParams {
    pub seed: u64,
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub id_center_scale: f64,
    pub ood_offset: f64,
}

impl Default for BlobsParams {
    fn default() -> Self {
        Self { seed: 0, classes: 3, n_per_class: 200, dim: 2, id_center_scale: 10.0, ood_offset: 10.0 }
    }
}

pub fn gen_blobs(p: &BlobsParams) -> Result<BenchmarkPairing> {
    if p.classes < 2 || p.dim < 2 || p.n_per_class == 0 {
        return Err(Error::Config(format!(
            "blobs need classes ≥ 2, dim ≥ 2 and n_per_class ≥ 1 (got {}, {}, {})",
            p.classes, p.dim, p.n_per_class
        )));
    }
    if !(p.id_center_scale > 0.0 && p.id_center_scale.is_finite() && p.ood_offset.is_finite()) {
        return Err(Error::Config("blob geometry must be finite with a positive center scale".into()));
    }
    let centers: Vec<Vec<f64>> = (0..p.classes)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / p.classes as f64;
            let mut c = vec![0.0; p.dim];
            c[0] = p.id_center_scale * a.cos();
            c[1] = p.id_center_scale * a.sin();
            c
        })
        .collect();
    let ood_center: Vec<f64> = centers[0].iter().map(|v| v - p.ood_offset * v / p.id_center_scale).collect();

    let draw = |rng: &mut Rng, center: &[f64]| -> Tensor {
        Tensor::from_parts(vec![p.dim], center.iter().map(|c| c + rng.standard_normal()).collect())
    };
    let id_split = |tag: u64, origin: Origin| -> Vec<LabeledSample> {
        let mut rng = Rng::derive(p.seed, &[0xb10b, tag]);
        let mut out = Vec::with_capacity(p.n_per_class * p.classes);
        for _ in 0..p.n_per_class {
            for (k, c) in centers.iter().enumerate() {
                out.push(LabeledSample { input: draw(&mut rng, c), label: k, bbox: None, origin });
            }
        }
        out
    };
    let id_train = id_split(0, Origin::IdTrain);
    let id_test = id_split(1, Origin::IdTest);
    let mut rng = Rng::derive(p.seed, &[0xb10b, 2]);
    let ood_test = (0..p.n_per_class)
        .map(|_| LabeledSample { input: draw(&mut rng, &ood_center), label: p.classes, bbox: None, origin: Origin::OodTest })
        .collect();

    Ok(BenchmarkPairing {
        id_train,
        id_test,
        ood_test,
        class_count: p.classes,
        provenance: Provenance {
            generator: "blobs".into(),
            seed: Some(p.seed),
            params: serde_json::to_value(p)?,
        },
    })
}

/// Shape classes; the first three are in-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disk,
    Cross,
    Triangle,
    Ring,
}

impl Shape {
    pub const ID: [Shape; 3] = [Shape::Square, Shape::Disk, Shape::Cross];
    pub const OOD: [Shape; 2] = [Shape::Triangle, Shape::Ring];

    fn covers(self, x: usize, y: usize, s: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let r2 = dx * dx + dy * dy;
        let r = s as f64 / 2.0;
        match self {
            Shape::Square => true,
            Shape::Disk => r2 <= r * r,
            Shape::Cross => {
                let half = (s / 4).max(2) as f64 / 2.0;
                dx.abs() <= half || dy.abs() <= half
            }
            Shape::Triangle => {
                // Apex at the top row, base across the bottom row.
                let half_width = (y as f64 + 1.0) / s as f64 * r;
                dx.abs() <= half_width
            }
            Shape::Ring => {
                let inner = r - (s / 5).max(2) as f64;
                r2 <= r * r && r2 >= inner * inner
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesParams {
    pub seed: u64,
    pub image_size: usize,
    /// Training images per ID shape.
    pub n_per_class: usize,
    /// Test images per shape (ID and OOD alike).
    pub n_test_per_class: usize,
    pub min_extent: usize,
    pub max_extent: usize,
}

impl Default for ShapesParams {
    fn default() -> Self {
        Self { seed: 0, image_size: 28, n_per_class: 200, n_test_per_class: 60, min_extent: 10, max_extent: 18 }
    }
}

/// Renders one shape with side `extent` at `(x0, y0)`; returns the image and
/// its tight pixel box `[x_min, y_min, x_max, y_max]` (max edges exclusive).
pub fn render_shape(
    shape: Shape,
    image_size: usize,
    extent: usize,
    x0: usize,
    y0: usize,
    intensity: f64,
) -> Result<(Tensor, [f64; 4])> {
    if x0 + extent > image_size || y0 + extent > image_size {
        return Err(Error::Config(format!(
            "shape of extent {extent} at ({x0}, {y0}) does not fit a {image_size}px image"
        )));
    }
    let mut img = vec![0.0; image_size * image_size];
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..extent {
        for x in 0..extent {
            if shape.covers(x, y, extent) {
                let (px, py) = (x0 + x, y0 + y);
                img[py * image_size + px] = intensity;
                xmin = xmin.min(px);
                ymin = ymin.min(py);
                xmax = xmax.max(px + 1);
                ymax = ymax.max(py + 1);
            }
        }
    }
    let b = [xmin as f64, ymin as f64, xmax as f64, ymax as f64];
    Ok((Tensor::from_parts(vec![1, image_size, image_size], img), b))
}

/// One shape per image at a random position and scale. ID shapes are
/// square/disk/cross (labels 0–2); OOD shapes are triangle/ring, recorded with
/// labels 3 and 4 for bookkeeping only.
pub fn gen_shapes(p: &ShapesParams) -> Result<BenchmarkPairing> {
    if p.image_size < 16 {
        return Err(Error::Config(format!("image_size must be ≥ 16, got {}", p.image_size)));
    }
    if p.n_per_class == 0 || p.n_test_per_class == 0 {
        return Err(Error::Config("shape counts must be positive".into()));
    }
    if p.min_extent < 4 || p.min_extent > p.max_extent || p.max_extent + 2 > p.image_size {
        return Err(Error::Config(format!(
            "shape extents {}..={} do not fit a {}px image",
            p.min_extent, p.max_extent, p.image_size
        )));
    }
    let sample = |rng: &mut Rng, shape: Shape, label: usize, origin: Origin| -> Result<LabeledSample> {
        let extent = p.min_extent + rng.below(p.max_extent - p.min_extent + 1);
        let x0 = 1 + rng.below(p.image_size - extent - 1);
        let y0 = 1 + rng.below(p.image_size - extent - 1);
        let intensity = rng.uniform(0.6, 1.0);
        let (img, bbox) = render_shape(shape, p.image_size, extent, x0, y0, intensity)?;
        // Light background noise keeps pixels inside [0, 1].
        let noisy: Vec<f64> = img.data().iter().map(|&v| (v + 0.1 * rng.next_f64()).min(1.0)).collect();
        Ok(LabeledSample { input: img.with_data(noisy)?, label, bbox: Some(bbox), origin })
    };
    let split = |tag: u64, shapes: &[Shape], first_label: usize, n: usize, origin: Origin| -> Result<Vec<LabeledSample>> {
        let mut rng = Rng::derive(p.seed, &[0x5a9e, tag]);
        let mut out = Vec::with_capacity(n * shapes.len());
        for _ in 0..n {
            for (i, &s) in shapes.iter().enumerate() {
                out.push(sample(&mut rng, s, first_label + i, origin)?);
            }
        }
        Ok(out)
    };
    Ok(BenchmarkPairing {
        id_train: split(0, &Shape::ID, 0, p.n_per_class, Origin::IdTrain)?,
        id_test: split(1, &Shape::ID, 0, p.n_test_per_class, Origin::IdTest)?,
        ood_test: split(2, &Shape::OOD, Shape::ID.len(), p.n_test_per_class, Origin::OodTest)?,
        class_count: Shape::ID.len(),
        provenance: Provenance { generator: "shapes".into(), seed: Some(p.seed), params: serde_json::to_value(p)? },
    })
}
