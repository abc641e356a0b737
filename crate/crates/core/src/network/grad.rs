//! Training-mode forward pass and exact reverse-mode gradients.
//!
//! The objective over a batch of `N` samples is
//! `scale / N · Σ_n [CE(f_n, y_n) + box_weight · smoothL1(b_n, b*_n)]`.
//! Batchnorm layers normalize with batch statistics here.

use super::layer::{bn_layout, linear_forward, LayerKind, BN_EPS};
use super::loss::{cross_entropy_logits, smooth_l1, smooth_l1_grad};
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::{self, conv2d_bias, max_pool2_with_argmax, softmax, Tensor};

/// Supervision for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub class: usize,
    pub bbox: Option<[f64; 4]>,
}

/// Loss weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// λ multiplying the box term.
    pub box_weight: f64,
    /// Overall multiplier on the loss.
    pub scale: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { box_weight: 1.0, scale: 1.0 }
    }
}

/// Gradients laid out exactly like `Model::layers()[l].params()`.
///
/// Non-trainable tensors (batchnorm running statistics) carry zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Vec<Tensor>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Self {
            per_layer: model
                .layers()
                .iter()
                .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.per_layer
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Batch statistics observed by a batchnorm layer during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (biased when only one value per channel was seen).
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub gradients: Gradients,
    /// Samples whose argmax logit equals the target class.
    pub correct: usize,
    /// One entry per layer; `Some` for batchnorm layers.
    pub bn_stats: Vec<Option<BnBatchStats>>,
}

enum Cache {
    None,
    Pool(Vec<Vec<usize>>),
    Bn { xhat: Vec<Tensor>, inv_std: Vec<f64> },
}

struct Trace {
    acts: Vec<Vec<Tensor>>,
    caches: Vec<Cache>,
    bn_stats: Vec<Option<BnBatchStats>>,
}

fn forward_train(model: &Model, inputs: &[Tensor]) -> Result<Trace> {
    let mut acts = vec![inputs.to_vec()];
    let mut caches = Vec::with_capacity(model.layers().len());
    let mut bn_stats = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let xs = acts.last().expect("non-empty");
        let p = layer.params();
        let wrap = |e: Error| match e {
            Error::Shape(detail) => Error::LayerShape { layer: layer.name().to_owned(), detail },
            other => other,
        };
        let (ys, cache, stats) = match layer.kind() {
            LayerKind::Conv2d => (
                xs.iter()
                    .map(|x| conv2d_bias(x, &p[0], Some(&p[1]), layer.stride(), layer.padding()))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?,
                Cache::None,
                None,
            ),
            LayerKind::Linear => (
                xs.iter()
                    .map(|x| linear_forward(&p[0], &p[1], x))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?,
                Cache::None,
                None,
            ),
            LayerKind::Relu => (xs.iter().map(numerics::relu).collect(), Cache::None, None),
            LayerKind::Flatten => (xs.iter().map(numerics::flatten).collect(), Cache::None, None),
            LayerKind::MaxPool2 => {
                let mut ys = Vec::with_capacity(xs.len());
                let mut args = Vec::with_capacity(xs.len());
                for x in xs {
                    let (y, a) = max_pool2_with_argmax(x).map_err(wrap)?;
                    ys.push(y);
                    args.push(a);
                }
                (ys, Cache::Pool(args), None)
            }
            LayerKind::BatchNorm => {
                let (ys, xhat, inv_std, stats) = bn_forward_batch(xs, &p[0], &p[1]).map_err(wrap)?;
                (ys, Cache::Bn { xhat, inv_std }, Some(stats))
            }
        };
        acts.push(ys);
        caches.push(cache);
        bn_stats.push(stats);
    }
    Ok(Trace { acts, caches, bn_stats })
}

#[allow(clippy::type_complexity)]
fn bn_forward_batch(
    xs: &[Tensor],
    scale: &Tensor,
    shift: &Tensor,
) -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<f64>, BnBatchStats)> {
    let c = scale.len();
    let spatial = bn_layout(&xs[0], c)?;
    for x in xs {
        if x.shape() != xs[0].shape() {
            return Err(Error::Shape("batchnorm batch has mixed shapes".into()));
        }
    }
    let count = (xs.len() * spatial) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let vals = || xs.iter().flat_map(|x| &x.data()[ci * spatial..(ci + 1) * spatial]);
        let m = vals().sum::<f64>() / count;
        mean[ci] = m;
        var[ci] = vals().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhats = Vec::with_capacity(xs.len());
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xh = x.data().to_vec();
        for ci in 0..c {
            for v in &mut xh[ci * spatial..(ci + 1) * spatial] {
                *v = (*v - mean[ci]) * inv_std[ci];
            }
        }
        let y: Vec<f64> = xh
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let ci = i / spatial;
                scale.data()[ci] * h + shift.data()[ci]
            })
            .collect();
        ys.push(Tensor::checked(x.shape().to_vec(), y, "batchnorm")?);
        xhats.push(Tensor::from_parts(x.shape().to_vec(), xh));
    }
    let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
    let stats = BnBatchStats { mean, var: var.iter().map(|v| v * unbiased).collect() };
    Ok((ys, xhats, inv_std, stats))
}

/// Per-sample loss terms and the gradient with respect to the raw output.
fn head_loss(
    model: &Model,
    out: &Tensor,
    target: &Target,
    obj: &Objective,
    per_sample: f64,
) -> Result<(f64, Tensor, bool)> {
    let k = model.class_count();
    if out.shape() != [model.output_len()] {
        return Err(Error::Shape(format!(
            "model output has shape {:?}, expected [{}]",
            out.shape(),
            model.output_len()
        )));
    }
    let logits = &out.data()[..k];
    let mut loss = cross_entropy_logits(logits, target.class)?;
    let probs = softmax(logits)?;
    let mut d = vec![0.0; out.len()];
    for (j, p) in probs.iter().enumerate() {
        let onehot = if j == target.class { 1.0 } else { 0.0 };
        d[j] = (p - onehot) * per_sample;
    }
    if model.has_box_head() {
        if let Some(truth) = target.bbox {
            let pred = &out.data()[k..k + 4];
            loss += obj.box_weight * smooth_l1(pred, &truth);
            for i in 0..4 {
                d[k + i] = obj.box_weight * smooth_l1_grad(pred[i], truth[i]) * per_sample;
            }
        }
    }
    let correct = Tensor::from_parts(vec![k], logits.to_vec()).argmax() == target.class;
    Ok((loss, Tensor::from_parts(out.shape().to_vec(), d), correct))
}

/// Training-mode objective value without gradients.
pub fn batch_loss(model: &Model, inputs: &[Tensor], targets: &[Target], obj: &Objective) -> Result<f64> {
    check_batch(inputs, targets)?;
    let trace = forward_train(model, inputs)?;
    let per_sample = obj.scale / inputs.len() as f64;
    let mut total = 0.0;
    for (out, t) in trace.acts.last().expect("outputs").iter().zip(targets) {
        total += head_loss(model, out, t, obj, per_sample)?.0;
    }
    finite_loss(total * per_sample)
}

fn check_batch(inputs: &[Tensor], targets: &[Target]) -> Result<()> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid(format!(
            "batch needs matching non-empty inputs/targets, got {} and {}",
            inputs.len(),
            targets.len()
        )));
    }
    Ok(())
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Loss, gradients and batch statistics for one batch.
pub fn backward(model: &Model, inputs: &[Tensor], targets: &[Target], obj: &Objective) -> Result<BatchOutcome> {
    check_batch(inputs, targets)?;
    let trace = forward_train(model, inputs)?;
    let n = inputs.len();
    let per_sample = obj.scale / n as f64;

    let mut total = 0.0;
    let mut correct = 0;
    let mut dys = Vec::with_capacity(n);
    for (out, t) in trace.acts.last().expect("outputs").iter().zip(targets) {
        let (l, d, ok) = head_loss(model, out, t, obj, per_sample)?;
        total += l;
        correct += usize::from(ok);
        dys.push(d);
    }
    let loss = finite_loss(total * per_sample)?;

    let mut grads = Gradients::zeros_like(model);
    for (li, layer) in model.layers().iter().enumerate().rev() {
        let xs = &trace.acts[li];
        let need_dx = li > 0;
        let p = layer.params();
        let g = &mut grads.per_layer[li];
        dys = match (layer.kind(), &trace.caches[li]) {
            (LayerKind::Conv2d, _) => {
                let mut dxs = Vec::with_capacity(n);
                let (gw, gb) = g.split_at_mut(1);
                for (x, dy) in xs.iter().zip(&dys) {
                    let dx = conv2d_backward(
                        x,
                        &p[0],
                        dy,
                        layer.stride(),
                        layer.padding(),
                        &mut gw[0],
                        &mut gb[0],
                        need_dx,
                    );
                    dxs.push(dx);
                }
                dxs
            }
            (LayerKind::Linear, _) => {
                let (out, inp) = (p[0].shape()[0], p[0].shape()[1]);
                let w = p[0].data();
                let mut dxs = Vec::with_capacity(n);
                for (x, dy) in xs.iter().zip(&dys) {
                    let (gw, gb) = g.split_at_mut(1);
                    let gwd = gw[0].data_mut();
                    let gbd = gb[0].data_mut();
                    let mut dx = vec![0.0; inp];
                    for o in 0..out {
                        let d = dy.data()[o];
                        if d == 0.0 {
                            continue;
                        }
                        gbd[o] += d;
                        let row = &mut gwd[o * inp..(o + 1) * inp];
                        for (gv, xv) in row.iter_mut().zip(x.data()) {
                            *gv += d * xv;
                        }
                        if need_dx {
                            for (dv, wv) in dx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                                *dv += d * wv;
                            }
                        }
                    }
                    dxs.push(Tensor::from_parts(vec![inp], dx));
                }
                dxs
            }
            (LayerKind::Relu, _) => xs
                .iter()
                .zip(&dys)
                .map(|(x, dy)| {
                    let d = x.data().iter().zip(dy.data()).map(|(&xv, &dv)| if xv > 0.0 { dv } else { 0.0 });
                    Tensor::from_parts(x.shape().to_vec(), d.collect())
                })
                .collect(),
            (LayerKind::Flatten, _) => xs
                .iter()
                .zip(dys)
                .map(|(x, dy)| Tensor::from_parts(x.shape().to_vec(), dy.into_data()))
                .collect(),
            (LayerKind::MaxPool2, Cache::Pool(args)) => xs
                .iter()
                .zip(&dys)
                .zip(args)
                .map(|((x, dy), arg)| {
                    let mut dx = vec![0.0; x.len()];
                    for (&src, &d) in arg.iter().zip(dy.data()) {
                        dx[src] += d;
                    }
                    Tensor::from_parts(x.shape().to_vec(), dx)
                })
                .collect(),
            (LayerKind::BatchNorm, Cache::Bn { xhat, inv_std }) => {
                let c = p[0].len();
                let spatial = xs[0].len() / c;
                let count = (n * spatial) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (dy, xh) in dys.iter().zip(xhat) {
                    for ci in 0..c {
                        let r = ci * spatial..(ci + 1) * spatial;
                        for (d, h) in dy.data()[r.clone()].iter().zip(&xh.data()[r]) {
                            sum_dy[ci] += d;
                            sum_dy_xhat[ci] += d * h;
                        }
                    }
                }
                for ci in 0..c {
                    g[0].data_mut()[ci] += sum_dy_xhat[ci];
                    g[1].data_mut()[ci] += sum_dy[ci];
                }
                dys.iter()
                    .zip(xhat)
                    .map(|(dy, xh)| {
                        let mut dx = vec![0.0; dy.len()];
                        for ci in 0..c {
                            let k = p[0].data()[ci] * inv_std[ci] / count;
                            for i in ci * spatial..(ci + 1) * spatial {
                                dx[i] = k
                                    * (count * dy.data()[i] - sum_dy[ci] - xh.data()[i] * sum_dy_xhat[ci]);
                            }
                        }
                        Tensor::from_parts(dy.shape().to_vec(), dx)
                    })
                    .collect()
            }
            _ => unreachable!("cache kind matches layer kind"),
        };
    }

    Ok(BatchOutcome { loss, gradients: grads, correct, bn_stats: trace.bn_stats })
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    padding: usize,
    gw: &mut Tensor,
    gb: &mut Tensor,
    need_dx: bool,
) -> Tensor {
    let (c, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let gwd = gw.data_mut();
    for fi in 0..f {
        let plane = &dyd[fi * oh * ow..(fi + 1) * oh * ow];
        gb.data_mut()[fi] += plane.iter().sum::<f64>();
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let widx = ((fi * c + ci) * kh + ki) * kw + kj;
                    let wv = wd[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * wid;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= wid as isize {
                                continue;
                            }
                            let d = plane[oy * ow + ox];
                            acc += d * xd[base + ix as usize];
                            if need_dx {
                                dx[base + ix as usize] += wv * d;
                            }
                        }
                    }
                    gwd[widx] += acc;
                }
            }
        }
    }
    if need_dx {
        Tensor::from_parts(x.shape().to_vec(), dx)
    } else {
        Tensor::zeros(&[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, Model};
    use crate::numerics::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.standard_normal()).collect()).unwrap()
    }

    /// conv → batchnorm → flatten → linear, with both heads.
    pub(crate) fn micro_model(seed: u64) -> Model {
        let mut rng = Rng::new(seed);
        let conv = LayerSpec::conv2d("conv", rand_tensor(&[2, 1, 3, 3], &mut rng, 0.5), rand_tensor(&[2], &mut rng, 0.1), 1, 1)
            .unwrap();
        let bn = LayerSpec::batchnorm(
            "bn",
            Tensor::vector(vec![1.3, 0.7]).unwrap(),
            Tensor::vector(vec![0.1, -0.2]).unwrap(),
            Tensor::zeros(&[2]),
            Tensor::filled(&[2], 1.0),
        )
        .unwrap();
        let fc = LayerSpec::linear("fc", rand_tensor(&[7, 32], &mut rng, 0.3), rand_tensor(&[7], &mut rng, 0.1)).unwrap();
        Model::new(vec![conv, bn, LayerSpec::flatten("flat"), fc], 2, 3, true).unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_gradient() {
        // Large target logit makes softmax exactly one-hot in f64.
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::vector(vec![0.0, 1000.0, 0.0]).unwrap();
        let fc = LayerSpec::linear("fc", w, b).unwrap();
        let m = Model::new(vec![fc], 0, 3, false).unwrap();
        let x = vec![Tensor::vector(vec![0.3, -0.4]).unwrap()];
        let out = backward(&m, &x, &[Target { class: 1, bbox: None }], &Objective::default()).unwrap();
        assert!(out.gradients.norm() <= 1e-9);

        let fc = LayerSpec::linear("fc", Tensor::zeros(&[7, 2]), Tensor::vector(vec![0., 1000., 0., 1., 2., 3., 4.]).unwrap())
            .unwrap();
        let m = Model::new(vec![fc], 0, 3, true).unwrap();
        let t = Target { class: 1, bbox: Some([1., 2., 3., 4.]) };
        let out = backward(&m, &x, &[t], &Objective::default()).unwrap();
        assert!(out.gradients.norm() <= 1e-9);
    }

    #[test]
    fn doubling_the_loss_doubles_gradients() {
        let m = micro_model(3);
        let mut rng = Rng::new(4);
        let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[1, 4, 4], &mut rng, 1.0)).collect();
        let ts: Vec<Target> = (0..3).map(|i| Target { class: i % 3, bbox: Some([0.5, 0.5, 2.0, 3.0]) }).collect();
        let one = backward(&m, &xs, &ts, &Objective { box_weight: 1.0, scale: 1.0 }).unwrap();
        let two = backward(&m, &xs, &ts, &Objective { box_weight: 1.0, scale: 2.0 }).unwrap();
        assert_eq!(two.loss, 2.0 * one.loss);
        for (a, b) in one.gradients.per_layer.iter().flatten().zip(two.gradients.per_layer.iter().flatten()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, 2.0 * x);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_target() {
        let m = micro_model(1);
        let x = vec![Tensor::zeros(&[1, 4, 4])];
        assert!(backward(&m, &x, &[Target { class: 3, bbox: None }], &Objective::default()).is_err());
    }
}
