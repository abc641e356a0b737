use super::Tensor;
use crate::error::{Error, Result};

/// Matrix product of `a [m×k]` and `b [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape(format!(
            "matmul expects two matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner extents {k} and {k2} differ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::checked(vec![m, n], out, "matmul")
}

/// Output extent of a strided, padded window sweep.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (kernel <= padded && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// 2-D cross-correlation (kernels are not flipped).
///
/// `input` is `C×H×W`, `kernels` is `F×C×kh×kw`; zero padding on every side.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    conv2d_bias(input, kernels, None, stride, padding)
}

pub(crate) fn conv2d_bias(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!("conv2d input must be C×H×W, got {:?}", input.shape())));
    };
    let &[f, kc, kh, kw] = kernels.shape() else {
        return Err(Error::Shape(format!(
            "conv2d kernels must be F×C×kh×kw, got {:?}",
            kernels.shape()
        )));
    };
    if kc != c {
        return Err(Error::Shape(format!("conv2d kernel expects {kc} channels, input has {c}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_extent(h, kh, stride, padding),
        conv_out_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    };
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; f * oh * ow];
    for fi in 0..f {
        let plane = &mut out[fi * oh * ow..(fi + 1) * oh * ow];
        if let Some(b) = bias {
            plane.fill(b.data()[fi]);
        }
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let wv = k[((fi * c + ci) * kh + ki) * kw + kj];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xin[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::checked(vec![f, oh, ow], out, "conv2d")
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// 2×2 max pooling with stride 2 over a `C×H×W` map.
///
/// Odd extents use floor semantics: the last row/column is dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (out, _) = max_pool2_with_argmax(x)?;
    Ok(out)
}

/// Pooled map plus, per output cell, the flat input index that won.
pub(crate) fn max_pool2_with_argmax(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Shape(format!("max_pool2 input must be C×H×W, got {:?}", x.shape())));
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("max_pool2 needs extents ≥ 2, got {h}×{w}")));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, oh, ow], out), arg))
}

pub fn flatten(x: &Tensor) -> Tensor {
    Tensor::from_parts(vec![x.len()], x.data().to_vec())
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty vector"));
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite("log_sum_exp input"));
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(v)?;
    Ok(v.iter().map(|&x| (x - lse).exp()).collect())
}

/// Arithmetic mean anchored at the first element, so repeated values average
/// to themselves exactly. Empty input yields NaN.
pub fn mean(v: &[f64]) -> f64 {
    match v.first() {
        Some(&a) => a + v.iter().map(|x| x - a).sum::<f64>() / v.len() as f64,
        None => f64::NAN,
    }
}
