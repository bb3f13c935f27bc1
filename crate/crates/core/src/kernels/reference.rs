//! Plain FP32 implementations. They serve as oracles for the integer kernels
//! and as the arithmetic of the FP32 baseline trainer. Backward passes are
//! written in scatter form, the integer kernels in gather form.

use super::{expect_rank, ConvParams, PoolParams};
use crate::error::{Error, Result};
use crate::qtensor::FloatTensor;

fn out(data: Vec<f32>, shape: Vec<usize>) -> Result<FloatTensor> {
    FloatTensor::new(data, shape)
}

pub fn matmul(a: &FloatTensor, b: &FloatTensor) -> Result<FloatTensor> {
    expect_rank(a.shape(), 2, "matmul lhs")?;
    expect_rank(b.shape(), 2, "matmul rhs")?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != k {
        return Err(Error::InvalidArgument("inner dimensions disagree".into()));
    }
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k)
                .map(|p| a.data()[i * k + p] * b.data()[p * n + j])
                .sum();
        }
    }
    out(c, vec![m, n])
}

pub fn transpose(m: &FloatTensor) -> Result<FloatTensor> {
    expect_rank(m.shape(), 2, "matrix")?;
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut t = vec![0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = m.data()[i * c + j];
        }
    }
    out(t, vec![c, r])
}

/// `(n, c, h, w, o, kh, kw, oh, ow)`.
type Geometry = (
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
);

fn conv_geometry(x: &[usize], w: &[usize], p: ConvParams) -> Result<Geometry> {
    expect_rank(x, 4, "conv input")?;
    expect_rank(w, 4, "conv weight")?;
    if x[1] != w[1] {
        return Err(Error::InvalidArgument("channel mismatch".into()));
    }
    let (oh, ow) = p.output_hw((x[2], x[3]), (w[2], w[3]))?;
    Ok((x[0], x[1], x[2], x[3], w[0], w[2], w[3], oh, ow))
}

/// Visits every (input index, weight index, output index) triple of a conv.
fn for_each_tap(
    x: &[usize],
    w: &[usize],
    p: ConvParams,
    mut f: impl FnMut(usize, usize, usize),
) -> Result<Vec<usize>> {
    let (n, c, h, wd, o, kh, kw, oh, ow) = conv_geometry(x, w, p)?;
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let oi = ((b * o + oc) * oh + y) * ow + xo;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * p.stride.0 + ky) as isize - p.padding.0 as isize;
                                let ix = (xo * p.stride.1 + kx) as isize - p.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * c + ic) * h + iy as usize) * wd + ix as usize;
                                let wi = ((oc * c + ic) * kh + ky) * kw + kx;
                                f(xi, wi, oi);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(vec![n, o, oh, ow])
}

pub fn conv2d(x: &FloatTensor, w: &FloatTensor, p: ConvParams) -> Result<FloatTensor> {
    let (n, _, _, _, o, _, _, oh, ow) = conv_geometry(x.shape(), w.shape(), p)?;
    let mut y = vec![0f32; n * o * oh * ow];
    let shape = for_each_tap(x.shape(), w.shape(), p, |xi, wi, oi| {
        y[oi] += x.data()[xi] * w.data()[wi];
    })?;
    out(y, shape)
}

/// dL/dx given dL/dy for [`conv2d`].
pub fn conv2d_input_grad(
    e: &FloatTensor,
    w: &FloatTensor,
    p: ConvParams,
    input_hw: (usize, usize),
) -> Result<FloatTensor> {
    expect_rank(e.shape(), 4, "error")?;
    expect_rank(w.shape(), 4, "weight")?;
    let x_shape = vec![e.shape()[0], w.shape()[1], input_hw.0, input_hw.1];
    let mut g = vec![0f32; x_shape.iter().product()];
    let y_shape = for_each_tap(&x_shape, w.shape(), p, |xi, wi, oi| {
        g[xi] += e.data()[oi] * w.data()[wi];
    })?;
    if y_shape != e.shape() {
        return Err(Error::InvalidArgument("error shape mismatch".into()));
    }
    out(g, x_shape)
}

/// dL/dw given dL/dy for [`conv2d`].
pub fn conv2d_filter_grad(
    x: &FloatTensor,
    e: &FloatTensor,
    p: ConvParams,
    kernel_hw: (usize, usize),
) -> Result<FloatTensor> {
    expect_rank(x.shape(), 4, "input")?;
    expect_rank(e.shape(), 4, "error")?;
    let w_shape = vec![e.shape()[1], x.shape()[1], kernel_hw.0, kernel_hw.1];
    let mut g = vec![0f32; w_shape.iter().product()];
    let y_shape = for_each_tap(x.shape(), &w_shape, p, |xi, wi, oi| {
        g[wi] += e.data()[oi] * x.data()[xi];
    })?;
    if y_shape != e.shape() {
        return Err(Error::InvalidArgument("error shape mismatch".into()));
    }
    out(g, w_shape)
}

pub fn maxpool(x: &FloatTensor, p: PoolParams) -> Result<(FloatTensor, Vec<usize>)> {
    expect_rank(x.shape(), 4, "pool input")?;
    let s = x.shape();
    let (oh, ow) = p.output_hw((s[2], s[3]))?;
    let mut y = Vec::new();
    let mut arg = Vec::new();
    for plane in 0..s[0] * s[1] {
        for i in 0..oh {
            for j in 0..ow {
                let mut best: Option<usize> = None;
                for ky in 0..p.window.0 {
                    for kx in 0..p.window.1 {
                        let idx = plane * s[2] * s[3]
                            + (i * p.stride.0 + ky) * s[3]
                            + j * p.stride.1
                            + kx;
                        if best.is_none_or(|b| x.data()[idx] > x.data()[b]) {
                            best = Some(idx);
                        }
                    }
                }
                let b = best.expect("non-empty window");
                y.push(x.data()[b]);
                arg.push(b);
            }
        }
    }
    Ok((out(y, vec![s[0], s[1], oh, ow])?, arg))
}

pub fn maxpool_bwd(
    e: &FloatTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<FloatTensor> {
    let mut g = vec![0f32; input_shape.iter().product()];
    for (v, &i) in e.data().iter().zip(argmax) {
        g[i] += v;
    }
    out(g, input_shape.to_vec())
}

pub fn relu(x: &FloatTensor) -> FloatTensor {
    FloatTensor::new(
        x.data().iter().map(|v| v.max(0.0)).collect(),
        x.shape().to_vec(),
    )
    .expect("relu preserves finiteness")
}

pub fn relu_bwd(e: &FloatTensor, x: &FloatTensor) -> Result<FloatTensor> {
    let g = e
        .data()
        .iter()
        .zip(x.data())
        .map(|(&ev, &xv)| if xv > 0.0 { ev } else { 0.0 })
        .collect();
    out(g, e.shape().to_vec())
}

/// Mean cross-entropy of `softmax(logits)` and the gradient of the
/// batch-summed loss, `softmax - onehot`.
pub fn softmax_xent(logits: &FloatTensor, labels: &[usize]) -> Result<(f32, FloatTensor)> {
    expect_rank(logits.shape(), 2, "logits")?;
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut total = 0f64;
    let mut grad = vec![0f32; n * classes];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() - (row[label] as f64 - max);
        for (j, ex) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad[i * classes + j] = (ex / sum - onehot) as f32;
        }
    }
    Ok(((total / n as f64) as f32, out(grad, vec![n, classes])?))
}

/// Per-sample standardization to zero mean and unit variance.
pub fn normalization(x: &FloatTensor) -> Result<FloatTensor> {
    let n = *x.shape().first().unwrap_or(&1);
    let row = x.len() / n.max(1);
    let mut y = Vec::with_capacity(x.len());
    for chunk in x.data().chunks(row.max(1)) {
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / chunk.len() as f64;
        let var = chunk
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / chunk.len() as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        y.extend(chunk.iter().map(|&v| ((v as f64 - mean) * inv) as f32));
    }
    out(y, x.shape().to_vec())
}

pub fn round(x: &FloatTensor) -> FloatTensor {
    FloatTensor::new(
        x.data().iter().map(|v| v.round()).collect(),
        x.shape().to_vec(),
    )
    .expect("round preserves finiteness")
}

pub fn sqrt(x: &FloatTensor) -> Result<FloatTensor> {
    out(
        x.data().iter().map(|v| v.abs().sqrt()).collect(),
        x.shape().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ft(data: Vec<f32>, shape: Vec<usize>) -> FloatTensor {
        FloatTensor::new(data, shape).unwrap()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = ft(
            (0..18).map(|v| (v as f32 * 0.37).sin()).collect(),
            vec![1, 2, 3, 3],
        );
        let w = ft(
            (0..16).map(|v| (v as f32 * 0.71).cos()).collect(),
            vec![2, 2, 2, 2],
        );
        let p = ConvParams::default();
        let y = conv2d(&x, &w, p).unwrap();
        let e = ft(
            (0..y.len()).map(|v| v as f32 * 0.1 - 0.3).collect(),
            y.shape().to_vec(),
        );
        // L = <conv(x, w), e> is linear, so central differences are exact up to rounding.
        let loss = |x: &FloatTensor, w: &FloatTensor| -> f64 {
            conv2d(x, w, p)
                .unwrap()
                .data()
                .iter()
                .zip(e.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        let gx = conv2d_input_grad(&e, &w, p, (3, 3)).unwrap();
        let gw = conv2d_filter_grad(&x, &e, p, (2, 2)).unwrap();
        let h = 1e-2f32;
        for i in 0..x.len() {
            let mut xp = x.clone().into_data();
            xp[i] += h;
            let mut xm = x.clone().into_data();
            xm[i] -= h;
            let fd = (loss(&ft(xp, x.shape().to_vec()), &w)
                - loss(&ft(xm, x.shape().to_vec()), &w))
                / (2.0 * h as f64);
            assert!((fd - gx.data()[i] as f64).abs() < 1e-3);
        }
        for i in 0..w.len() {
            let mut wp = w.clone().into_data();
            wp[i] += h;
            let mut wm = w.clone().into_data();
            wm[i] -= h;
            let fd = (loss(&x, &ft(wp, w.shape().to_vec()))
                - loss(&x, &ft(wm, w.shape().to_vec())))
                / (2.0 * h as f64);
            assert!((fd - gw.data()[i] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn normalization_zero_mean() {
        let x = ft(vec![1.0, 2.0, 3.0, 10.0, 10.0, 10.0], vec![2, 3]);
        let y = normalization(&x).unwrap();
        assert!(y.data()[..3].iter().sum::<f32>().abs() < 1e-5);
        assert!(y.data()[3..].iter().all(|v| v.abs() < 1e-5));
    }
}
