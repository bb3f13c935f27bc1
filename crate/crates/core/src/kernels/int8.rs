use super::{check_reduction, expect_rank, sum_exponents, ConvParams};
use crate::error::{Error, Result};
use crate::qtensor::{compute_scale_exponent, downscale, AccumTensor, QuantTensor};

/// `a[M x K] * b[K x N]` with exact INT32 accumulation.
pub fn int8_matmul(a: &QuantTensor, b: &QuantTensor) -> Result<AccumTensor> {
    expect_rank(a.shape(), 2, "matmul lhs")?;
    expect_rank(b.shape(), 2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::InvalidArgument(format!(
            "inner dimensions disagree: {k} vs {k2}"
        )));
    }
    check_reduction(k)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0i32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p] as i32;
            if av == 0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv as i32;
            }
        }
    }
    AccumTensor::new(out, vec![m, n], sum_exponents(a.exponent(), b.exponent())?)
}

fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// Cross-correlation of `x[N,C,H,W]` with `w[O,C,KH,KW]`.
pub fn int8_conv2d(x: &QuantTensor, w: &QuantTensor, p: ConvParams) -> Result<AccumTensor> {
    expect_rank(x.shape(), 4, "conv input")?;
    expect_rank(w.shape(), 4, "conv weight")?;
    let (n, c, h, wd) = dims4(x.shape());
    let (o, c2, kh, kw) = dims4(w.shape());
    if c != c2 {
        return Err(Error::InvalidArgument(format!(
            "input has {c} channels, weight expects {c2}"
        )));
    }
    check_reduction(c * kh * kw)?;
    let (oh, ow) = p.output_hw((h, wd), (kh, kw))?;
    let (sh, sw) = p.stride;
    let (ph, pw) = (p.padding.0 as isize, p.padding.1 as isize);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0i32; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0i32;
                    for ic in 0..c {
                        for ky in 0..kh {
                            let iy = (y * sh) as isize + ky as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (xo * sw) as isize + kx as isize - pw;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = wdat[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv as i32 * wv as i32;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    AccumTensor::new(
        out,
        vec![n, o, oh, ow],
        sum_exponents(x.exponent(), w.exponent())?,
    )
}

/// Input gradient of [`int8_conv2d`]: full correlation of the (stride-dilated,
/// padded) error with 180-degree rotated weights.
pub fn int8_deconv(
    e_next: &QuantTensor,
    w: &QuantTensor,
    p: ConvParams,
    input_hw: (usize, usize),
) -> Result<AccumTensor> {
    expect_rank(w.shape(), 4, "deconv weight")?;
    int8_deconv_rotated(e_next, &super::rotate_weights(w)?, p, input_hw)
}

/// Same as [`int8_deconv`] with weights already rotated to `[C,O,KH,KW]`.
pub fn int8_deconv_rotated(
    e_next: &QuantTensor,
    w_rot: &QuantTensor,
    p: ConvParams,
    input_hw: (usize, usize),
) -> Result<AccumTensor> {
    expect_rank(e_next.shape(), 4, "deconv error")?;
    expect_rank(w_rot.shape(), 4, "deconv weight")?;
    let (n, o, oh, ow) = dims4(e_next.shape());
    let (c, o2, kh, kw) = dims4(w_rot.shape());
    if o != o2 {
        return Err(Error::InvalidArgument(format!(
            "error has {o} channels, weight produces {o2}"
        )));
    }
    let (h, wd) = input_hw;
    if p.output_hw((h, wd), (kh, kw))? != (oh, ow) {
        return Err(Error::InvalidArgument(format!(
            "error spatial size {:?} does not match a forward conv over {:?}",
            (oh, ow),
            input_hw
        )));
    }
    check_reduction(o * kh * kw)?;
    let (sh, sw) = (p.stride.0 as isize, p.stride.1 as isize);
    // Offset of the dilated error inside the fully padded frame.
    let off_h = p.padding.0 as isize + 1 - kh as isize;
    let off_w = p.padding.1 as isize + 1 - kw as isize;
    let (ed, wdat) = (e_next.data(), w_rot.data());
    let mut out = vec![0i32; n * c * h * wd];
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xi in 0..wd {
                    let mut acc = 0i32;
                    for ky in 0..kh {
                        let dy = y as isize + ky as isize + off_h;
                        if dy < 0 || dy % sh != 0 || dy / sh >= oh as isize {
                            continue;
                        }
                        let ey = (dy / sh) as usize;
                        for kx in 0..kw {
                            let dx = xi as isize + kx as isize + off_w;
                            if dx < 0 || dx % sw != 0 || dx / sw >= ow as isize {
                                continue;
                            }
                            let ex = (dx / sw) as usize;
                            for oc in 0..o {
                                let ev = ed[((b * o + oc) * oh + ey) * ow + ex];
                                let wv = wdat[((ic * o + oc) * kh + ky) * kw + kx];
                                acc += ev as i32 * wv as i32;
                            }
                        }
                    }
                    out[((b * c + ic) * h + y) * wd + xi] = acc;
                }
            }
        }
    }
    AccumTensor::new(
        out,
        vec![n, c, h, wd],
        sum_exponents(e_next.exponent(), w_rot.exponent())?,
    )
}

/// Weight gradient of [`int8_conv2d`]: correlates the input with the error.
pub fn int8_conv_backprop_filter(
    x: &QuantTensor,
    e_next: &QuantTensor,
    p: ConvParams,
    kernel_hw: (usize, usize),
) -> Result<AccumTensor> {
    expect_rank(x.shape(), 4, "backprop-filter input")?;
    expect_rank(e_next.shape(), 4, "backprop-filter error")?;
    let (n, c, h, wd) = dims4(x.shape());
    let (n2, o, oh, ow) = dims4(e_next.shape());
    if n != n2 {
        return Err(Error::InvalidArgument(format!(
            "batch sizes disagree: {n} vs {n2}"
        )));
    }
    let (kh, kw) = kernel_hw;
    if p.output_hw((h, wd), kernel_hw)? != (oh, ow) {
        return Err(Error::InvalidArgument(format!(
            "error spatial size {:?} does not match the forward conv",
            (oh, ow)
        )));
    }
    check_reduction(n * oh * ow)?;
    let (sh, sw) = p.stride;
    let (ph, pw) = (p.padding.0 as isize, p.padding.1 as isize);
    let (xd, ed) = (x.data(), e_next.data());
    let mut out = vec![0i32; o * c * kh * kw];
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0i32;
                    for b in 0..n {
                        for y in 0..oh {
                            let iy = (y * sh) as isize + ky as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for xo in 0..ow {
                                let ix = (xo * sw) as isize + kx as isize - pw;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                let ev = ed[((b * o + oc) * oh + y) * ow + xo];
                                acc += xv as i32 * ev as i32;
                            }
                        }
                    }
                    out[((oc * c + ic) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
    AccumTensor::new(
        out,
        vec![o, c, kh, kw],
        sum_exponents(x.exponent(), e_next.exponent())?,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PoolParams {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolParams {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window: (window, window),
            stride: (stride, stride),
        }
    }

    pub fn output_hw(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let (kh, kw) = self.window;
        if kh == 0 || kw == 0 || kh > input.0 || kw > input.1 {
            return Err(Error::InvalidArgument(format!(
                "pool window {:?} larger than input {:?}",
                self.window, input
            )));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidArgument(
                "pool stride must be at least 1".into(),
            ));
        }
        Ok((
            (input.0 - kh) / self.stride.0 + 1,
            (input.1 - kw) / self.stride.1 + 1,
        ))
    }
}

/// Max pooling over `[N,C,H,W]`. Returns the pooled tensor (same exponent) and
/// the flat input index of every selected element; ties keep the first
/// element in row-major scan order.
pub fn int8_maxpool_fwd(x: &QuantTensor, p: PoolParams) -> Result<(QuantTensor, Vec<usize>)> {
    expect_rank(x.shape(), 4, "maxpool input")?;
    let (n, c, h, w) = dims4(x.shape());
    let (oh, ow) = p.output_hw((h, w))?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + y * p.stride.0 * w + xo * p.stride.1;
                for ky in 0..p.window.0 {
                    for kx in 0..p.window.1 {
                        let idx = base + (y * p.stride.0 + ky) * w + xo * p.stride.1 + kx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        QuantTensor::new(out, vec![n, c, oh, ow], x.exponent())?,
        argmax,
    ))
}

/// Routes each error element to its recorded argmax. Overlapping windows can
/// sum several errors into one cell; if that leaves INT8 range the result is
/// downscaled and the exponent grows accordingly.
pub fn int8_maxpool_bwd(
    e: &QuantTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<QuantTensor> {
    if e.len() != argmax.len() {
        return Err(Error::InvalidArgument(format!(
            "{} error elements but {} argmax entries",
            e.len(),
            argmax.len()
        )));
    }
    let total: usize = input_shape.iter().product();
    let mut acc = vec![0i32; total];
    for (&ev, &idx) in e.data().iter().zip(argmax) {
        let slot = acc.get_mut(idx).ok_or_else(|| {
            Error::InvalidArgument(format!("argmax index {idx} outside input of {total}"))
        })?;
        *slot += ev as i32;
    }
    let t = AccumTensor::new(acc, input_shape.to_vec(), e.exponent())?;
    downscale(&t, compute_scale_exponent(&t))
}

/// Clamps negatives to zero; the mask records which elements passed.
pub fn relu_fwd(q: &QuantTensor) -> Result<(QuantTensor, Vec<bool>)> {
    let mask: Vec<bool> = q.data().iter().map(|&v| v > 0).collect();
    let data = q.data().iter().map(|&v| v.max(0)).collect();
    Ok((
        QuantTensor::new(data, q.shape().to_vec(), q.exponent())?,
        mask,
    ))
}

pub fn relu_bwd(e: &QuantTensor, mask: &[bool]) -> Result<QuantTensor> {
    if e.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "{} error elements but mask of {}",
            e.len(),
            mask.len()
        )));
    }
    let data = e
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { 0 })
        .collect();
    QuantTensor::new(data, e.shape().to_vec(), e.exponent())
}
