//! Forward and backward kernels for the image primitives.
//!
//! Every forward kernel here is a plain function of tensors; the autodiff
//! tape in [`crate::autodiff`] records them and calls the matching
//! backward kernels.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

/// Output extent of a strided, padded convolution along one axis.
fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(shape_err!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output positions `o` for which `o*stride + k - padding` lands in `[0, input)`.
#[inline]
fn valid_range(out: usize, input: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + padding > k {
        ((input + padding - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, c_out: usize) -> Result<()> {
    if bias.numel() != c_out {
        return Err(shape_err!(
            "bias holds {} values, expected {c_out}",
            bias.numel()
        ));
    }
    Ok(())
}

/// 2-D cross-correlation, weight laid out `C_out×C_in×K_h×K_w`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if stride == 0 {
        return Err(shape_err!("conv2d stride must be at least 1"));
    }
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc_in, kh, kw) = weight.dims4()?;
    if wc_in != c_in {
        return Err(shape_err!(
            "conv2d weight expects {wc_in} input channels, input has {c_in}"
        ));
    }
    check_bias(bias, c_out)?;
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); n * c_out * oh * ow];
    for b in 0..n {
        for co in 0..c_out {
            let plane = &mut out[(b * c_out + co) * oh * ow..][..oh * ow];
            plane.fill(bias.data()[co]);
            for ci in 0..c_in {
                let xin = &x[(b * c_in + ci) * h * w..][..h * w];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, padding);
                    for kx in 0..kw {
                        let wv = wt[((co * c_in + ci) * kh + ky) * kw + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, padding);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let xrow = &xin[iy * w..][..w];
                            let orow = &mut plane[oy * ow..][..ow];
                            if stride == 1 {
                                let off = ox_lo + kx - padding;
                                let src = &xrow[off..off + (ox_hi - ox_lo)];
                                for (o, &xv) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o += wv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * xrow[ox * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c_in, h, w) = input.dims4().expect("validated in forward");
    let (c_out, _, kh, kw) = weight.dims4().expect("validated in forward");
    let (_, _, oh, ow) = grad_out.dims4().expect("validated in forward");
    let x = input.data();
    let wt = weight.data();
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); c_out];

    for b in 0..n {
        for co in 0..c_out {
            let gplane = &gy[(b * c_out + co) * oh * ow..][..oh * ow];
            gb[co] += gplane.iter().copied().sum();
            for ci in 0..c_in {
                let xoff = (b * c_in + ci) * h * w;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, padding);
                    for kx in 0..kw {
                        let widx = ((co * c_in + ci) * kh + ky) * kw + kx;
                        let wv = wt[widx];
                        let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, padding);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let grow = &gplane[oy * ow..][..ow];
                            let base = xoff + iy * w;
                            for ox in ox_lo..ox_hi {
                                let ix = base + ox * stride + kx - padding;
                                let g = grow[ox];
                                acc += g * x[ix];
                                gx[ix] += g * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).expect("same shape"),
        Tensor::new(weight.shape().to_vec(), gw).expect("same shape"),
        Tensor::new(vec![c_out], gb).expect("same shape"),
    )
}

/// Transposed 2-D convolution without padding, weight laid out
/// `C_in×C_out×K_h×K_w`. Output extent is `(H−1)·stride + K_h`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    if stride == 0 {
        return Err(shape_err!("conv_transpose2d stride must be at least 1"));
    }
    let (n, c_in, h, w) = input.dims4()?;
    let (wc_in, c_out, kh, kw) = weight.dims4()?;
    if wc_in != c_in {
        return Err(shape_err!(
            "conv_transpose2d weight expects {wc_in} input channels, input has {c_in}"
        ));
    }
    check_bias(bias, c_out)?;
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); n * c_out * oh * ow];
    for b in 0..n {
        for co in 0..c_out {
            let plane = &mut out[(b * c_out + co) * oh * ow..][..oh * ow];
            plane.fill(bias.data()[co]);
            for ci in 0..c_in {
                let xin = &x[(b * c_in + ci) * h * w..][..h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((ci * c_out + co) * kh + ky) * kw + kx];
                        for iy in 0..h {
                            let orow = &mut plane[(iy * stride + ky) * ow..][..ow];
                            let xrow = &xin[iy * w..][..w];
                            for (ix, &xv) in xrow.iter().enumerate() {
                                orow[ix * stride + kx] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c_in, h, w) = input.dims4().expect("validated in forward");
    let (_, c_out, kh, kw) = weight.dims4().expect("validated in forward");
    let (_, _, oh, ow) = grad_out.dims4().expect("validated in forward");
    let x = input.data();
    let wt = weight.data();
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); c_out];

    for b in 0..n {
        for co in 0..c_out {
            let gplane = &gy[(b * c_out + co) * oh * ow..][..oh * ow];
            gb[co] += gplane.iter().copied().sum();
            for ci in 0..c_in {
                let xoff = (b * c_in + ci) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((ci * c_out + co) * kh + ky) * kw + kx;
                        let wv = wt[widx];
                        let mut acc = T::zero();
                        for iy in 0..h {
                            let grow = &gplane[(iy * stride + ky) * ow..][..ow];
                            for ix in 0..w {
                                let g = grow[ix * stride + kx];
                                let xi = xoff + iy * w + ix;
                                acc += g * x[xi];
                                gx[xi] += g * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).expect("same shape"),
        Tensor::new(weight.shape().to_vec(), gw).expect("same shape"),
        Tensor::new(vec![c_out], gb).expect("same shape"),
    )
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input index it was taken from. Ties resolve to the first element in
/// row-major scan order of the window.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if window == 0 || stride == 0 {
        return Err(shape_err!("maxpool window and stride must be at least 1"));
    }
    if window > h || window > w {
        return Err(shape_err!(
            "maxpool window {window} exceeds spatial extent {h}×{w}"
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Softmax across the channel axis of an `N×C×H×W` tensor.
pub fn softmax_channel<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let off = b * c * hw;
        for p in 0..hw {
            let mut mx = T::neg_infinity();
            for ch in 0..c {
                mx = mx.max(x[off + ch * hw + p]);
            }
            let mut total = T::zero();
            for ch in 0..c {
                let e = (x[off + ch * hw + p] - mx).exp();
                out[off + ch * hw + p] = e;
                total += e;
            }
            for ch in 0..c {
                out[off + ch * hw + p] /= total;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub(crate) fn softmax_channel_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = y.dims4().expect("validated in forward");
    let hw = h * w;
    let (yd, gd) = (y.data(), gy.data());
    let mut gx = vec![T::zero(); yd.len()];
    for b in 0..n {
        let off = b * c * hw;
        for p in 0..hw {
            let mut dot = T::zero();
            for ch in 0..c {
                let i = off + ch * hw + p;
                dot += yd[i] * gd[i];
            }
            for ch in 0..c {
                let i = off + ch * hw + p;
                gx[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), gx).expect("same shape")
}

/// Concatenates along the channel axis; N, H and W must agree.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut c_total = 0;
    for t in inputs {
        let (ni, ci, hi, wi) = t.dims4()?;
        if (ni, hi, wi) != (n, h, w) {
            return Err(shape_err!(
                "concat extent mismatch: {:?} vs {:?}",
                t.shape(),
                first.shape()
            ));
        }
        c_total += ci;
    }
    let mut out = Vec::with_capacity(n * c_total * h * w);
    for b in 0..n {
        for t in inputs {
            let len = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::new(vec![n, c_total, h, w], out)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub(crate) fn split_channels<T: Scalar>(g: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let (n, _, h, w) = g.dims4().expect("validated in forward");
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(n * c * h * w))
        .collect();
    let gd = g.data();
    let mut pos = 0;
    for _ in 0..n {
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&gd[pos..pos + c * h * w]);
            pos += c * h * w;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::new(vec![n, c, h, w], d).expect("same shape"))
        .collect()
}

/// Nearest-neighbour up-sampling by an integer factor (pixel replication).
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(shape_err!("upsample factor must be at least 1"));
    }
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for oy in 0..oh {
            let row = &x[p * h * w + (oy / factor) * w..][..w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn upsample_nearest_backward<T: Scalar>(
    gy: &Tensor<T>,
    factor: usize,
    input_shape: &[usize],
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (_, _, oh, ow) = gy.dims4().expect("validated in forward");
    let mut gx = Tensor::zeros(input_shape);
    let g = gy.data();
    let out = gx.data_mut();
    let planes = out.len() / (h * w);
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                out[p * h * w + (oy / factor) * w + ox / factor] += g[(p * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

fn check_target<T: Scalar>(logits: &Tensor<T>, target: &Mask) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = logits.dims4()?;
    if target.dims() != (n, h, w) {
        return Err(shape_err!(
            "target extents {:?} do not match logits {:?}",
            target.dims(),
            logits.shape()
        ));
    }
    let limit = if c == 1 { 2 } else { c };
    let max = target.max_label() as usize;
    if max >= limit {
        return Err(Error::Domain(format!(
            "target class {max} out of range for {c}-channel logits"
        )));
    }
    Ok((n, c, h, w))
}

/// Mean per-pixel cross-entropy.
///
/// A single-channel input is treated as binary logits (sigmoid with binary
/// cross-entropy, targets in {0, 1}); `C ≥ 2` channels use softmax with
/// categorical cross-entropy over class indices `< C`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, target: &Mask) -> Result<T> {
    let (n, c, h, w) = check_target(logits, target)?;
    let hw = h * w;
    let z = logits.data();
    let t = target.data();
    let mut total = T::zero();
    if c == 1 {
        for (&zi, &ti) in z.iter().zip(t) {
            // softplus(z) - t*z, written to avoid overflow
            let sp = zi.max(T::zero()) + (-zi.abs()).exp().ln_1p();
            total += if ti == 1 { sp - zi } else { sp };
        }
    } else {
        for b in 0..n {
            let off = b * c * hw;
            for p in 0..hw {
                let mut mx = T::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(z[off + ch * hw + p]);
                }
                let mut s = T::zero();
                for ch in 0..c {
                    s += (z[off + ch * hw + p] - mx).exp();
                }
                let label = t[b * hw + p] as usize;
                total += mx + s.ln() - z[off + label * hw + p];
            }
        }
    }
    Ok(total / T::from_usize(n * hw).expect("pixel count fits"))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, target: &Mask, g: T) -> Tensor<T> {
    let (n, c, h, w) = logits.dims4().expect("validated in forward");
    let hw = h * w;
    let scale = g / T::from_usize(n * hw).expect("pixel count fits");
    let z = logits.data();
    let t = target.data();
    let mut gx = vec![T::zero(); z.len()];
    if c == 1 {
        for ((gi, &zi), &ti) in gx.iter_mut().zip(z).zip(t) {
            let tv = if ti == 1 { T::one() } else { T::zero() };
            *gi = (sigmoid(zi) - tv) * scale;
        }
    } else {
        let probs = softmax_channel(logits).expect("validated in forward");
        let pd = probs.data();
        for b in 0..n {
            let off = b * c * hw;
            for p in 0..hw {
                let label = t[b * hw + p] as usize;
                for ch in 0..c {
                    let i = off + ch * hw + p;
                    let onehot = if ch == label { T::one() } else { T::zero() };
                    gx[i] = (pd[i] - onehot) * scale;
                }
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), gx).expect("same shape")
}
