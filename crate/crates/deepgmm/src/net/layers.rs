//! Layer primitives with hand-written reverse-mode gradients: same-padded
//! convolution, ReLU, 2x2 max pooling, nearest-neighbor upsampling, channel
//! concatenation and per-pixel softmax.
//!
//! Every loop runs in a fixed order, so outputs and gradients are
//! bit-reproducible across runs.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Same-padded 2-d convolution. `weight` has dims (out_ch, in_ch, k, k)
/// with odd k; zero padding of k/2 on each side keeps the spatial size.
pub fn conv2d_forward(x: &Tensor4, weight: &Tensor4, bias: &[f64]) -> Result<Tensor4> {
    let (wn, wc, kh, kw) = weight.dims();
    let (n, c, h, w) = x.dims();
    if wc != c || kh != kw || kh % 2 == 0 || bias.len() != wn {
        return Err(Error::Shape(format!(
            "conv weight {wn}x{wc}x{kh}x{kw} incompatible with input channels {c}"
        )));
    }
    let pad = kh / 2;
    let mut out = Tensor4::zeros(n, wn, h, w);
    for b in 0..n {
        for oc in 0..wn {
            for y in 0..h {
                out.row_mut(b, oc, y).fill(bias[oc]);
            }
            for ic in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight.at(oc, ic, ky, kx);
                        // iy = y + ky - pad must land in [0, h)
                        let y0 = pad.saturating_sub(ky);
                        let y1 = (h + pad - ky).min(h);
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(w);
                        for y in y0..y1 {
                            let iy = y + ky - pad;
                            let src = x.row(b, ic, iy);
                            let dst = out.row_mut(b, oc, y);
                            for xx in x0..x1 {
                                dst[xx] += wv * src[xx + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a same-padded convolution: (d_input, d_weight, d_bias).
pub fn conv2d_backward(
    x: &Tensor4,
    weight: &Tensor4,
    dy: &Tensor4,
) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let (wn, wc, kh, kw) = weight.dims();
    let (n, c, h, w) = x.dims();
    let (dn, dc, dh, dw_) = dy.dims();
    if dn != n || dc != wn || dh != h || dw_ != w || wc != c {
        return Err(Error::Shape("conv backward shape mismatch".into()));
    }
    let pad = kh / 2;
    let mut dx = Tensor4::zeros(n, c, h, w);
    let mut dweight = Tensor4::zeros(wn, wc, kh, kw);
    let mut dbias = vec![0.0; wn];

    for b in 0..n {
        for oc in 0..wn {
            for y in 0..h {
                for &g in dy.row(b, oc, y) {
                    dbias[oc] += g;
                }
            }
            for ic in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let y0 = pad.saturating_sub(ky);
                        let y1 = (h + pad - ky).min(h);
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(w);
                        // dW[oc,ic,ky,kx] = sum_y,x dy[y,x] * x[y+ky-pad, x+kx-pad]
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = y + ky - pad;
                            let src = x.row(b, ic, iy);
                            let g = dy.row(b, oc, y);
                            for xx in x0..x1 {
                                acc += g[xx] * src[xx + kx - pad];
                            }
                        }
                        *dweight.at_mut(oc, ic, ky, kx) += acc;
                        // dX[iy,ix] += w * dy[y,x]
                        let wv = weight.at(oc, ic, ky, kx);
                        for y in y0..y1 {
                            let iy = y + ky - pad;
                            let g = dy.row(b, oc, y);
                            let dst = dx.row_mut(b, ic, iy);
                            for xx in x0..x1 {
                                dst[xx + kx - pad] += wv * g[xx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dweight, dbias))
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// ReLU gradient masked by the pre-activation sign (zero at exactly 0).
pub fn relu_backward(pre: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (g, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// 2x2 max pooling with stride 2. Requires even spatial dims. Returns the
/// pooled tensor and the flat input index of each chosen maximum; ties go
/// to the first element in scan order (row-major within the window).
pub fn maxpool2_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let (n, c, h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("pooling needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut argmax = vec![0usize; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best_idx = x.idx(b, ch, 2 * y, 2 * xx);
                    let mut best = x.data()[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = x.idx(b, ch, 2 * y + dy, 2 * xx + dx);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = out.idx(b, ch, y, xx);
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient back to the argmax position.
pub fn maxpool2_backward(
    input_dims: (usize, usize, usize, usize),
    argmax: &[usize],
    dy: &Tensor4,
) -> Tensor4 {
    let (n, c, h, w) = input_dims;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (o, &src) in argmax.iter().enumerate() {
        dx.data_mut()[src] += dy.data()[o];
    }
    dx
}

/// Nearest-neighbor 2x upsampling: each input pixel fills a 2x2 block.
pub fn upsample2_forward(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    let mut out = Tensor4::zeros(n, c, 2 * h, 2 * w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let src = x.row(b, ch, y);
                for dy in 0..2 {
                    let dst = out.row_mut(b, ch, 2 * y + dy);
                    for (xx, &v) in src.iter().enumerate() {
                        dst[2 * xx] = v;
                        dst[2 * xx + 1] = v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of nearest-neighbor upsampling: sums each 2x2 block.
pub fn upsample2_backward(dy: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = dy.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "upsample gradient needs even dims, got {h}x{w}"
        )));
    }
    let mut dx = Tensor4::zeros(n, c, h / 2, w / 2);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                let top = dy.row(b, ch, 2 * y);
                let bottom = dy.row(b, ch, 2 * y + 1);
                let dst = dx.row_mut(b, ch, y);
                for xx in 0..dst.len() {
                    dst[xx] = top[2 * xx] + top[2 * xx + 1] + bottom[2 * xx] + bottom[2 * xx + 1];
                }
            }
        }
    }
    Ok(dx)
}

/// Stacks `a`'s channels before `b`'s.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (an, ac, ah, aw) = a.dims();
    let (bn, bc, bh, bw) = b.dims();
    if an != bn || ah != bh || aw != bw {
        return Err(Error::Shape("concat spatial dims differ".into()));
    }
    let mut out = Tensor4::zeros(an, ac + bc, ah, aw);
    for n in 0..an {
        for c in 0..ac {
            for y in 0..ah {
                out.row_mut(n, c, y).copy_from_slice(a.row(n, c, y));
            }
        }
        for c in 0..bc {
            for y in 0..ah {
                out.row_mut(n, ac + c, y).copy_from_slice(b.row(n, c, y));
            }
        }
    }
    Ok(out)
}

/// Splits a gradient along channels into the two concat inputs.
pub fn split_channels(dy: &Tensor4, first: usize) -> Result<(Tensor4, Tensor4)> {
    let (n, c, h, w) = dy.dims();
    if first == 0 || first >= c {
        return Err(Error::Shape(format!("cannot split {c} channels at {first}")));
    }
    let mut a = Tensor4::zeros(n, first, h, w);
    let mut b = Tensor4::zeros(n, c - first, h, w);
    for bn in 0..n {
        for ch in 0..first {
            for y in 0..h {
                a.row_mut(bn, ch, y).copy_from_slice(dy.row(bn, ch, y));
            }
        }
        for ch in first..c {
            for y in 0..h {
                b.row_mut(bn, ch - first, y)
                    .copy_from_slice(dy.row(bn, ch, y));
            }
        }
    }
    Ok((a, b))
}

/// Softmax of one logit row with max subtraction.
pub fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Gradient through one softmax row: dl_k = p_k (dp_k - sum_j dp_j p_j).
pub fn softmax_row_backward(probs: &[f64], dprobs: &[f64], out: &mut [f64]) {
    let mut dot = 0.0;
    for (p, g) in probs.iter().zip(dprobs) {
        dot += p * g;
    }
    for ((o, &p), &g) in out.iter_mut().zip(probs).zip(dprobs) {
        *o = p * (g - dot);
    }
}
