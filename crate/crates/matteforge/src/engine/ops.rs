//! Differentiable ops over NCHW tensors. All loops are plain scalar code and
//! bit-deterministic for a fixed input.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{MatteError, Result};
use crate::scalar::Scalar;

use super::{BackwardFn, Tensor};

fn shape4<S: Scalar>(t: &Tensor<S>, context: &str) -> Result<[usize; 4]> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(MatteError::InvalidArgument(format!(
            "{context}: expected rank-4 tensor, got shape {s:?}"
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

// ---------------------------------------------------------------------------
// conv2d

struct Conv2dBackward {
    stride: usize,
    padding: usize,
}

impl<S: Scalar> BackwardFn<S> for Conv2dBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let w = &parents[1];
        let b = &parents[2];
        let [nb, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [co, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let (s, p) = (self.stride, self.padding);
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;

        let xd = x.data();
        let wdat = w.data();
        let mut dx = vec![S::zero(); xd.len()];
        let mut dw = vec![S::zero(); wdat.len()];
        let mut db = vec![S::zero(); co];

        for n in 0..nb {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = grad_out[((n * co + o) * oh + oy) * ow + ox];
                        db[o] += g;
                        for i in 0..ci {
                            for ky in 0..kh {
                                let sy = oy * s + ky;
                                if sy < p || sy - p >= h {
                                    continue;
                                }
                                let sy = sy - p;
                                for kx in 0..kw {
                                    let sx = ox * s + kx;
                                    if sx < p || sx - p >= wd {
                                        continue;
                                    }
                                    let sx = sx - p;
                                    let xi = ((n * ci + i) * h + sy) * wd + sx;
                                    let wi = ((o * ci + i) * kh + ky) * kw + kx;
                                    dw[wi] += g * xd[xi];
                                    dx[xi] += g * wdat[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        drop(xd);
        drop(wdat);
        x.accumulate_grad(&dx);
        w.accumulate_grad(&dw);
        b.accumulate_grad(&db);
    }
}

/// 2-D convolution (cross-correlation), NCHW input, OIHW weights, per-output
/// bias. Output spatial size is floor((H + 2p - kH)/stride) + 1 per axis.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let [nb, ci, h, wd] = shape4(x, "conv2d input")?;
    let [co, wi, kh, kw] = shape4(w, "conv2d weight")?;
    if ci != wi {
        return Err(MatteError::shape("conv2d channels", x.shape(), w.shape()));
    }
    if b.shape() != [co] {
        return Err(MatteError::shape("conv2d bias", b.shape(), w.shape()));
    }
    if stride < 1 {
        return Err(MatteError::InvalidArgument("conv2d: stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || wd + 2 * padding < kw {
        return Err(MatteError::InvalidArgument(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            wd + 2 * padding
        )));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;

    let xd = x.data();
    let wdat = w.data();
    let bd = b.data();
    let mut out = vec![S::zero(); nb * co * oh * ow];
    for n in 0..nb {
        for o in 0..co {
            let base = (n * co + o) * oh * ow;
            for v in &mut out[base..base + oh * ow] {
                *v = bd[o];
            }
            for i in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdat[((o * ci + i) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let sy = oy * stride + ky;
                            if sy < padding || sy - padding >= h {
                                continue;
                            }
                            let xrow = ((n * ci + i) * h + (sy - padding)) * wd;
                            let orow = base + oy * ow;
                            for ox in 0..ow {
                                let sx = ox * stride + kx;
                                if sx < padding || sx - padding >= wd {
                                    continue;
                                }
                                out[orow + ox] += wv * xd[xrow + sx - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    drop(xd);
    drop(wdat);
    drop(bd);
    Ok(Tensor::from_op(
        vec![nb, co, oh, ow],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(Conv2dBackward { stride, padding }),
    ))
}

/// Stride-2 convolution used by the encoder's downsampling stages; the input
/// spatial size must be even.
pub fn downsample_conv<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let [_, _, h, wd] = shape4(x, "downsample_conv input")?;
    if h % 2 != 0 || wd % 2 != 0 {
        return Err(MatteError::InvalidArgument(format!(
            "downsample_conv: input spatial size {h}x{wd} must be even"
        )));
    }
    let kh = w.shape()[2];
    conv2d(x, w, b, 2, (kh - 1) / 2)
}

// ---------------------------------------------------------------------------
// resize_nearest

struct ResizeNearestBackward {
    in_h: usize,
    in_w: usize,
    out_w: usize,
}

impl<S: Scalar> BackwardFn<S> for ResizeNearestBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let [nb, c, _, _] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ih, iw) = (self.in_h, self.in_w);
        let ow = self.out_w;
        let oh = grad_out.len() / (nb * c * ow);
        let mut dx = vec![S::zero(); nb * c * ih * iw];
        for n in 0..nb {
            for ch in 0..c {
                for dy in 0..oh {
                    let sy = dy * ih / oh;
                    for dxi in 0..ow {
                        let sx = dxi * iw / ow;
                        dx[((n * c + ch) * ih + sy) * iw + sx] +=
                            grad_out[((n * c + ch) * oh + dy) * ow + dxi];
                    }
                }
            }
        }
        x.accumulate_grad(&dx);
    }
}

/// Nearest-neighbour resize with floor mapping src = floor(dst * in / out).
/// Gradient accumulates by summation into each source pixel.
pub fn resize_nearest<S: Scalar>(x: &Tensor<S>, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
    let [nb, c, h, w] = shape4(x, "resize_nearest input")?;
    if out_h < 1 || out_w < 1 {
        return Err(MatteError::InvalidArgument(
            "resize_nearest: output size must be >= 1".into(),
        ));
    }
    let xd = x.data();
    let mut out = vec![S::zero(); nb * c * out_h * out_w];
    for n in 0..nb {
        for ch in 0..c {
            for dy in 0..out_h {
                let sy = dy * h / out_h;
                for dx in 0..out_w {
                    let sx = dx * w / out_w;
                    out[((n * c + ch) * out_h + dy) * out_w + dx] =
                        xd[((n * c + ch) * h + sy) * w + sx];
                }
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![nb, c, out_h, out_w],
        out,
        vec![x.clone()],
        Box::new(ResizeNearestBackward {
            in_h: h,
            in_w: w,
            out_w,
        }),
    ))
}

// ---------------------------------------------------------------------------
// elementwise suite

struct ReluBackward;

impl<S: Scalar> BackwardFn<S> for ReluBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let xd = x.data();
        let dx: Vec<S> = xd
            .iter()
            .zip(grad_out)
            .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
            .collect();
        drop(xd);
        x.accumulate_grad(&dx);
    }
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let out: Vec<S> = x.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], Box::new(ReluBackward))
}

struct TanhBackward;

impl<S: Scalar> BackwardFn<S> for TanhBackward {
    fn backward(&self, grad_out: &[S], out: &[S], parents: &[Tensor<S>]) {
        let dx: Vec<S> = out
            .iter()
            .zip(grad_out)
            .map(|(&y, &g)| g * (S::one() - y * y))
            .collect();
        parents[0].accumulate_grad(&dx);
    }
}

pub fn tanh<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let out: Vec<S> = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], Box::new(TanhBackward))
}

struct AddBackward;

impl<S: Scalar> BackwardFn<S> for AddBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        parents[0].accumulate_grad(grad_out);
        parents[1].accumulate_grad(grad_out);
    }
}

/// Elementwise addition; shapes must match exactly (no broadcasting).
pub fn add<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != y.shape() {
        return Err(MatteError::shape("add", x.shape(), y.shape()));
    }
    let out: Vec<S> = x.data().iter().zip(y.data().iter()).map(|(&a, &b)| a + b).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), y.clone()],
        Box::new(AddBackward),
    ))
}

struct ScaleBackward;

impl<S: Scalar> BackwardFn<S> for ScaleBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let s = &parents[1];
        let sv = s.data()[0];
        let dx: Vec<S> = grad_out.iter().map(|&g| g * sv).collect();
        let xd = x.data();
        let ds = xd
            .iter()
            .zip(grad_out)
            .fold(S::zero(), |acc, (&v, &g)| acc + v * g);
        drop(xd);
        x.accumulate_grad(&dx);
        s.accumulate_grad(&[ds]);
    }
}

/// Multiplies a tensor by a learnable scalar parameter (shape `[1]`). The
/// scalar's gradient is the sum of x * dL/dout over all elements.
pub fn scale<S: Scalar>(x: &Tensor<S>, s: &Tensor<S>) -> Result<Tensor<S>> {
    if s.numel() != 1 {
        return Err(MatteError::InvalidArgument(format!(
            "scale: scalar parameter must have one element, got shape {:?}",
            s.shape()
        )));
    }
    let sv = s.data()[0];
    let out: Vec<S> = x.data().iter().map(|&v| v * sv).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), s.clone()],
        Box::new(ScaleBackward),
    ))
}

struct ScaleConstBackward<S: Scalar> {
    factor: S,
}

impl<S: Scalar> BackwardFn<S> for ScaleConstBackward<S> {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let dx: Vec<S> = grad_out.iter().map(|&g| g * self.factor).collect();
        parents[0].accumulate_grad(&dx);
    }
}

pub fn scale_const<S: Scalar>(x: &Tensor<S>, factor: S) -> Tensor<S> {
    let out: Vec<S> = x.data().iter().map(|&v| v * factor).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(ScaleConstBackward { factor }),
    )
}

struct ClampUnitBackward;

impl<S: Scalar> BackwardFn<S> for ClampUnitBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let xd = x.data();
        // Pass-through on the closed interval [0, 1] so training can leave
        // the saturated boundary that tanh(0) starts on.
        let dx: Vec<S> = xd
            .iter()
            .zip(grad_out)
            .map(|(&v, &g)| {
                if v >= S::zero() && v <= S::one() {
                    g
                } else {
                    S::zero()
                }
            })
            .collect();
        drop(xd);
        x.accumulate_grad(&dx);
    }
}

/// Clamps to [0, 1] with pass-through subgradient on the closed interval.
pub fn clamp_unit<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let out: Vec<S> = x
        .data()
        .iter()
        .map(|&v| v.max(S::zero()).min(S::one()))
        .collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(ClampUnitBackward),
    )
}

struct SumBackward;

impl<S: Scalar> BackwardFn<S> for SumBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let g = grad_out[0];
        let dx = vec![g; parents[0].numel()];
        parents[0].accumulate_grad(&dx);
    }
}

pub fn sum<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let total = x.data().iter().fold(S::zero(), |acc, &v| acc + v);
    Tensor::from_op(vec![1], vec![total], vec![x.clone()], Box::new(SumBackward))
}

// ---------------------------------------------------------------------------
// concat along the channel axis

struct ConcatBackward {
    channels: Vec<usize>,
    h: usize,
    w: usize,
}

impl<S: Scalar> BackwardFn<S> for ConcatBackward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let total_c: usize = self.channels.iter().sum();
        let nb = parents[0].shape()[0];
        let hw = self.h * self.w;
        let mut offset = 0;
        for (pi, &c) in self.channels.iter().enumerate() {
            let mut dx = vec![S::zero(); nb * c * hw];
            for n in 0..nb {
                for ch in 0..c {
                    let src = ((n * total_c + offset + ch) * hw)..((n * total_c + offset + ch + 1) * hw);
                    let dst = ((n * c + ch) * hw)..((n * c + ch + 1) * hw);
                    dx[dst].copy_from_slice(&grad_out[src]);
                }
            }
            parents[pi].accumulate_grad(&dx);
            offset += c;
        }
    }
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<S: Scalar>(xs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if xs.is_empty() {
        return Err(MatteError::InvalidArgument("concat_channels: empty input".into()));
    }
    let [nb, _, h, w] = shape4(xs[0], "concat_channels")?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let [n2, c, h2, w2] = shape4(x, "concat_channels")?;
        if n2 != nb || h2 != h || w2 != w {
            return Err(MatteError::shape("concat_channels", xs[0].shape(), x.shape()));
        }
        channels.push(c);
    }
    let total_c: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = vec![S::zero(); nb * total_c * hw];
    let mut offset = 0;
    for (x, &c) in xs.iter().zip(&channels) {
        let xd = x.data();
        for n in 0..nb {
            for ch in 0..c {
                let dst = ((n * total_c + offset + ch) * hw)..((n * total_c + offset + ch + 1) * hw);
                let src = ((n * c + ch) * hw)..((n * c + ch + 1) * hw);
                out[dst].copy_from_slice(&xd[src]);
            }
        }
        offset += c;
    }
    Ok(Tensor::from_op(
        vec![nb, total_c, h, w],
        out,
        xs.iter().map(|&x| x.clone()).collect(),
        Box::new(ConcatBackward { channels, h, w }),
    ))
}

// ---------------------------------------------------------------------------
// max_pool2

struct MaxPool2Backward {
    argmax: Vec<usize>,
}

impl<S: Scalar> BackwardFn<S> for MaxPool2Backward {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let mut dx = vec![S::zero(); x.numel()];
        for (o, &src) in self.argmax.iter().enumerate() {
            dx[src] += grad_out[o];
        }
        x.accumulate_grad(&dx);
    }
}

/// 2x2 max pooling with stride 2; the input spatial size must be even.
/// Gradients route to the argmax element of each window.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let [nb, c, h, w] = shape4(x, "max_pool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(MatteError::InvalidArgument(format!(
            "max_pool2: input spatial size {h}x{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![S::zero(); nb * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    for n in 0..nb {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((n * c + ch) * h + oy * 2 + dy) * w + ox * 2 + dx;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = ((n * c + ch) * oh + oy) * ow + ox;
                    out[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![nb, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(MaxPool2Backward { argmax }),
    ))
}

// ---------------------------------------------------------------------------
// batch normalization

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics for one normalization layer, shared between forward
/// calls and the checkpoint.
#[derive(Clone)]
pub struct BnStats<S: Scalar> {
    pub mean: Rc<RefCell<Vec<S>>>,
    pub var: Rc<RefCell<Vec<S>>>,
}

impl<S: Scalar> BnStats<S> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: Rc::new(RefCell::new(vec![S::zero(); channels])),
            var: Rc::new(RefCell::new(vec![S::one(); channels])),
        }
    }
}

struct BatchNormBackward<S: Scalar> {
    xhat: Vec<S>,
    invstd: Vec<S>,
    train: bool,
    c: usize,
    hw: usize,
}

impl<S: Scalar> BackwardFn<S> for BatchNormBackward<S> {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let x = &parents[0];
        let gamma = &parents[1];
        let beta = &parents[2];
        let nb = x.shape()[0];
        let (c, hw) = (self.c, self.hw);
        let m = S::from_usize_lossy(nb * hw);

        let gd = gamma.data();
        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        let mut sum_g = vec![S::zero(); c];
        let mut sum_gx = vec![S::zero(); c];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * hw;
                for i in 0..hw {
                    let g = grad_out[base + i];
                    let xh = self.xhat[base + i];
                    dbeta[ch] += g;
                    dgamma[ch] += g * xh;
                    sum_g[ch] += g;
                    sum_gx[ch] += g * xh;
                }
            }
        }
        let mut dx = vec![S::zero(); x.numel()];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * hw;
                let k = gd[ch] * self.invstd[ch];
                for i in 0..hw {
                    let g = grad_out[base + i];
                    dx[base + i] = if self.train {
                        k * (g - sum_g[ch] / m - self.xhat[base + i] * sum_gx[ch] / m)
                    } else {
                        k * g
                    };
                }
            }
        }
        drop(gd);
        x.accumulate_grad(&dx);
        gamma.accumulate_grad(&dgamma);
        beta.accumulate_grad(&dbeta);
    }
}

/// Single-device batch normalization. Train mode normalizes by batch
/// statistics and updates the running stats with `momentum`; eval mode uses
/// the running stats. The `eps` floor keeps degenerate variance finite.
pub fn batch_norm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &BnStats<S>,
    mode: NormMode,
    momentum: S,
    eps: S,
) -> Result<Tensor<S>> {
    let [nb, c, h, w] = shape4(x, "batch_norm input")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(MatteError::shape("batch_norm affine", gamma.shape(), &[c]));
    }
    let hw = h * w;
    let m = nb * hw;
    let train = mode == NormMode::Train;
    if train && m < 2 {
        return Err(MatteError::InvalidArgument(
            "batch_norm: train mode needs at least 2 elements per channel".into(),
        ));
    }

    let xd = x.data();
    let (mean, var) = if train {
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        let mf = S::from_usize_lossy(m);
        for ch in 0..c {
            let mut acc = S::zero();
            for n in 0..nb {
                let base = (n * c + ch) * hw;
                for i in 0..hw {
                    acc += xd[base + i];
                }
            }
            mean[ch] = acc / mf;
            let mut acc2 = S::zero();
            for n in 0..nb {
                let base = (n * c + ch) * hw;
                for i in 0..hw {
                    let d = xd[base + i] - mean[ch];
                    acc2 += d * d;
                }
            }
            var[ch] = acc2 / mf;
        }
        // Running stats keep the unbiased variance, as is conventional.
        let unbias = S::from_usize_lossy(m) / S::from_usize_lossy(m.saturating_sub(1).max(1));
        let mut rm = stats.mean.borrow_mut();
        let mut rv = stats.var.borrow_mut();
        for ch in 0..c {
            rm[ch] = (S::one() - momentum) * rm[ch] + momentum * mean[ch];
            rv[ch] = (S::one() - momentum) * rv[ch] + momentum * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (stats.mean.borrow().clone(), stats.var.borrow().clone())
    };

    let gd = gamma.data();
    let bd = beta.data();
    let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut out = vec![S::zero(); xd.len()];
    let mut xhat = vec![S::zero(); xd.len()];
    for n in 0..nb {
        for ch in 0..c {
            let base = (n * c + ch) * hw;
            for i in 0..hw {
                let xh = (xd[base + i] - mean[ch]) * invstd[ch];
                xhat[base + i] = xh;
                out[base + i] = gd[ch] * xh + bd[ch];
            }
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);
    Ok(Tensor::from_op(
        vec![nb, c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(BatchNormBackward {
            xhat,
            invstd,
            train,
            c,
            hw,
        }),
    ))
}
