//! Neural network layers as differentiable graph operations.
//!
//! Image tensors are `[N, C, H, W]` (a bare `[C, H, W]` is treated as a
//! batch of one) and feature tensors are `[N, F]` or `[F]`.

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Array, Backward, BackwardContext, Graph, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Trans};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ImageDims {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl ImageDims {
    fn of(a: &Array, op: &str) -> Result<Self> {
        match *a.shape() {
            [c, h, w] => Ok(Self { batch: 1, channels: c, height: h, width: w }),
            [n, c, h, w] => Ok(Self { batch: n, channels: c, height: h, width: w }),
            _ => Err(Error::Shape(format!("{op}: expected [N,C,H,W] or [C,H,W], got {:?}", a.shape()))),
        }
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn per_example(&self) -> usize {
        self.channels * self.plane()
    }

    /// Output shape with the same rank as `like`.
    fn shape_like(&self, like: &Array, channels: usize, height: usize, width: usize) -> Vec<usize> {
        if like.ndim() == 3 {
            vec![channels, height, width]
        } else {
            vec![self.batch, channels, height, width]
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    in_channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unrolls one example into `[C·kh·kw, H'·W']` columns.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.out_plane();
        let (h, w, p, s) = (self.height as isize, self.width as isize, self.padding as isize, self.stride as isize);
        for c in 0..self.in_channels {
            let src = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let y = oy as isize * s + i as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if y < 0 || y >= h {
                            line.fill(0.0);
                            continue;
                        }
                        let base = (y * w) as usize;
                        for (ox, v) in line.iter_mut().enumerate() {
                            let xx = ox as isize * s + j as isize - p;
                            *v = if xx < 0 || xx >= w { 0.0 } else { src[base + xx as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back into image layout.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let plane = self.out_plane();
        let (h, w, p, s) = (self.height as isize, self.width as isize, self.padding as isize, self.stride as isize);
        for c in 0..self.in_channels {
            let dst = &mut x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let y = oy as isize * s + i as isize - p;
                        if y < 0 || y >= h {
                            continue;
                        }
                        let base = (y * w) as usize;
                        for ox in 0..self.out_w {
                            let xx = ox as isize * s + j as isize - p;
                            if xx >= 0 && xx < w {
                                dst[base + xx as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dRule {
    geom: ConvGeometry,
    dims: ImageDims,
    out_channels: usize,
}

impl Backward for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (x, w, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let geom = self.geom;
        let (o, k, plane) = (self.out_channels, geom.patch_len(), geom.out_plane());
        let in_len = self.dims.per_example();
        let need_x = ctx.needs_grad[0];
        let need_w = ctx.needs_grad[1];

        let mut gx = need_x.then(|| Array::zeros(x.shape()));
        let partials: Vec<(Vec<f64>, Vec<f64>)> = {
            let gx_chunks: Vec<Option<&mut [f64]>> = match gx.as_mut() {
                Some(a) => a.data_mut().chunks_mut(in_len).map(Some).collect(),
                None => (0..self.dims.batch).map(|_| None).collect(),
            };
            gx_chunks
                .into_par_iter()
                .enumerate()
                .map(|(n, gx_n)| {
                    let g_n = &g.data()[n * o * plane..(n + 1) * o * plane];
                    let mut cols = vec![0.0; k * plane];
                    let mut gw = Vec::new();
                    if need_w {
                        geom.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols);
                        gw = vec![0.0; o * k];
                        gemm(o, plane, k, 1.0, g_n, Trans::No, &cols, Trans::Yes, 0.0, &mut gw);
                    }
                    let gb: Vec<f64> = g_n.chunks(plane).map(|row| row.iter().sum()).collect();
                    if let Some(gx_n) = gx_n {
                        gemm(k, o, plane, 1.0, w.data(), Trans::Yes, g_n, Trans::No, 0.0, &mut cols);
                        geom.col2im(&cols, gx_n);
                    }
                    (gw, gb)
                })
                .collect()
        };

        let gw = need_w.then(|| {
            let mut acc = Array::zeros(w.shape());
            for (part, _) in &partials {
                for (a, p) in acc.data_mut().iter_mut().zip(part) {
                    *a += p;
                }
            }
            acc
        });
        let gb = ctx.needs_grad[2].then(|| {
            let mut acc = Array::zeros(&[o]);
            for (_, part) in &partials {
                for (a, p) in acc.data_mut().iter_mut().zip(part) {
                    *a += p;
                }
            }
            acc
        });
        Ok(vec![gx, gw, gb])
    }
}

/// 2-D cross-correlation plus bias. `weights` is `[C_out, C_in, kh, kw]`.
pub fn conv2d(g: &mut Graph, x: Var, weights: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
    let xv = g.value(x);
    let dims = ImageDims::of(xv, "conv2d")?;
    let wv = g.value(weights);
    let [o, c_in, kh, kw] = *wv.shape() else {
        return Err(Error::Shape(format!("conv2d weights must be 4-D, got {:?}", wv.shape())));
    };
    if c_in != dims.channels {
        return Err(Error::Shape(format!("conv2d: input has {} channels, weights expect {c_in}", dims.channels)));
    }
    if g.value(bias).shape() != [o] {
        return Err(Error::Shape(format!("conv2d bias must be [{o}], got {:?}", g.value(bias).shape())));
    }
    if stride == 0 {
        return Err(Error::Parameter("conv2d stride must be positive".into()));
    }
    let (ph, pw) = (dims.height + 2 * padding, dims.width + 2 * padding);
    if ph < kh || pw < kw {
        return Err(Error::Shape(format!("conv2d kernel {kh}x{kw} larger than padded input {ph}x{pw}")));
    }
    let geom = ConvGeometry {
        in_channels: c_in,
        height: dims.height,
        width: dims.width,
        kh,
        kw,
        stride,
        padding,
        out_h: (ph - kh) / stride + 1,
        out_w: (pw - kw) / stride + 1,
    };
    let (k, plane) = (geom.patch_len(), geom.out_plane());
    let in_len = dims.per_example();
    let bv = g.value(bias).data();

    let mut out = vec![0.0; dims.batch * o * plane];
    out.par_chunks_mut(o * plane).enumerate().for_each(|(n, out_n)| {
        let mut cols = vec![0.0; k * plane];
        geom.im2col(&xv.data()[n * in_len..(n + 1) * in_len], &mut cols);
        for (row, b) in out_n.chunks_mut(plane).zip(bv) {
            row.fill(*b);
        }
        gemm(o, k, plane, 1.0, wv.data(), Trans::No, &cols, Trans::No, 1.0, out_n);
    });
    let shape = dims.shape_like(xv, o, geom.out_h, geom.out_w);
    let value = Array::new(shape, out)?;
    g.record(&[x, weights, bias], value, Box::new(Conv2dRule { geom, dims, out_channels: o }))
}

struct InstanceNormRule {
    plane: usize,
    inv_std: Vec<f64>,
}

impl Backward for InstanceNormRule {
    fn name(&self) -> &'static str {
        "instance_norm"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (y, g) = (ctx.output, ctx.grad_output);
        let m = self.plane as f64;
        let mut out = Array::zeros(g.shape());
        for (((dst, gs), ys), inv) in out
            .data_mut()
            .chunks_mut(self.plane)
            .zip(g.data().chunks(self.plane))
            .zip(y.data().chunks(self.plane))
            .zip(&self.inv_std)
        {
            let mean_g = gs.iter().sum::<f64>() / m;
            let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / m;
            for ((d, gi), yi) in dst.iter_mut().zip(gs).zip(ys) {
                *d = inv * (gi - mean_g - yi * mean_gy);
            }
        }
        Ok(vec![Some(out)])
    }
}

/// Per-example, per-channel standardization without a learned affine.
pub fn instance_norm(g: &mut Graph, x: Var, eps: f64) -> Result<Var> {
    let xv = g.value(x);
    let dims = ImageDims::of(xv, "instance_norm")?;
    let plane = dims.plane();
    if plane < 2 {
        return Err(Error::Shape("instance_norm needs at least two spatial positions".into()));
    }
    let mut data = vec![0.0; xv.len()];
    let mut inv_std = Vec::with_capacity(dims.batch * dims.channels);
    for (dst, src) in data.chunks_mut(plane).zip(xv.data().chunks(plane)) {
        let mean = src.iter().sum::<f64>() / plane as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    let value = Array::new(xv.shape().to_vec(), data)?;
    g.record(&[x], value, Box::new(InstanceNormRule { plane, inv_std }))
}

struct LeakyReluRule {
    slope: f64,
}

impl Backward for LeakyReluRule {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let x = ctx.inputs[0];
        let data = ctx
            .grad_output
            .data()
            .iter()
            .zip(x.data())
            .map(|(gr, v)| if *v > 0.0 { *gr } else { gr * self.slope })
            .collect();
        Ok(vec![Some(Array::new(x.shape().to_vec(), data)?)])
    }
}

/// `max(x, slope·x)`; the derivative at 0 takes the slope side.
pub fn leaky_relu(g: &mut Graph, x: Var, slope: f64) -> Result<Var> {
    let xv = g.value(x);
    let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
    let value = Array::new(xv.shape().to_vec(), data)?;
    g.record(&[x], value, Box::new(LeakyReluRule { slope }))
}

struct MaxPoolRule {
    argmax: Vec<usize>,
}

impl Backward for MaxPoolRule {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let mut out = Array::zeros(ctx.inputs[0].shape());
        let dst = out.data_mut();
        for (idx, gr) in self.argmax.iter().zip(ctx.grad_output.data()) {
            dst[*idx] += gr;
        }
        Ok(vec![Some(out)])
    }
}

/// 2×2 max pooling with stride 2; a trailing odd row or column is dropped.
/// Ties go to the first element in row-major order.
pub fn max_pool2d(g: &mut Graph, x: Var) -> Result<Var> {
    let xv = g.value(x);
    let dims = ImageDims::of(xv, "max_pool2d")?;
    let (oh, ow) = (dims.height / 2, dims.width / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("max_pool2d: input {}x{} too small", dims.height, dims.width)));
    }
    let planes = dims.batch * dims.channels;
    let mut data = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    let src = xv.data();
    for p in 0..planes {
        let base = p * dims.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * dims.width + 2 * ox;
                let mut best = src[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * dims.width + 2 * ox + dx;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                data.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let value = Array::new(dims.shape_like(xv, dims.channels, oh, ow), data)?;
    g.record(&[x], value, Box::new(MaxPoolRule { argmax }))
}

struct MaskRule {
    mask: Vec<f64>,
}

impl Backward for MaskRule {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let data = ctx.grad_output.data().iter().zip(&self.mask).map(|(a, m)| a * m).collect();
        Ok(vec![Some(Array::new(ctx.grad_output.shape().to_vec(), data)?)])
    }
}

/// Inverted dropout. Identity when `training` is false or `p == 0`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep_scale = 1.0 / (1.0 - p);
    let xv = g.value(x);
    let mask: Vec<f64> = (0..xv.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale }).collect();
    let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let value = Array::new(xv.shape().to_vec(), data)?;
    g.record(&[x], value, Box::new(MaskRule { mask }))
}

struct DenseRule {
    rows: usize,
    f_in: usize,
    f_out: usize,
}

impl Backward for DenseRule {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (x, w, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let (n, fi, fo) = (self.rows, self.f_in, self.f_out);
        let gx = ctx.needs_grad[0].then(|| {
            let mut out = Array::zeros(x.shape());
            gemm(n, fo, fi, 1.0, g.data(), Trans::No, w.data(), Trans::No, 0.0, out.data_mut());
            out
        });
        let gw = ctx.needs_grad[1].then(|| {
            let mut out = Array::zeros(&[fo, fi]);
            gemm(fo, n, fi, 1.0, g.data(), Trans::Yes, x.data(), Trans::No, 0.0, out.data_mut());
            out
        });
        let gb = ctx.needs_grad[2].then(|| {
            let mut out = Array::zeros(&[fo]);
            for row in g.data().chunks(fo) {
                for (a, v) in out.data_mut().iter_mut().zip(row) {
                    *a += v;
                }
            }
            out
        });
        Ok(vec![gx, gw, gb])
    }
}

/// Fully connected layer `x Wᵀ + b` with `W` of shape `[F_out, F_in]`.
pub fn dense(g: &mut Graph, x: Var, weights: Var, bias: Var) -> Result<Var> {
    let xv = g.value(x);
    let wv = g.value(weights);
    let [f_out, f_in] = *wv.shape() else {
        return Err(Error::Shape(format!("dense weights must be 2-D, got {:?}", wv.shape())));
    };
    let (rows, out_shape) = match *xv.shape() {
        [f] if f == f_in => (1, vec![f_out]),
        [n, f] if f == f_in => (n, vec![n, f_out]),
        _ => return Err(Error::Shape(format!("dense: input {:?} incompatible with weights {:?}", xv.shape(), wv.shape()))),
    };
    let bv = g.value(bias);
    if bv.shape() != [f_out] {
        return Err(Error::Shape(format!("dense bias must be [{f_out}], got {:?}", bv.shape())));
    }
    let mut out = Vec::with_capacity(rows * f_out);
    for _ in 0..rows {
        out.extend_from_slice(bv.data());
    }
    gemm(rows, f_in, f_out, 1.0, xv.data(), Trans::No, wv.data(), Trans::Yes, 1.0, &mut out);
    let value = Array::new(out_shape, out)?;
    g.record(&[x, weights, bias], value, Box::new(DenseRule { rows, f_in, f_out }))
}

/// Row-wise softmax of `[N, K]` (or `[K]`) logits, max-subtracted.
pub fn softmax_rows(logits: &Array) -> Array {
    let k = logits.last_dim();
    let mut data = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Array::new(logits.shape().to_vec(), data).expect("softmax preserves shape")
}

struct SoftmaxCrossEntropyRule {
    probs: Array,
    labels: Vec<usize>,
}

impl Backward for SoftmaxCrossEntropyRule {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let scale = ctx.grad_output.item() / self.labels.len() as f64;
        let k = self.probs.last_dim();
        let mut grad = self.probs.clone();
        for (row, &label) in grad.data_mut().chunks_mut(k).zip(&self.labels) {
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        Ok(vec![Some(grad)])
    }
}

/// Mean of `−log softmax(logits)[label]` over the batch.
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let lv = g.value(logits);
    let k = lv.last_dim();
    let rows = if lv.ndim() == 1 { 1 } else { lv.shape()[0] };
    if lv.ndim() > 2 || rows != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!("cross entropy: logits {:?} with {} labels", lv.shape(), labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Parameter(format!("label {bad} out of range for {k} classes")));
    }
    let mut total = 0.0;
    for (row, &label) in lv.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    let probs = softmax_rows(lv);
    let loss = Array::scalar(total / labels.len() as f64);
    g.record(&[logits], loss, Box::new(SoftmaxCrossEntropyRule { probs, labels: labels.to_vec() }))
}

/// Uniform `±sqrt(6 / fan_in)` initialization.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Array {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Array::new(shape.to_vec(), data).expect("shape product matches")
}
