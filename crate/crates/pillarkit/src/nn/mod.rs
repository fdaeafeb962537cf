//! Minimal dense tensor engine for forward inference.
//!
//! Covers exactly what the pipeline needs: linear layers, 2D convolution,
//! channel pooling, elementwise activations, per-channel affine
//! normalization, integer-factor upsampling, and channel concatenation.
//! Everything accumulates in f32, runs single-threaded, and is deterministic.
//! No autodiff, no GPU.

pub mod weights;

pub use weights::{init_weights, load_weights, save_weights, WeightSpec, WeightStore};

use crate::{Error, Result};

/// Dense `(n, c, h, w)` tensor, row-major with `w` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape ({n}, {c}, {h}, {w})",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((b * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f32) {
        self.data[((b * self.c + c) * self.h + y) * self.w + x] = v;
    }

    /// The `h * w` plane of channel `c` in batch item `b`.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let start = (b * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f32] {
        let start = (b * self.c + c) * self.h * self.w;
        let len = self.h * self.w;
        &mut self.data[start..start + len]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn debug_check_finite(&self, op: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "{op} produced a non-finite value"
        );
    }
}

/// Dense `(rows, cols)` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f32>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match shape ({rows}, {cols})",
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// `y = x W + b` with `W` of shape `(c_in, c_out)`.
pub fn linear(x: &Tensor2, weight: &Tensor2, bias: &[f32]) -> Result<Tensor2> {
    if weight.rows != x.cols {
        return Err(Error::Shape(format!(
            "linear: input has {} features but weight expects {}",
            x.cols, weight.rows
        )));
    }
    if bias.len() != weight.cols {
        return Err(Error::Shape(format!(
            "linear: bias length {} != output features {}",
            bias.len(),
            weight.cols
        )));
    }
    let mut out = Tensor2::zeros(x.rows, weight.cols);
    for r in 0..x.rows {
        let xrow = x.row(r);
        let orow = out.row_mut(r);
        orow.copy_from_slice(bias);
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = weight.row(i);
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Ok(out)
}

/// 2D cross-correlation with zero padding.
///
/// `weight` has shape `(c_out, c_in, kh, kw)`; output spatial size is
/// `floor((in + 2 * padding - k) / stride) + 1`.
pub fn conv2d(
    x: &Tensor4,
    weight: &Tensor4,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let (c_out, c_in, kh, kw) = weight.shape();
    if c_in != x.c {
        return Err(Error::Shape(format!(
            "conv2d: input has {} channels but weight expects {}",
            x.c, c_in
        )));
    }
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "conv2d: bias length {} != output channels {}",
            bias.len(),
            c_out
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d: stride must be >= 1".into()));
    }
    if x.h + 2 * padding < kh || x.w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "conv2d: kernel ({kh}, {kw}) larger than padded input ({}, {})",
            x.h + 2 * padding,
            x.w + 2 * padding
        )));
    }
    let oh = (x.h + 2 * padding - kh) / stride + 1;
    let ow = (x.w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor4::zeros(x.n, c_out, oh, ow);

    let p = padding as isize;
    let s = stride as isize;
    for b in 0..x.n {
        for co in 0..c_out {
            let oplane = out.plane_mut(b, co);
            oplane.fill(bias[co]);
            for ci in 0..c_in {
                let xplane = x.plane(b, ci);
                for ky in 0..kh {
                    let ky_off = ky as isize - p;
                    // output rows whose sampled input row is in bounds;
                    // floor division keeps negative numerators honest
                    let oy_lo = ((-ky_off).max(0) + s - 1) / s;
                    let oy_hi = (x.h as isize - 1 - ky_off)
                        .div_euclid(s)
                        .min(oh as isize - 1);
                    for kx in 0..kw {
                        let wv = weight.get(co, ci, ky, kx);
                        let kx_off = kx as isize - p;
                        let ox_lo = (((-kx_off).max(0) + s - 1) / s) as usize;
                        let ox_hi = (x.w as isize - 1 - kx_off)
                            .div_euclid(s)
                            .min(ow as isize - 1);
                        if ox_hi < ox_lo as isize || oy_hi < oy_lo {
                            continue;
                        }
                        let ox_hi = ox_hi as usize;
                        for oy in oy_lo..=oy_hi {
                            let iy = (oy * s + ky_off) as usize;
                            let xrow = &xplane[iy * x.w..iy * x.w + x.w];
                            let orow =
                                &mut oplane[oy as usize * ow..(oy as usize + 1) * ow];
                            if stride == 1 {
                                let ix0 = (ox_lo as isize + kx_off) as usize;
                                let src = &xrow[ix0..ix0 + (ox_hi - ox_lo + 1)];
                                for (o, &v) in orow[ox_lo..=ox_hi].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    let ix = (ox as isize * s + kx_off) as usize;
                                    orow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check_finite("conv2d");
    Ok(out)
}

/// Per-location max over channels, producing a single-channel map.
pub fn channel_max_pool(x: &Tensor4) -> Tensor4 {
    channel_pool(x, f32::max)
}

/// Per-location mean over channels, producing a single-channel map.
pub fn channel_avg_pool(x: &Tensor4) -> Tensor4 {
    let mut out = Tensor4::zeros(x.n, 1, x.h, x.w);
    let inv = 1.0 / x.c as f32;
    for b in 0..x.n {
        let oplane = out.plane_mut(b, 0);
        for c in 0..x.c {
            for (o, &v) in oplane.iter_mut().zip(x.plane(b, c)) {
                *o += v;
            }
        }
        for o in oplane.iter_mut() {
            *o *= inv;
        }
    }
    out
}

fn channel_pool(x: &Tensor4, fold: impl Fn(f32, f32) -> f32) -> Tensor4 {
    let mut out = Tensor4::zeros(x.n, 1, x.h, x.w);
    for b in 0..x.n {
        out.plane_mut(b, 0).copy_from_slice(x.plane(b, 0));
        for c in 1..x.c {
            let oplane = out.plane_mut(b, 0);
            for (o, &v) in oplane.iter_mut().zip(x.plane(b, c)) {
                *o = fold(*o, v);
            }
        }
    }
    out
}

/// Elementwise logistic sigmoid; output in `(0, 1)` up to f32 saturation.
pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    map(x, |v| 1.0 / (1.0 + (-v).exp()))
}

/// Elementwise `max(v, 0)`.
pub fn relu(x: &Tensor4) -> Tensor4 {
    map(x, |v| v.max(0.0))
}

fn map(x: &Tensor4, f: impl Fn(f32) -> f32) -> Tensor4 {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = f(*v);
    }
    out
}

/// Per-channel affine `x * scale_c + shift_c` — inference-time normalization
/// with the statistics folded in.
pub fn norm_affine(x: &Tensor4, scale: &[f32], shift: &[f32]) -> Result<Tensor4> {
    if scale.len() != x.c || shift.len() != x.c {
        return Err(Error::Shape(format!(
            "norm_affine: {} channels but scale/shift have {}/{}",
            x.c,
            scale.len(),
            shift.len()
        )));
    }
    let mut out = x.clone();
    for b in 0..x.n {
        for c in 0..x.c {
            let (s, t) = (scale[c], shift[c]);
            for v in out.plane_mut(b, c) {
                *v = *v * s + t;
            }
        }
    }
    Ok(out)
}

/// Column-wise affine for matrices; the rank-2 twin of [`norm_affine`].
pub fn norm_affine2(x: &Tensor2, scale: &[f32], shift: &[f32]) -> Result<Tensor2> {
    if scale.len() != x.cols || shift.len() != x.cols {
        return Err(Error::Shape(format!(
            "norm_affine2: {} columns but scale/shift have {}/{}",
            x.cols,
            scale.len(),
            shift.len()
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows {
        for (v, (s, t)) in out.row_mut(r).iter_mut().zip(scale.iter().zip(shift)) {
            *v = *v * *s + *t;
        }
    }
    Ok(out)
}

/// Elementwise `max(v, 0)` for matrices.
pub fn relu2(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = v.max(0.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel-center alignment (the align_corners=false convention).
    Bilinear,
}

/// Upsample by an integer factor.
pub fn upsample(x: &Tensor4, factor: usize, mode: UpsampleMode) -> Result<Tensor4> {
    if factor == 0 {
        return Err(Error::Shape("upsample: factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (x.h * factor, x.w * factor);
    let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
    match mode {
        UpsampleMode::Nearest => {
            for b in 0..x.n {
                for c in 0..x.c {
                    let src = x.plane(b, c);
                    let dst = out.plane_mut(b, c);
                    for oy in 0..oh {
                        let iy = oy / factor;
                        for ox in 0..ow {
                            dst[oy * ow + ox] = src[iy * x.w + ox / factor];
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let f = factor as f64;
            // precompute the 1D sampling lattice once per axis
            let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
                (0..n_out)
                    .map(|o| {
                        let src = (o as f64 + 0.5) / f - 0.5;
                        let floor = src.floor();
                        let t = (src - floor) as f32;
                        let i0 = (floor.max(0.0) as usize).min(n_in - 1);
                        let i1 = ((floor + 1.0).max(0.0) as usize).min(n_in - 1);
                        (i0, i1, t)
                    })
                    .collect()
            };
            let ys = axis(oh, x.h);
            let xs = axis(ow, x.w);
            for b in 0..x.n {
                for c in 0..x.c {
                    let src = x.plane(b, c);
                    let dst = out.plane_mut(b, c);
                    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                            let top = src[y0 * x.w + x0] * (1.0 - tx) + src[y0 * x.w + x1] * tx;
                            let bot = src[y1 * x.w + x0] * (1.0 - tx) + src[y1 * x.w + x1] * tx;
                            dst[oy * ow + ox] = top * (1.0 - ty) + bot * ty;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Downsample by an integer factor taking the top-left sample of each block.
/// Used to resize single-channel gate maps, not features.
pub fn downsample_nearest(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    if factor == 0 || x.h % factor != 0 || x.w % factor != 0 {
        return Err(Error::Shape(format!(
            "downsample: ({}, {}) not divisible by factor {factor}",
            x.h, x.w
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (x.h / factor, x.w / factor);
    let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[oy * factor * x.w + ox * factor];
                }
            }
        }
    }
    Ok(out)
}

/// Stack tensors along the channel axis, in argument order.
pub fn concat_channels(xs: &[&Tensor4]) -> Result<Tensor4> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Shape("concat_channels: empty input list".into()))?;
    let (n, h, w) = (first.n, first.h, first.w);
    if xs.iter().any(|t| t.n != n || t.h != h || t.w != w) {
        return Err(Error::Shape(
            "concat_channels: batch or spatial dims differ".into(),
        ));
    }
    let c_total: usize = xs.iter().map(|t| t.c).sum();
    let mut out = Tensor4::zeros(n, c_total, h, w);
    for b in 0..n {
        let mut co = 0;
        for t in xs {
            for c in 0..t.c {
                out.plane_mut(b, co).copy_from_slice(t.plane(b, c));
                co += 1;
            }
        }
    }
    Ok(out)
}

/// Elementwise product with a single-channel gate, broadcast over channels.
pub fn gate_by_map(x: &Tensor4, gate: &Tensor4) -> Result<Tensor4> {
    if gate.c != 1 || gate.n != x.n || gate.h != x.h || gate.w != x.w {
        return Err(Error::Shape(format!(
            "gate_by_map: gate shape {:?} incompatible with input {:?}",
            gate.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for b in 0..x.n {
        for c in 0..x.c {
            let gplane = gate.plane(b, 0);
            let oplane = out.plane_mut(b, c);
            for (o, &g) in oplane.iter_mut().zip(gplane) {
                *o *= g;
            }
        }
    }
    Ok(out)
}

/// A convolution block: odd-kernel conv (padding `k/2`), per-channel affine
/// normalization, ReLU. The standard unit the backbone is assembled from.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvBlockSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
        }
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    /// Weight tensors for this block under `prefix`.
    pub fn weight_specs(&self, prefix: &str) -> Vec<WeightSpec> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        vec![
            WeightSpec {
                name: format!("{prefix}.conv.weight"),
                shape: vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
                fan_in,
            },
            WeightSpec {
                name: format!("{prefix}.conv.bias"),
                shape: vec![self.out_channels],
                fan_in,
            },
            WeightSpec {
                name: format!("{prefix}.norm.scale"),
                shape: vec![self.out_channels],
                fan_in: self.out_channels,
            },
            WeightSpec {
                name: format!("{prefix}.norm.shift"),
                shape: vec![self.out_channels],
                fan_in: self.out_channels,
            },
        ]
    }
}

/// Run the conv block stored under `prefix`. Kernel size and channel counts
/// come from the stored weight shape; padding is `k / 2`.
pub fn conv_block(x: &Tensor4, store: &WeightStore, prefix: &str, stride: usize) -> Result<Tensor4> {
    let weight = store.tensor4(&format!("{prefix}.conv.weight"))?;
    let (_, _, kh, kw) = weight.shape();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv block `{prefix}` requires a square odd kernel, found ({kh}, {kw})"
        )));
    }
    let bias = store.vector(&format!("{prefix}.conv.bias"))?;
    let scale = store.vector(&format!("{prefix}.norm.scale"))?;
    let shift = store.vector(&format!("{prefix}.norm.shift"))?;
    let y = conv2d(x, &weight, bias, stride, kh / 2)?;
    Ok(relu(&norm_affine(&y, scale, shift)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::Rng as _;

    fn random_tensor(rng: &mut crate::Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = Tensor2::from_vec(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let y = linear(&x, &eye, &[0.0; 3]).unwrap();
        assert_eq!(y, x);

        let zero = Tensor2::zeros(3, 2);
        let y = linear(&x, &zero, &[7.0, -1.0]).unwrap();
        assert_eq!(y.data(), &[7.0, -1.0, 7.0, -1.0]);
    }

    #[test]
    fn linear_matches_naive_oracle() {
        let mut rng = crate::rng_from_seed(1);
        for _ in 0..10 {
            let (n, ci, co) = (
                rng.gen_range(1..6),
                rng.gen_range(1..8),
                rng.gen_range(1..8),
            );
            let x = Tensor2::from_vec(
                n,
                ci,
                (0..n * ci).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let w = Tensor2::from_vec(
                ci,
                co,
                (0..ci * co).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let b: Vec<f32> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = linear(&x, &w, &b).unwrap();
            let want = oracle::linear_reference(&x, &w, &b);
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!((g - e).abs() <= 1e-6 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conv_ones_counting_case() {
        // 3x3 ones * 3x3 ones kernel, pad 1: center sees all 9, corners 4
        let x = Tensor4::from_vec(1, 1, 3, 3, vec![1.0; 9]).unwrap();
        let k = Tensor4::from_vec(1, 1, 3, 3, vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &k, &[0.0], 1, 1).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        for (cy, cx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.get(0, 0, cy, cx), 4.0);
        }
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = crate::rng_from_seed(2);
        let x = random_tensor(&mut rng, 1, 2, 5, 4);
        let mut k = Tensor4::zeros(2, 2, 3, 3);
        k.set(0, 0, 1, 1, 1.0);
        k.set(1, 1, 1, 1, 1.0);
        let y = conv2d(&x, &k, &[0.0, 0.0], 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = crate::rng_from_seed(3);
        for _ in 0..10 {
            let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (h, w) = (rng.gen_range(3..8), rng.gen_range(3..8));
            let k = *[1usize, 3, 5].iter().filter(|&&k| k <= h && k <= w).last().unwrap();
            let stride = rng.gen_range(1..3);
            let pad = rng.gen_range(0..2);
            let x = random_tensor(&mut rng, 1, ci, h, w);
            let wt = random_tensor(&mut rng, co, ci, k, k);
            let b: Vec<f32> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d(&x, &wt, &b, stride, pad).unwrap();
            let want = oracle::conv2d_reference(&x, &wt, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!((g - e).abs() <= 1e-5 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conv_output_shape_formula_sweep() {
        let mut rng = crate::rng_from_seed(4);
        for h in 1..8usize {
            for w in 1..8usize {
                for k in [1usize, 3, 5, 7] {
                    for p in 0..3usize {
                        for s in 1..4usize {
                            if h + 2 * p < k || w + 2 * p < k {
                                continue;
                            }
                            let x = random_tensor(&mut rng, 1, 1, h, w);
                            let wt = random_tensor(&mut rng, 1, 1, k, k);
                            let y = conv2d(&x, &wt, &[0.0], s, p).unwrap();
                            assert_eq!(y.h, (h + 2 * p - k) / s + 1);
                            assert_eq!(y.w, (w + 2 * p - k) / s + 1);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn channel_pools() {
        let mut rng = crate::rng_from_seed(5);
        let x = random_tensor(&mut rng, 1, 1, 3, 3);
        assert_eq!(channel_max_pool(&x), x);
        assert_eq!(channel_avg_pool(&x), x);

        let constant = Tensor4::from_vec(1, 4, 2, 2, vec![0.25; 16]).unwrap();
        assert!(channel_max_pool(&constant).data().iter().all(|&v| v == 0.25));
        assert!(channel_avg_pool(&constant)
            .data()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-7));

        let x = random_tensor(&mut rng, 2, 5, 3, 4);
        let mx = channel_max_pool(&x);
        let av = channel_avg_pool(&x);
        let (rmx, rav) = oracle::channel_pool_reference(&x);
        assert_eq!(mx, rmx);
        for (g, e) in av.data().iter().zip(rav.data()) {
            assert!((g - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn activations_and_norm() {
        let x = Tensor4::from_vec(1, 1, 1, 3, vec![0.0, -1.0, 2.0]).unwrap();
        let s = sigmoid(&x);
        assert_eq!(s.get(0, 0, 0, 0), 0.5);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let same = norm_affine(&x, &[1.0], &[0.0]).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn upsample_cases() {
        let mut rng = crate::rng_from_seed(6);
        let x = random_tensor(&mut rng, 1, 2, 3, 3);
        assert_eq!(upsample(&x, 1, UpsampleMode::Nearest).unwrap(), x);
        assert_eq!(upsample(&x, 1, UpsampleMode::Bilinear).unwrap(), x);

        let one = Tensor4::from_vec(1, 1, 1, 1, vec![3.5]).unwrap();
        let two = upsample(&one, 2, UpsampleMode::Nearest).unwrap();
        assert_eq!(two.data(), &[3.5; 4]);

        // 2x2 ramp by hand under half-pixel alignment: output pixel centers
        // at src coords {-0.25, 0.25, 0.75, 1.25} clamp to the edge samples
        let ramp = Tensor4::from_vec(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = upsample(&ramp, 2, UpsampleMode::Bilinear).unwrap();
        let expect = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (g, e) in up.data().iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-6, "{:?}", up.data());
        }

        let big = random_tensor(&mut rng, 1, 3, 4, 5);
        for factor in [2usize, 3] {
            let got = upsample(&big, factor, UpsampleMode::Bilinear).unwrap();
            let want = oracle::upsample_bilinear_reference(&big, factor);
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!((g - e).abs() <= 1e-5);
            }
            assert_eq!(
                upsample(&big, factor, UpsampleMode::Nearest).unwrap(),
                oracle::upsample_nearest_reference(&big, factor)
            );
        }
    }

    #[test]
    fn concat_and_slice_back() {
        let mut rng = crate::rng_from_seed(7);
        let a = random_tensor(&mut rng, 1, 2, 3, 3);
        let b = random_tensor(&mut rng, 1, 3, 3, 3);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.c, 5);
        for c in 0..2 {
            assert_eq!(cat.plane(0, c), a.plane(0, c));
        }
        for c in 0..3 {
            assert_eq!(cat.plane(0, 2 + c), b.plane(0, c));
        }
        assert!(concat_channels(&[&a, &random_tensor(&mut rng, 1, 1, 2, 3)]).is_err());
    }
}
