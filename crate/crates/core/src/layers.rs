//! Convolution block, max-pool down-sampler, transposed-convolution
//! up-sampler and the 1×1 sigmoid head, with their backward rules.
//!
//! All kernels loop per batch item and hand the inner products to a
//! single-threaded GEMM, so results are bitwise reproducible and a sample's
//! output never depends on what else shares its batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `c[m×n] = beta·c + a[m×k] · b[k×n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Rectifier; derivative convention at 0 is 0.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid expressed through its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= yv * (1.0 - yv);
    }
    g
}

fn check_conv(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, kh, kw) = kernel.dims4()?;
    if ci != c {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, kernel expects {ci}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!("conv2d: kernel must be square and odd, got {kh}x{kw}")));
    }
    if bias.shape() != [co] {
        return Err(Error::shape(format!(
            "conv2d: bias shape {:?} does not match {co} output channels",
            bias.shape()
        )));
    }
    Ok((n, c, h, w, co, kh))
}

/// Unfolds one image `[c, h, w]` into `[c·k·k, h·w]` columns with zero "same" padding.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out_row.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize { 0.0 } else { src_row[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adds columns back onto an image gradient; the adjoint of [`im2col`].
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, img: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let in_row = &src[y * w..(y + 1) * w];
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, &v) in in_row.iter().enumerate() {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst_row[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution with "same" zero padding. Kernel `[out, in, k, k]`, k odd.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w, co, k) = check_conv(x, kernel, bias)?;
    let hw = h * w;
    let kk = c * k * k;
    let mut out = vec![0.0; n * co * hw];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for b in 0..n {
        let img = &x.data()[b * c * hw..(b + 1) * c * hw];
        let dst = &mut out[b * co * hw..(b + 1) * co * hw];
        for (o, plane) in dst.chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias.data()[o]);
        }
        let src: &[f64] = if k == 1 {
            img
        } else {
            im2col(img, c, h, w, k, &mut cols);
            &cols
        };
        gemm(co, kk, hw, kernel.data(), (kk, 1), src, (hw, 1), 1.0, dst);
    }
    Tensor::from_vec(&[n, co, h, w], out)
}

/// Gradients `(d input, d kernel, d bias)` of [`conv2d`].
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (co, ci, k, _) = kernel.dims4()?;
    let bias_shape = [co];
    let (n, c, h, w) = x.dims4()?;
    if ci != c || grad_out.shape() != [n, co, h, w] {
        return Err(Error::shape(format!(
            "conv2d backward: input {:?}, kernel {:?}, grad {:?}",
            x.shape(),
            kernel.shape(),
            grad_out.shape()
        )));
    }
    let hw = h * w;
    let kk = c * k * k;
    let mut gx = vec![0.0; n * c * hw];
    let mut gk = vec![0.0; co * kk];
    let mut gb = vec![0.0; co];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut gcols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for b in 0..n {
        let img = &x.data()[b * c * hw..(b + 1) * c * hw];
        let g = &grad_out.data()[b * co * hw..(b + 1) * co * hw];
        for (o, plane) in g.chunks_exact(hw).enumerate() {
            gb[o] += plane.iter().sum::<f64>();
        }
        let src: &[f64] = if k == 1 {
            img
        } else {
            im2col(img, c, h, w, k, &mut cols);
            &cols
        };
        // gk[co×kk] += g[co×hw] · srcᵀ[hw×kk]
        gemm(co, hw, kk, g, (hw, 1), src, (1, hw), 1.0, &mut gk);
        // gcols[kk×hw] = kernelᵀ[kk×co] · g[co×hw]
        let gxb = &mut gx[b * c * hw..(b + 1) * c * hw];
        if k == 1 {
            gemm(kk, co, hw, kernel.data(), (1, kk), g, (hw, 1), 0.0, gxb);
        } else {
            gemm(kk, co, hw, kernel.data(), (1, kk), g, (hw, 1), 0.0, &mut gcols);
            col2im(&gcols, c, h, w, k, gxb);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(kernel.shape(), gk)?,
        Tensor::from_vec(&bias_shape, gb)?,
    ))
}

/// 2×2 max-pool with stride 2.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max-pool needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..oh {
            for xo in 0..ow {
                let i = first_argmax(plane, w, y, xo);
                out.push(plane[i]);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Row-major index of the first maximal element in window `(y, x)`.
#[inline]
fn first_argmax(plane: &[f64], w: usize, y: usize, x: usize) -> usize {
    let base = 2 * y * w + 2 * x;
    let mut best = base;
    for i in [base + 1, base + w, base + w + 1] {
        if plane[i] > plane[best] {
            best = i;
        }
    }
    best
}

/// Routes each window's gradient to its first maximal input.
pub fn max_pool2_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape(format!(
            "max-pool backward: grad {:?} for input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let mut gx = vec![0.0; x.len()];
    for (p, plane) in x.data().chunks_exact(h * w).enumerate() {
        let g = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                dst[first_argmax(plane, w, y, xo)] += g[y * ow + xo];
            }
        }
    }
    Tensor::from_vec(x.shape(), gx)
}

/// Transposed convolution, kernel 2×2, stride 2: `[n, in, h, w]` → `[n, out, 2h, 2w]`.
/// Kernel layout is `[in, out, 2, 2]`.
pub fn conv_transpose2(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ci, co, kh, kw) = kernel.dims4()?;
    if ci != c || (kh, kw) != (2, 2) || bias.shape() != [co] {
        return Err(Error::shape(format!(
            "up-sampler: input {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let m = co * 4;
    let mut z = vec![0.0; m * hw];
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        let img = &x.data()[b * c * hw..(b + 1) * c * hw];
        // z[(o,ky,kx) × hw] = kernelᵀ · img
        gemm(m, c, hw, kernel.data(), (1, m), img, (hw, 1), 0.0, &mut z);
        let dst = &mut out[b * co * oh * ow..(b + 1) * co * oh * ow];
        for o in 0..co {
            let bo = bias.data()[o];
            let plane = &mut dst[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..2 {
                for kx in 0..2 {
                    let zr = &z[(o * 4 + ky * 2 + kx) * hw..(o * 4 + ky * 2 + kx + 1) * hw];
                    for y in 0..h {
                        let row = &mut plane[(2 * y + ky) * ow..(2 * y + ky + 1) * ow];
                        for xi in 0..w {
                            row[2 * xi + kx] = zr[y * w + xi] + bo;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out)
}

/// Gradients `(d input, d kernel, d bias)` of [`conv_transpose2`].
pub fn conv_transpose2_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let (_, co, _, _) = kernel.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(Error::shape(format!(
            "up-sampler backward: grad {:?} for input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let m = co * 4;
    let mut gz = vec![0.0; m * hw];
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; kernel.len()];
    let mut gb = vec![0.0; co];
    for b in 0..n {
        let g = &grad_out.data()[b * co * oh * ow..(b + 1) * co * oh * ow];
        for o in 0..co {
            let plane = &g[o * oh * ow..(o + 1) * oh * ow];
            gb[o] += plane.iter().sum::<f64>();
            for ky in 0..2 {
                for kx in 0..2 {
                    let zr = &mut gz[(o * 4 + ky * 2 + kx) * hw..(o * 4 + ky * 2 + kx + 1) * hw];
                    for y in 0..h {
                        let row = &plane[(2 * y + ky) * ow..(2 * y + ky + 1) * ow];
                        for xi in 0..w {
                            zr[y * w + xi] = row[2 * xi + kx];
                        }
                    }
                }
            }
        }
        let img = &x.data()[b * c * hw..(b + 1) * c * hw];
        // gx[c×hw] = kernel[c×m] · gz[m×hw]
        gemm(c, m, hw, kernel.data(), (m, 1), &gz, (hw, 1), 0.0, &mut gx[b * c * hw..(b + 1) * c * hw]);
        // gk[c×m] += img[c×hw] · gzᵀ[hw×m]
        gemm(c, hw, m, img, (hw, 1), &gz, (1, hw), 1.0, &mut gk);
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(kernel.shape(), gk)?,
        Tensor::from_vec(&[co], gb)?,
    ))
}

/// One convolution of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// He-normal kernel (std = sqrt(2 / fan_in)), zero bias.
    pub fn he_init(in_ch: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        let fan_in = (in_ch * k * k) as f64;
        Ok(ConvLayer {
            kernel: Tensor::randn(&[out_ch, in_ch, k, k], 0.0, libm::sqrt(2.0 / fan_in), rng)?,
            bias: Tensor::zeros(&[out_ch])?,
        })
    }
}

/// Parameters of H(·): `k` repetitions of 3×3 conv followed by the rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub layers: Vec<ConvLayer>,
}

impl ConvBlockParams {
    pub fn he_init(in_ch: usize, width: usize, convs: usize, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(convs);
        let mut c = in_ch;
        for _ in 0..convs {
            layers.push(ConvLayer::he_init(c, width, 3, rng)?);
            c = width;
        }
        Ok(ConvBlockParams { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }
}

/// Parameters of U(·): 2×2 stride-2 transposed convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleParams {
    /// `[in, out, 2, 2]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl UpsampleParams {
    /// He-normal with the effective fan-in of a stride-2 2×2 transposed
    /// convolution: each output pixel sums exactly `in_ch` products.
    pub fn he_init(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        let fan_in = in_ch as f64;
        Ok(UpsampleParams {
            kernel: Tensor::randn(&[in_ch, out_ch, 2, 2], 0.0, libm::sqrt(2.0 / fan_in), rng)?,
            bias: Tensor::zeros(&[out_ch])?,
        })
    }
}

/// H(·)
pub fn conv_block(x: &Tensor, params: &ConvBlockParams) -> Result<Tensor> {
    let mut h = x.clone();
    for layer in &params.layers {
        h = relu(&conv2d(&h, &layer.kernel, &layer.bias)?);
    }
    Ok(h)
}

/// D(·)
pub fn downsample(x: &Tensor) -> Result<Tensor> {
    max_pool2(x)
}

/// U(·)
pub fn upsample(x: &Tensor, params: &UpsampleParams) -> Result<Tensor> {
    conv_transpose2(x, &params.kernel, &params.bias)
}

/// Deep-supervision head: 1×1 convolution to `C` classes, then sigmoid.
pub fn head(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if kernel.rank() != 4 || kernel.shape()[2..] != [1, 1] {
        return Err(Error::shape(format!("head kernel must be [C, in, 1, 1], got {:?}", kernel.shape())));
    }
    Ok(sigmoid(&conv2d(x, kernel, bias)?))
}

/// Trainable elements of a `k×k` convolution with bias.
pub const fn conv_params(in_ch: usize, out_ch: usize, k: usize) -> usize {
    k * k * in_ch * out_ch + out_ch
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn conv_naive(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let (co, _, kh, _) = k.dims4().unwrap();
        let p = (kh / 2) as isize;
        let mut out = Tensor::zeros(&[n, co, h, w]).unwrap();
        for bn in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = b.data()[o];
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kh {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += k.data()[((o * c + ci) * kh + ky) * kh + kx]
                                        * x.data()[((bn * c + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((bn * co + o) * h + y) * w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_one_by_one() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[2, 3, 5, 4], 0.0, 1.0, &mut rng).unwrap();
        let mut k = Tensor::zeros(&[3, 3, 1, 1]).unwrap();
        for i in 0..3 {
            k.data_mut()[i * 3 + i] = 1.0;
        }
        let y = conv2d(&x, &k, &Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0).unwrap();
        let k = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]).unwrap()).unwrap();
        let d = y.data();
        assert_eq!(d[0], 4.0); // corner
        assert_eq!(d[1], 6.0); // edge
        assert_eq!(d[5], 9.0); // interior
        assert_eq!(d[15], 4.0);
    }

    #[test]
    fn conv_matches_naive_and_preserves_extent() {
        let mut rng = Rng::new(7);
        for size in 1..=16 {
            let x = Tensor::randn(&[1, 2, size, size + 1], 0.0, 1.0, &mut rng).unwrap();
            let k = Tensor::randn(&[3, 2, 3, 3], 0.0, 1.0, &mut rng).unwrap();
            let b = Tensor::randn(&[3], 0.0, 1.0, &mut rng).unwrap();
            let fast = conv2d(&x, &k, &b).unwrap();
            assert_eq!(fast.shape(), &[1, 3, size, size + 1]);
            let slow = conv_naive(&x, &k, &b);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        let k = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn param_arithmetic() {
        assert_eq!(conv_params(32, 64, 3), 18_496);
    }

    #[test]
    fn zero_block_is_zero() {
        let mut rng = Rng::new(2);
        let x = Tensor::randn(&[1, 2, 6, 6], 0.0, 1.0, &mut rng).unwrap();
        let mut p = ConvBlockParams::he_init(2, 4, 2, &mut rng).unwrap();
        for l in &mut p.layers {
            l.kernel = l.kernel.zeros_like();
        }
        assert!(conv_block(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_is_composition() {
        let mut rng = Rng::new(3);
        let x = Tensor::randn(&[1, 2, 6, 6], 0.0, 1.0, &mut rng).unwrap();
        let p = ConvBlockParams::he_init(2, 4, 2, &mut rng).unwrap();
        let manual = relu(&conv2d(&relu(&conv2d(&x, &p.layers[0].kernel, &p.layers[0].bias).unwrap()), &p.layers[1].kernel, &p.layers[1].bias).unwrap());
        assert_eq!(conv_block(&x, &p).unwrap(), manual);
        assert_eq!(p.param_count(), conv_params(2, 4, 3) + conv_params(4, 4, 3));
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], alloc::vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(downsample(&x).unwrap().data(), &[4.0]);
        let c = Tensor::full(&[1, 2, 4, 6], 3.5).unwrap();
        let y = downsample(&c).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.5));
        assert!(downsample(&Tensor::zeros(&[1, 1, 3, 4]).unwrap()).is_err());
    }

    #[test]
    fn pool_ties_route_to_first() {
        // windows with ties; the per-window oracle picks the first max in scan order
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            alloc::vec![5., 5., 1., 2., 5., 0., 2., 2.],
        )
        .unwrap();
        let g = Tensor::from_vec(&[1, 1, 1, 2], alloc::vec![1.0, 10.0]).unwrap();
        let gx = max_pool2_backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[1., 0., 0., 10., 0., 0., 0., 0.]);
    }

    #[test]
    fn upsample_examples() {
        let p = UpsampleParams {
            kernel: Tensor::full(&[1, 1, 2, 2], 1.0).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        };
        let y = upsample(&Tensor::full(&[1, 1, 1, 1], 1.0).unwrap(), &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);

        let mut rng = Rng::new(4);
        let q = UpsampleParams::he_init(3, 5, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 3, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let y = upsample(&x, &q).unwrap();
        assert_eq!(y.shape(), &[1, 5, 8, 8]);
        // direct definition: out[o, 2y+a, 2x+b] = bias[o] + Σ_c x[c,y,x]·k[c,o,a,b]
        let (ky, kx, yy, xx, o) = (1, 0, 2, 3, 4);
        let mut e = q.bias.data()[o];
        for c in 0..3 {
            e += x.data()[(c * 4 + yy) * 4 + xx] * q.kernel.data()[((c * 5 + o) * 2 + ky) * 2 + kx];
        }
        let got = y.data()[(o * 8 + 2 * yy + ky) * 8 + 2 * xx + kx];
        assert!((got - e).abs() < 1e-12);
    }

    #[test]
    fn down_of_up_restores_shape() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let c = rng.int_range(1, 4);
            let h = rng.int_range(1, 6);
            let w = rng.int_range(1, 6);
            let x = Tensor::randn(&[1, c, h, w], 0.0, 1.0, &mut rng).unwrap();
            let p = UpsampleParams::he_init(c, c, &mut rng).unwrap();
            assert_eq!(downsample(&upsample(&x, &p).unwrap()).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn head_examples() {
        let x = Tensor::full(&[1, 2, 3, 3], 0.7).unwrap();
        let zk = Tensor::zeros(&[1, 2, 1, 1]).unwrap();
        let y = head(&x, &zk, &Tensor::zeros(&[1]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let y = head(&x, &zk, &Tensor::full(&[1], 50.0).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| (1.0 - v) < 1e-9));
        // pre-activation exactly 1 everywhere
        let ones = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        let y = head(&ones, &Tensor::full(&[1, 1, 1, 1], 1.0).unwrap(), &Tensor::zeros(&[1]).unwrap()).unwrap();
        let expect = 1.0 / (1.0 + libm::exp(-1.0));
        assert!(y.data().iter().all(|&v| (v - 0.7310585786).abs() < 1e-10 && v == expect));
    }
}
