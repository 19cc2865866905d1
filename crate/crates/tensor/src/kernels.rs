//! Slice-level kernels shared by the autograd ops.
//!
//! All buffers are dense NCHW. Work is split per image with rayon; any
//! reduction across images is summed sequentially in batch order so results
//! do not depend on the thread count.

use rayon::prelude::*;

use crate::element::Element;

/// Geometry of a 2-d convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Output extent `floor((H + 2p - K) / s) + 1`, or `None` if it would be non-positive.
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let span_h = in_h + 2 * padding;
        let span_w = in_w + 2 * padding;
        if stride == 0 || kernel == 0 || span_h < kernel || span_w < kernel {
            return None;
        }
        Some(Self {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel,
            stride,
            padding,
            out_h: (span_h - kernel) / stride + 1,
            out_w: (span_w - kernel) / stride + 1,
        })
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1x1 stride-1 unpadded convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let k = g.kernel;
    let pos = g.positions();
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * pos;
                let dst = &mut col[row..row + pos];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto an image (adjoint of `im2col`).
fn col2im<T: Element>(col: &[T], g: &ConvGeometry, x: &mut [T]) {
    let k = g.kernel;
    let pos = g.positions();
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * pos;
                let src = &col[row..row + pos];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn columns<'a, T: Element>(x: &'a [T], g: &ConvGeometry, scratch: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        x
    } else {
        scratch.resize(g.patch() * g.positions(), T::zero());
        im2col(x, g, scratch);
        scratch
    }
}

/// Forward convolution. `weight` is `O x I x K x K`.
pub fn conv2d_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    batch: usize,
    g: &ConvGeometry,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * g.out_plane()];
    if g.out_plane() == 0 {
        return out;
    }
    let (patch, pos) = (g.patch(), g.positions());
    out.par_chunks_mut(g.out_plane())
        .zip(x.par_chunks(g.in_plane().max(1)))
        .for_each_init(Vec::new, |scratch, (y, xi)| {
            let col = columns(xi, g, scratch);
            T::gemm(
                g.out_channels,
                patch,
                pos,
                T::one(),
                weight,
                (patch as isize, 1),
                col,
                (pos as isize, 1),
                T::zero(),
                y,
                (pos as isize, 1),
            );
            if let Some(b) = bias {
                for (o, row) in y.chunks_mut(pos).enumerate() {
                    row.iter_mut().for_each(|v| *v += b[o]);
                }
            }
        });
    out
}

/// Gradient of the convolution with respect to its input (also the forward
/// pass of the transposed convolution).
pub fn conv2d_input_grad<T: Element>(
    grad_out: &[T],
    weight: &[T],
    batch: usize,
    g: &ConvGeometry,
) -> Vec<T> {
    let mut gx = vec![T::zero(); batch * g.in_plane()];
    if g.in_plane() == 0 {
        return gx;
    }
    let (patch, pos) = (g.patch(), g.positions());
    gx.par_chunks_mut(g.in_plane())
        .zip(grad_out.par_chunks(g.out_plane().max(1)))
        .for_each_init(Vec::new, |scratch: &mut Vec<T>, (gxi, gyi)| {
            if g.is_pointwise() {
                T::gemm(
                    patch,
                    g.out_channels,
                    pos,
                    T::one(),
                    weight,
                    (1, patch as isize),
                    gyi,
                    (pos as isize, 1),
                    T::zero(),
                    gxi,
                    (pos as isize, 1),
                );
                return;
            }
            scratch.resize(patch * pos, T::zero());
            T::gemm(
                patch,
                g.out_channels,
                pos,
                T::one(),
                weight,
                (1, patch as isize),
                gyi,
                (pos as isize, 1),
                T::zero(),
                scratch,
                (pos as isize, 1),
            );
            col2im(scratch, g, gxi);
        });
    gx
}

/// Gradient of the convolution with respect to its `O x I x K x K` weight,
/// summed over the batch.
pub fn conv2d_weight_grad<T: Element>(
    x: &[T],
    grad_out: &[T],
    batch: usize,
    g: &ConvGeometry,
) -> Vec<T> {
    let (patch, pos) = (g.patch(), g.positions());
    let wlen = g.out_channels * patch;
    if batch == 0 || wlen == 0 {
        return vec![T::zero(); wlen];
    }
    let partials: Vec<Vec<T>> = (0..batch)
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let xi = &x[i * g.in_plane()..(i + 1) * g.in_plane()];
            let gyi = &grad_out[i * g.out_plane()..(i + 1) * g.out_plane()];
            let col = columns(xi, g, scratch);
            let mut gw = vec![T::zero(); wlen];
            T::gemm(
                g.out_channels,
                pos,
                patch,
                T::one(),
                gyi,
                (pos as isize, 1),
                col,
                (1, pos as isize),
                T::zero(),
                &mut gw,
                (patch as isize, 1),
            );
            gw
        })
        .collect();
    sum_in_order(partials)
}

/// Per-channel sum of the output gradient, i.e. the bias gradient.
pub fn channel_sums<T: Element>(v: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            let base = (n * channels + c) * plane;
            *acc += v[base..base + plane].iter().copied().sum::<T>();
        }
    }
    out
}

fn sum_in_order<T: Element>(mut parts: Vec<Vec<T>>) -> Vec<T> {
    let mut acc = parts.remove(0);
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
    }
    acc
}

/// Bilinear resampling weights along one axis with the half-pixel
/// (align-corners-false) convention: destination index `i` samples source
/// position `max((i + 0.5) * in / out - 0.5, 0)`.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(out_len),
            hi: Vec::with_capacity(out_len),
            frac: Vec::with_capacity(out_len),
        };
        for i in 0..out_len {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = if lo + 1 < in_len { lo + 1 } else { lo };
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(if hi == lo { 0.0 } else { src - lo as f64 });
        }
        taps
    }
}

/// Bilinear resize of every `H x W` plane; `planes` is the number of planes.
pub fn bilinear_resize<T: Element>(
    x: &[T],
    planes: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ty = AxisTaps::new(in_h, out_h);
    let tx = AxisTaps::new(in_w, out_w);
    let mut out = vec![T::zero(); planes * out_h * out_w];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(out_h * out_w)
        .zip(x.par_chunks(in_h * in_w))
        .for_each(|(dst, src)| {
            for oy in 0..out_h {
                let (y0, y1) = (ty.lo[oy], ty.hi[oy]);
                let fy = T::lit(ty.frac[oy]);
                let r0 = &src[y0 * in_w..(y0 + 1) * in_w];
                let r1 = &src[y1 * in_w..(y1 + 1) * in_w];
                for ox in 0..out_w {
                    let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                    let fx = T::lit(tx.frac[ox]);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    dst[oy * out_w + ox] = top + (bot - top) * fy;
                }
            }
        });
    out
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward<T: Element>(
    grad_out: &[T],
    planes: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ty = AxisTaps::new(in_h, out_h);
    let tx = AxisTaps::new(in_w, out_w);
    let mut gx = vec![T::zero(); planes * in_h * in_w];
    if gx.is_empty() {
        return gx;
    }
    gx.par_chunks_mut(in_h * in_w)
        .zip(grad_out.par_chunks(out_h * out_w))
        .for_each(|(dst, src)| {
            for oy in 0..out_h {
                let (y0, y1) = (ty.lo[oy], ty.hi[oy]);
                let fy = T::lit(ty.frac[oy]);
                for ox in 0..out_w {
                    let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                    let fx = T::lit(tx.frac[ox]);
                    let gv = src[oy * out_w + ox];
                    let top = gv * (T::one() - fy);
                    let bot = gv * fy;
                    dst[y0 * in_w + x0] += top * (T::one() - fx);
                    dst[y0 * in_w + x1] += top * fx;
                    dst[y1 * in_w + x0] += bot * (T::one() - fx);
                    dst[y1 * in_w + x1] += bot * fx;
                }
            }
        });
    gx
}

/// Per-channel batch mean and biased variance over `N x H x W`, two-pass.
pub fn channel_moments<T: Element>(
    x: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(batch * plane).unwrap_or(T::one());
    let mean: Vec<T> = channel_sums(x, batch, channels, plane)
        .into_iter()
        .map(|s| s / count)
        .collect();
    let mut var = vec![T::zero(); channels];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * plane;
            let m = mean[c];
            var[c] += x[base..base + plane]
                .iter()
                .map(|&v| (v - m) * (v - m))
                .sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    (mean, var)
}
