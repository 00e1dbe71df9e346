//! Forward and backward kernels for the layer types the network uses.
//!
//! Activations are `N x C x H x W` (or `N x F` for dense layers). Per-sample
//! work runs on the rayon pool; weight gradients are reduced in sample order
//! so results do not depend on scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::tensor::{Scalar, Tensor};

/// Sliding-window geometry shared by convolution, transposed convolution and
/// pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output extent of the transposed operation (no padding).
    pub fn transposed_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

fn view<T>(rows: usize, cols: usize, data: &[T]) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer matches matrix shape")
}

fn view_mut<T>(rows: usize, cols: usize, data: &mut [T]) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer matches matrix shape")
}

/// Unfolds a `C x H x W` image into a `(C*k*k) x (OH*OW)` column matrix.
pub fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, win: Window, cols: &mut [T]) {
    let (k, s, p) = (win.kernel, win.stride, win.pad);
    let (oh, ow) = (win.out_size(h), win.out_size(w));
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `C x H x W` image.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, win: Window, x: &mut [T]) {
    let (k, s, p) = (win.kernel, win.stride, win.pad);
    let (oh, ow) = (win.out_size(h), win.out_size(w));
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(win: Window) -> bool {
    win.kernel == 1 && win.stride == 1 && win.pad == 0
}

fn sum_in_order<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    acc
}

/// `x: N x C x H x W`, `weight: O x C x k x k` -> `N x O x OH x OW`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, win: Window) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let o = weight.dim(0);
    debug_assert_eq!(weight.dim(1), c);
    let (oh, ow) = (win.out_size(h), win.out_size(w));
    let rows = c * win.kernel * win.kernel;
    let mut y = Tensor::zeros(&[n, o, oh, ow]);
    let wmat = view(o, rows, weight.data());
    y.data_mut()
        .par_chunks_mut(o * oh * ow)
        .zip(x.data().par_chunks(c * h * w))
        .for_each(|(yn, xn)| {
            let cols_buf;
            let cols = if is_pointwise(win) {
                xn
            } else {
                let mut buf = vec![T::zero(); rows * oh * ow];
                im2col(xn, c, h, w, win, &mut buf);
                cols_buf = buf;
                &cols_buf[..]
            };
            general_mat_mul(T::one(), &wmat, &view(rows, oh * ow, cols), T::zero(), &mut view_mut(o, oh * ow, yn));
            if let Some(b) = bias {
                for (oc, &bv) in b.iter().enumerate() {
                    yn[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    win: Window,
    need_dx: bool,
) -> ConvGrads<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let o = weight.dim(0);
    let (oh, ow) = (dy.dim(2), dy.dim(3));
    let rows = c * win.kernel * win.kernel;
    let wmat = view(o, rows, weight.data());
    let mut dx = if need_dx { Some(Tensor::zeros(x.shape())) } else { None };

    let per_sample = |xn: &[T], dyn_: &[T], dxn: Option<&mut [T]>| -> (Vec<T>, Vec<T>) {
        let cols_buf;
        let cols = if is_pointwise(win) {
            xn
        } else {
            let mut buf = vec![T::zero(); rows * oh * ow];
            im2col(xn, c, h, w, win, &mut buf);
            cols_buf = buf;
            &cols_buf[..]
        };
        let dymat = view(o, oh * ow, dyn_);
        let mut dw = vec![T::zero(); o * rows];
        general_mat_mul(T::one(), &dymat, &view(rows, oh * ow, cols).t(), T::zero(), &mut view_mut(o, rows, &mut dw));
        let db = (0..o).map(|oc| dyn_[oc * oh * ow..(oc + 1) * oh * ow].iter().copied().sum()).collect();
        if let Some(dxn) = dxn {
            if is_pointwise(win) {
                general_mat_mul(T::one(), &wmat.t(), &dymat, T::zero(), &mut view_mut(rows, oh * ow, dxn));
            } else {
                let mut dcols = vec![T::zero(); rows * oh * ow];
                general_mat_mul(T::one(), &wmat.t(), &dymat, T::zero(), &mut view_mut(rows, oh * ow, &mut dcols));
                col2im(&dcols, c, h, w, win, dxn);
            }
        }
        (dw, db)
    };

    let parts: Vec<(Vec<T>, Vec<T>)> = match dx.as_mut() {
        Some(dx) => dx
            .data_mut()
            .par_chunks_mut(c * h * w)
            .zip(x.data().par_chunks(c * h * w))
            .zip(dy.data().par_chunks(o * oh * ow))
            .map(|((dxn, xn), dyn_)| per_sample(xn, dyn_, Some(dxn)))
            .collect(),
        None => x
            .data()
            .par_chunks(c * h * w)
            .zip(dy.data().par_chunks(o * oh * ow))
            .map(|(xn, dyn_)| per_sample(xn, dyn_, None))
            .collect(),
    };
    debug_assert_eq!(parts.len(), n);
    let (dws, dbs): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    ConvGrads { dx, dweight: sum_in_order(dws, o * rows), dbias: sum_in_order(dbs, o) }
}

/// `x: N x Cin x H x W`, `weight: Cin x Cout x k x k` -> `N x Cout x H' x W'`
/// with `H' = (H - 1) * stride + k`.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, win: Window) -> Tensor<T> {
    assert_eq!(win.pad, 0, "padded transposed convolution is not supported");
    let (n, ci, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let co = weight.dim(1);
    let (oh, ow) = (win.transposed_size(h), win.transposed_size(w));
    let rows = co * win.kernel * win.kernel;
    let wmat = view(ci, rows, weight.data());
    let mut y = Tensor::zeros(&[n, co, oh, ow]);
    y.data_mut()
        .par_chunks_mut(co * oh * ow)
        .zip(x.data().par_chunks(ci * h * w))
        .for_each(|(yn, xn)| {
            let mut cols = vec![T::zero(); rows * h * w];
            general_mat_mul(T::one(), &wmat.t(), &view(ci, h * w, xn), T::zero(), &mut view_mut(rows, h * w, &mut cols));
            col2im(&cols, co, oh, ow, win, yn);
        });
    y
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    win: Window,
) -> ConvGrads<T> {
    let (ci, h, w) = (x.dim(1), x.dim(2), x.dim(3));
    let co = weight.dim(1);
    let (oh, ow) = (dy.dim(2), dy.dim(3));
    let rows = co * win.kernel * win.kernel;
    let wmat = view(ci, rows, weight.data());
    let mut dx = Tensor::zeros(x.shape());
    let dws: Vec<Vec<T>> = dx
        .data_mut()
        .par_chunks_mut(ci * h * w)
        .zip(x.data().par_chunks(ci * h * w))
        .zip(dy.data().par_chunks(co * oh * ow))
        .map(|((dxn, xn), dyn_)| {
            let mut dcols = vec![T::zero(); rows * h * w];
            im2col(dyn_, co, oh, ow, win, &mut dcols);
            let dcols = view(rows, h * w, &dcols);
            general_mat_mul(T::one(), &wmat, &dcols, T::zero(), &mut view_mut(ci, h * w, dxn));
            let mut dw = vec![T::zero(); ci * rows];
            general_mat_mul(T::one(), &view(ci, h * w, xn), &dcols.t(), T::zero(), &mut view_mut(ci, rows, &mut dw));
            dw
        })
        .collect();
    ConvGrads { dx: Some(dx), dweight: sum_in_order(dws, ci * rows), dbias: Vec::new() }
}

/// `x: N x in`, `weight: out x in` -> `N x out`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Tensor<T> {
    let (n, fin) = (x.dim(0), x.dim(1));
    let fout = weight.dim(0);
    let mut y = Tensor::zeros(&[n, fout]);
    general_mat_mul(
        T::one(),
        &view(n, fin, x.data()),
        &view(fout, fin, weight.data()).t(),
        T::zero(),
        &mut view_mut(n, fout, y.data_mut()),
    );
    if let Some(b) = bias {
        y.data_mut().chunks_mut(fout).for_each(|row| row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv));
    }
    y
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, dy: &Tensor<T>) -> ConvGrads<T> {
    let (n, fin) = (x.dim(0), x.dim(1));
    let fout = weight.dim(0);
    let dymat = view(n, fout, dy.data());
    let mut dx = Tensor::zeros(&[n, fin]);
    general_mat_mul(T::one(), &dymat, &view(fout, fin, weight.data()), T::zero(), &mut view_mut(n, fin, dx.data_mut()));
    let mut dw = vec![T::zero(); fout * fin];
    general_mat_mul(T::one(), &dymat.t(), &view(n, fin, x.data()), T::zero(), &mut view_mut(fout, fin, &mut dw));
    let mut db = vec![T::zero(); fout];
    for row in dy.data().chunks(fout) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    ConvGrads { dx: Some(dx), dweight: dw, dbias: db }
}

/// Saved state of a train-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub struct BnStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

/// Neumaier-compensated sum; batch statistics run over up to N*H*W values
/// and feed every element of their channel.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

fn bn_dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    let n = x.dim(0);
    let c = x.dim(1);
    (n, c, x.len() / (n * c))
}

fn channel_values<T: Scalar>(data: &[T], n: usize, c: usize, s: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |i| data[(i * c + ch) * s..(i * c + ch + 1) * s].iter().copied())
}

/// Normalizes each channel with statistics of the current batch.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor<T>, BnCache<T>, BnStats) {
    let (n, c, s) = bn_dims(x);
    let m = (n * s) as f64;
    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mean = compensated_sum(channel_values(x.data(), n, c, s, ch).map(|v| v.f64())) / m;
            let var = compensated_sum(channel_values(x.data(), n, c, s, ch).map(|v| {
                let d = v.f64() - mean;
                d * d
            })) / m;
            (mean, var)
        })
        .collect();
    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();

    let mut xhat = vec![T::zero(); x.len()];
    let mut y = Tensor::zeros(x.shape());
    xhat.par_chunks_mut(c * s)
        .zip(y.data_mut().par_chunks_mut(c * s))
        .zip(x.data().par_chunks(c * s))
        .for_each(|((xh, yn), xn)| {
            for ch in 0..c {
                let r = ch * s..(ch + 1) * s;
                for ((h, yv), &xv) in xh[r.clone()].iter_mut().zip(&mut yn[r.clone()]).zip(&xn[r]) {
                    *h = (xv - mean_t[ch]) * inv_std[ch];
                    *yv = *h * gamma[ch] + beta[ch];
                }
            }
        });
    (y, BnCache { xhat, inv_std }, BnStats { mean, var, count: n * s })
}

/// Normalizes with fixed (running) statistics.
pub fn batch_norm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Tensor<T> {
    let (_, c, s) = bn_dims(x);
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] * T::of(1.0 / (var[ch].f64() + eps).sqrt())).collect();
    let shift: Vec<T> = (0..c).map(|ch| beta[ch] - mean[ch] * scale[ch]).collect();
    let mut y = x.clone();
    y.data_mut().par_chunks_mut(c * s).for_each(|yn| {
        for ch in 0..c {
            yn[ch * s..(ch + 1) * s].iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
        }
    });
    y
}

pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, s) = bn_dims(dy);
    let m = (n * s) as f64;
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let dy = || channel_values(dy.data(), n, c, s, ch).map(|g| g.f64());
            let xhat = channel_values(&cache.xhat, n, c, s, ch).map(|h| h.f64());
            (compensated_sum(dy()), compensated_sum(dy().zip(xhat).map(|(g, h)| g * h)))
        })
        .collect();
    let dbeta: Vec<T> = sums.iter().map(|s| T::of(s.0)).collect();
    let dgamma: Vec<T> = sums.iter().map(|s| T::of(s.1)).collect();
    let mean_dy: Vec<T> = sums.iter().map(|s| T::of(s.0 / m)).collect();
    let mean_dy_xhat: Vec<T> = sums.iter().map(|s| T::of(s.1 / m)).collect();
    let coef: Vec<T> = (0..c).map(|ch| gamma[ch] * cache.inv_std[ch]).collect();

    let mut dx = Tensor::zeros(dy.shape());
    dx.data_mut()
        .par_chunks_mut(c * s)
        .zip(dy.data().par_chunks(c * s))
        .zip(cache.xhat.par_chunks(c * s))
        .for_each(|((dxn, dyn_), xh)| {
            for ch in 0..c {
                let r = ch * s..(ch + 1) * s;
                for ((d, &g), &h) in dxn[r.clone()].iter_mut().zip(&dyn_[r.clone()]).zip(&xh[r]) {
                    *d = coef[ch] * (g - mean_dy[ch] - h * mean_dy_xhat[ch]);
                }
            }
        });
    (dx, dgamma, dbeta)
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    x.data_mut().par_iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// Masks `dy` by `y > 0`, where `y` is the ReLU output.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut Tensor<T>, y: &Tensor<T>) {
    dy.data_mut().par_iter_mut().zip(y.data().par_iter()).for_each(|(g, &v)| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Max pooling; also returns, per output, the winning index within its input
/// plane.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, win: Window) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (oh, ow) = (win.out_size(h), win.out_size(w));
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    y.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(arg.par_chunks_mut(oh * ow))
        .zip(x.data().par_chunks(h * w))
        .for_each(|((yp, ap), xp)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for ki in 0..win.kernel {
                        let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..win.kernel {
                            let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if xp[i] > best {
                                best = xp[i];
                                best_i = i;
                            }
                        }
                    }
                    yp[oy * ow + ox] = best;
                    ap[oy * ow + ox] = best_i as u32;
                }
            }
        });
    (y, arg)
}

pub fn max_pool2d_backward<T: Scalar>(dy: &Tensor<T>, argmax: &[u32], input_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let plane_out = dy.dim(2) * dy.dim(3);
    let mut dx = Tensor::zeros(input_shape);
    dx.data_mut()
        .par_chunks_mut(h * w)
        .zip(dy.data().par_chunks(plane_out))
        .zip(argmax.par_chunks(plane_out))
        .for_each(|((dxp, dyp), ap)| {
            for (&g, &i) in dyp.iter().zip(ap) {
                dxp[i as usize] += g;
            }
        });
    dx
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample_nearest2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    y.data_mut().par_chunks_mut(4 * h * w).zip(x.data().par_chunks(h * w)).for_each(|(yp, xp)| {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                yp[yy * 2 * w + xx] = xp[(yy / 2) * w + xx / 2];
            }
        }
    });
    y
}

pub fn upsample_nearest2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    dx.data_mut().par_chunks_mut(h * w).zip(dy.data().par_chunks(h2 * w2)).for_each(|(dxp, dyp)| {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dxp[(yy / 2) * w + xx / 2] += dyp[yy * w2 + xx];
            }
        }
    });
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = a.dim(0);
    let (la, lb) = (a.item_len(), b.item_len());
    let mut shape = a.shape().to_vec();
    shape[1] += b.dim(1);
    let mut data = Vec::with_capacity(n * (la + lb));
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::from_vec(&shape, data).expect("concatenated length matches shape")
}

/// Splits a channel-concatenated gradient into its first `ca` channels and
/// the rest.
pub fn split_channels<T: Scalar>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let n = dy.dim(0);
    let spatial: usize = dy.shape()[2..].iter().product();
    let cb = dy.dim(1) - ca;
    let (mut sa, mut sb) = (dy.shape().to_vec(), dy.shape().to_vec());
    sa[1] = ca;
    sb[1] = cb;
    let mut da = Vec::with_capacity(n * ca * spatial);
    let mut db = Vec::with_capacity(n * cb * spatial);
    for i in 0..n {
        let item = dy.item(i);
        da.extend_from_slice(&item[..ca * spatial]);
        db.extend_from_slice(&item[ca * spatial..]);
    }
    (Tensor::from_vec(&sa, da).unwrap(), Tensor::from_vec(&sb, db).unwrap())
}

/// Repeats an `N x C` vector batch at every position of an `h x w` grid.
pub fn broadcast_spatial<T: Scalar>(v: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c) = (v.dim(0), v.dim(1));
    let mut data = Vec::with_capacity(n * c * h * w);
    for &x in v.data() {
        data.extend(std::iter::repeat_n(x, h * w));
    }
    Tensor::from_vec(&[n, c, h, w], data).unwrap()
}

pub fn broadcast_spatial_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (dy.dim(0), dy.dim(1));
    let s = dy.dim(2) * dy.dim(3);
    let data = dy.data().chunks(s).map(|p| p.iter().copied().sum()).collect();
    Tensor::from_vec(&[n, c], data).unwrap()
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().par_iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
    y
}

/// Row-wise softmax of an `N x K` logit matrix, max-shifted for stability.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.dim(1);
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    p
}
