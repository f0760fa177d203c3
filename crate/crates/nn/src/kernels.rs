//! Forward and backward kernels for the image ops recorded on the tape.

use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Self {
        let (ci, h, w) = match x_shape {
            [_, c, h, w] => (*c, *h, *w),
            _ => panic!("conv2d input must be 4-D, got {x_shape:?}"),
        };
        let (co, wci, kh, kw) = match w_shape {
            [a, b, c, d] => (*a, *b, *c, *d),
            _ => panic!("conv2d weight must be 4-D, got {w_shape:?}"),
        };
        assert_eq!(ci, wci, "conv2d channel mismatch: input {ci}, weight {wci}");
        assert_eq!(kh, kw, "only square kernels are supported");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than padded input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Self { ci, h, w, co, k: kh, stride, pad, ho, wo }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `oj` whose input column `oj * stride + kj - pad` lies inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let off = kj as isize - g.pad as isize;
    let s = g.stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let hi_excl = (g.w as isize - off + s - 1).div_euclid(s).max(0) as usize;
    let hi = hi_excl.min(g.wo);
    (lo.min(hi), hi)
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize || lo == hi {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (o, v) in out[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    let s = &src[oi * g.wo + lo..oi * g.wo + hi];
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, v) in dst[start..start + (hi - lo)].iter_mut().zip(s) {
                            *d = *d + *v;
                        }
                    } else {
                        for (d, v) in dst[start..].iter_mut().step_by(g.stride).zip(s) {
                            *d = *d + *v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
    let b = x.shape()[0];
    let (kk, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[b, g.co, g.ho, g.wo]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    for n in 0..b {
        let xb = &x.data()[n * in_len..(n + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        let ob = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
        T::gemm(
            g.co,
            kk,
            p,
            T::one(),
            w.data(),
            kk as isize,
            1,
            cols,
            p as isize,
            1,
            T::zero(),
            ob,
            p as isize,
            1,
        );
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut ob[o * p..(o + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }
    out
}

/// Gradients of a convolution w.r.t. input, weight and bias (each only when requested).
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
    let b = x.shape()[0];
    let (kk, p) = (g.rows(), g.cols());
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = need_db.then(|| Tensor::zeros(&[g.co]));
    let mut col = if g.is_pointwise() || !need_dw { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcol = if g.is_pointwise() || !need_dx { Vec::new() } else { vec![T::zero(); kk * p] };
    for n in 0..b {
        let dyb = &dy.data()[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (o, d) in db.data_mut().iter_mut().enumerate() {
                *d = *d + dyb[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[n * in_len..(n + 1) * in_len];
            let cols: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            T::gemm(
                g.co,
                p,
                kk,
                T::one(),
                dyb,
                p as isize,
                1,
                cols,
                1,
                p as isize,
                T::one(),
                dw.data_mut(),
                kk as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    kk,
                    g.co,
                    p,
                    T::one(),
                    w.data(),
                    1,
                    kk as isize,
                    dyb,
                    p as isize,
                    1,
                    T::zero(),
                    dxb,
                    p as isize,
                    1,
                );
            } else {
                T::gemm(
                    kk,
                    g.co,
                    p,
                    T::one(),
                    w.data(),
                    1,
                    kk as isize,
                    dyb,
                    p as isize,
                    1,
                    T::zero(),
                    &mut dcol,
                    p as isize,
                    1,
                );
                col2im(&dcol, &g, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Per-(sample, group) statistics saved by the group-norm forward pass.
#[derive(Debug, Clone)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> (Tensor<T>, GroupStats<T>) {
    let (b, c, h, w) = x.dims4();
    assert!(c % groups == 0, "{c} channels not divisible into {groups} groups");
    let cpg = c / groups;
    let glen = cpg * h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut stats = GroupStats { mean: Vec::with_capacity(b * groups), rstd: Vec::with_capacity(b * groups) };
    for n in 0..b {
        for gi in 0..groups {
            let off = (n * c + gi * cpg) * h * w;
            let xs = &x.data()[off..off + glen];
            let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / glen as f64;
            let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / glen as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let (mean_t, rstd_t) = (T::of(mean), T::of(rstd));
            stats.mean.push(mean_t);
            stats.rstd.push(rstd_t);
            let ys = &mut y.data_mut()[off..off + glen];
            for ch in 0..cpg {
                let cc = gi * cpg + ch;
                let (ga, be) = (gamma.data()[cc], beta.data()[cc]);
                for i in ch * h * w..(ch + 1) * h * w {
                    ys[i] = (xs[i] - mean_t) * rstd_t * ga + be;
                }
            }
        }
    }
    (y, stats)
}

pub fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupStats<T>,
    groups: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = x.dims4();
    let cpg = c / groups;
    let hw = h * w;
    let glen = (cpg * hw) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for n in 0..b {
        for gi in 0..groups {
            let (mean, rstd) = (stats.mean[n * groups + gi], stats.rstd[n * groups + gi]);
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for ch in 0..cpg {
                let cc = gi * cpg + ch;
                let off = (n * c + cc) * hw;
                let ga = gamma.data()[cc];
                let (mut dg, mut dbt) = (T::zero(), T::zero());
                for i in off..off + hw {
                    let xhat = (x.data()[i] - mean) * rstd;
                    let d = dy.data()[i];
                    dg = dg + d * xhat;
                    dbt = dbt + d;
                    let dxhat = (d * ga).f64();
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat.f64();
                }
                dgamma.data_mut()[cc] = dgamma.data()[cc] + dg;
                dbeta.data_mut()[cc] = dbeta.data()[cc] + dbt;
            }
            let mean_dxhat = T::of(sum_dxhat / glen);
            let mean_dxhat_xhat = T::of(sum_dxhat_xhat / glen);
            for ch in 0..cpg {
                let cc = gi * cpg + ch;
                let off = (n * c + cc) * hw;
                let ga = gamma.data()[cc];
                for i in off..off + hw {
                    let xhat = (x.data()[i] - mean) * rstd;
                    let dxhat = dy.data()[i] * ga;
                    dx.data_mut()[i] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn avg_pool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size, got {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    for (plane, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)) {
        for i in 0..ho {
            for j in 0..wo {
                let s = plane[2 * i * w + 2 * j]
                    + plane[2 * i * w + 2 * j + 1]
                    + plane[(2 * i + 1) * w + 2 * j]
                    + plane[(2 * i + 1) * w + 2 * j + 1];
                dst[i * wo + j] = s * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (b, c, ho, wo) = dy.dims4();
    let (h, w) = (2 * ho, 2 * wo);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (src, plane) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = src[(i / 2) * wo + j / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample_nearest_forward<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)) {
        for i in 0..ho {
            let row = &src[(i / factor) * w..(i / factor + 1) * w];
            for (j, d) in dst[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                *d = row[j / factor];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Real>(dy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (b, c, ho, wo) = dy.dims4();
    let (h, w) = (ho / factor, wo / factor);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (src, dst) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..ho {
            for j in 0..wo {
                let d = &mut dst[(i / factor) * w + j / factor];
                *d = *d + src[i * wo + j];
            }
        }
    }
    dx
}

/// Valid 1-D correlation of every row (`along_width`) or every column with `kernel`.
pub fn filter1d_forward<T: Real>(x: &Tensor<T>, kernel: &[T], along_width: bool) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let k = kernel.len();
    let (ho, wo) = if along_width { (h, w + 1 - k) } else { (h + 1 - k, w) };
    assert!(ho >= 1 && wo >= 1, "filter of length {k} does not fit {h}x{w}");
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)) {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = T::zero();
                for (u, &g) in kernel.iter().enumerate() {
                    let v = if along_width { src[i * w + j + u] } else { src[(i + u) * w + j] };
                    acc = acc + g * v;
                }
                dst[i * wo + j] = acc;
            }
        }
    }
    out
}

pub fn filter1d_backward<T: Real>(
    dy: &Tensor<T>,
    kernel: &[T],
    along_width: bool,
    in_shape: &[usize],
) -> Tensor<T> {
    let (_, _, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, ho, wo) = dy.dims4();
    let mut dx = Tensor::zeros(in_shape);
    for (src, dst) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..ho {
            for j in 0..wo {
                let d = src[i * wo + j];
                for (u, &g) in kernel.iter().enumerate() {
                    let idx = if along_width { i * w + j + u } else { (i + u) * w + j };
                    dst[idx] = dst[idx] + g * d;
                }
            }
        }
    }
    dx
}
