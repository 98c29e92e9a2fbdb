//! Forward and backward kernels for the spatial operators. These work on raw
//! `[N, C, H, W]` tensors; `autograd` wires them into the tape.

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv input must be rank 4, got {x:?}");
        assert_eq!(w.len(), 4, "conv weight must be rank 4, got {w:?}");
        assert_eq!(
            x[1], w[1],
            "conv channel mismatch: input {x:?}, weight {w:?}"
        );
        assert_eq!(w[2], w[3], "only square kernels are supported");
        let k = w[2];
        assert!(
            x[2] + 2 * pad >= k && x[3] + 2 * pad >= k,
            "conv kernel larger than padded input"
        );
        Self {
            n: x[0],
            cin: x[1],
            h: x[2],
            w: x[3],
            cout: w[0],
            k,
            stride,
            pad,
            ho: (x[2] + 2 * pad - k) / stride + 1,
            wo: (x[3] + 2 * pad - k) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Unfolds the input into a `[cin*k*k, n*ho*wo]` matrix.
pub fn im2col<R: Real>(x: &[R], g: &ConvGeom) -> Vec<R> {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    let mut cols = vec![R::zero(); g.rows() * ncols];
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.cin + c) * g.h * g.w..(n * g.cin + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = n * hw_out + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column matrix back onto the input grid, accumulating overlaps.
pub fn col2im<R: Real>(cols: &[R], g: &ConvGeom) -> Vec<R> {
    let ncols = g.cols();
    let hw_out = g.ho * g.wo;
    let mut x = vec![R::zero(); g.n * g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let plane = (n * g.cin + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = n * hw_out + oy * g.wo;
                        let dst = plane + iy as usize * g.w;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                x[dst + ix as usize] += src_row[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[cout, n*hw]` <-> `[n, cout, hw]`
fn channel_major_to_nchw<R: Real>(mat: &[R], n: usize, c: usize, hw: usize) -> Vec<R> {
    let mut out = vec![R::zero(); n * c * hw];
    for ci in 0..c {
        for ni in 0..n {
            let src = &mat[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw];
            out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

fn nchw_to_channel_major<R: Real>(t: &[R], n: usize, c: usize, hw: usize) -> Vec<R> {
    let mut out = vec![R::zero(); n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            let src = &t[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            out[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// Returns the output and the unfolded input (kept for the weight gradient).
pub fn conv2d_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    b: Option<&Tensor<R>>,
    stride: usize,
    pad: usize,
) -> (Tensor<R>, Vec<R>, ConvGeom) {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
    let cols = im2col(x.data(), &g);
    let (kdim, ncols) = (g.rows(), g.cols());
    let mut mat = vec![R::zero(); g.cout * ncols];
    R::gemm(
        g.cout,
        kdim,
        ncols,
        R::one(),
        w.data(),
        kdim as isize,
        1,
        &cols,
        ncols as isize,
        1,
        R::zero(),
        &mut mat,
        ncols as isize,
        1,
    );
    if let Some(b) = b {
        assert_eq!(b.len(), g.cout, "conv bias length mismatch");
        for (co, row) in mat.chunks_mut(ncols).enumerate() {
            let bias = b.data()[co];
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    let out = channel_major_to_nchw(&mat, g.n, g.cout, g.ho * g.wo);
    (Tensor::from_vec(&[g.n, g.cout, g.ho, g.wo], out), cols, g)
}

pub struct ConvGrads<R: Real> {
    pub dx: Option<Tensor<R>>,
    pub dw: Option<Tensor<R>>,
    pub db: Option<Tensor<R>>,
}

pub fn conv2d_backward<R: Real>(
    gy: &Tensor<R>,
    cols: Option<&[R]>,
    w: &Tensor<R>,
    g: &ConvGeom,
    need_dx: bool,
    need_db: bool,
) -> ConvGrads<R> {
    let (kdim, ncols) = (g.rows(), g.cols());
    let hw = g.ho * g.wo;
    let gmat = nchw_to_channel_major(gy.data(), g.n, g.cout, hw);
    let dw = cols.map(|cols| {
        let mut dw = vec![R::zero(); g.cout * kdim];
        R::gemm(
            g.cout,
            ncols,
            kdim,
            R::one(),
            &gmat,
            ncols as isize,
            1,
            cols,
            1,
            ncols as isize,
            R::zero(),
            &mut dw,
            kdim as isize,
            1,
        );
        Tensor::from_vec(w.shape(), dw)
    });
    let db = need_db.then(|| {
        let d = gmat
            .chunks(ncols)
            .map(|row| row.iter().copied().sum())
            .collect();
        Tensor::from_vec(&[g.cout], d)
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![R::zero(); kdim * ncols];
        R::gemm(
            kdim,
            g.cout,
            ncols,
            R::one(),
            w.data(),
            1,
            kdim as isize,
            &gmat,
            ncols as isize,
            1,
            R::zero(),
            &mut dcols,
            ncols as isize,
            1,
        );
        Tensor::from_vec(&[g.n, g.cin, g.h, g.w], col2im(&dcols, g))
    });
    ConvGrads { dx, dw, db }
}

pub fn upsample2x<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![R::zero(); n * c * h2 * w2];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, h2, w2], out)
}

pub fn upsample2x_backward<R: Real>(gy: &Tensor<R>) -> Tensor<R> {
    let (n, c, h2, w2) = gy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![R::zero(); n * c * h * w];
    for p in 0..n * c {
        let src = &gy.data()[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// 3x3 average pooling, stride 2, padding 1; padded cells are excluded from
/// the average.
pub fn avg_pool<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let mut out = vec![R::zero(); n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let (mut acc, mut count) = (R::zero(), 0usize);
                for y in window(oy, h) {
                    for xx in window(ox, w) {
                        acc += src[y * w + xx];
                        count += 1;
                    }
                }
                out[p * ho * wo + oy * wo + ox] = acc / R::of(count as f64);
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

fn window(o: usize, size: usize) -> std::ops::Range<usize> {
    let start = (2 * o).saturating_sub(1);
    let end = (2 * o + 2).min(size);
    start..end
}

pub fn avg_pool_backward<R: Real>(gy: &Tensor<R>, input_shape: &[usize]) -> Tensor<R> {
    let (n, c, ho, wo) = gy.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut out = vec![R::zero(); n * c * h * w];
    for p in 0..n * c {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let count = window(oy, h).len() * window(ox, w).len();
                let share = gy.data()[p * ho * wo + oy * wo + ox] / R::of(count as f64);
                for y in window(oy, h) {
                    for xx in window(ox, w) {
                        dst[y * w + xx] += share;
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}

/// Half-pixel-centre bilinear sampling taps along one axis.
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<R: Real>(x: &Tensor<R>, ho: usize, wo: usize) -> Tensor<R> {
    let (n, c, h, w) = x.dims4();
    let ty = bilinear_taps(ho, h);
    let tx = bilinear_taps(wo, w);
    let mut out = vec![R::zero(); n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fy, fx) = (R::of(fy), R::of(fx));
                let one = R::one();
                let top = src[y0 * w + x0] * (one - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (one - fx) + src[y1 * w + x1] * fx;
                out[p * ho * wo + oy * wo + ox] = top * (one - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub fn resize_bilinear_backward<R: Real>(gy: &Tensor<R>, input_shape: &[usize]) -> Tensor<R> {
    let (n, c, ho, wo) = gy.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let ty = bilinear_taps(ho, h);
    let tx = bilinear_taps(wo, w);
    let mut out = vec![R::zero(); n * c * h * w];
    for p in 0..n * c {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = gy.data()[p * ho * wo + oy * wo + ox];
                let (fy, fx) = (R::of(fy), R::of(fx));
                let one = R::one();
                dst[y0 * w + x0] += g * (one - fy) * (one - fx);
                dst[y0 * w + x1] += g * (one - fy) * fx;
                dst[y1 * w + x0] += g * fy * (one - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}

/// Per-(sample, channel) mean and population standard deviation over the
/// spatial extent.
pub fn instance_stats<R: Real>(x: &Tensor<R>) -> (Vec<R>, Vec<R>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let inv = R::of(1.0 / hw as f64);
    let mut means = Vec::with_capacity(n * c);
    let mut stds = Vec::with_capacity(n * c);
    for plane in x.data().chunks(hw).take(n * c) {
        let rough = plane.iter().copied().sum::<R>() * inv;
        // One refinement pass; a constant plane then gets its exact value.
        let mean = rough + plane.iter().map(|&v| v - rough).sum::<R>() * inv;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() * inv;
        means.push(mean);
        stds.push(var.sqrt());
    }
    (means, stds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let g = ConvGeom::new(x.shape(), w.shape(), stride, pad);
        let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
        for n in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < g.h
                                        && (ix as usize) < g.w
                                    {
                                        acc += x.data()[((n * g.cin + ci) * g.h + iy as usize)
                                            * g.w
                                            + ix as usize]
                                            * w.data()[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((n * g.cout + co) * g.ho + oy) * g.wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = crate::rng::seeded_rng(3);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (2, 1, 4), (1, 0, 1)] {
            let x = Tensor::<f64>::randn(&[2, 3, 7, 6], 1.0, &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, k, k], 1.0, &mut rng);
            let (y, _, _) = conv2d_forward(&x, &w, None, stride, pad);
            assert!(y.max_abs_diff(&naive_conv(&x, &w, stride, pad)) < 1e-12);
        }
    }

    #[test]
    fn avg_pool_halves_even_sizes() {
        let x = Tensor::<f32>::full(&[1, 1, 64, 64], 0.5);
        let y = avg_pool(&x);
        assert_eq!(y.shape(), &[1, 1, 32, 32]);
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let mut rng = crate::rng::seeded_rng(1);
        let x = Tensor::<f64>::randn(&[1, 2, 5, 5], 1.0, &mut rng);
        assert!(resize_bilinear(&x, 5, 5).max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn instance_stats_use_population_std() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![1., 2., 3., 4.]);
        let (m, s) = instance_stats(&x);
        assert_eq!(m[0], 2.5);
        assert!((s[0] - 1.25f64.sqrt()).abs() < 1e-15);
    }
}
