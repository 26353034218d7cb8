//! Forward/backward kernels over raw `N×C×H×W` buffers.
//!
//! Convolutions lower to GEMM through an im2col buffer that is processed in
//! bands of output rows so the scratch space stays bounded for large inputs.

use crate::nn::direct;
use crate::tensor::Tensor;

/// Upper bound on im2col scratch elements per band.
const COL_BUDGET: usize = 1 << 18;

/// `C = alpha * A·B + beta * C` over strided row-major views.
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
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        debug_assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        debug_assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: every index reachable through the given strides is within the
    // slices (checked above), and `c` does not alias `a` or `b`.
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
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a square-kernel convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }
    fn ckk(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
    /// Wide stride-1 maps skip im2col on CPUs with AVX-512.
    fn is_direct(&self) -> bool {
        self.stride == 1 && !self.is_pointwise() && self.pad < self.kernel && self.out_w() >= 16 && direct::available()
    }
    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.ckk() * self.out_w()).max(1)).clamp(1, self.out_h())
    }
}

fn im2col(x: &[f64], g: &ConvGeometry, r0: usize, r1: usize, cols: &mut [f64]) {
    let (ow, k) = (g.out_w(), g.kernel);
    let len = (r1 - r0) * ow;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * len..][..len];
                for (ri, oy) in (r0..r1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[ri * ow..(ri + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeometry, r0: usize, r1: usize, dx: &mut [f64]) {
    let (ow, k) = (g.out_w(), g.kernel);
    let len = (r1 - r0) * ow;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * len..][..len];
                for (ri, oy) in (r0..r1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[ri * ow..(ri + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `[cout, cin, k, k]`, `bias` is `[cout]`.
pub fn conv2d_forward(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Tensor {
    if g.is_direct() {
        forward_direct(x, weight, bias, g)
    } else {
        forward_gemm(x, weight, bias, g)
    }
}

fn forward_direct(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Tensor {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Tensor::zeros([x.batch(), g.cout, oh, ow]);
    let packed = direct::Packed::forward(weight, g.cout, g.cin, g.kernel);
    for n in 0..x.batch() {
        let xp = direct::Padded::new(x.sample(n), g.cin, g.h, g.w, g.pad);
        direct::forward(&xp, &packed, oh, ow, out.sample_mut(n));
    }
    add_bias(&mut out, bias);
    out
}

fn forward_gemm(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Tensor {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let ckk = g.ckk();
    let mut out = Tensor::zeros([x.batch(), g.cout, oh, ow]);
    let band = g.band_rows();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; ckk * band * ow]
    };
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let ys = out.sample_mut(n);
        if g.is_pointwise() {
            gemm(g.cout, ckk, ohw, weight, (ckk, 1), xs, (ohw, 1), 0.0, ys, (ohw, 1));
        } else {
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + band).min(oh);
                let len = (r1 - r0) * ow;
                im2col(xs, g, r0, r1, &mut cols);
                gemm(
                    g.cout,
                    ckk,
                    len,
                    weight,
                    (ckk, 1),
                    &cols,
                    (len, 1),
                    0.0,
                    &mut ys[r0 * ow..],
                    (ohw, 1),
                );
                r0 = r1;
            }
        }
    }
    add_bias(&mut out, bias);
    out
}

fn add_bias(out: &mut Tensor, bias: Option<&[f64]>) {
    let Some(b) = bias else { return };
    let hw = out.height() * out.width();
    for n in 0..out.batch() {
        let ys = out.sample_mut(n);
        for (co, &bv) in b.iter().enumerate() {
            ys[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Gradients of a convolution. Any of the outputs may be skipped.
pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dweight: Option<Vec<f64>>,
    pub dbias: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    g: &ConvGeometry,
    wants: (bool, bool, bool),
) -> ConvGrads {
    if g.is_direct() && direct::grad_supported(g.kernel) {
        backward_direct(x, weight, dy, g, wants)
    } else {
        backward_gemm(x, weight, dy, g, wants)
    }
}

fn backward_direct(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    g: &ConvGeometry,
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dw.then(|| vec![0.0; g.cout * g.ckk()]);
    let mut db = want_db.then(|| vec![0.0; g.cout]);
    let adjoint = want_dx.then(|| direct::Packed::adjoint(weight, g.cout, g.cin, g.kernel));
    for n in 0..x.batch() {
        let dys = dy.sample(n);
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dys[co * ohw..(co + 1) * ohw].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xp = direct::Padded::new(x.sample(n), g.cin, g.h, g.w, g.pad);
            direct::weight_grad(&xp, g.cin, dys, g.cout, g.kernel, oh, ow, dw);
        }
        if let (Some(dx), Some(adjoint)) = (dx.as_mut(), adjoint.as_ref()) {
            let dyp = direct::Padded::new(dys, g.cout, oh, ow, g.kernel - 1 - g.pad);
            direct::forward(&dyp, adjoint, g.h, g.w, dx.sample_mut(n));
        }
    }
    ConvGrads {
        dx,
        dweight: dw,
        dbias: db,
    }
}

fn backward_gemm(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    g: &ConvGeometry,
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let ckk = g.ckk();
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dw.then(|| vec![0.0; g.cout * ckk]);
    let mut db = want_db.then(|| vec![0.0; g.cout]);
    let band = g.band_rows();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; ckk * band * ow]
    };
    let mut dcols = if pointwise || !want_dx {
        Vec::new()
    } else {
        vec![0.0; ckk * band * ow]
    };
    for n in 0..x.batch() {
        let xs = x.sample(n);
        let dys = dy.sample(n);
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dys[co * ohw..(co + 1) * ohw].iter().sum::<f64>();
            }
        }
        if pointwise {
            if let Some(dw) = dw.as_mut() {
                gemm(g.cout, ohw, ckk, dys, (ohw, 1), xs, (1, ohw), 1.0, dw, (ckk, 1));
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ckk,
                    g.cout,
                    ohw,
                    weight,
                    (1, ckk),
                    dys,
                    (ohw, 1),
                    0.0,
                    dx.sample_mut(n),
                    (ohw, 1),
                );
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + band).min(oh);
            let len = (r1 - r0) * ow;
            let dy_band = &dys[r0 * ow..];
            if let Some(dw) = dw.as_mut() {
                im2col(xs, g, r0, r1, &mut cols);
                gemm(g.cout, len, ckk, dy_band, (ohw, 1), &cols, (1, len), 1.0, dw, (ckk, 1));
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ckk,
                    g.cout,
                    len,
                    weight,
                    (1, ckk),
                    dy_band,
                    (ohw, 1),
                    0.0,
                    &mut dcols,
                    (len, 1),
                );
                col2im_add(&dcols, g, r0, r1, dx.sample_mut(n));
            }
            r0 = r1;
        }
    }
    ConvGrads {
        dx,
        dweight: dw,
        dbias: db,
    }
}

/// 2×2 stride-2 transposed convolution; `weight` is `[cin, cout, 2, 2]`.
pub fn conv_transpose2x2_forward(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, cout: usize) -> Tensor {
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let rows = cout * 4;
    let mut out = Tensor::zeros([n, cout, 2 * h, 2 * w]);
    let mut y4 = vec![0.0; rows * hw];
    for s in 0..n {
        gemm(
            rows,
            cin,
            hw,
            weight,
            (1, rows),
            x.sample(s),
            (hw, 1),
            0.0,
            &mut y4,
            (hw, 1),
        );
        let ys = out.sample_mut(s);
        for co in 0..cout {
            let b = bias.map_or(0.0, |b| b[co]);
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let src = &y4[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for y in 0..h {
                    let orow = &mut ys[(co * 2 * h + 2 * y + dy) * 2 * w..][..2 * w];
                    for x in 0..w {
                        orow[2 * x + dx] = src[y * w + x] + b;
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    cout: usize,
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let rows = cout * 4;
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dw.then(|| vec![0.0; cin * rows]);
    let mut db = want_db.then(|| vec![0.0; cout]);
    let mut dy4 = vec![0.0; rows * hw];
    for s in 0..n {
        let dys = dy.sample(s);
        for co in 0..cout {
            for d in 0..4 {
                let (oy, ox) = (d / 2, d % 2);
                let dst = &mut dy4[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for y in 0..h {
                    let irow = &dys[(co * 2 * h + 2 * y + oy) * 2 * w..][..2 * w];
                    for x in 0..w {
                        dst[y * w + x] = irow[2 * x + ox];
                    }
                }
            }
        }
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dy4[co * 4 * hw..(co + 1) * 4 * hw].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            gemm(cin, hw, rows, x.sample(s), (hw, 1), &dy4, (1, hw), 1.0, dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                cin,
                rows,
                hw,
                weight,
                (rows, 1),
                &dy4,
                (hw, 1),
                0.0,
                dx.sample_mut(s),
                (hw, 1),
            );
        }
    }
    ConvGrads {
        dx,
        dweight: dw,
        dbias: db,
    }
}

/// Per-channel mean and biased variance over `N, H, W`.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for ni in 0..n {
            s += x.sample(ni)[ci * hw..(ci + 1) * hw].iter().sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for ni in 0..n {
            v += x.sample(ni)[ci * hw..(ci + 1) * hw]
                .iter()
                .map(|&e| (e - m) * (e - m))
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = v / count;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * inv_std + beta`, returning `(y, xhat)`.
pub fn batch_norm_apply(x: &Tensor, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> (Tensor, Tensor) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut xhat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    for ni in 0..n {
        let xh = xhat.sample_mut(ni);
        let ys = y.sample_mut(ni);
        for ci in 0..c {
            let range = ci * hw..(ci + 1) * hw;
            for (o, v) in ys[range.clone()].iter_mut().zip(&mut xh[range]) {
                *v = (*v - mean[ci]) * inv_std[ci];
                *o = gamma[ci] * *v + beta[ci];
            }
        }
    }
    (y, xhat)
}

/// Returns `(dgamma, dbeta)` and, for the train-mode (batch statistics)
/// normalization, the full input gradient; for eval mode the input gradient
/// is the plain affine scaling.
pub fn batch_norm_backward(
    dy: &Tensor,
    xhat: &Tensor,
    inv_std: &[f64],
    gamma: &[f64],
    batch_stats: bool,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ni in 0..n {
        let (d, xh) = (dy.sample(ni), xhat.sample(ni));
        for ci in 0..c {
            let range = ci * hw..(ci + 1) * hw;
            for (&dv, &xv) in d[range.clone()].iter().zip(&xh[range]) {
                dgamma[ci] += dv * xv;
                dbeta[ci] += dv;
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for ni in 0..n {
        let (d, xh) = (dy.sample(ni), xhat.sample(ni));
        let out = dx.sample_mut(ni);
        for ci in 0..c {
            let range = ci * hw..(ci + 1) * hw;
            let scale = gamma[ci] * inv_std[ci];
            if batch_stats {
                let (sb, sg) = (dbeta[ci], dgamma[ci]);
                for ((o, &dv), &xv) in out[range.clone()].iter_mut().zip(&d[range.clone()]).zip(&xh[range]) {
                    *o = scale / m * (m * dv - sb - xv * sg);
                }
            } else {
                for (o, &dv) in out[range.clone()].iter_mut().zip(&d[range]) {
                    *o = scale * dv;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 3×3 stride-1 max pooling with `-inf` padding; returns argmax offsets.
pub fn max_pool3x3_same(x: &Tensor) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    let mut arg = vec![0u32; x.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        let src = &x.data()[base..base + h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = y * w + xx;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xi in xx.saturating_sub(1)..(xx + 2).min(w) {
                        let v = src[yy * w + xi];
                        if v > best {
                            best = v;
                            best_i = yy * w + xi;
                        }
                    }
                }
                out.data_mut()[base + y * w + xx] = best;
                arg[base + y * w + xx] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool3x3_backward(dy: &Tensor, arg: &[u32]) -> Tensor {
    let [_, _, h, w] = dy.shape();
    let mut dx = Tensor::zeros(dy.shape());
    let plane_len = h * w;
    for (i, (&g, &a)) in dy.data().iter().zip(arg).enumerate() {
        let base = i / plane_len * plane_len;
        dx.data_mut()[base + a as usize] += g;
    }
    dx
}

/// Non-overlapping max pooling with window = stride = `factor`.
pub fn max_pool_window(x: &Tensor, factor: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / factor, w / factor);
    Tensor::from_fn([n, c, oh, ow], |ni, ci, y, xx| {
        let mut best = f64::NEG_INFINITY;
        for dy in 0..factor {
            for dx in 0..factor {
                best = best.max(x.get(ni, ci, y * factor + dy, xx * factor + dx));
            }
        }
        best
    })
}
