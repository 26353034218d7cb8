//! Stride-1 convolutions computed straight from a zero-padded input with
//! AVX-512, without an im2col buffer.
//!
//! A forward tile keeps 8 output channels × 16 pixels in registers. The
//! input gradient is the forward pass of the output gradient under flipped,
//! transposed weights. The weight gradient reduces 4 output channels × `k`
//! horizontal taps at a time.

/// Output channels per forward tile.
const CO: usize = 8;
/// Output pixels per forward tile.
const PX: usize = 16;
/// Output channels per weight-gradient tile.
const GCO: usize = 4;
/// Pixels per weight-gradient vector.
const GPX: usize = 8;

pub fn available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        static AVX512: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
        *AVX512.get_or_init(|| std::arch::is_x86_feature_detected!("avx512f"))
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Whether the weight gradient has a specialized kernel for this size.
pub fn grad_supported(kernel: usize) -> bool {
    matches!(kernel, 3 | 5 | 7)
}

/// Planes copied into a zero border with spare columns on the right, so
/// full-width vector loads never leave the buffer.
pub struct Padded {
    data: Vec<f64>,
    rows: usize,
    pitch: usize,
}

impl Padded {
    pub fn new(src: &[f64], channels: usize, h: usize, w: usize, pad: usize) -> Self {
        let rows = h + 2 * pad;
        let pitch = w + 2 * pad + PX;
        let mut data = vec![0.0; channels * rows * pitch];
        for c in 0..channels {
            for y in 0..h {
                let dst = (c * rows + y + pad) * pitch + pad;
                data[dst..dst + w].copy_from_slice(&src[(c * h + y) * w..][..w]);
            }
        }
        Padded { data, rows, pitch }
    }

    fn plane(&self) -> usize {
        self.rows * self.pitch
    }
}

/// Weights regrouped as `[cout / 8][cin][k][k][8]`, zero-filled past `cout`.
pub struct Packed {
    data: Vec<f64>,
    cin: usize,
    cout: usize,
    kernel: usize,
}

impl Packed {
    /// `weight` is `[cout, cin, k, k]`.
    pub fn forward(weight: &[f64], cout: usize, cin: usize, kernel: usize) -> Self {
        let kk = kernel * kernel;
        Self::build(cout, cin, kernel, |co, ci, t| weight[(co * cin + ci) * kk + t])
    }

    /// Packs the weights of the adjoint convolution: input and output
    /// channels swapped and the kernel rotated by 180°.
    pub fn adjoint(weight: &[f64], cout: usize, cin: usize, kernel: usize) -> Self {
        let kk = kernel * kernel;
        Self::build(cin, cout, kernel, |ci, co, t| weight[(co * cin + ci) * kk + kk - 1 - t])
    }

    fn build(cout: usize, cin: usize, kernel: usize, at: impl Fn(usize, usize, usize) -> f64) -> Self {
        let kk = kernel * kernel;
        let blocks = cout.div_ceil(CO);
        let mut data = vec![0.0; blocks * cin * kk * CO];
        for co in 0..cout {
            for ci in 0..cin {
                for t in 0..kk {
                    data[(((co / CO) * cin + ci) * kk + t) * CO + co % CO] = at(co, ci, t);
                }
            }
        }
        Packed {
            data,
            cin,
            cout,
            kernel,
        }
    }
}

/// Writes the `[cout, oh, ow]` convolution of `x` into `out`.
pub fn forward(x: &Padded, w: &Packed, oh: usize, ow: usize, out: &mut [f64]) {
    assert!(available());
    assert!(oh + w.kernel - 1 <= x.rows && ow + w.kernel - 1 + PX <= x.pitch + 1);
    assert!(x.data.len() >= w.cin * x.plane() && out.len() >= w.cout * oh * ow);
    #[cfg(target_arch = "x86_64")]
    // SAFETY: avx512f is present, and the asserts bound every load and store.
    unsafe {
        avx512::forward(x, w, oh, ow, out)
    }
}

/// Adds the weight gradient `[cout, cin, k, k]` for output gradient `dy`
/// (`[cout, oh, ow]`) into `dw`.
#[allow(clippy::too_many_arguments)]
pub fn weight_grad(
    x: &Padded,
    cin: usize,
    dy: &[f64],
    cout: usize,
    kernel: usize,
    oh: usize,
    ow: usize,
    dw: &mut [f64],
) {
    assert!(available() && grad_supported(kernel));
    assert!(oh + kernel - 1 <= x.rows && ow.next_multiple_of(GPX) + kernel - 1 <= x.pitch);
    assert!(x.data.len() >= cin * x.plane() && dy.len() >= cout * oh * ow);
    assert!(dw.len() >= cout * cin * kernel * kernel);
    let pitch = ow.next_multiple_of(GPX);
    let blocks = cout.div_ceil(GCO);
    let mut dyp = vec![0.0; blocks * GCO * oh * pitch];
    for c in 0..cout {
        for y in 0..oh {
            dyp[(c * oh + y) * pitch..][..ow].copy_from_slice(&dy[(c * oh + y) * ow..][..ow]);
        }
    }
    let g = GradGeometry {
        cin,
        cout,
        oh,
        dy_pitch: pitch,
    };
    #[cfg(target_arch = "x86_64")]
    // SAFETY: as for `forward`; `dyp` holds whole blocks of padded rows.
    unsafe {
        match kernel {
            3 => avx512::weight_grad::<3>(x, &dyp, &g, dw),
            5 => avx512::weight_grad::<5>(x, &dyp, &g, dw),
            _ => avx512::weight_grad::<7>(x, &dyp, &g, dw),
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (g, dyp);
}

#[allow(dead_code)]
struct GradGeometry {
    cin: usize,
    cout: usize,
    oh: usize,
    dy_pitch: usize,
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{GradGeometry, Packed, Padded, CO, GCO, GPX, PX};

    #[target_feature(enable = "avx512f")]
    unsafe fn tile(
        x: *const f64,
        w: *const f64,
        cin: usize,
        k: usize,
        plane: usize,
        pitch: usize,
    ) -> [[__m512d; 2]; CO] {
        let mut acc = [[_mm512_setzero_pd(); 2]; CO];
        let mut w = w;
        for ci in 0..cin {
            for ky in 0..k {
                let row = x.add(ci * plane + ky * pitch);
                for kx in 0..k {
                    let x0 = _mm512_loadu_pd(row.add(kx));
                    let x1 = _mm512_loadu_pd(row.add(kx + 8));
                    for (c, a) in acc.iter_mut().enumerate() {
                        let wv = _mm512_set1_pd(*w.add(c));
                        a[0] = _mm512_fmadd_pd(wv, x0, a[0]);
                        a[1] = _mm512_fmadd_pd(wv, x1, a[1]);
                    }
                    w = w.add(CO);
                }
            }
        }
        acc
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn forward(x: &Padded, w: &Packed, oh: usize, ow: usize, out: &mut [f64]) {
        let (k, cin) = (w.kernel, w.cin);
        let block_len = cin * k * k * CO;
        let mut lanes = [0.0f64; PX];
        for b in 0..w.cout.div_ceil(CO) {
            let wb = w.data.as_ptr().add(b * block_len);
            let live = CO.min(w.cout - b * CO);
            for oy in 0..oh {
                for ox in (0..ow).step_by(PX) {
                    let acc = tile(x.data.as_ptr().add(oy * x.pitch + ox), wb, cin, k, x.plane(), x.pitch);
                    let n = PX.min(ow - ox);
                    for (c, a) in acc.iter().enumerate().take(live) {
                        _mm512_storeu_pd(lanes.as_mut_ptr(), a[0]);
                        _mm512_storeu_pd(lanes.as_mut_ptr().add(8), a[1]);
                        out[((b * CO + c) * oh + oy) * ow + ox..][..n].copy_from_slice(&lanes[..n]);
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn weight_grad<const K: usize>(x: &Padded, dyp: &[f64], g: &GradGeometry, dw: &mut [f64]) {
        let dy_plane = g.oh * g.dy_pitch;
        for b in 0..g.cout.div_ceil(GCO) {
            let live = GCO.min(g.cout - b * GCO);
            let dyb = dyp.as_ptr().add(b * GCO * dy_plane);
            for ci in 0..g.cin {
                for ky in 0..K {
                    let xr = x.data.as_ptr().add(ci * x.plane() + ky * x.pitch);
                    let mut acc = [[_mm512_setzero_pd(); K]; GCO];
                    for oy in 0..g.oh {
                        let xrow = xr.add(oy * x.pitch);
                        let drow = dyb.add(oy * g.dy_pitch);
                        for ox in (0..g.dy_pitch).step_by(GPX) {
                            let mut d = [_mm512_setzero_pd(); GCO];
                            for (c, dv) in d.iter_mut().enumerate() {
                                *dv = _mm512_loadu_pd(drow.add(c * dy_plane + ox));
                            }
                            for kx in 0..K {
                                let xv = _mm512_loadu_pd(xrow.add(ox + kx));
                                for (a, dv) in acc.iter_mut().zip(&d) {
                                    a[kx] = _mm512_fmadd_pd(*dv, xv, a[kx]);
                                }
                            }
                        }
                    }
                    for (c, row) in acc.iter().enumerate().take(live) {
                        let base = (((b * GCO + c) * g.cin + ci) * K + ky) * K;
                        for (kx, v) in row.iter().enumerate() {
                            dw[base + kx] += _mm512_reduce_add_pd(*v);
                        }
                    }
                }
            }
        }
    }
}
