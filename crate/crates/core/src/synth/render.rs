//! 2.5D rendering: textured ground, occluder sprites, projected shadows.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::sample::ShadowMask;
use crate::seed::derive_seed;

use super::scene::{Occluder, SceneSpec, Shape};

fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = derive_seed(seed, "noise", &[octave as u64, ix as u64, iy as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Fractal value noise in `[0, 1]`.
fn value_noise(seed: u64, octaves: u32, period: f64, persistence: f64, x: f64, y: f64) -> f64 {
    let (mut sum, mut norm, mut amp, mut p) = (0.0, 0.0, 1.0, period.max(1.0));
    for o in 0..octaves.max(1) {
        let (fx, fy) = (x / p, y / p);
        let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let v = |dx, dy| lattice(seed, o, ix + dx, iy + dy);
        let top = v(0, 0) * (1.0 - tx) + v(1, 0) * tx;
        let bottom = v(0, 1) * (1.0 - tx) + v(1, 1) * tx;
        sum += amp * (top * (1.0 - ty) + bottom * ty);
        norm += amp;
        amp *= persistence;
        p = (p / 2.0).max(1.0);
    }
    sum / norm
}

pub fn render_background(spec: &SceneSpec) -> RgbImage {
    let bg = &spec.background;
    let w = spec.width;
    RgbImage::from_fn(spec.width as u32, spec.height as u32, |x, y| {
        let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
        let n = value_noise(
            spec.seed,
            bg.octaves,
            bg.base_period,
            bg.persistence,
            x as f64,
            y as f64,
        );
        let shade = 1.0 - bg.contrast + 2.0 * bg.contrast * n;
        Rgb(std::array::from_fn(|c| {
            let base = bg.left[c] as f64 * (1.0 - t) + bg.right[c] as f64 * t;
            (base * shade).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Whether `(px, py)`, in occluder-local units (radius 1), lies inside the shape.
fn shape_contains(shape: &Shape, px: f64, py: f64) -> bool {
    match shape {
        Shape::Disc => px * px + py * py <= 1.0,
        Shape::Polygon { vertices } => {
            let n = vertices.len();
            (0..n).all(|i| {
                let [ax, ay] = vertices[i];
                let [bx, by] = vertices[(i + 1) % n];
                (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
            })
        }
        Shape::Foliage { discs } => discs
            .iter()
            .any(|&[dx, dy, r]| (px - dx) * (px - dx) + (py - dy) * (py - dy) <= r * r),
    }
}

/// Rasterize `inside(x, y)` over the bounding box `[x0, x1) × [y0, y1)` clipped to the canvas.
fn raster(buf: &mut [bool], w: usize, h: usize, bbox: [f64; 4], inside: impl Fn(f64, f64) -> bool) {
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
    let (x0, x1) = (clamp(bbox[0].floor(), w), clamp(bbox[2].ceil() + 1.0, w));
    let (y0, y1) = (clamp(bbox[1].floor(), h), clamp(bbox[3].ceil() + 1.0, h));
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                buf[y * w + x] = true;
            }
        }
    }
}

fn sprite_mask(spec: &SceneSpec, o: &Occluder, buf: &mut [bool]) {
    let r = o.size / 2.0;
    let [ax, ay] = o.anchor;
    raster(
        buf,
        spec.width,
        spec.height,
        [ax - r, ay - r, ax + r, ay + r],
        |x, y| shape_contains(&o.shape, (x - ax) / r, (y - ay) / r),
    );
}

/// The silhouette displaced by half its stretched length along the light
/// direction and stretched by the elongation along it.
fn shadow_silhouette(spec: &SceneSpec, o: &Occluder, buf: &mut [bool]) {
    let r = o.size / 2.0;
    let l = &spec.light;
    let [dx, dy] = l.direction;
    let (px, py) = (-dy, dx);
    let e = l.elongation;
    let (cx, cy) = (o.anchor[0] + dx * r * e, o.anchor[1] + dy * r * e);
    let reach = r * e;
    raster(
        buf,
        spec.width,
        spec.height,
        [cx - reach, cy - reach, cx + reach, cy + reach],
        |x, y| {
            let (qx, qy) = (x - cx, y - cy);
            let along = (qx * dx + qy * dy) / e;
            let across = qx * px + qy * py;
            let (lx, ly) = (along * dx + across * px, along * dy + across * py);
            shape_contains(&o.shape, lx / r, ly / r)
        },
    );
}

/// Box-filtered shadow coverage in `[0, 1]` per pixel, from integer counts.
pub fn shadow_coverage(spec: &SceneSpec) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let mut sil = vec![false; w * h];
    for o in &spec.occluders {
        shadow_silhouette(spec, o, &mut sil);
    }
    let r = spec.light.penumbra_radius;
    if r == 0 {
        return sil.iter().map(|&b| b as u8 as f64).collect();
    }
    // Summed-area table with zero padding outside the canvas.
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += sil[y * w + x] as u32;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let area = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0];
            out[y * w + x] = s as f64 / area;
        }
    }
    out
}

/// Render the scene. With `cast_shadows`, background pixels are multiplied by
/// `1 - (1 - attenuation) · coverage`; occluder sprites are never darkened.
pub fn render_scene(spec: &SceneSpec, cast_shadows: bool) -> RgbImage {
    let (w, h) = (spec.width, spec.height);
    let mut img = render_background(spec);
    if cast_shadows {
        let cov = shadow_coverage(spec);
        let k = 1.0 - spec.light.attenuation;
        for (i, px) in img.pixels_mut().enumerate() {
            if cov[i] > 0.0 {
                let m = 1.0 - k * cov[i];
                px.0 = px.0.map(|v| (v as f64 * m).round() as u8);
            }
        }
    }
    for o in spec.occluders.iter().filter(|o| o.visible) {
        let mut sprite = vec![false; w * h];
        sprite_mask(spec, o, &mut sprite);
        let r = o.size / 2.0;
        for (i, _) in sprite.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % w, i / w);
            // Mild radial shading so sprites read as objects.
            let d = ((x as f64 + 0.5 - o.anchor[0]).powi(2) + (y as f64 + 0.5 - o.anchor[1]).powi(2)).sqrt() / r;
            let s = 1.0 - 0.25 * d.min(1.0);
            img.put_pixel(x as u32, y as u32, Rgb(o.albedo.map(|v| (v as f64 * s).round() as u8)));
        }
    }
    img
}

/// Pixels where some channel differs by more than `tau`.
pub fn derive_mask(with_shadow: &RgbImage, without_shadow: &RgbImage, tau: u8) -> Result<ShadowMask> {
    if with_shadow.dimensions() != without_shadow.dimensions() {
        return Err(Error::shape(format!(
            "{:?} vs {:?}",
            with_shadow.dimensions(),
            without_shadow.dimensions()
        )));
    }
    let (w, h) = with_shadow.dimensions();
    let a = with_shadow.as_raw();
    let b = without_shadow.as_raw();
    Ok(ShadowMask::from_fn(w as usize, h as usize, |x, y| {
        let i = 3 * (y * w as usize + x);
        (0..3).any(|c| a[i + c].abs_diff(b[i + c]) > tau)
    }))
}
