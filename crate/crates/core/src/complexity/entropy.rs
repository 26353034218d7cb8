use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// BT.601 luma, rounded to 8 bits.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get_pixel(x, y).0;
        let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        Luma([l.round().clamp(0.0, 255.0) as u8])
    })
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let n = total as f64;
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // A single occupied bin gives -1·log2(1) = -0.0.
    h.max(0.0)
}

/// Shannon entropy of the 256-bin gray-level histogram, in bits.
pub fn shannon_entropy(gray: &GrayImage) -> Result<f64> {
    if gray.width() == 0 || gray.height() == 0 {
        return Err(Error::Validation("entropy of an empty image".into()));
    }
    let mut hist = [0u64; 256];
    for p in gray.pixels() {
        hist[p.0[0] as usize] += 1;
    }
    Ok(entropy_of_counts(hist.into_iter(), gray.pixels().len() as u64))
}

/// Half central differences with replicated borders, rounded half to even.
pub fn gradient_field(gray: &GrayImage) -> (Vec<i32>, Vec<i32>) {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let raw = gray.as_raw();
    let at = |x: usize, y: usize| raw[y * w + x] as f64;
    let mut fx = Vec::with_capacity(w * h);
    let mut fy = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            fx.push(((at(xr, y) - at(xl, y)) / 2.0).round_ties_even() as i32);
            fy.push(((at(x, yd) - at(x, yu)) / 2.0).round_ties_even() as i32);
        }
    }
    (fx, fy)
}

/// Entropy in bits of the joint histogram of the gradient field, on integer
/// bins over `[-255, 255]²`.
pub fn delentropy(gray: &GrayImage) -> Result<f64> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w < 3 || h < 3 {
        return Err(Error::Validation(format!(
            "delentropy needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    const SIDE: usize = 511;
    let (fx, fy) = gradient_field(gray);
    let mut hist = vec![0u64; SIDE * SIDE];
    for (&gx, &gy) in fx.iter().zip(&fy) {
        hist[(gx + 255) as usize * SIDE + (gy + 255) as usize] += 1;
    }
    Ok(entropy_of_counts(hist.into_iter(), (w * h) as u64))
}
