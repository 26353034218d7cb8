//! Masked PSNR (RGB) and RMSE / MAE (CIELAB).

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::ShadowMask;

use super::color::srgb_to_lab;

/// PSNR reported for identical inputs (and the upper clamp otherwise).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Pixel subset over which a metric is computed.
#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    /// Mask pixels equal to one.
    Shadow(&'a ShadowMask),
    /// Complement of the shadow region.
    NonShadow(&'a ShadowMask),
    All,
}

impl Region<'_> {
    fn contains(&self, x: usize, y: usize) -> bool {
        match self {
            Region::Shadow(m) => m.is_shadow(x, y),
            Region::NonShadow(m) => !m.is_shadow(x, y),
            Region::All => true,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Region::Shadow(_) => "shadow",
            Region::NonShadow(_) => "non-shadow",
            Region::All => "all",
        }
    }
}

fn check_pair(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<()> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    if let Region::Shadow(m) | Region::NonShadow(m) = region {
        if (m.width() as u32, m.height() as u32) != gt.dimensions() {
            return Err(Error::shape(format!(
                "mask {}x{} vs images {:?}",
                m.width(),
                m.height(),
                gt.dimensions()
            )));
        }
    }
    Ok(())
}

/// Sum of squared 8-bit differences over region pixels × 3 channels, and the pixel count.
pub fn region_squared_error(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<(f64, usize)> {
    check_pair(pred, gt, region)?;
    let mut sum = 0.0;
    let mut count = 0;
    for (x, y, p) in pred.enumerate_pixels() {
        if !region.contains(x as usize, y as usize) {
            continue;
        }
        let q = gt.get_pixel(x, y);
        for c in 0..3 {
            let d = p.0[c] as f64 - q.0[c] as f64;
            sum += d * d;
        }
        count += 1;
    }
    Ok((sum, count))
}

pub fn mse(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<f64> {
    let (sum, count) = region_squared_error(pred, gt, region)?;
    if count == 0 {
        return Err(Error::EmptyRegion(region.name().into()));
    }
    Ok(sum / (3 * count) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// `10 log10(255² / MSE)` over the region, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<f64> {
    mse(pred, gt, region).map(psnr_from_mse)
}

/// Root mean square of per-channel differences between two LAB images.
pub fn rmse_lab_values(pred: &[[f64; 3]], gt: &[[f64; 3]], keep: impl Fn(usize) -> bool) -> Result<f64> {
    lab_error(pred, gt, keep).map(|e| e.rmse)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabError {
    pub rmse: f64,
    /// Mean absolute LAB difference (the convention some prior work calls RMSE).
    pub mae: f64,
    pub pixels: usize,
}

pub fn lab_error(pred: &[[f64; 3]], gt: &[[f64; 3]], keep: impl Fn(usize) -> bool) -> Result<LabError> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} vs {} LAB pixels", pred.len(), gt.len())));
    }
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !keep(i) {
            continue;
        }
        for c in 0..3 {
            let d = p[c] - g[c];
            sq += d * d;
            abs += d.abs();
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("no pixels selected".into()));
    }
    let denom = (3 * n) as f64;
    Ok(LabError {
        rmse: (sq / denom).sqrt(),
        mae: abs / denom,
        pixels: n,
    })
}

/// RMSE in CIELAB over the region.
pub fn rmse_lab(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<f64> {
    lab_metrics(pred, gt, region).map(|e| e.rmse)
}

pub fn lab_metrics(pred: &RgbImage, gt: &RgbImage, region: Region) -> Result<LabError> {
    check_pair(pred, gt, region)?;
    let w = pred.width() as usize;
    let p: Vec<_> = pred.pixels().map(|px| srgb_to_lab(px.0)).collect();
    let g: Vec<_> = gt.pixels().map(|px| srgb_to_lab(px.0)).collect();
    lab_error(&p, &g, |i| region.contains(i % w, i / w)).map_err(|e| match e {
        Error::EmptyRegion(_) => Error::EmptyRegion(region.name().into()),
        other => other,
    })
}

/// PSNR / RMSE for the shadow (S), non-shadow (N) and all (A) regions of one image.
///
/// Region metrics are `None` when the region has no pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub psnr_s: Option<f64>,
    pub psnr_n: Option<f64>,
    pub psnr_a: f64,
    pub rmse_s: Option<f64>,
    pub rmse_n: Option<f64>,
    pub rmse_a: f64,
    pub mae_s: Option<f64>,
    pub mae_n: Option<f64>,
    pub mae_a: f64,
    pub pixels_s: usize,
    pub pixels_n: usize,
}

impl RegionReport {
    pub fn compute(pred: &RgbImage, gt: &RgbImage, mask: &ShadowMask) -> Result<Self> {
        check_pair(pred, gt, Region::Shadow(mask))?;
        let w = pred.width() as usize;
        let p: Vec<_> = pred.pixels().map(|px| srgb_to_lab(px.0)).collect();
        let g: Vec<_> = gt.pixels().map(|px| srgb_to_lab(px.0)).collect();
        let in_s = |i: usize| mask.is_shadow(i % w, i / w);
        let lab = |keep: &dyn Fn(usize) -> bool| -> Option<LabError> { lab_error(&p, &g, keep).ok() };
        let (ls, ln) = (lab(&in_s), lab(&|i| !in_s(i)));
        let la = lab(&|_| true).ok_or_else(|| Error::EmptyRegion("all".into()))?;
        let (se_s, n_s) = region_squared_error(pred, gt, Region::Shadow(mask))?;
        let (se_n, n_n) = region_squared_error(pred, gt, Region::NonShadow(mask))?;
        let ps = |se: f64, n: usize| (n > 0).then(|| psnr_from_mse(se / (3 * n) as f64));
        Ok(RegionReport {
            psnr_s: ps(se_s, n_s),
            psnr_n: ps(se_n, n_n),
            psnr_a: psnr_from_mse((se_s + se_n) / (3 * (n_s + n_n)) as f64),
            rmse_s: ls.map(|e| e.rmse),
            rmse_n: ln.map(|e| e.rmse),
            rmse_a: la.rmse,
            mae_s: ls.map(|e| e.mae),
            mae_n: ln.map(|e| e.mae),
            mae_a: la.mae,
            pixels_s: n_s,
            pixels_n: n_n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = stream_rng(seed, "img", &[]);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    fn random_mask(seed: u64, w: usize, h: usize) -> ShadowMask {
        let mut rng = stream_rng(seed, "mask", &[]);
        ShadowMask::from_fn(w, h, |_, _| rng.random_bool(0.4))
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = random_image(1, 9, 7);
        assert_eq!(psnr(&a, &a, Region::All).unwrap(), PSNR_CAP_DB);
        assert_eq!(rmse_lab(&a, &a, Region::All).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_of_sixteen() {
        let a = RgbImage::from_pixel(8, 8, Rgb([100, 120, 140]));
        let b = RgbImage::from_pixel(8, 8, Rgb([116, 136, 156]));
        let expected = 10.0 * (65025.0f64 / 256.0).log10();
        let got = psnr(&a, &b, Region::All).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 24.05).abs() < 0.01);
    }

    #[test]
    fn psnr_only_sees_the_region() {
        let a = random_image(2, 10, 6);
        let mut b = a.clone();
        for y in 0..6 {
            for x in 5..10 {
                b.put_pixel(x, y, Rgb(a.get_pixel(x, y).0.map(|v| v.wrapping_add(37))));
            }
        }
        let right = ShadowMask::from_fn(10, 6, |x, _| x >= 5);
        let mut sum = 0.0;
        for y in 0..6 {
            for x in 5..10 {
                for c in 0..3 {
                    let d = a.get_pixel(x, y)[c] as f64 - b.get_pixel(x, y)[c] as f64;
                    sum += d * d;
                }
            }
        }
        let oracle = 10.0 * (255.0f64.powi(2) / (sum / 90.0)).log10();
        assert!((psnr(&a, &b, Region::Shadow(&right)).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(psnr(&a, &b, Region::NonShadow(&right)).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn empty_region_is_an_error() {
        let a = random_image(3, 4, 4);
        let none = ShadowMask::filled(4, 4, 0.0);
        assert!(matches!(
            psnr(&a, &a, Region::Shadow(&none)),
            Err(Error::EmptyRegion(_))
        ));
        assert!(matches!(
            rmse_lab(&a, &a, Region::Shadow(&none)),
            Err(Error::EmptyRegion(_))
        ));
        let r = RegionReport::compute(&a, &a, &none).unwrap();
        assert_eq!((r.psnr_s, r.rmse_s, r.pixels_s, r.pixels_n), (None, None, 0, 16));
    }

    #[test]
    fn lightness_shift_of_five() {
        let gt: Vec<[f64; 3]> = (0..50)
            .map(|i| [40.0 + i as f64 * 0.3, 3.0 - i as f64 * 0.1, -7.0])
            .collect();
        let pred: Vec<[f64; 3]> = gt.iter().map(|p| [p[0] + 5.0, p[1], p[2]]).collect();
        let r = rmse_lab_values(&pred, &gt, |_| true).unwrap();
        assert!((r - 5.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert!((r - 2.887).abs() < 0.01);
    }

    #[test]
    fn rmse_matches_double_loop() {
        for seed in 0..5 {
            let (a, b) = (random_image(seed, 11, 9), random_image(seed + 50, 11, 9));
            let m = random_mask(seed, 11, 9);
            let mut sq = 0.0;
            let mut n = 0;
            for y in 0..9 {
                for x in 0..11 {
                    if !m.is_shadow(x, y) {
                        continue;
                    }
                    let p = srgb_to_lab(a.get_pixel(x as u32, y as u32).0);
                    let q = srgb_to_lab(b.get_pixel(x as u32, y as u32).0);
                    for c in 0..3 {
                        sq += (p[c] - q[c]).powi(2);
                    }
                    n += 3;
                }
            }
            let oracle = (sq / n as f64).sqrt();
            let got = rmse_lab(&a, &b, Region::Shadow(&m)).unwrap();
            assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = random_image(1, 4, 4);
        let b = random_image(1, 4, 5);
        assert!(psnr(&a, &b, Region::All).is_err());
        let m = ShadowMask::filled(5, 4, 1.0);
        assert!(RegionReport::compute(&a, &a, &m).is_err());
    }

    #[test]
    fn decomposition_on_random_pairs() {
        for seed in 0..100 {
            let (w, h) = (3 + (seed % 13) as u32, 2 + (seed % 7) as u32);
            let (a, b) = (random_image(seed, w, h), random_image(seed + 1000, w, h));
            let m = random_mask(seed, w as usize, h as usize);
            let (ss, ns) = region_squared_error(&a, &b, Region::Shadow(&m)).unwrap();
            let (sn, nn) = region_squared_error(&a, &b, Region::NonShadow(&m)).unwrap();
            let all = mse(&a, &b, Region::All).unwrap();
            assert_eq!(ns + nn, (w * h) as usize);
            let ms = if ns > 0 { ss / (3 * ns) as f64 } else { 0.0 };
            let mn = if nn > 0 { sn / (3 * nn) as f64 } else { 0.0 };
            let lhs = ns as f64 * ms + nn as f64 * mn;
            let rhs = (w * h) as f64 * all;
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300),
                "seed {seed}: {lhs} vs {rhs}"
            );
        }
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric(seed in any::<u64>()) {
            let (a, b) = (random_image(seed, 6, 5), random_image(seed ^ 0xabc, 6, 5));
            let m = random_mask(seed, 6, 5);
            prop_assert_eq!(RegionReport::compute(&a, &b, &m).unwrap(), RegionReport::compute(&b, &a, &m).unwrap());
        }

        #[test]
        fn psnr_decreases_with_mse(a in 0.01f64..1e4, b in 0.01f64..1e4) {
            if a < b {
                prop_assert!(psnr_from_mse(a) >= psnr_from_mse(b));
            }
        }

        #[test]
        fn report_counts_cover_the_image(seed in any::<u64>(), w in 1usize..9, h in 1usize..9) {
            let (a, b) = (random_image(seed, w as u32, h as u32), random_image(!seed, w as u32, h as u32));
            let r = RegionReport::compute(&a, &b, &random_mask(seed, w, h)).unwrap();
            prop_assert_eq!(r.pixels_s + r.pixels_n, w * h);
            prop_assert!(r.psnr_a.is_finite() && r.psnr_a <= PSNR_CAP_DB);
        }
    }
}
