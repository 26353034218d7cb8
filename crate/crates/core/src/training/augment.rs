//! Paired geometric augmentation: one scale and rotation applied to every
//! member of a triplet.

use image::imageops::{self, FilterType};
use image::{GrayImage, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{ShadowMask, ShadowTriplet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_range: [f64; 2],
    pub rotation_degrees: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            scale_range: [0.8, 1.2],
            rotation_degrees: [-15.0, 15.0],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!(
                "scale range [{lo}, {hi}] must be positive with min <= max"
            )));
        }
        let [a, b] = self.rotation_degrees;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::config(format!(
                "rotation range [{a}, {b}] must satisfy min <= max"
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AugmentParams {
        let pick = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| {
            if lo < hi {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let scale = pick(rng, self.scale_range);
        let rotation_degrees = pick(rng, self.rotation_degrees);
        AugmentParams {
            scale,
            rotation_degrees,
        }
    }
}

/// One sampled transform: zoom by `scale` and rotate by `rotation_degrees`
/// about the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_degrees: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        scale: 1.0,
        rotation_degrees: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation_degrees == 0.0
    }

    /// Source coordinate sampled by output pixel `(x, y)` of a `w`×`h` image,
    /// before reflection into range.
    pub fn source_point(&self, w: usize, h: usize, x: f64, y: f64) -> (f64, f64) {
        let scale = if self.scale.is_finite() && self.scale > 0.0 {
            self.scale
        } else {
            1.0
        };
        let theta = self.rotation_degrees.to_radians();
        let theta = if theta.is_finite() { theta } else { 0.0 };
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (dx, dy) = ((x - cx) / scale, (y - cy) / scale);
        let (s, c) = theta.sin_cos();
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    }
}

/// Reflect a continuous coordinate into `[0, n - 1]` without repeating the edge.
pub fn reflect_coord(v: f64, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let r = v.rem_euclid(period);
    if r > last {
        period - r
    } else {
        r
    }
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| img.get_pixel(xx as u32, yy as u32).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        out[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Apply `params` to all three members. Images are sampled bilinearly and the
/// mask by nearest neighbour, both with reflect padding; the mask is
/// re-binarized at 0.5. Output size equals input size.
pub fn augment_with(t: &ShadowTriplet, params: AugmentParams) -> ShadowTriplet {
    if params.is_identity() {
        return t.clone();
    }
    let (w, h) = (t.width(), t.height());
    let map = |x: usize, y: usize| {
        let (sx, sy) = params.source_point(w, h, x as f64, y as f64);
        (reflect_coord(sx, w), reflect_coord(sy, h))
    };
    let warp = |img: &RgbImage| {
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (sx, sy) = map(x as usize, y as usize);
            bilinear(img, sx, sy)
        })
    };
    let mask = ShadowMask::from_fn(w, h, |x, y| {
        let (sx, sy) = map(x, y);
        let (nx, ny) = ((sx.round() as usize).min(w - 1), (sy.round() as usize).min(h - 1));
        t.mask.get(nx, ny) >= 0.5
    });
    ShadowTriplet {
        shadow: warp(&t.shadow),
        shadow_free: warp(&t.shadow_free),
        mask,
    }
}

/// Sample a transform from `config` and apply it.
pub fn augment_triplet(t: &ShadowTriplet, config: &AugmentConfig, rng: &mut impl Rng) -> ShadowTriplet {
    if !config.enabled {
        return t.clone();
    }
    augment_with(t, config.sample(rng))
}

/// Resize a triplet to `side`×`side` (triangle filter for images, nearest for
/// the mask); a no-op when it already has that size.
pub fn fit_to_side(t: &ShadowTriplet, side: usize) -> ShadowTriplet {
    if t.width() == side && t.height() == side {
        return t.clone();
    }
    let s = side as u32;
    let resize = |img: &RgbImage| imageops::resize(img, s, s, FilterType::Triangle);
    let mask: GrayImage = imageops::resize(&t.mask.to_gray(), s, s, FilterType::Nearest);
    ShadowTriplet {
        shadow: resize(&t.shadow),
        shadow_free: resize(&t.shadow_free),
        mask: ShadowMask::from_gray(&mask, 128),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use proptest::prelude::*;

    fn triplet(w: usize, h: usize) -> ShadowTriplet {
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8])
        });
        let free = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb([(x * 9) as u8, (y * 4) as u8, 200]));
        let mask = ShadowMask::from_fn(w, h, |x, y| (x / 4 + y / 4) % 2 == 0);
        ShadowTriplet::new(img, free, mask).unwrap()
    }

    #[test]
    fn identity_params_return_input() {
        let t = triplet(20, 16);
        let out = augment_with(&t, AugmentParams::IDENTITY);
        assert_eq!(out.shadow, t.shadow);
        assert_eq!(out.shadow_free, t.shadow_free);
        assert_eq!(out.mask, t.mask);
    }

    #[test]
    fn seeded_augmentation_is_deterministic() {
        let t = triplet(24, 24);
        let cfg = AugmentConfig::default();
        let a = augment_triplet(&t, &cfg, &mut stream_rng(3, "aug", &[1]));
        let b = augment_triplet(&t, &cfg, &mut stream_rng(3, "aug", &[1]));
        assert_eq!(a.shadow, b.shadow);
        assert_eq!(a.mask, b.mask);
        let c = augment_triplet(&t, &cfg, &mut stream_rng(3, "aug", &[2]));
        assert_ne!(a.shadow, c.shadow);
    }

    #[test]
    fn reflect_coord_folds() {
        assert_eq!(reflect_coord(-1.0, 5), 1.0);
        assert_eq!(reflect_coord(5.0, 5), 3.0);
        assert_eq!(reflect_coord(8.0, 5), 0.0);
        assert_eq!(reflect_coord(2.5, 5), 2.5);
        assert_eq!(reflect_coord(3.0, 1), 0.0);
    }

    #[test]
    fn quarter_turn_about_center() {
        let p = AugmentParams {
            scale: 1.0,
            rotation_degrees: 90.0,
        };
        let (sx, sy) = p.source_point(5, 5, 4.0, 2.0);
        assert!((sx - 2.0).abs() < 1e-12 && (sy - 0.0).abs() < 1e-12, "{sx} {sy}");
    }

    #[test]
    fn resize_to_side() {
        let t = triplet(40, 30);
        let r = fit_to_side(&t, 16);
        assert_eq!((r.width(), r.height()), (16, 16));
        assert!(r.mask.is_binary());
        r.validate().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mask_stays_binary(seed in any::<u64>(), w in 3usize..24, h in 3usize..24) {
            let t = triplet(w, h);
            let out = augment_triplet(&t, &AugmentConfig::default(), &mut stream_rng(seed, "aug", &[]));
            prop_assert!(out.mask.is_binary());
            prop_assert_eq!((out.width(), out.height()), (w, h));
            prop_assert!(out.validate().is_ok());
        }

        /// Encode source coordinates in the image channels and check the mask
        /// was moved by the same map.
        #[test]
        fn members_share_one_transform(
            seed in any::<u64>(),
            scale in 0.8f64..1.2,
            rot in -15.0f64..15.0,
        ) {
            let n = 48usize;
            let coords = RgbImage::from_fn(n as u32, n as u32, |x, y| Rgb([(x * 5) as u8, (y * 5) as u8, 0]));
            let cell = 6usize;
            let pattern = |x: usize, y: usize| (x / cell + y / cell + seed as usize).is_multiple_of(2);
            let mask = ShadowMask::from_fn(n, n, pattern);
            let t = ShadowTriplet::new(coords.clone(), coords, mask).unwrap();
            let out = augment_with(&t, AugmentParams { scale, rotation_degrees: rot });
            prop_assert_eq!(&out.shadow, &out.shadow_free);
            for (x, y, px) in out.shadow.enumerate_pixels() {
                let (sx, sy) = (px.0[0] as f64 / 5.0, px.0[1] as f64 / 5.0);
                let near_edge = |v: f64| {
                    let r = v.round() as i64 % cell as i64;
                    r == 0 || r == cell as i64 - 1 || v < 1.5 || v > n as f64 - 2.5
                };
                if near_edge(sx) || near_edge(sy) {
                    continue;
                }
                let expected = pattern(sx.round() as usize, sy.round() as usize);
                prop_assert_eq!(out.mask.is_shadow(x as usize, y as usize), expected, "at ({}, {})", x, y);
            }
        }
    }
}
