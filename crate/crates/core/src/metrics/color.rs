//! sRGB (D65, 2° observer) to CIELAB.

/// Linear sRGB to XYZ (IEC 61966-2-1, D65).
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white taken as the matrix image of linear `(1, 1, 1)`, so that
/// neutral grays map to `a* = b* = 0`.
const WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

#[inline]
fn srgb_decode(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// `(L*, a*, b*)` of one 8-bit sRGB pixel.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let f = [
        lab_f(xyz[0] / WHITE[0]),
        lab_f(xyz[1] / WHITE[1]),
        lab_f(xyz[2] / WHITE[2]),
    ];
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Per-pixel CIELAB values of an image, row-major.
pub fn rgb_to_lab(image: &image::RgbImage) -> Vec<[f64; 3]> {
    image.pixels().map(|p| srgb_to_lab(p.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab([255, 255, 255]);
        assert!(
            (w[0] - 100.0).abs() <= 0.01 && w[1].abs() <= 0.01 && w[2].abs() <= 0.01,
            "{w:?}"
        );
        assert_eq!(srgb_to_lab([0, 0, 0]), [0.0, 0.0, 0.0]);
    }

    /// Hand computation: 128/255 decodes to 0.2158605 linear; Y = 0.2158605,
    /// f(Y) = 0.6000 → L* = 116·0.6000 − 16 = 53.585.
    #[test]
    fn mid_gray() {
        let lin: f64 = ((128.0 / 255.0 + 0.055) / 1.055f64).powf(2.4);
        let expected_l = 116.0 * lin.cbrt() - 16.0;
        assert!((expected_l - 53.585).abs() < 0.01);
        let g = srgb_to_lab([128, 128, 128]);
        assert!((g[0] - 53.6).abs() <= 0.1, "{g:?}");
        assert!((g[0] - expected_l).abs() < 1e-6);
        assert!(g[1].abs() < 1e-9 && g[2].abs() < 1e-9);
    }

    #[test]
    fn gray_axis_is_neutral() {
        for v in 0..=255u8 {
            let lab = srgb_to_lab([v; 3]);
            assert!(lab[1].abs() <= 0.01 && lab[2].abs() <= 0.01, "{v}: {lab:?}");
            assert!((0.0..=100.0 + 1e-9).contains(&lab[0]));
        }
    }

    #[test]
    fn saturated_primaries_match_reference_tables() {
        // Widely published D65 values for sRGB primaries.
        let r = srgb_to_lab([255, 0, 0]);
        assert!(
            (r[0] - 53.24).abs() < 0.05 && (r[1] - 80.09).abs() < 0.1 && (r[2] - 67.20).abs() < 0.1,
            "{r:?}"
        );
        let b = srgb_to_lab([0, 0, 255]);
        assert!(
            (b[0] - 32.30).abs() < 0.05 && (b[1] - 79.19).abs() < 0.1 && (b[2] + 107.86).abs() < 0.1,
            "{b:?}"
        );
    }
}
