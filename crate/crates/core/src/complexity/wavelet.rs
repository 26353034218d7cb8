//! Orthonormal 2D Haar decomposition and subband energies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::ShadowMask;

/// A row-major plane of coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Extend odd dimensions by one mirrored row / column.
    fn pad_even(&self) -> Plane {
        let (w, h) = (self.width + self.width % 2, self.height + self.height % 2);
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                data.push(self.data[sy * self.width + x.min(self.width - 1)]);
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

/// One level of the transform.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarLevel {
    pub ll: Plane,
    pub lh: Plane,
    pub hl: Plane,
    pub hh: Plane,
}

/// Single-level 2D Haar transform of 2×2 blocks `[a b; c d]`:
/// LL = (a+b+c+d)/2, LH = (a+b-c-d)/2, HL = (a-b+c-d)/2, HH = (a-b-c+d)/2.
pub fn haar2(input: &Plane) -> HaarLevel {
    let p = input.pad_even();
    let (w, h) = (p.width / 2, p.height / 2);
    let mut bands = [(); 4].map(|_| Vec::with_capacity(w * h));
    for y in 0..h {
        for x in 0..w {
            let at = |dx: usize, dy: usize| p.data[(2 * y + dy) * p.width + 2 * x + dx];
            let (a, b, c, d) = (at(0, 0), at(1, 0), at(0, 1), at(1, 1));
            bands[0].push((a + b + c + d) / 2.0);
            bands[1].push((a + b - c - d) / 2.0);
            bands[2].push((a - b + c - d) / 2.0);
            bands[3].push((a - b - c + d) / 2.0);
        }
    }
    let [ll, lh, hl, hh] = bands.map(|data| Plane {
        width: w,
        height: h,
        data,
    });
    HaarLevel { ll, lh, hl, hh }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubbandEnergy {
    pub ll: f64,
    pub lh: f64,
    pub hl: f64,
    pub hh: f64,
}

impl SubbandEnergy {
    pub fn total(&self) -> f64 {
        self.ll + self.lh + self.hl + self.hh
    }

    pub fn map2(self, o: SubbandEnergy, f: impl Fn(f64, f64) -> f64) -> SubbandEnergy {
        SubbandEnergy {
            ll: f(self.ll, o.ll),
            lh: f(self.lh, o.lh),
            hl: f(self.hl, o.hl),
            hh: f(self.hh, o.hh),
        }
    }
}

/// Multi-level decomposition of `plane`; level `l` transforms the LL band of level `l - 1`.
pub fn haar_levels(plane: &Plane, levels: usize) -> Vec<HaarLevel> {
    let mut out: Vec<HaarLevel> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let src = out.last().map_or(plane, |l| &l.ll);
        if src.width == 0 || src.height == 0 {
            break;
        }
        out.push(haar2(src));
    }
    out
}

/// Subband energies (sums of squared coefficients) at each level. Odd
/// dimensions are extended symmetrically before each level.
pub fn dwt_energy(mask: &ShadowMask, levels: usize) -> Result<Vec<SubbandEnergy>> {
    if mask.width() == 0 || mask.height() == 0 {
        return Err(Error::Validation("wavelet energy of an empty mask".into()));
    }
    if levels == 0 {
        return Err(Error::config("at least one decomposition level is required"));
    }
    let plane = Plane {
        width: mask.width(),
        height: mask.height(),
        data: mask.values().to_vec(),
    };
    Ok(haar_levels(&plane, levels)
        .iter()
        .map(|l| SubbandEnergy {
            ll: l.ll.energy(),
            lh: l.lh.energy(),
            hl: l.hl.energy(),
            hh: l.hh.energy(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_mask_has_no_detail() {
        let m = ShadowMask::filled(16, 8, 1.0);
        let e = dwt_energy(&m, 3).unwrap();
        assert_eq!(e.len(), 3);
        for l in &e {
            assert_eq!((l.lh, l.hl, l.hh), (0.0, 0.0, 0.0));
            assert!((l.ll - 128.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkerboard_goes_to_diagonal() {
        let m = ShadowMask::from_fn(8, 8, |x, y| (x + y) % 2 == 0);
        let e = dwt_energy(&m, 1).unwrap()[0];
        assert_eq!((e.lh, e.hl), (0.0, 0.0));
        // Each 2×2 block [1 0; 0 1] gives LL = 1 and HH = 1.
        assert!((e.hh - 16.0).abs() < 1e-12 && (e.ll - 16.0).abs() < 1e-12);
    }

    #[test]
    fn odd_dimensions_are_padded() {
        let m = ShadowMask::from_fn(5, 3, |x, _| x >= 2);
        let e = dwt_energy(&m, 3).unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.iter().all(|l| l.total().is_finite()));
        assert!(dwt_energy(&ShadowMask::filled(0, 0, 0.0), 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parseval(wb in 1usize..6, hb in 1usize..6, bits in prop::collection::vec(any::<bool>(), 36 * 64)) {
            let (w, h) = (8 * wb, 8 * hb);
            let m = ShadowMask::from_fn(w, h, |x, y| bits[(y * w + x) % bits.len()]);
            let input: f64 = m.values().iter().map(|v| v * v).sum();
            let mut prev = input;
            for l in dwt_energy(&m, 3).unwrap() {
                prop_assert!((l.total() - prev).abs() <= 1e-9 * prev.max(1.0));
                prev = l.ll;
            }
        }
    }
}
