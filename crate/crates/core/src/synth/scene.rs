use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-octave value noise modulating a horizontal two-colour gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub left: [u8; 3],
    pub right: [u8; 3],
    pub octaves: u32,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub base_period: f64,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Noise contribution in `[0, 1]`; `0` gives a clean gradient.
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disc,
    /// Vertices on the unit circle in counter-clockwise order, scaled by the
    /// occluder radius.
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    /// Small discs `(dx, dy, r)` in units of the occluder radius.
    Foliage {
        discs: Vec<[f64; 3]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub shape: Shape,
    pub anchor: [f64; 2],
    /// Diameter in pixels.
    pub size: f64,
    pub albedo: [u8; 3],
    /// Whether the occluder itself appears in frame. Out-of-frame occluders
    /// (overhanging foliage, off-screen objects) only cast shadows.
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: [f64; 2],
    /// Shadow stretch along `direction`, `>= 1`.
    pub elongation: f64,
    /// Fraction of light left in full shadow, in `(0, 1)`.
    pub attenuation: f64,
    pub penumbra_radius: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: BackgroundSpec,
    pub occluders: Vec<Occluder>,
    pub light: Light,
    /// Seeds the background noise lattice.
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("canvas must be non-empty"));
        }
        let l = &self.light;
        if !(l.attenuation > 0.0 && l.attenuation < 1.0) {
            return Err(Error::config(format!("attenuation {} outside (0, 1)", l.attenuation)));
        }
        let norm = l.direction[0].hypot(l.direction[1]);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("light direction has norm {norm}")));
        }
        if !(l.elongation >= 1.0 && l.elongation.is_finite()) {
            return Err(Error::config(format!("elongation {} must be >= 1", l.elongation)));
        }
        if let Some(o) = self.occluders.iter().find(|o| !(o.size > 0.0 && o.size.is_finite())) {
            return Err(Error::config(format!("occluder size {} must be positive", o.size)));
        }
        Ok(())
    }
}

/// Distribution of scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub min_occluders: usize,
    pub max_occluders: usize,
    /// Occluder diameters are log-uniform over this range.
    pub size_range: [f64; 2],
    pub elongation_range: [f64; 2],
    pub attenuation_range: [f64; 2],
    pub max_penumbra: usize,
    /// Chance that an occluder is drawn in frame.
    pub visible_probability: f64,
    /// Occluders larger than this are never drawn in frame.
    pub max_visible_size: f64,
    pub noise_octaves: u32,
    /// Mask threshold on the per-channel absolute difference.
    pub tau: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 256,
            height: 256,
            min_occluders: 6,
            max_occluders: 20,
            size_range: [2.0, 200.0],
            elongation_range: [1.0, 2.0],
            attenuation_range: [0.3, 0.7],
            max_penumbra: 2,
            visible_probability: 0.3,
            max_visible_size: 48.0,
            noise_octaves: 4,
            tau: 8,
        }
    }
}

impl GenConfig {
    /// 1280×720 canvas with sizes scaled by the shorter side.
    pub fn full_resolution() -> Self {
        let base = GenConfig::default();
        let k = 720.0 / 256.0;
        GenConfig {
            width: 1280,
            height: 720,
            size_range: [base.size_range[0] * k, base.size_range[1] * k],
            max_visible_size: base.max_visible_size * k,
            max_penumbra: 4,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("canvas must be non-empty"));
        }
        if self.min_occluders > self.max_occluders {
            return Err(Error::config("min_occluders exceeds max_occluders"));
        }
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!(
                "size range [{lo}, {hi}] must be positive with min <= max"
            )));
        }
        let [e0, e1] = self.elongation_range;
        if !(e0 >= 1.0 && e0 <= e1 && e1.is_finite()) {
            return Err(Error::config("elongation range must satisfy 1 <= min <= max"));
        }
        let [a0, a1] = self.attenuation_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 < 1.0) {
            return Err(Error::config("attenuation range must lie inside (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.visible_probability) {
            return Err(Error::config("visible_probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Log-uniform draw over `[lo, hi]`.
pub fn log_uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    uniform(rng, [lo.ln(), hi.ln()]).exp()
}

fn bright_color(rng: &mut impl Rng) -> [u8; 3] {
    [0; 3].map(|_: u8| rng.random_range(110..=245))
}

fn sample_shape(rng: &mut impl Rng) -> Shape {
    match rng.random_range(0..3) {
        0 => Shape::Disc,
        1 => {
            let n = rng.random_range(3..=7);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            Shape::Polygon {
                vertices: angles.iter().map(|a| [a.cos(), a.sin()]).collect(),
            }
        }
        _ => {
            let n = rng.random_range(3..=9);
            let discs = (0..n)
                .map(|_| {
                    let r = rng.random_range(0.15..0.4);
                    let reach = 1.0 - r;
                    let (ang, dist) = (
                        rng.random_range(0.0..std::f64::consts::TAU),
                        reach * rng.random::<f64>().sqrt(),
                    );
                    [dist * ang.cos(), dist * ang.sin(), r]
                })
                .collect();
            Shape::Foliage { discs }
        }
    }
}

/// Draw a scene from `config`.
pub fn sample_scene(config: &GenConfig, rng: &mut impl Rng) -> SceneSpec {
    let (w, h) = (config.width as f64, config.height as f64);
    let background = BackgroundSpec {
        left: bright_color(rng),
        right: bright_color(rng),
        octaves: config.noise_octaves,
        base_period: rng.random_range(0.25..0.6) * w.max(h),
        persistence: rng.random_range(0.4..0.6),
        contrast: rng.random_range(0.1..0.35),
    };
    let n = rng.random_range(config.min_occluders..=config.max_occluders);
    let occluders = (0..n)
        .map(|_| {
            let shape = sample_shape(rng);
            let size = log_uniform(rng, config.size_range);
            let anchor = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            let visible = size <= config.max_visible_size && rng.random_bool(config.visible_probability);
            Occluder {
                shape,
                anchor,
                size,
                albedo: [0; 3].map(|_: u8| rng.random_range(20..=230)),
                visible,
            }
        })
        .collect();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let light = Light {
        direction: [angle.cos(), angle.sin()],
        elongation: uniform(rng, config.elongation_range),
        attenuation: uniform(rng, config.attenuation_range),
        penumbra_radius: rng.random_range(0..=config.max_penumbra),
    };
    SceneSpec {
        width: config.width,
        height: config.height,
        background,
        occluders,
        light,
        seed: rng.random(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    #[test]
    fn deterministic_and_valid() {
        let cfg = GenConfig::default();
        let a = sample_scene(&cfg, &mut stream_rng(4, "scene", &[]));
        let b = sample_scene(&cfg, &mut stream_rng(4, "scene", &[]));
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!((cfg.min_occluders..=cfg.max_occluders).contains(&a.occluders.len()));
    }

    #[test]
    fn fixed_occluder_count() {
        let cfg = GenConfig {
            min_occluders: 3,
            max_occluders: 3,
            ..GenConfig::default()
        };
        for s in 0..20 {
            assert_eq!(sample_scene(&cfg, &mut stream_rng(s, "scene", &[])).occluders.len(), 3);
        }
    }

    #[test]
    fn sizes_span_two_decades() {
        let cfg = GenConfig::default();
        let mut rng = stream_rng(9, "sizes", &[]);
        let sizes: Vec<f64> = (0..10_000).map(|_| log_uniform(&mut rng, cfg.size_range)).collect();
        let (lo, hi) = sizes.iter().fold((f64::MAX, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!((hi / lo).log10() >= 2.0 - 0.01, "{lo} .. {hi}");
        assert!(sizes.iter().all(|s| (2.0..=200.0).contains(s)));
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig::default().validate().is_ok());
        assert!(GenConfig::full_resolution().validate().is_ok());
        let bad = GenConfig {
            attenuation_range: [0.5, 1.0],
            ..GenConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
