use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::ShadowMask;

use super::entropy::{delentropy, shannon_entropy, to_gray};
use super::intrinsic::{embed_image, intrinsic_dim_mle, IdEstimate, DEFAULT_K};
use super::shadows::{aggregate_shadow_statistics, mask_record, mask_to_grid, ShadowStatistics, ShadowStatsConfig};
use super::wavelet::{dwt_energy, SubbandEnergy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexityConfig {
    pub k: usize,
    pub levels: usize,
    pub shadows: ShadowStatsConfig,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            k: DEFAULT_K,
            levels: 3,
            shadows: ShadowStatsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageComplexity {
    pub stem: String,
    pub shannon_entropy: f64,
    pub delentropy: f64,
    pub shadow_proportion: Option<f64>,
    pub shadow_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwtLevelSummary {
    pub level: usize,
    pub mean: SubbandEnergy,
    /// Largest per-image energy of each subband at this level.
    pub max: SubbandEnergy,
    /// `mean / max` per subband (0 when the subband is empty everywhere).
    pub normalized: SubbandEnergy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub images: usize,
    pub mean_shannon_entropy: f64,
    pub mean_delentropy: f64,
    /// `None` when the corpus is too small for the neighbour count.
    pub intrinsic_dimensionality: Option<IdEstimate>,
    pub dwt: Vec<DwtLevelSummary>,
    /// Present when masks were supplied.
    pub shadows: Option<ShadowStatistics>,
    pub per_image: Vec<ImageComplexity>,
    pub config: ComplexityConfig,
}

/// Image and optional mask of one corpus entry.
pub struct ComplexityInput {
    pub image: RgbImage,
    pub mask: Option<ShadowMask>,
}

struct Measured {
    record: ImageComplexity,
    embedding: Vec<f64>,
    mask: Option<(super::shadows::MaskRecord, Vec<f64>, Vec<SubbandEnergy>)>,
}

fn measure(stem: &str, input: ComplexityInput, config: &ComplexityConfig) -> Result<Measured> {
    let gray = to_gray(&input.image);
    let mask = match &input.mask {
        Some(m) => {
            if (m.width(), m.height()) != (input.image.width() as usize, input.image.height() as usize) {
                return Err(Error::shape(format!("{stem}: mask and image sizes differ")));
            }
            let rec = mask_record(m, &config.shadows)?;
            let grid = mask_to_grid(m, config.shadows.grid_width, config.shadows.grid_height);
            Some((rec, grid, dwt_energy(m, config.levels)?))
        }
        None => None,
    };
    Ok(Measured {
        record: ImageComplexity {
            stem: stem.to_string(),
            shannon_entropy: shannon_entropy(&gray)?,
            delentropy: delentropy(&gray)?,
            shadow_proportion: mask.as_ref().map(|m| m.0.proportion),
            shadow_count: mask.as_ref().map(|m| m.0.count),
        },
        embedding: embed_image(&input.image),
        mask,
    })
}

fn summarize_dwt(per_image: &[&Vec<SubbandEnergy>], levels: usize) -> Vec<DwtLevelSummary> {
    (0..levels)
        .filter_map(|l| {
            let at: Vec<SubbandEnergy> = per_image.iter().filter_map(|e| e.get(l).copied()).collect();
            if at.is_empty() {
                return None;
            }
            let n = at.len() as f64;
            let sum = at
                .iter()
                .fold(SubbandEnergy::default(), |a, &b| a.map2(b, |x, y| x + y));
            let mean = sum.map2(sum, |x, _| x / n);
            let max = at.iter().fold(SubbandEnergy::default(), |a, &b| a.map2(b, f64::max));
            let normalized = mean.map2(max, |m, x| if x > 0.0 { m / x } else { 0.0 });
            Some(DwtLevelSummary {
                level: l + 1,
                mean,
                max,
                normalized,
            })
        })
        .collect()
}

/// Measure every stem (loaded on demand through `load`) and aggregate.
pub fn complexity_report<F>(stems: &[String], load: F, config: &ComplexityConfig) -> Result<ComplexityReport>
where
    F: Fn(&str) -> Result<ComplexityInput> + Sync,
{
    if stems.is_empty() {
        return Err(Error::Validation("complexity report of an empty corpus".into()));
    }
    let measured: Vec<Measured> = stems
        .par_iter()
        .map(|s| measure(s, load(s)?, config))
        .collect::<Result<_>>()?;
    let n = measured.len() as f64;
    let mean_shannon_entropy = measured.iter().map(|m| m.record.shannon_entropy).sum::<f64>() / n;
    let mean_delentropy = measured.iter().map(|m| m.record.delentropy).sum::<f64>() / n;

    let embeddings: Vec<Vec<f64>> = measured.iter().map(|m| m.embedding.clone()).collect();
    let intrinsic_dimensionality = if embeddings.len() >= config.k + 2 {
        match intrinsic_dim_mle(&embeddings, config.k) {
            Ok(id) => Some(id),
            Err(Error::Validation(msg)) => {
                log::warn!("intrinsic dimensionality undefined: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        log::warn!(
            "{} images are too few for intrinsic dimensionality with k = {}",
            embeddings.len(),
            config.k
        );
        None
    };

    let with_mask: Vec<_> = measured.iter().filter_map(|m| m.mask.as_ref()).collect();
    let (shadows, dwt) = if with_mask.is_empty() {
        (None, Vec::new())
    } else {
        if with_mask.len() < measured.len() {
            log::warn!("{} image(s) have no mask", measured.len() - with_mask.len());
        }
        let records: Vec<_> = with_mask.iter().map(|m| m.0.clone()).collect();
        let grids: Vec<_> = with_mask.iter().map(|m| m.1.clone()).collect();
        let energies: Vec<_> = with_mask.iter().map(|m| &m.2).collect();
        (
            Some(aggregate_shadow_statistics(&records, &grids, &config.shadows)?),
            summarize_dwt(&energies, config.levels),
        )
    };

    Ok(ComplexityReport {
        images: measured.len(),
        mean_shannon_entropy,
        mean_delentropy,
        intrinsic_dimensionality,
        dwt,
        shadows,
        per_image: measured.into_iter().map(|m| m.record).collect(),
        config: config.clone(),
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Location map as a blue (rare) to white (frequent) heatmap, scaled by its maximum.
pub fn location_heatmap(stats: &ShadowStatistics, scale: u32) -> RgbImage {
    let max = stats.location_map.iter().copied().fold(0.0, f64::max);
    let (w, h) = (stats.grid_width as u32, stats.grid_height as u32);
    RgbImage::from_fn(w * scale, h * scale, |x, y| {
        let v = stats.location_map[(y / scale * w + x / scale) as usize];
        let t = if max > 0.0 { v / max } else { 0.0 };
        let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        Rgb([mix(20.0, 255.0), mix(40.0, 255.0), mix(160.0, 255.0)])
    })
}

impl ComplexityReport {
    /// Write `report.json`, CSV arrays and optionally `location_map.png` into `dir`.
    pub fn write(&self, dir: &Path, heatmap: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, bytes)?;
            written.push(p);
            Ok(())
        };
        put("report.json", &serde_json::to_vec_pretty(self)?)?;

        let mut csv = String::from("stem,shannon_entropy,delentropy,shadow_proportion,shadow_count\n");
        for r in &self.per_image {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.stem,
                r.shannon_entropy,
                r.delentropy,
                opt(r.shadow_proportion),
                opt(r.shadow_count)
            );
        }
        put("per_image.csv", csv.as_bytes())?;

        let mut csv = String::from("level,band,mean,max,normalized\n");
        for l in &self.dwt {
            for (band, m, x, n) in [
                ("LL", l.mean.ll, l.max.ll, l.normalized.ll),
                ("LH", l.mean.lh, l.max.lh, l.normalized.lh),
                ("HL", l.mean.hl, l.max.hl, l.normalized.hl),
                ("HH", l.mean.hh, l.max.hh, l.normalized.hh),
            ] {
                let _ = writeln!(csv, "{},{band},{m},{x},{n}", l.level);
            }
        }
        put("dwt.csv", csv.as_bytes())?;

        if let Some(s) = &self.shadows {
            let bins = s.area_histogram.len();
            let mut csv = String::from("bin_start,bin_end,images\n");
            for (i, c) in s.area_histogram.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{c}", i as f64 / bins as f64, (i + 1) as f64 / bins as f64);
            }
            put("area_histogram.csv", csv.as_bytes())?;

            let mut csv = String::new();
            for row in s.location_map.chunks(s.grid_width) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(csv, "{}", cells.join(","));
            }
            put("location_map.csv", csv.as_bytes())?;

            let mut csv = String::from("area\n");
            for a in &s.component_areas {
                let _ = writeln!(csv, "{a}");
            }
            put("component_areas.csv", csv.as_bytes())?;

            if heatmap {
                let p = dir.join("location_map.png");
                location_heatmap(s, 8).save(&p).map_err(|source| Error::Image {
                    path: p.clone(),
                    source,
                })?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn input(seed: u64) -> ComplexityInput {
        let mut rng = stream_rng(seed, "img", &[]);
        let image = RgbImage::from_fn(24, 20, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let mask = ShadowMask::from_fn(24, 20, |x, y| x > 3 && x < 12 && y > (seed as usize % 5));
        ComplexityInput {
            image,
            mask: Some(mask),
        }
    }

    #[test]
    fn identical_images_leave_the_dimension_undefined() {
        let cfg = ComplexityConfig {
            k: 2,
            ..Default::default()
        };
        let stems: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let r = complexity_report(
            &stems,
            |_| {
                Ok(ComplexityInput {
                    image: RgbImage::from_pixel(8, 8, Rgb([40, 50, 60])),
                    mask: None,
                })
            },
            &cfg,
        )
        .unwrap();
        assert!(r.intrinsic_dimensionality.is_none());
        assert_eq!(r.images, 5);
    }

    #[test]
    fn constant_image_with_full_mask() {
        let cfg = ComplexityConfig::default();
        let r = complexity_report(
            &["a".to_string()],
            |_| {
                Ok(ComplexityInput {
                    image: RgbImage::from_pixel(16, 16, Rgb([90, 90, 90])),
                    mask: Some(ShadowMask::filled(16, 16, 1.0)),
                })
            },
            &cfg,
        )
        .unwrap();
        assert_eq!((r.mean_shannon_entropy, r.mean_delentropy), (0.0, 0.0));
        let s = r.shadows.as_ref().unwrap();
        assert_eq!((s.proportions[0], s.counts[0]), (1.0, 1));
        assert!(r.intrinsic_dimensionality.is_none());
        assert_eq!(r.dwt.len(), 3);
        assert!(r
            .dwt
            .iter()
            .all(|l| l.mean.lh == 0.0 && l.mean.hl == 0.0 && l.mean.hh == 0.0));
    }

    #[test]
    fn means_agree_with_records_and_files_are_written() {
        let cfg = ComplexityConfig {
            k: 3,
            ..ComplexityConfig::default()
        };
        let stems: Vec<String> = (0..8).map(|i| format!("{i:05}")).collect();
        let r = complexity_report(&stems, |s| Ok(input(s.parse().unwrap())), &cfg).unwrap();
        let n = r.per_image.len() as f64;
        let mean = |f: fn(&ImageComplexity) -> f64| r.per_image.iter().map(f).sum::<f64>() / n;
        assert!((mean(|p| p.shannon_entropy) - r.mean_shannon_entropy).abs() < 1e-12);
        assert!((mean(|p| p.delentropy) - r.mean_delentropy).abs() < 1e-12);
        let s = r.shadows.as_ref().unwrap();
        assert_eq!(s.area_histogram.iter().sum::<usize>(), 8);
        assert!(s.location_map.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.intrinsic_dimensionality.is_some());
        for l in &r.dwt {
            assert!(l.normalized.ll <= 1.0 && l.normalized.hh <= 1.0);
        }

        let dir = tempfile::tempdir().unwrap();
        let files = r.write(dir.path(), true).unwrap();
        assert_eq!(files.len(), 7);
        let back: ComplexityReport =
            serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.per_image, r.per_image);
        let csv = fs::read_to_string(dir.path().join("location_map.csv")).unwrap();
        assert_eq!(csv.lines().count(), s.grid_height);
        assert!(image::open(dir.path().join("location_map.png")).is_ok());
    }

    #[test]
    fn empty_corpus_and_bad_masks_fail() {
        let cfg = ComplexityConfig::default();
        assert!(complexity_report(&[], |_| Ok(input(0)), &cfg).is_err());
        let bad = |_: &str| {
            Ok(ComplexityInput {
                image: RgbImage::new(8, 8),
                mask: Some(ShadowMask::filled(8, 7, 0.0)),
            })
        };
        assert!(complexity_report(&["x".into()], bad, &cfg).is_err());
    }
}
