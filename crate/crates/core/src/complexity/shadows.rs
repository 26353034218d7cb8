//! Shadow area, connected-component counts and spatial occurrence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::ShadowMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowStatsConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub min_area: usize,
    pub connectivity: Connectivity,
    pub area_bins: usize,
}

impl Default for ShadowStatsConfig {
    fn default() -> Self {
        ShadowStatsConfig {
            grid_width: 64,
            grid_height: 36,
            min_area: 5,
            connectivity: Connectivity::Eight,
            area_bins: 10,
        }
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

/// Pixel areas of the connected shadow regions, in raster order of their
/// first pixel, keeping those with at least `min_area` pixels.
pub fn component_areas(mask: &ShadowMask, connectivity: Connectivity, min_area: usize) -> Vec<usize> {
    let (w, h) = (mask.width(), mask.height());
    let mut parent: Vec<u32> = (0..(w * h) as u32).collect();
    let on = |x: usize, y: usize| mask.is_shadow(x, y);
    for y in 0..h {
        for x in 0..w {
            if !on(x, y) {
                continue;
            }
            let i = (y * w + x) as u32;
            let mut link = |j: usize| {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j as u32));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            };
            if x > 0 && on(x - 1, y) {
                link(y * w + x - 1);
            }
            if y > 0 {
                if on(x, y - 1) {
                    link((y - 1) * w + x);
                }
                if connectivity == Connectivity::Eight {
                    if x > 0 && on(x - 1, y - 1) {
                        link((y - 1) * w + x - 1);
                    }
                    if x + 1 < w && on(x + 1, y - 1) {
                        link((y - 1) * w + x + 1);
                    }
                }
            }
        }
    }
    let mut area = vec![0usize; w * h];
    let mut order = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if on(x, y) {
                let r = find(&mut parent, (y * w + x) as u32) as usize;
                if area[r] == 0 {
                    order.push(r);
                }
                area[r] += 1;
            }
        }
    }
    order.into_iter().map(|r| area[r]).filter(|&a| a >= min_area).collect()
}

/// Nearest-neighbour resize of a mask onto a `gw`×`gh` grid.
pub fn mask_to_grid(mask: &ShadowMask, gw: usize, gh: usize) -> Vec<f64> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        let y = ((gy as f64 + 0.5) * h as f64 / gh as f64).floor() as usize;
        for gx in 0..gw {
            let x = ((gx as f64 + 0.5) * w as f64 / gw as f64).floor() as usize;
            out.push(mask.get(x.min(w - 1), y.min(h - 1)));
        }
    }
    out
}

/// Per-image shadow measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub proportion: f64,
    pub count: usize,
    pub areas: Vec<usize>,
}

pub fn mask_record(mask: &ShadowMask, config: &ShadowStatsConfig) -> Result<MaskRecord> {
    mask.ensure_binary()?;
    if mask.width() == 0 || mask.height() == 0 {
        return Err(Error::Validation("empty mask".into()));
    }
    let areas = component_areas(mask, config.connectivity, config.min_area);
    Ok(MaskRecord {
        proportion: mask.shadow_pixels() as f64 / (mask.width() * mask.height()) as f64,
        count: areas.len(),
        areas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowStatistics {
    pub proportions: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_count: f64,
    pub mean_proportion: f64,
    /// Number of images per proportion bin; bins split `[0, 1]` evenly.
    pub area_histogram: Vec<usize>,
    /// Row-major `grid_height`×`grid_width` probability of shadow per cell.
    pub location_map: Vec<f64>,
    pub grid_width: usize,
    pub grid_height: usize,
    /// Areas of every counted component across the corpus.
    pub component_areas: Vec<usize>,
}

pub fn proportion_histogram(proportions: &[f64], bins: usize) -> Vec<usize> {
    let mut hist = vec![0usize; bins];
    for &p in proportions {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        hist[b] += 1;
    }
    hist
}

/// Aggregate per-image records and grid-resized masks.
pub fn aggregate_shadow_statistics(
    records: &[MaskRecord],
    grids: &[Vec<f64>],
    config: &ShadowStatsConfig,
) -> Result<ShadowStatistics> {
    if records.is_empty() {
        return Err(Error::Validation("no masks to summarize".into()));
    }
    let n = records.len() as f64;
    let proportions: Vec<f64> = records.iter().map(|r| r.proportion).collect();
    let counts: Vec<usize> = records.iter().map(|r| r.count).collect();
    let cells = config.grid_width * config.grid_height;
    let mut location_map = vec![0.0; cells];
    for g in grids {
        for (acc, v) in location_map.iter_mut().zip(g) {
            *acc += v;
        }
    }
    location_map.iter_mut().for_each(|v| *v /= grids.len().max(1) as f64);
    Ok(ShadowStatistics {
        mean_count: counts.iter().sum::<usize>() as f64 / n,
        mean_proportion: proportions.iter().sum::<f64>() / n,
        area_histogram: proportion_histogram(&proportions, config.area_bins.max(1)),
        proportions,
        counts,
        location_map,
        grid_width: config.grid_width,
        grid_height: config.grid_height,
        component_areas: records.iter().flat_map(|r| r.areas.iter().copied()).collect(),
    })
}

/// Area proportions, component counts and the location map of a mask corpus.
pub fn shadow_statistics(masks: &[ShadowMask], config: &ShadowStatsConfig) -> Result<ShadowStatistics> {
    let records = masks
        .iter()
        .map(|m| mask_record(m, config))
        .collect::<Result<Vec<_>>>()?;
    let grids: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| mask_to_grid(m, config.grid_width, config.grid_height))
        .collect();
    aggregate_shadow_statistics(&records, &grids, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Recursive-free flood fill used as an independent oracle.
    fn oracle_count(mask: &ShadowMask, eight: bool, min_area: usize) -> usize {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        let mut seen = vec![false; (w * h) as usize];
        let mut count = 0;
        for sy in 0..h {
            for sx in 0..w {
                let s = (sy * w + sx) as usize;
                if seen[s] || !mask.is_shadow(sx as usize, sy as usize) {
                    continue;
                }
                let mut stack = vec![(sx, sy)];
                seen[s] = true;
                let mut area = 0;
                while let Some((x, y)) = stack.pop() {
                    area += 1;
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                                continue;
                            }
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let j = (ny * w + nx) as usize;
                            if !seen[j] && mask.is_shadow(nx as usize, ny as usize) {
                                seen[j] = true;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
                if area >= min_area {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn examples() {
        let cfg = ShadowStatsConfig::default();
        let full = ShadowMask::filled(32, 32, 1.0);
        let r = mask_record(&full, &cfg).unwrap();
        assert_eq!((r.proportion, r.count), (1.0, 1));

        let squares = ShadowMask::from_fn(256, 256, |x, y| {
            [(10, 10), (100, 40), (200, 200)]
                .iter()
                .any(|&(sx, sy)| (sx..sx + 10).contains(&x) && (sy..sy + 10).contains(&y))
        });
        let r = mask_record(&squares, &cfg).unwrap();
        assert_eq!(r.proportion, 300.0 / 65536.0);
        assert_eq!(r.count, 3);
        assert_eq!(r.areas, vec![100, 100, 100]);

        let diagonal = ShadowMask::from_fn(20, 20, |x, y| {
            (x < 5 && y < 5) || ((5..10).contains(&x) && (5..10).contains(&y))
        });
        assert_eq!(component_areas(&diagonal, Connectivity::Eight, 5).len(), 1);
        assert_eq!(component_areas(&diagonal, Connectivity::Four, 5).len(), 2);

        let soft = ShadowMask::filled(4, 4, 0.5);
        assert!(mask_record(&soft, &cfg).is_err());
    }

    #[test]
    fn small_specks_are_ignored() {
        let m = ShadowMask::from_fn(10, 10, |x, y| (x, y) == (1, 1) || (x >= 5 && y >= 5));
        assert_eq!(component_areas(&m, Connectivity::Eight, 5), vec![25]);
        assert_eq!(component_areas(&m, Connectivity::Eight, 1), vec![1, 25]);
    }

    #[test]
    fn location_map_and_histogram() {
        let cfg = ShadowStatsConfig::default();
        let top = ShadowMask::from_fn(128, 72, |_, y| y < 36);
        let none = ShadowMask::filled(128, 72, 0.0);
        let s = shadow_statistics(&[top, none], &cfg).unwrap();
        assert_eq!(s.location_map.len(), 64 * 36);
        assert!(s.location_map.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.location_map[0], 0.5);
        assert_eq!(s.location_map[64 * 35], 0.0);
        assert_eq!(s.area_histogram.iter().sum::<usize>(), 2);
        assert_eq!(s.area_histogram[0], 1);
        assert_eq!(s.area_histogram[5], 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn counts_match_flood_fill(w in 1usize..24, h in 1usize..24, bits in prop::collection::vec(any::<bool>(), 576), min_area in 1usize..6) {
            let m = ShadowMask::from_fn(w, h, |x, y| bits[y * 24 + x]);
            prop_assert_eq!(component_areas(&m, Connectivity::Eight, min_area).len(), oracle_count(&m, true, min_area));
            prop_assert_eq!(component_areas(&m, Connectivity::Four, min_area).len(), oracle_count(&m, false, min_area));
        }
    }
}
