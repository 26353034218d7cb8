//! Maximum-likelihood intrinsic dimension from k-nearest-neighbour distances.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::entropy::to_gray;

pub const EMBED_SIDE: u32 = 32;
pub const DEFAULT_K: usize = 20;
/// Replacement for zero neighbour distances (exact duplicates).
pub const DISTANCE_JITTER: f64 = 1e-12;

/// Grayscale, resized to 32×32, flattened and scaled to `[0, 1]`.
pub fn embed_image(img: &RgbImage) -> Vec<f64> {
    let small = imageops::resize(&to_gray(img), EMBED_SIDE, EMBED_SIDE, FilterType::Triangle);
    small.as_raw().iter().map(|&v| v as f64 / 255.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub estimate: f64,
    pub k: usize,
    /// Per-point `m_k`; `None` where the point was excluded.
    pub per_point: Vec<Option<f64>>,
    /// Points whose first `k - 1` neighbour distances contained zeros.
    pub jittered: usize,
    /// Points with zero distance to their k-th neighbour.
    pub excluded: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` smallest distances from point `i` to the others, ascending.
fn knn_distances(points: &[Vec<f64>], i: usize, k: usize) -> Vec<f64> {
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| sq_dist(&points[i], p))
        .collect();
    d.select_nth_unstable_by(k - 1, f64::total_cmp);
    d.truncate(k);
    d.sort_by(f64::total_cmp);
    d.into_iter().map(f64::sqrt).collect()
}

/// `m_k(x) = [ (1/(k-1)) Σ_{j<k} log(T_k / T_j) ]⁻¹`, averaged over points.
pub fn intrinsic_dim_mle(points: &[Vec<f64>], k: usize) -> Result<IdEstimate> {
    if k < 2 {
        return Err(Error::config(format!("k = {k}, need at least 2")));
    }
    if points.len() < k + 2 {
        return Err(Error::Validation(format!(
            "{} points are too few for k = {k} (need at least {})",
            points.len(),
            k + 2
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("points have different dimensions"));
    }
    let results: Vec<(Option<f64>, bool)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let t = knn_distances(points, i, k);
            let tk = t[k - 1];
            if tk <= 0.0 {
                return (None, false);
            }
            let mut jittered = false;
            let s: f64 = t[..k - 1]
                .iter()
                .map(|&tj| {
                    let tj = if tj > 0.0 {
                        tj
                    } else {
                        jittered = true;
                        DISTANCE_JITTER
                    };
                    (tk / tj).ln()
                })
                .sum();
            if s <= 0.0 {
                return (None, jittered);
            }
            (Some((k - 1) as f64 / s), jittered)
        })
        .collect();
    let jittered = results.iter().filter(|r| r.1).count();
    let excluded = results.iter().filter(|r| r.0.is_none()).count();
    if jittered > 0 {
        log::warn!("{jittered} point(s) have duplicate neighbours; zero distances set to {DISTANCE_JITTER:e}");
    }
    if excluded > 0 {
        log::warn!("{excluded} point(s) excluded: all of their {k} nearest neighbours coincide with them");
    }
    let valid: Vec<f64> = results.iter().filter_map(|r| r.0).collect();
    if valid.is_empty() {
        return Err(Error::Validation("every point coincides with its neighbours".into()));
    }
    Ok(IdEstimate {
        estimate: valid.iter().sum::<f64>() / valid.len() as f64,
        k,
        per_point: results.into_iter().map(|r| r.0).collect(),
        jittered,
        excluded,
    })
}
