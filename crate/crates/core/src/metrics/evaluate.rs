//! Corpus-level aggregation of [`RegionReport`]s.

use std::fmt::Write as _;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sample::ShadowTriplet;

use super::region::RegionReport;

/// Metrics of one image: the method's output and the unprocessed shadow input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageEntry {
    pub stem: String,
    pub prediction: Option<RegionReport>,
    pub input: Option<RegionReport>,
    pub error: Option<String>,
}

/// Per-image means. Shadow / non-shadow columns average only over images where
/// that region is non-empty; `images_s` / `images_n` say how many.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub psnr_s: Option<f64>,
    pub psnr_n: Option<f64>,
    pub psnr_a: Option<f64>,
    pub rmse_s: Option<f64>,
    pub rmse_n: Option<f64>,
    pub rmse_a: Option<f64>,
    pub mae_s: Option<f64>,
    pub mae_n: Option<f64>,
    pub mae_a: Option<f64>,
    pub images: usize,
    pub images_s: usize,
    pub images_n: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    ((n > 0).then(|| sum / n as f64), n)
}

impl MeanReport {
    pub fn from_reports<'a>(reports: impl Iterator<Item = &'a RegionReport> + Clone) -> Self {
        let col = |f: fn(&RegionReport) -> Option<f64>| mean(reports.clone().map(f)).0;
        let (psnr_s, images_s) = mean(reports.clone().map(|r| r.psnr_s));
        let (psnr_n, images_n) = mean(reports.clone().map(|r| r.psnr_n));
        let (psnr_a, images) = mean(reports.clone().map(|r| Some(r.psnr_a)));
        MeanReport {
            psnr_s,
            psnr_n,
            psnr_a,
            rmse_s: col(|r| r.rmse_s),
            rmse_n: col(|r| r.rmse_n),
            rmse_a: col(|r| Some(r.rmse_a)),
            mae_s: col(|r| r.mae_s),
            mae_n: col(|r| r.mae_n),
            mae_a: col(|r| Some(r.mae_a)),
            images,
            images_s,
            images_n,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusEvaluation {
    pub method: String,
    pub mean: MeanReport,
    /// The shadow image scored against its own ground truth.
    pub input_baseline: MeanReport,
    pub images: Vec<ImageEntry>,
    /// Stems left out of the means because they failed to load or score.
    pub excluded: Vec<String>,
}

/// One evaluation case: a prediction and the triplet it is scored against.
pub struct EvalCase {
    pub prediction: RgbImage,
    pub triplet: ShadowTriplet,
}

/// Scores every stem in parallel; `fetch` supplies the prediction and triplet.
///
/// Failures become per-image error entries and are excluded from the means.
/// Results keep the order of `stems`.
pub fn evaluate_corpus<F>(method: &str, stems: &[String], fetch: F) -> CorpusEvaluation
where
    F: Fn(&str) -> Result<EvalCase> + Sync,
{
    let images: Vec<ImageEntry> = stems
        .par_iter()
        .map(|stem| {
            let scored = fetch(stem).and_then(|case| {
                let t = &case.triplet;
                let pred = RegionReport::compute(&case.prediction, &t.shadow_free, &t.mask)?;
                let input = RegionReport::compute(&t.shadow, &t.shadow_free, &t.mask)?;
                Ok((pred, input))
            });
            match scored {
                Ok((p, i)) => ImageEntry {
                    stem: stem.clone(),
                    prediction: Some(p),
                    input: Some(i),
                    error: None,
                },
                Err(e) => ImageEntry {
                    stem: stem.clone(),
                    prediction: None,
                    input: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    summarize(method, images)
}

pub fn summarize(method: &str, images: Vec<ImageEntry>) -> CorpusEvaluation {
    let ok = images.iter().filter(|e| e.prediction.is_some() && e.input.is_some());
    let mean = MeanReport::from_reports(ok.clone().filter_map(|e| e.prediction.as_ref()));
    let input_baseline = MeanReport::from_reports(ok.filter_map(|e| e.input.as_ref()));
    let excluded = images
        .iter()
        .filter(|e| e.prediction.is_none() || e.input.is_none())
        .map(|e| e.stem.clone())
        .collect();
    CorpusEvaluation {
        method: method.to_string(),
        mean,
        input_baseline,
        images,
        excluded,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl CorpusEvaluation {
    /// Aligned text table: one row for the input image, one for the method.
    /// With `mae_lab` the LAB columns report mean absolute error.
    pub fn table(&self, mae_lab: bool) -> String {
        let lab = if mae_lab { "MAE" } else { "RMSE" };
        let header = [
            "Method".to_string(),
            "PSNR S".into(),
            "PSNR N".into(),
            "PSNR A".into(),
            format!("{lab} S"),
            format!("{lab} N"),
            format!("{lab} A"),
        ];
        let row = |name: &str, m: &MeanReport| {
            let (s, n, a) = if mae_lab {
                (m.mae_s, m.mae_n, m.mae_a)
            } else {
                (m.rmse_s, m.rmse_n, m.rmse_a)
            };
            vec![
                name.to_string(),
                cell(m.psnr_s),
                cell(m.psnr_n),
                cell(m.psnr_a),
                cell(s),
                cell(n),
                cell(a),
            ]
        };
        let rows = [
            header.to_vec(),
            row("Input Image", &self.input_baseline),
            row(&self.method, &self.mean),
        ];
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(
                out,
                "excluded {} image(s): {}",
                self.excluded.len(),
                self.excluded.join(", ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sample::ShadowMask;
    use image::Rgb;

    fn triplet(shadow: u8, free: u8, shadow_cols: u32) -> ShadowTriplet {
        ShadowTriplet::new(
            RgbImage::from_fn(4, 2, |x, _| Rgb([if x < shadow_cols { shadow } else { free }; 3])),
            RgbImage::from_pixel(4, 2, Rgb([free; 3])),
            ShadowMask::from_fn(4, 2, |x, _| (x as u32) < shadow_cols),
        )
        .unwrap()
    }

    fn stems(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:05}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let ev = evaluate_corpus("gt", &stems(3), |_| {
            let t = triplet(60, 120, 2);
            Ok(EvalCase {
                prediction: t.shadow_free.clone(),
                triplet: t,
            })
        });
        let m = &ev.mean;
        assert_eq!((m.psnr_s, m.psnr_n, m.psnr_a), (Some(100.0), Some(100.0), Some(100.0)));
        assert_eq!((m.rmse_s, m.rmse_n, m.rmse_a), (Some(0.0), Some(0.0), Some(0.0)));
        assert!(ev.excluded.is_empty());
    }

    #[test]
    fn predicting_the_input_reproduces_the_baseline() {
        let ev = evaluate_corpus("identity", &stems(4), |s| {
            let k: u8 = s.parse().unwrap();
            let t = triplet(50 + 10 * k, 140, 1 + k as u32 % 3);
            Ok(EvalCase {
                prediction: t.shadow.clone(),
                triplet: t,
            })
        });
        assert_eq!(ev.mean, ev.input_baseline);
    }

    #[test]
    fn two_image_corpus_means() {
        // Image 0: two shadow columns off by 16; image 1: one column off by 32.
        let cases = [(triplet(104, 120, 2), 16.0f64, 4usize), (triplet(88, 120, 1), 32.0, 2)];
        let ev = evaluate_corpus("pred", &stems(2), |s| {
            let t = cases[s.parse::<usize>().unwrap()].0.clone();
            Ok(EvalCase {
                prediction: t.shadow.clone(),
                triplet: t,
            })
        });
        let psnr = |mse: f64| 10.0 * (65025.0 / mse).log10();
        let s_mean = (psnr(16.0f64.powi(2)) + psnr(32.0f64.powi(2))) / 2.0;
        let a_mean = cases.iter().map(|(_, d, n)| psnr(d * d * *n as f64 / 8.0)).sum::<f64>() / 2.0;
        assert!((ev.mean.psnr_s.unwrap() - s_mean).abs() < 1e-12);
        assert!((ev.mean.psnr_a.unwrap() - a_mean).abs() < 1e-12);
        assert_eq!(ev.mean.psnr_n, Some(100.0));
        let lab = |v: u8| crate::metrics::srgb_to_lab([v; 3]);
        let rmse = |a: [f64; 3], b: [f64; 3]| ((0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>() / 3.0).sqrt();
        let r_s = (rmse(lab(104), lab(120)) + rmse(lab(88), lab(120))) / 2.0;
        assert!((ev.mean.rmse_s.unwrap() - r_s).abs() < 1e-9);
        assert_eq!((ev.mean.images, ev.mean.images_s, ev.mean.images_n), (2, 2, 2));
    }

    #[test]
    fn failures_are_reported_and_excluded() {
        let ev = evaluate_corpus("pred", &stems(3), |s| {
            if s == "00001" {
                return Err(Error::MissingFile("mask/00001.png".into()));
            }
            let t = triplet(60, 120, 2);
            Ok(EvalCase {
                prediction: t.shadow_free.clone(),
                triplet: t,
            })
        });
        assert_eq!(ev.excluded, vec!["00001".to_string()]);
        assert_eq!(ev.mean.images, 2);
        assert!(ev.images[1].error.as_deref().unwrap().contains("mask/00001.png"));
        let table = ev.table(false);
        assert!(table.contains("Input Image") && table.contains("RMSE S") && table.contains("excluded 1"));
        assert!(ev.table(true).contains("MAE A"));
    }
}
