//! Region-aware image restoration metrics: PSNR in RGB, RMSE in CIELAB.

mod color;
mod evaluate;
mod region;

pub use color::{rgb_to_lab, srgb_to_lab};
pub use evaluate::{evaluate_corpus, summarize, CorpusEvaluation, EvalCase, ImageEntry, MeanReport};
pub use region::{
    lab_error, lab_metrics, mse, psnr, psnr_from_mse, region_squared_error, rmse_lab, rmse_lab_values, LabError,
    Region, RegionReport, PSNR_CAP_DB,
};
