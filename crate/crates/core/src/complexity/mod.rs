//! Dataset complexity: gray-level entropy, delentropy, intrinsic
//! dimensionality, Haar subband energies and shadow statistics.

mod entropy;
mod intrinsic;
mod report;
mod shadows;
mod wavelet;

pub use entropy::{delentropy, gradient_field, shannon_entropy, to_gray};
pub use intrinsic::{embed_image, intrinsic_dim_mle, IdEstimate, DEFAULT_K, DISTANCE_JITTER, EMBED_SIDE};
pub use report::{
    complexity_report, location_heatmap, ComplexityConfig, ComplexityInput, ComplexityReport, DwtLevelSummary,
    ImageComplexity,
};
pub use shadows::{
    aggregate_shadow_statistics, component_areas, mask_record, mask_to_grid, proportion_histogram, shadow_statistics,
    Connectivity, MaskRecord, ShadowStatistics, ShadowStatsConfig,
};
pub use wavelet::{dwt_energy, haar2, haar_levels, HaarLevel, Plane, SubbandEnergy};
