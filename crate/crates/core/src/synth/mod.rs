//! Procedural scenes rendered with and without cast shadows; masks come from
//! differencing the two renders.

mod generate;
mod render;
mod scene;

pub use generate::{
    generate_corpus, regenerate_from_manifest, render_sample, sample_seed, GeneratorInfo, GENERATOR_NAME,
};
pub use render::{derive_mask, render_background, render_scene, shadow_coverage};
pub use scene::{log_uniform, sample_scene, BackgroundSpec, GenConfig, Light, Occluder, SceneSpec, Shape};
