use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{stem_name, CorpusLayout, CorpusManifest};
use crate::error::{Error, Result};
use crate::sample::ShadowTriplet;
use crate::seed::derive_seed;

use super::render::{derive_mask, render_scene};
use super::scene::{sample_scene, GenConfig, SceneSpec};

pub const GENERATOR_NAME: &str = "shadeforge-synth";

/// Generator block of a synthetic corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub gen_config: GenConfig,
    pub seed: u64,
    pub tau: u8,
    /// Per-sample seeds, aligned with the manifest stems.
    pub sub_seeds: Vec<u64>,
}

pub fn sample_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "sample", &[index as u64])
}

/// Scene and triplet for one sample seed.
pub fn render_sample(config: &GenConfig, sub_seed: u64) -> Result<(SceneSpec, ShadowTriplet)> {
    let spec = sample_scene(config, &mut ChaCha8Rng::seed_from_u64(sub_seed));
    let shadow = render_scene(&spec, true);
    let shadow_free = render_scene(&spec, false);
    let mask = derive_mask(&shadow, &shadow_free, config.tau)?;
    Ok((spec, ShadowTriplet::new(shadow, shadow_free, mask)?))
}

fn write_samples(layout: &CorpusLayout, config: &GenConfig, stems: &[String], seeds: &[u64]) -> Result<()> {
    stems.par_iter().zip(seeds).try_for_each(|(stem, &s)| {
        let (_, t) = render_sample(config, s)?;
        layout.write_triplet(stem, &t)
    })
}

/// Render `n` triplets into `out_dir` and write the manifest. Sample `i` is a
/// pure function of `(seed, i)`.
pub fn generate_corpus(n: usize, config: &GenConfig, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    if n == 0 {
        return Err(Error::config("corpus size must be at least 1"));
    }
    config.validate()?;
    let layout = CorpusLayout::create(out_dir)?;
    let stems: Vec<String> = (0..n).map(stem_name).collect();
    let seeds: Vec<u64> = (0..n).map(|i| sample_seed(seed, i)).collect();
    write_samples(&layout, config, &stems, &seeds)?;
    let info = GeneratorInfo {
        name: GENERATOR_NAME.into(),
        gen_config: config.clone(),
        seed,
        tau: config.tau,
        sub_seeds: seeds,
    };
    let manifest = CorpusManifest::new(stems, Some(serde_json::to_value(info)?));
    layout.write_manifest(&manifest)?;
    Ok(manifest)
}

/// Re-render the corpus described by `manifest_path` into `out_dir`.
pub fn regenerate_from_manifest(manifest_path: &Path, out_dir: &Path) -> Result<CorpusManifest> {
    let manifest: CorpusManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let info: GeneratorInfo = manifest
        .generator
        .clone()
        .ok_or_else(|| Error::Validation("manifest has no generator block".into()))
        .and_then(|v| Ok(serde_json::from_value(v)?))?;
    if info.sub_seeds.len() != manifest.stems.len() {
        return Err(Error::Validation("manifest seeds and stems differ in length".into()));
    }
    let layout = CorpusLayout::create(out_dir)?;
    write_samples(&layout, &info.gen_config, &manifest.stems, &info.sub_seeds)?;
    layout.write_manifest(&manifest)?;
    Ok(manifest)
}
