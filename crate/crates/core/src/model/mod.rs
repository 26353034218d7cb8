//! The soft/hard attention U-Net and its ablation variants.

mod blocks;
mod checkpoint;
mod config;
mod network;
mod summary;

pub use blocks::{
    downsample_mask, hard_attention, FeatureBlock, InceptionBlock, MultiscaleBlock, PlainBlock, SkipFusion,
    SoftAttentionGate,
};
pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use config::{BlockKind, ModelConfig, Variant};
pub use network::{DecoderStage, EncoderStage, Model, Network};
pub use summary::{LayerSummary, ParameterSummary};

impl Model {
    pub fn parameter_summary(&self) -> ParameterSummary {
        ParameterSummary::from_store(self.params())
    }
}
