use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-extraction block placed at every encoder and decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two stacked 3×3 convolution blocks.
    Plain,
    /// Four-path 1×1 / 3×3 / 5×5 / pool block.
    Inception,
    /// Parallel multi-kernel convolutions, pointwise aggregation and a 3×3 bottleneck.
    Msb,
}

/// Architecture hyper-parameters of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Number of encoder stages (and decoder stages).
    pub depth: usize,
    pub msb_kernel_sizes: Vec<usize>,
    pub block_kind: BlockKind,
    pub use_soft_attention: bool,
    pub use_block_residual: bool,
    pub input_side: usize,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            depth: 4,
            msb_kernel_sizes: vec![3, 5, 7],
            block_kind: BlockKind::Msb,
            use_soft_attention: true,
            use_block_residual: true,
            input_side: 256,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 {
            return Err(Error::config("base_channels must be >= 1"));
        }
        if self.depth < 1 {
            return Err(Error::config("depth must be >= 1"));
        }
        if self.depth >= usize::BITS as usize - 1 {
            return Err(Error::config(format!("depth {} is too large", self.depth)));
        }
        let factor = 1usize << self.depth;
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return Err(Error::config(format!(
                "input_side {} is not divisible by 2^depth = {factor}",
                self.input_side
            )));
        }
        if self.msb_kernel_sizes.is_empty() {
            return Err(Error::config("msb_kernel_sizes must not be empty"));
        }
        if let Some(k) = self.msb_kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::config(format!("msb kernel size {k} is not odd")));
        }
        if self.msb_kernel_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "msb_kernel_sizes must be strictly increasing and pairwise distinct",
            ));
        }
        if self.block_kind == BlockKind::Inception && !self.base_channels.is_multiple_of(4) {
            return Err(Error::config(format!(
                "inception blocks need channel counts divisible by 4, base_channels is {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    /// Channel width of encoder stage `i` (and of the matching decoder stage).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.stage_channels(i)).collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.depth
    }

    /// Spatial dimensions must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (kind, residual, soft) = variant.flags();
        self.block_kind = kind;
        self.use_block_residual = residual;
        self.use_soft_attention = soft;
        self
    }

    /// The ablation variant these flags correspond to, if any.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.flags() == (self.block_kind, self.use_block_residual, self.use_soft_attention))
    }
}

/// Ablation configurations compared against the full network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Attention,
    Inception,
    Msb,
    Shau,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Attention,
        Variant::Inception,
        Variant::Msb,
        Variant::Shau,
    ];

    /// `(block_kind, use_block_residual, use_soft_attention)`
    pub fn flags(self) -> (BlockKind, bool, bool) {
        match self {
            Variant::Baseline => (BlockKind::Plain, false, false),
            Variant::Attention => (BlockKind::Plain, false, true),
            Variant::Inception => (BlockKind::Inception, false, false),
            Variant::Msb => (BlockKind::Msb, true, false),
            Variant::Shau => (BlockKind::Msb, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Attention => "Attention",
            Variant::Inception => "Inception",
            Variant::Msb => "MSB",
            Variant::Shau => "SHAU",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_full_network() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.variant(), Some(Variant::Shau));
        assert_eq!(c.encoder_channels(), vec![16, 32, 64, 128]);
        assert_eq!(c.bottleneck_channels(), 256);
    }

    #[test]
    fn side_must_divide() {
        let c = ModelConfig {
            input_side: 250,
            ..Default::default()
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("not divisible by 2^depth = 16"), "{err}");
    }

    #[test]
    fn kernel_rules() {
        for bad in [vec![3, 4, 7], vec![5, 3, 7], vec![3, 3, 5], vec![]] {
            let c = ModelConfig {
                msb_kernel_sizes: bad.clone(),
                ..Default::default()
            };
            assert!(c.validate().is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn zero_sizes_rejected() {
        for c in [
            ModelConfig {
                base_channels: 0,
                ..Default::default()
            },
            ModelConfig {
                depth: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn variant_round_trip() {
        for v in Variant::ALL {
            let c = ModelConfig::default().with_variant(v);
            assert_eq!(c.variant(), Some(v));
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }
}
