//! Building blocks of the encoder/decoder.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::{Conv2d, ConvBlock, Graph, Initializer, Mode, ParamStore, Var};
use crate::sample::ShadowMask;
use crate::tensor::Tensor;

use super::config::BlockKind;

/// Multiscale block: one branch per kernel size, each producing `D` maps;
/// the branches are concatenated, mixed by a pointwise convolution and
/// reduced back to `D` maps by a 3×3 bottleneck.
#[derive(Clone, Debug)]
pub struct MultiscaleBlock {
    pub branches: Vec<ConvBlock>,
    pub pointwise: ConvBlock,
    pub bottleneck: ConvBlock,
    pub residual: bool,
    pub channels: usize,
}

impl MultiscaleBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        kernels: &[usize],
        residual: bool,
    ) -> Self {
        let branches = kernels
            .iter()
            .map(|&k| ConvBlock::new(store, init, &format!("{name}.k{k}"), channels, channels, k, 1))
            .collect::<Vec<_>>();
        let wide = channels * kernels.len();
        let pointwise = ConvBlock::new(store, init, &format!("{name}.pointwise"), wide, wide, 1, 1);
        let bottleneck = ConvBlock::new(store, init, &format!("{name}.bottleneck"), wide, channels, 3, 1);
        MultiscaleBlock {
            branches,
            pointwise,
            bottleneck,
            residual,
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        check_channels(g, x, self.channels, "multiscale block")?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            outs.push(b.forward(g, store, x, mode)?);
        }
        let cat = g.concat(&outs)?;
        let mixed = self.pointwise.forward(g, store, cat, mode)?;
        let y = self.bottleneck.forward(g, store, mixed, mode)?;
        if self.residual {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }
}

/// Classic four-path inception block with `D/4` maps per path.
#[derive(Clone, Debug)]
pub struct InceptionBlock {
    pub path1: ConvBlock,
    pub path3_reduce: ConvBlock,
    pub path3: ConvBlock,
    pub path5_reduce: ConvBlock,
    pub path5: ConvBlock,
    pub pool_proj: ConvBlock,
    pub residual: bool,
    pub channels: usize,
}

impl InceptionBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        residual: bool,
    ) -> Result<Self> {
        if !channels.is_multiple_of(4) {
            return Err(Error::shape(format!(
                "inception block needs channels divisible by 4, got {channels}"
            )));
        }
        let q = channels / 4;
        let mut cb =
            |suffix: &str, cin, cout, k| ConvBlock::new(store, init, &format!("{name}.{suffix}"), cin, cout, k, 1);
        Ok(InceptionBlock {
            path1: cb("path1", channels, q, 1),
            path3_reduce: cb("path3_reduce", channels, q, 1),
            path3: cb("path3", q, q, 3),
            path5_reduce: cb("path5_reduce", channels, q, 1),
            path5: cb("path5", q, q, 5),
            pool_proj: cb("pool_proj", channels, q, 1),
            residual,
            channels,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        check_channels(g, x, self.channels, "inception block")?;
        let a = self.path1.forward(g, store, x, mode)?;
        let b = self.path3_reduce.forward(g, store, x, mode)?;
        let b = self.path3.forward(g, store, b, mode)?;
        let c = self.path5_reduce.forward(g, store, x, mode)?;
        let c = self.path5.forward(g, store, c, mode)?;
        let d = g.max_pool3x3(x);
        let d = self.pool_proj.forward(g, store, d, mode)?;
        let y = g.concat(&[a, b, c, d])?;
        if self.residual {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }
}

/// Two stacked 3×3 convolution blocks preserving the channel count.
#[derive(Clone, Debug)]
pub struct PlainBlock {
    pub first: ConvBlock,
    pub second: ConvBlock,
    pub residual: bool,
    pub channels: usize,
}

impl PlainBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, channels: usize, residual: bool) -> Self {
        PlainBlock {
            first: ConvBlock::new(store, init, &format!("{name}.conv1"), channels, channels, 3, 1),
            second: ConvBlock::new(store, init, &format!("{name}.conv2"), channels, channels, 3, 1),
            residual,
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        check_channels(g, x, self.channels, "plain block")?;
        let y = self.first.forward(g, store, x, mode)?;
        let y = self.second.forward(g, store, y, mode)?;
        if self.residual {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum FeatureBlock {
    Plain(PlainBlock),
    Inception(InceptionBlock),
    Multiscale(MultiscaleBlock),
}

impl FeatureBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        kind: BlockKind,
        channels: usize,
        kernels: &[usize],
        residual: bool,
    ) -> Result<Self> {
        Ok(match kind {
            BlockKind::Plain => FeatureBlock::Plain(PlainBlock::new(store, init, name, channels, residual)),
            BlockKind::Inception => {
                FeatureBlock::Inception(InceptionBlock::new(store, init, name, channels, residual)?)
            }
            BlockKind::Msb => {
                FeatureBlock::Multiscale(MultiscaleBlock::new(store, init, name, channels, kernels, residual))
            }
        })
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            FeatureBlock::Plain(_) => BlockKind::Plain,
            FeatureBlock::Inception(_) => BlockKind::Inception,
            FeatureBlock::Multiscale(_) => BlockKind::Msb,
        }
    }

    pub fn has_residual(&self) -> bool {
        match self {
            FeatureBlock::Plain(b) => b.residual,
            FeatureBlock::Inception(b) => b.residual,
            FeatureBlock::Multiscale(b) => b.residual,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        match self {
            FeatureBlock::Plain(b) => b.forward(g, store, x, mode),
            FeatureBlock::Inception(b) => b.forward(g, store, x, mode),
            FeatureBlock::Multiscale(b) => b.forward(g, store, x, mode),
        }
    }
}

/// Additive attention gate producing one coefficient in `(0, 1)` per pixel.
#[derive(Clone, Debug)]
pub struct SoftAttentionGate {
    pub skip_proj: Conv2d,
    pub gate_proj: Conv2d,
    pub psi: Conv2d,
}

impl SoftAttentionGate {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
    ) -> Self {
        let inter = (gate_channels / 2).max(1);
        SoftAttentionGate {
            skip_proj: Conv2d::new(store, init, &format!("{name}.skip_proj"), skip_channels, inter, 1, 1),
            gate_proj: Conv2d::new(store, init, &format!("{name}.gate_proj"), gate_channels, inter, 1, 1),
            psi: Conv2d::new(store, init, &format!("{name}.psi"), inter, 1, 1, 1),
        }
    }

    /// Returns `(alpha * skip, alpha)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, skip: Var, gate: Var) -> Result<(Var, Var)> {
        let (s, t) = (g.value(skip).shape(), g.value(gate).shape());
        if s[0] != t[0] || s[2..] != t[2..] {
            return Err(Error::shape(format!("gate {t:?} does not match skip {s:?}")));
        }
        let a = self.skip_proj.forward(g, store, skip)?;
        let b = self.gate_proj.forward(g, store, gate)?;
        let sum = g.add(a, b)?;
        let act = g.relu(sum);
        let logits = self.psi.forward(g, store, act)?;
        let alpha = g.sigmoid(logits);
        Ok((g.mul_spatial(skip, alpha)?, alpha))
    }
}

/// Concatenate the (gated) skip with the upsampled features and mix them
/// back to the stage width with a pointwise convolution.
#[derive(Clone, Debug)]
pub struct SkipFusion {
    pub conv: Conv2d,
}

impl SkipFusion {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        skip_channels: usize,
        up_channels: usize,
    ) -> Self {
        SkipFusion {
            conv: Conv2d::new(store, init, name, skip_channels + up_channels, up_channels, 1, 1),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, skip: Var, up: Var) -> Result<Var> {
        let (s, u) = (g.value(skip).shape(), g.value(up).shape());
        if s[0] != u[0] || s[2..] != u[2..] {
            return Err(Error::shape(format!("skip {s:?} does not match upsampled {u:?}")));
        }
        if s[1] + u[1] != self.conv.cin {
            return Err(Error::shape(format!(
                "fusion expects {} channels in total, got {} + {}",
                self.conv.cin, s[1], u[1]
            )));
        }
        let cat = g.concat(&[skip, up])?;
        self.conv.forward(g, store, cat)
    }
}

fn check_channels(g: &Graph, x: Var, expected: usize, what: &str) -> Result<()> {
    let c = g.value(x).channels();
    if c != expected {
        return Err(Error::shape(format!("{what} expects {expected} channels, got {c}")));
    }
    Ok(())
}

/// `x[h, w, c] * mask[h, w]` for a single feature volume.
pub fn hard_attention(x: &Tensor, mask: &ShadowMask) -> Result<Tensor> {
    if x.height() != mask.height() || x.width() != mask.width() {
        return Err(Error::shape(format!(
            "features are {}x{} but mask is {}x{}",
            x.width(),
            x.height(),
            mask.width(),
            mask.height()
        )));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let m = Tensor::stack(&vec![mask.to_tensor(); x.batch()])?;
    let mv = g.input(m);
    let out = g.mul_spatial(xv, mv)?;
    Ok(g.value(out).clone())
}

/// Non-overlapping max pooling of a mask by a power-of-two factor.
pub fn downsample_mask(mask: &ShadowMask, factor: usize) -> Result<ShadowMask> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::shape(format!("factor {factor} is not a power of two")));
    }
    if !mask.width().is_multiple_of(factor) || !mask.height().is_multiple_of(factor) {
        return Err(Error::shape(format!(
            "{}x{} mask is not divisible by {factor}",
            mask.width(),
            mask.height()
        )));
    }
    let pooled = kernels::max_pool_window(&mask.to_tensor(), factor);
    ShadowMask::from_tensor(&pooled, 0)
}

/// Mask tensor `[n, 1, H, W]` pooled to `1/factor` resolution.
pub(crate) fn pool_mask_tensor(mask: &Tensor, factor: usize) -> Tensor {
    if factor == 1 {
        mask.clone()
    } else {
        kernels::max_pool_window(mask, factor)
    }
}
