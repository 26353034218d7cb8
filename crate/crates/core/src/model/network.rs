//! Encoder/decoder assembly and the forward pass.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::nn::layers::apply_bn_observations;
use crate::nn::{Conv2d, ConvBlock, ConvTranspose2x2, Graph, Initializer, Mode, ParamStore, Var};
use crate::sample::ShadowMask;
use crate::tensor::Tensor;

use super::blocks::{pool_mask_tensor, FeatureBlock, SkipFusion, SoftAttentionGate};
use super::config::ModelConfig;

const IMAGE_CHANNELS: usize = 3;
/// The output layer starts at a tenth of the usual weight scale, with its
/// bias at mid-gray.
const HEAD_GAIN: f64 = 0.1;
const HEAD_BIAS: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub block: FeatureBlock,
    /// Stride-2 convolution block halving the resolution and doubling the width.
    pub down: ConvBlock,
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    /// Transposed convolution block doubling the resolution and halving the width.
    pub up: ConvTranspose2x2,
    pub up_bn: crate::nn::BatchNorm,
    pub gate: Option<SoftAttentionGate>,
    pub fuse: SkipFusion,
    pub block: FeatureBlock,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub stem: ConvBlock,
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: ConvBlock,
    /// Indexed by scale: `decoder[i]` works at the resolution of `encoder[i]`.
    pub decoder: Vec<DecoderStage>,
    pub head: Conv2d,
}

/// Assembled network with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    network: Network,
    mode: Mode,
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(config.rng_seed);
        let (kind, kernels, residual) = (
            config.block_kind,
            config.msb_kernel_sizes.clone(),
            config.use_block_residual,
        );
        let base = config.base_channels;

        let stem = ConvBlock::new(&mut store, &mut init, "stem", IMAGE_CHANNELS, base, 3, 1);
        let mut encoder = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let c = config.stage_channels(i);
            let name = format!("enc{i}");
            let block = FeatureBlock::new(
                &mut store,
                &mut init,
                &format!("{name}.block"),
                kind,
                c,
                &kernels,
                residual,
            )?;
            let down = ConvBlock::new(&mut store, &mut init, &format!("{name}.down"), c, 2 * c, 3, 2);
            encoder.push(EncoderStage { block, down });
        }
        let bc = config.bottleneck_channels();
        let bottleneck = ConvBlock::new(&mut store, &mut init, "bottleneck", bc, bc, 3, 1);

        let mut decoder = Vec::with_capacity(config.depth);
        for i in (0..config.depth).rev() {
            let c = config.stage_channels(i);
            let name = format!("dec{i}");
            // The shallowest stage also sees the raw input image next to its skip.
            let skip_c = if i == 0 { c + IMAGE_CHANNELS } else { c };
            let up = ConvTranspose2x2::new(&mut store, &mut init, &format!("{name}.up"), 2 * c, c);
            let up_bn = crate::nn::BatchNorm::new(&mut store, &format!("{name}.up.bn"), c);
            let gate = config
                .use_soft_attention
                .then(|| SoftAttentionGate::new(&mut store, &mut init, &format!("{name}.gate"), skip_c, c));
            let fuse = SkipFusion::new(&mut store, &mut init, &format!("{name}.fuse"), skip_c, c);
            let block = FeatureBlock::new(
                &mut store,
                &mut init,
                &format!("{name}.block"),
                kind,
                c,
                &kernels,
                residual,
            )?;
            decoder.push(DecoderStage {
                up,
                up_bn,
                gate,
                fuse,
                block,
            });
        }
        decoder.reverse();
        let head = Conv2d::new(&mut store, &mut init, "head", base, IMAGE_CHANNELS, 3, 1);
        store
            .value_mut(head.weight)
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= HEAD_GAIN);
        if let Some(bias) = head.bias {
            store.value_mut(bias).data_mut().fill(HEAD_BIAS);
        }

        Ok(Model {
            config,
            params: store,
            network: Network {
                stem,
                encoder,
                bottleneck,
                decoder,
                head,
            },
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Number of feature blocks (encoder plus decoder).
    pub fn block_count(&self) -> usize {
        self.network.encoder.len() + self.network.decoder.len()
    }

    /// Record the forward pass on `g`. `mask = None` disables hard attention.
    ///
    /// Hard-attention sites are tagged `hard_attention.{i}` (the last one
    /// follows the bottleneck) and soft-attention coefficients
    /// `soft_attention.{i}`.
    pub fn record(&self, g: &mut Graph, image: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (store, net, mode) = (&self.params, &self.network, self.mode);
        let depth = self.config.depth;

        let mut h = net.stem.forward(g, store, image, mode)?;
        g.tag("stem", h);
        let mut skips = Vec::with_capacity(depth);
        for (i, stage) in net.encoder.iter().enumerate() {
            let e = stage.block.forward(g, store, h, mode)?;
            g.tag(format!("encoder_block.{i}"), e);
            skips.push(e);
            h = stage.down.forward(g, store, e, mode)?;
            if let Some(m) = mask {
                let mv = g.input(pool_mask_tensor(m, 2 << i));
                h = g.mul_spatial(h, mv)?;
                g.tag(format!("hard_attention.{i}"), h);
            }
        }
        h = net.bottleneck.forward(g, store, h, mode)?;
        if let Some(m) = mask {
            let mv = g.input(pool_mask_tensor(m, 1 << depth));
            h = g.mul_spatial(h, mv)?;
            g.tag(format!("hard_attention.{depth}"), h);
        }

        for i in (0..depth).rev() {
            let stage = &net.decoder[i];
            let up = stage.up.forward(g, store, h)?;
            let up = g.relu(up);
            let up = stage.up_bn.forward(g, store, up, mode)?;
            let skip = if i == 0 {
                g.concat(&[skips[0], image])?
            } else {
                skips[i]
            };
            let skip = match &stage.gate {
                Some(gate) => {
                    let (gated, alpha) = gate.forward(g, store, skip, up)?;
                    g.tag(format!("soft_attention.{i}"), alpha);
                    gated
                }
                None => skip,
            };
            let fused = stage.fuse.forward(g, store, skip, up)?;
            h = stage.block.forward(g, store, fused, mode)?;
            g.tag(format!("decoder_block.{i}"), h);
        }
        net.head.forward(g, store, h)
    }

    fn check_inputs(&self, image: &Tensor, mask: &Tensor, strict_side: bool) -> Result<()> {
        let [n, c, h, w] = image.shape();
        if c != IMAGE_CHANNELS {
            return Err(Error::shape(format!("expected an RGB image, got {c} channels")));
        }
        if strict_side && (h != self.config.input_side || w != self.config.input_side) {
            return Err(Error::shape(format!(
                "input is {w}x{h} but the model expects {0}x{0}",
                self.config.input_side
            )));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!("input {w}x{h} is not a multiple of {m}")));
        }
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!(
                "mask {:?} does not match image {:?}",
                mask.shape(),
                image.shape()
            )));
        }
        if !image.all_finite() {
            return Err(Error::Validation("image contains non-finite values".into()));
        }
        if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("mask values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Shadow-free prediction for a `[n, 3, side, side]` batch in `[0, 1]`.
    ///
    /// Train mode uses batch statistics but leaves the running estimates
    /// untouched; see [`Model::absorb_statistics`].
    pub fn forward(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.check_inputs(image, mask, true)?;
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let out = self.record(&mut g, x, Some(mask))?;
        Ok(g.value(out).clone())
    }

    /// Forward pass with hard attention switched off.
    pub fn forward_unmasked(&self, image: &Tensor) -> Result<Tensor> {
        let ones = Tensor::full([image.batch(), 1, image.height(), image.width()], 1.0);
        self.check_inputs(image, &ones, true)?;
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let out = self.record(&mut g, x, None)?;
        Ok(g.value(out).clone())
    }

    /// Forward pass that keeps every tagged activation.
    pub fn forward_instrumented(&self, image: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Graph)> {
        let ones;
        let m = match mask {
            Some(m) => m,
            None => {
                ones = Tensor::full([image.batch(), 1, image.height(), image.width()], 1.0);
                &ones
            }
        };
        self.check_inputs(image, m, true)?;
        let mut g = Graph::with_instrumentation();
        let x = g.input(image.clone());
        let out = self.record(&mut g, x, mask)?;
        Ok((g.value(out).clone(), g))
    }

    /// Fold batch statistics recorded on `g` into the running estimates.
    pub fn absorb_statistics(&mut self, g: &Graph) {
        apply_bn_observations(&mut self.params, g);
    }

    /// Remove shadows from an image of any size: the input is reflect-padded
    /// at the bottom/right to a multiple of `2^depth` and the prediction is
    /// cropped back.
    pub fn predict(&self, image: &RgbImage, mask: &ShadowMask) -> Result<RgbImage> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if (mask.width(), mask.height()) != (w, h) {
            return Err(Error::shape(format!(
                "image is {w}x{h} but mask is {}x{}",
                mask.width(),
                mask.height()
            )));
        }
        let m = self.config.size_multiple();
        let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
        let img = Tensor::from_rgb(image);
        let mt = mask.to_tensor();
        let img = reflect_pad(&img, ph, pw);
        let mt = reflect_pad(&mt, ph, pw);
        self.check_inputs(&img, &mt, false)?;
        let mut g = Graph::new();
        let x = g.input(img);
        let out = self.record(&mut g, x, Some(&mt))?;
        let pred = g.value(out);
        if !pred.all_finite() {
            return Err(Error::Validation("prediction contains non-finite values".into()));
        }
        let full = pred.to_rgb(0);
        Ok(image::imageops::crop_imm(&full, 0, 0, w as u32, h as u32).to_image())
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

fn reflect_pad(t: &Tensor, h: usize, w: usize) -> Tensor {
    let (th, tw) = (t.height(), t.width());
    if (th, tw) == (h, w) {
        return t.clone();
    }
    Tensor::from_fn([t.batch(), t.channels(), h, w], |n, c, y, x| {
        t.get(n, c, reflect_index(y, th), reflect_index(x, tw))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (0..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(5, 1), 0);
    }
}
