//! Parameterized layers that record themselves on a [`Graph`].

use crate::error::Result;
use crate::nn::graph::{Graph, Mode, Var};
use crate::nn::params::{Initializer, ParamId, ParamRole, ParamStore};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running estimate in the exponential update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Square-kernel convolution with same-padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Weight,
            init.uniform([cout, cin, kernel, kernel], cin * kernel * kernel),
        );
        let bias = store.add(format!("{name}.bias"), ParamRole::Bias, Tensor::zeros([cout, 1, 1, 1]));
        Conv2d {
            weight,
            bias: Some(bias),
            cin,
            cout,
            kernel,
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride)
    }
}

/// 2×2, stride-2 transposed convolution doubling spatial size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl ConvTranspose2x2 {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, cin: usize, cout: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Weight,
            init.uniform([cin, cout, 2, 2], cin),
        );
        let bias = store.add(format!("{name}.bias"), ParamRole::Bias, Tensor::zeros([cout, 1, 1, 1]));
        ConvTranspose2x2 {
            weight,
            bias,
            cin,
            cout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose2x2(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let shape = [channels, 1, 1, 1];
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), ParamRole::Gamma, Tensor::full(shape, 1.0)),
            beta: store.add(format!("{name}.beta"), ParamRole::Beta, Tensor::zeros(shape)),
            running_mean: store.add(
                format!("{name}.running_mean"),
                ParamRole::RunningMean,
                Tensor::zeros(shape),
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                ParamRole::RunningVar,
                Tensor::full(shape, 1.0),
            ),
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm(
            x,
            gamma,
            beta,
            (self.running_mean, self.running_var),
            store,
            mode,
            BN_EPS,
        )
    }
}

/// Convolution followed by ReLU and then batch normalization.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let conv = Conv2d::new(store, init, &format!("{name}.conv"), cin, cout, kernel, stride);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), cout);
        ConvBlock { conv, bn }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = g.relu(y);
        self.bn.forward(g, store, y, mode)
    }
}

/// Fold train-mode batch statistics into the running estimates.
pub fn apply_bn_observations(store: &mut ParamStore, g: &Graph) {
    for obs in g.observations() {
        for (id, batch) in [(obs.running_mean, &obs.mean), (obs.running_var, &obs.var)] {
            for (r, &b) in store.value_mut(id).data_mut().iter_mut().zip(batch) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
}
