//! Minimal tensor autodiff engine backing the network.

pub mod direct;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;

pub use graph::{Graph, Mode, Var};
pub use layers::{BatchNorm, Conv2d, ConvBlock, ConvTranspose2x2};
pub use params::{Initializer, Param, ParamId, ParamRole, ParamStore};
