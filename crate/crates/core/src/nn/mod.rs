//! Differentiable building blocks, parameter storage, optimizer and
//! checkpoint serialization.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm, Cbr, Cgl, Conv2d, GfeShape, GfeUnit, LayerNorm, Lgl, Linear, ProjectionHead};
pub use optim::Adam;
pub use params::{ParamId, ParamKind, ParamStore, ParamTensor};
