//! Minimal reverse-mode autodiff and the layers built on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{
    Activation, EdgeWeighting, GatLayer, GcnLayer, GinLayer, GraphLayer, GruCell, LayerKind, Linear,
    MessageGraph, Mlp, TimeEncoder,
};
pub use params::{Adam, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Segments, Tape, Var};
