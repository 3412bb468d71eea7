//! Temporal graph rewiring: memory-based temporal graph networks whose
//! node memories are mixed over Cayley expander graphs.

pub mod cayley;
pub mod config;
pub mod ctdg;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod reach;
pub mod tensor;
pub mod tgn;
pub mod tgr;

pub use error::{Error, Result};
pub use tensor::Tensor;
