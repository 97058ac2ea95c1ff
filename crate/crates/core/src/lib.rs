//! Coarse-to-fine image captioning at desk scale.
//!
//! Captions are split into a skeleton sentence (objects and their relations)
//! and per-object attribute phrases using constituency trees. A skeleton
//! decoder with soft spatial attention generates the skeleton; an attribute
//! decoder conditioned on each skeletal word, its hidden state and its
//! attended features fills in the attributes; the two are fused back into a
//! caption.

pub mod attrnet;
pub mod checks;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod decompose;
mod error;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod skelnet;
pub mod train;
pub mod treebank;

pub use error::{Error, Result};
