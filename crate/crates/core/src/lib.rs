//! Multi-label generalized zero-shot classification.
//!
//! Visual features and class semantic embeddings are projected into a shared
//! latent space by two trainable feed-forward networks (optionally behind a
//! trainable feature encoder). Training combines a margin ranking loss over
//! cosine relevance scores, an alignment loss between each sample and the
//! mean semantics of its labels, and an L1 penalty that keeps inter-class
//! cosines of the projected semantics close to the original ones. At
//! inference the semantic set is widened to unseen classes.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
