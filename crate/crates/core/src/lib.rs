//! Visual token sequence compression for vision-language model prompts.
//!
//! The crate works on dumped token bundles (visual and text embeddings plus
//! attention projection weights, see [`token_store`]) and provides:
//!
//! * cross-modal saliency scoring and top-k selection ([`saliency`]);
//! * k-means++ clustering with saliency-aware retention and cluster
//!   aggregation ([`clustering`]);
//! * random and spatial-lattice sampling baselines ([`sampling`]);
//! * a prefill cost model for decoder LLMs ([`cost_model`]);
//! * agreement metrics used to study saliency stability ([`metrics`]).
//!
//! All arithmetic runs in `f64`; every randomized step takes an explicit
//! seed and is reproducible bit for bit.

pub mod clustering;
pub mod cost_model;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod npy;
pub mod pipeline;
pub mod rng;
pub mod saliency;
pub mod sampling;
pub mod sequence;
pub mod token_store;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use sequence::{CompressedSequence, OrderPolicy, TokenOrigin};
pub use token_store::{load_bundle, save_bundle, Grid, LayerWeights, TokenBundle};
