//! Tree-species classification from multi-source satellite time series.
//!
//! Two feature pipelines share one evaluation harness:
//!
//! - hand-crafted seasonal medians and harmonic-regression parameters,
//!   classified with a random forest;
//! - deep features from a channel-group transformer encoder, pre-trained by
//!   masked reconstruction and fine-tuned with an MLP head.
//!
//! ```text
//! observations -> cloud filter -> monthly medians -> indices -> hand-crafted features -> RF
//!                                                  \-> normalize -> tokens -> encoder -> MLP / RF
//! ```

pub mod bands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod matrix;
pub mod mlp;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod split;

pub use error::{Error, Result};
pub use matrix::Matrix;
