//! Minimal neural-network toolkit: dense kernels, named parameters,
//! layers with hand-written backward passes and the AdamW optimizer.

pub mod check;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;

pub use check::{check_gradients, relative_error, GradCheck};
pub use layers::{Attention, Block, LayerNorm, Linear};
pub use optim::{AdamW, AdamWConfig};
pub use params::{load_checkpoint, save_checkpoint, Grads, Param, ParamId, ParamStore};
