//! Deep-feature path: normalization, tokenization into channel-group
//! embeddings, transformer encoding and masked-autoencoder pre-training.

pub mod mae;
pub mod model;
pub mod normalize;
pub mod tokens;

pub use mae::{choose_mask, mae_pretrain, PretrainConfig};
pub use model::{DeepFeature, Encoder, EncoderCache, EncoderConfig, Token, TokenSequence};
pub use normalize::{denormalize, normalize, Affine, NormalizationSpec, NORMALIZATION_VERSION};
pub use tokens::{month_encoding, sinusoidal_encoding, token_inputs, EncodingLayout, TokenInput};
