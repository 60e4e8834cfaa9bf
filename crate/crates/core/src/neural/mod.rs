//! Numeric kernels of the scoring model and their gradients.

pub mod encoder;
pub mod kernels;
pub mod model;
pub mod weights;

pub use encoder::{encoder_block, Dropout};
pub use kernels::{
    conv1d, cosine, cross_attention, feed_forward, fuse, layer_norm, max_pool,
    multi_head_self_attention, project, softmax_rows, trilinear_similarity, AttentionMatrices,
    AttentionParams, Mat, Vector,
};
pub use model::ScoreTrace;
pub use weights::{EncoderParams, ModelDims, ModelWeights};
