//! Hierarchical shifted-window transformer classifier.

mod config;
mod forward;
mod schema;

pub use config::{InputNorm, ModelConfig, StageDims};
pub use forward::{
    classify, encode, forward_features, mlp, model_forward, normalize_images, patch_embed,
    patch_extract, patch_merging, swin_block, swin_block_pair, BlockOptions,
};
pub use schema::{
    check_schema, init_params, is_norm_or_bias, param_schema, Init, ParamSpec, INIT_STD,
};
