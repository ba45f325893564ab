//! Model configuration, parameter state, and the layer stack.

pub mod config;
pub mod layers;
pub mod state;

pub use config::ModelConfig;
pub use layers::{
    ccf_fuse, classify_logits, csi_attend, cvf_fuse, forward, gta_pool, lte_extract, mamba_block,
    mse_embed, NORM_EPS,
};
pub use state::{ModelState, NormStats, ParamSnapshot};
