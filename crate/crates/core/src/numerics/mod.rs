//! Scalar tensor primitives: dense layers, GELU, LayerNorm, average pooling
//! and patch rearrangement. All functions are pure.

mod activation;
mod dense;
mod norm;
mod patch;
mod pool;
mod tensor;

pub use activation::{gelu, gelu_derivative, gelu_in_place, normal_cdf, normal_pdf};
pub use dense::{dense_forward, dot, DenseLayer};
pub(crate) use norm::moments;
pub use norm::{layer_norm, LayerNormParams, DEFAULT_EPSILON};
pub use patch::{extract_patch, patchify, unpatchify};
pub use pool::avg_pool_2d;
pub use tensor::{FeatureMap, PatchGrid};
