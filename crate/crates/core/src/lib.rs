//! Patch-local MLP vision network with event-driven incremental inference.
//!
//! Every stage splits its input map into non-overlapping patches and runs the
//! same small MLP on each one, so a patch's output depends only on that
//! patch. [`event`] exploits this on frame sequences: it thresholds the
//! frame difference, pools it down the stage cascade, recomputes only patches
//! whose pooled cell is nonzero, and reuses cached features everywhere else.
//!
//! All math is generic over [`Scalar`]; inference uses `f32` and training
//! uses `f64`. The aliases below name the common instantiations.

pub mod cost;
pub mod error;
pub mod event;
pub mod io;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{Mode, Network, NetworkConfig, StageConfig};
pub use numerics::FeatureMap;
pub use scalar::Scalar;

pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureCache32 = event::FeatureCache<f32>;
pub type FrameStats32 = event::FrameStats<f32>;
