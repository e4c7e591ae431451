//! Frame ingestion, event-map overlays, the weight container and config files.

mod frames;
mod overlay;
pub mod weights;

use std::path::Path;

pub use frames::{decode_image, resize_bilinear, FrameSource};
pub use overlay::{encode_rgb8_png, overlay_rgb8, render_event_overlay, save_frame_png, to_u8, write_rgb8_png, DARKEN_FACTOR};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};

use crate::error::{Error, Result};
use crate::model::NetworkConfig;

/// Reads and validates a strict-schema JSON network config.
pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkConfig::from_json_str(&text)
}
