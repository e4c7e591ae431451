use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;
use crate::scalar::Scalar;

/// Brightness factor applied to patches without events.
pub const DARKEN_FACTOR: f64 = 0.3;

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB8 pixels of `frame`, with non-event patches darkened.
///
/// `events` holds one cell per patch; the patch side is
/// `frame side / events side`. Single-channel frames render as gray.
pub fn overlay_rgb8<T: Scalar>(frame: &FeatureMap<T>, events: &FeatureMap<T>) -> Result<Vec<u8>> {
    let (h, w) = (frame.height(), frame.width());
    if events.height() == 0 || events.width() == 0 || h % events.height() != 0 || w % events.width() != 0 {
        return Err(Error::ShapeMismatch {
            context: "event overlay",
            expected: format!("event map whose side divides the {h}x{w} frame"),
            actual: format!("{}x{}", events.height(), events.width()),
        });
    }
    if frame.channels() != 1 && frame.channels() != 3 {
        return Err(Error::ShapeMismatch {
            context: "event overlay",
            expected: "1 or 3 channels".into(),
            actual: format!("{} channels", frame.channels()),
        });
    }
    let (ph, pw) = (h / events.height(), w / events.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let lit = events.get(r / ph, c / pw, 0) != T::zero();
            let factor = if lit { 1.0 } else { DARKEN_FACTOR };
            for ch in 0..3 {
                let src = frame.get(r, c, ch.min(frame.channels() - 1)).as_f64();
                out.push(to_u8(src * factor));
            }
        }
    }
    Ok(out)
}

/// Writes the overlay as an 8-bit RGB PNG.
pub fn render_event_overlay<T: Scalar>(frame: &FeatureMap<T>, events: &FeatureMap<T>, path: &Path) -> Result<()> {
    let pixels = overlay_rgb8(frame, events)?;
    write_rgb8_png(path, frame.width(), frame.height(), pixels)
}

/// PNG bytes of an interleaved RGB8 buffer.
pub fn encode_rgb8_png(width: usize, height: usize, pixels: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::InvalidArgument("pixel buffer does not match geometry".into()))?;
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::InvalidArgument(format!("png encoding failed: {e}")))?;
    Ok(bytes.into_inner())
}

pub fn write_rgb8_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let bytes = encode_rgb8_png(width, height, pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a `[0, 1]` RGB map as an 8-bit PNG.
pub fn save_frame_png<T: Scalar>(frame: &FeatureMap<T>, path: &Path) -> Result<()> {
    let all = FeatureMap::from_fn(1, 1, 1, |_, _, _| T::one());
    render_event_overlay(frame, &all, path)
}
