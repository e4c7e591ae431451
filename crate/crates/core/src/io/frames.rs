use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;
use crate::scalar::Scalar;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Ordered source of RGB frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameSource {
    /// PNG / binary PPM files, ordered bytewise by file name.
    Directory { files: Vec<PathBuf> },
    /// Headerless interleaved RGB8 frames, frame-major.
    Raw {
        path: PathBuf,
        width: usize,
        height: usize,
        frames: usize,
    },
}

impl FrameSource {
    pub fn directory(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_image = path.is_file()
                && path
                    .extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if is_image {
                files.push(path);
            }
        }
        files.sort_by(|a, b| {
            let key = |p: &PathBuf| p.file_name().map(|n| n.as_encoded_bytes().to_vec()).unwrap_or_default();
            key(a).cmp(&key(b))
        });
        Ok(FrameSource::Directory { files })
    }

    pub fn raw(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let path = path.as_ref();
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("raw stream geometry must be positive".into()));
        }
        let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
        let frame_bytes = width * height * 3;
        if len % frame_bytes != 0 {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "stream length {len} is not a multiple of the {width}x{height}x3 frame size {frame_bytes}"
                ),
            });
        }
        Ok(FrameSource::Raw {
            path: path.to_path_buf(),
            width,
            height,
            frames: len / frame_bytes,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            FrameSource::Directory { files } => files.len(),
            FrameSource::Raw { frames, .. } => *frames,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes frame `index` at its native size, RGB scaled to `[0, 1]`.
    pub fn load_native<T: Scalar>(&self, index: usize) -> Result<FeatureMap<T>> {
        if index >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "frame index {index} out of range ({} frames)",
                self.len()
            )));
        }
        match self {
            FrameSource::Directory { files } => decode_image(&files[index]),
            FrameSource::Raw {
                path, width, height, ..
            } => {
                let frame_bytes = width * height * 3;
                let mut buf = vec![0u8; frame_bytes];
                let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
                file.seek(SeekFrom::Start((index * frame_bytes) as u64))
                    .and_then(|_| file.read_exact(&mut buf))
                    .map_err(|e| Error::io(path, e))?;
                rgb8_to_map(&buf, *width, *height)
            }
        }
    }

    /// Decodes frame `index` and resizes it to `side × side` (bilinear).
    pub fn load_frame<T: Scalar>(&self, index: usize, side: usize) -> Result<FeatureMap<T>> {
        let native = self.load_native(index)?;
        Ok(resize_bilinear(&native, side, side))
    }

    pub fn label(&self, index: usize) -> String {
        match self {
            FrameSource::Directory { files } => files
                .get(index)
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            FrameSource::Raw { path, .. } => format!("{}#{index}", path.display()),
        }
    }
}

fn rgb8_to_map<T: Scalar>(bytes: &[u8], width: usize, height: usize) -> Result<FeatureMap<T>> {
    let scale = 1.0 / 255.0;
    FeatureMap::new(
        height,
        width,
        3,
        bytes.iter().map(|b| T::lit(*b as f64 * scale)).collect(),
    )
}

/// Decodes a PNG or binary PPM into an RGB map with intensities in `[0, 1]`.
pub fn decode_image<T: Scalar>(path: &Path) -> Result<FeatureMap<T>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let rgb = img.to_rgb8();
    rgb8_to_map(rgb.as_raw(), rgb.width() as usize, rgb.height() as usize)
}

/// Edge-aligned source coordinate: `i · (src − 1) / (dst − 1)`.
fn source_coord(i: usize, src: usize, dst: usize) -> (usize, f64) {
    if dst <= 1 || src <= 1 {
        return (0, 0.0);
    }
    let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let base = (pos.floor() as usize).min(src - 1);
    (base, pos - base as f64)
}

/// Bilinear resize with corner-aligned sampling; identity geometry is exact.
pub fn resize_bilinear<T: Scalar>(map: &FeatureMap<T>, out_h: usize, out_w: usize) -> FeatureMap<T> {
    if (out_h, out_w) == (map.height(), map.width()) {
        return map.clone();
    }
    let rows: Vec<(usize, f64)> = (0..out_h).map(|i| source_coord(i, map.height(), out_h)).collect();
    let cols: Vec<(usize, f64)> = (0..out_w).map(|j| source_coord(j, map.width(), out_w)).collect();
    let (h, w) = (map.height(), map.width());
    FeatureMap::from_fn(out_h, out_w, map.channels(), |r, c, ch| {
        let (y0, fy) = rows[r];
        let (x0, fx) = cols[c];
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let v = |y: usize, x: usize| map.get(y, x, ch).as_f64();
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        T::lit(top * (1.0 - fy) + bottom * fy)
    })
}
