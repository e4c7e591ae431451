//! Synthetic frame sequences for exercising the event engine.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::save_frame_png;
use crate::numerics::FeatureMap;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    /// Every frame is the same.
    Static,
    /// A random base frame; each later frame shifts a few random rectangles
    /// of its predecessor by a random offset in `[-0.2, 0.2]`.
    Perturbed,
    /// A fixed top-left square covering a quarter of the frame area toggles
    /// by `magnitude` every frame; everything else is still.
    Stationary,
    /// A random texture panned one pixel right per frame.
    Moving,
}

impl std::str::FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "perturbed" => Ok(Self::Perturbed),
            "stationary" => Ok(Self::Stationary),
            "moving" => Ok(Self::Moving),
            other => Err(Error::InvalidArgument(format!(
                "unknown sequence kind `{other}` (static, perturbed, stationary, moving)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub side: usize,
    pub channels: usize,
    pub frames: usize,
    pub seed: u64,
    /// Intensity change of the stationary region.
    pub magnitude: f64,
}

impl SequenceSpec {
    pub fn new(kind: SequenceKind, side: usize, frames: usize, seed: u64) -> Self {
        Self {
            kind,
            side,
            channels: 3,
            frames,
            seed,
            magnitude: 0.5,
        }
    }

    pub fn generate<T: Scalar>(&self) -> Result<Vec<FeatureMap<T>>> {
        if self.side == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("frame side and channels must be >= 1".into()));
        }
        if !(self.magnitude > 0.0 && self.magnitude <= 0.5) {
            return Err(Error::InvalidArgument("magnitude must lie in (0, 0.5]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (side, ch) = (self.side, self.channels);
        let frames = match self.kind {
            SequenceKind::Static => {
                let base = random_frame(&mut rng, side, side, ch, 1.0);
                vec![base; self.frames]
            }
            SequenceKind::Perturbed => {
                let mut out = Vec::with_capacity(self.frames);
                let mut current = random_frame(&mut rng, side, side, ch, 1.0);
                for _ in 0..self.frames {
                    out.push(current.clone());
                    perturb(&mut rng, &mut current);
                }
                out
            }
            SequenceKind::Stationary => {
                let base = random_frame(&mut rng, side, side, ch, 0.5);
                let region = side / 2;
                (0..self.frames)
                    .map(|k| {
                        let bump = if k % 2 == 1 { self.magnitude } else { 0.0 };
                        FeatureMap::from_fn(side, side, ch, |r, c, x| {
                            let v = base.get(r, c, x);
                            if r < region && c < region {
                                v + bump
                            } else {
                                v
                            }
                        })
                    })
                    .collect()
            }
            SequenceKind::Moving => {
                let texture = random_frame(&mut rng, side, side + self.frames, ch, 1.0);
                (0..self.frames)
                    .map(|k| FeatureMap::from_fn(side, side, ch, |r, c, x| texture.get(r, c + k, x)))
                    .collect()
            }
        };
        Ok(frames
            .into_iter()
            .map(|f| FeatureMap::from_fn(side, side, ch, |r, c, x| T::lit(f.get(r, c, x))))
            .collect())
    }
}

fn random_frame(rng: &mut ChaCha8Rng, height: usize, width: usize, channels: usize, scale: f64) -> FeatureMap<f64> {
    let data: Vec<f64> = (0..height * width * channels).map(|_| rng.gen::<f64>() * scale).collect();
    FeatureMap::new(height, width, channels, data).expect("sized")
}

fn perturb(rng: &mut ChaCha8Rng, frame: &mut FeatureMap<f64>) {
    let side = frame.height();
    let count = rng.gen_range(1..=3);
    for _ in 0..count {
        let h = rng.gen_range(1..=side.div_ceil(8).max(1));
        let w = rng.gen_range(1..=side.div_ceil(8).max(1));
        let r0 = rng.gen_range(0..=side - h);
        let c0 = rng.gen_range(0..=side - w);
        let offset = rng.gen_range(-0.2..0.2);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                for x in 0..frame.channels() {
                    let v = frame.get(r, c, x) + offset;
                    frame.set(r, c, x, v.clamp(0.0, 1.0));
                }
            }
        }
    }
}

/// Writes `frame_00000.png`, `frame_00001.png`, … into `dir`.
pub fn write_png_sequence<T: Scalar>(frames: &[FeatureMap<T>], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        save_frame_png(f, &dir.join(format!("frame_{i:05}.png")))?;
    }
    Ok(())
}
