use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `height × width × channels` grid stored row-major in
/// (row, col, channel) order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "feature map",
                expected: format!("{height}x{width}x{channels} ({expected} scalars)"),
                actual: format!("{} scalars", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: T) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn ensure_shape(
        &self,
        context: &'static str,
        shape: (usize, usize, usize),
    ) -> Result<()> {
        if self.shape() == shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                context,
                expected: format!("{}x{}x{}", shape.0, shape.1, shape.2),
                actual: format!("{}x{}x{}", self.height, self.width, self.channels),
            })
        }
    }
}

/// `n × n` patches, each flattened to `patch_dim` scalars, stored
/// contiguously in row-major patch order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T> {
    n: usize,
    patch_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn new(n: usize, patch_dim: usize, data: Vec<T>) -> Result<Self> {
        let expected = n * n * patch_dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "patch grid",
                expected: format!("{n}x{n} patches of {patch_dim} ({expected} scalars)"),
                actual: format!("{} scalars", data.len()),
            });
        }
        Ok(Self { n, patch_dim, data })
    }

    /// Patches per side.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn patch(&self, p: usize) -> &[T] {
        &self.data[p * self.patch_dim..(p + 1) * self.patch_dim]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.patch_dim.max(1))
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}
