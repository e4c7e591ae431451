use crate::error::{Error, Result};
use crate::numerics::FeatureMap;
use crate::scalar::Scalar;

/// Non-overlapping `stride × stride` average pooling of a single-channel map.
///
/// Each cell is a plain sum of its window scaled by `1 / stride²`; on
/// nonnegative input a cell is zero exactly when its whole window is zero.
pub fn avg_pool_2d<T: Scalar>(map: &FeatureMap<T>, stride: usize) -> Result<FeatureMap<T>> {
    if map.channels() != 1 {
        return Err(Error::ShapeMismatch {
            context: "avg_pool_2d",
            expected: "single-channel map".into(),
            actual: format!("{} channels", map.channels()),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("pool stride must be positive".into()));
    }
    for size in [map.height(), map.width()] {
        if size % stride != 0 {
            return Err(Error::NotDivisible {
                context: "avg_pool_2d",
                size,
                divisor: stride,
            });
        }
    }
    let (oh, ow) = (map.height() / stride, map.width() / stride);
    let scale = T::one() / T::lit((stride * stride) as f64);
    Ok(FeatureMap::from_fn(oh, ow, 1, |r, c, _| {
        let mut sum = T::zero();
        for dr in 0..stride {
            for dc in 0..stride {
                sum = sum + map.get(r * stride + dr, c * stride + dc, 0);
            }
        }
        sum * scale
    }))
}
