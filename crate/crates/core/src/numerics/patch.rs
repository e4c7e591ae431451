//! Patch rearrangement between `H × W × C` maps and flattened patch vectors.
//!
//! A patch is flattened in (row, col, channel) order, and patches are
//! enumerated row-major over the patch grid. When every patch is reduced to a
//! single `C_out` vector, the patch grid is itself the next `N × N × C_out`
//! feature map, so `unpatchify(grid, 1, C_out)` assembles stage outputs.

use crate::error::{Error, Result};
use crate::numerics::{FeatureMap, PatchGrid};
use crate::scalar::Scalar;

fn patches_per_side<T: Scalar>(map: &FeatureMap<T>, patch_side: usize) -> Result<usize> {
    if patch_side == 0 {
        return Err(Error::InvalidArgument("patch side must be positive".into()));
    }
    if map.height() != map.width() {
        return Err(Error::ShapeMismatch {
            context: "patchify",
            expected: "square map".into(),
            actual: format!("{}x{}", map.height(), map.width()),
        });
    }
    if map.height() % patch_side != 0 {
        return Err(Error::NotDivisible {
            context: "patchify",
            size: map.height(),
            divisor: patch_side,
        });
    }
    Ok(map.height() / patch_side)
}

/// Copies patch `p` of `map` into `out` (length `P·P·C`).
///
/// The caller guarantees the map side is a multiple of `patch_side`.
#[inline]
pub fn extract_patch<T: Scalar>(map: &FeatureMap<T>, patch_side: usize, p: usize, out: &mut [T]) {
    let n = map.width() / patch_side;
    let (pr, pc) = (p / n, p % n);
    let row_len = patch_side * map.channels();
    debug_assert_eq!(out.len(), patch_side * row_len);
    let data = map.data();
    for (dr, dst) in out.chunks_exact_mut(row_len).enumerate() {
        let start = map.index(pr * patch_side + dr, pc * patch_side, 0);
        dst.copy_from_slice(&data[start..start + row_len]);
    }
}

pub fn patchify<T: Scalar>(map: &FeatureMap<T>, patch_side: usize) -> Result<PatchGrid<T>> {
    let n = patches_per_side(map, patch_side)?;
    let patch_dim = patch_side * patch_side * map.channels();
    let mut data = vec![T::zero(); n * n * patch_dim];
    for (p, out) in data.chunks_exact_mut(patch_dim.max(1)).enumerate() {
        extract_patch(map, patch_side, p, out);
    }
    PatchGrid::new(n, patch_dim, data)
}

pub fn unpatchify<T: Scalar>(
    grid: &PatchGrid<T>,
    patch_side: usize,
    channels: usize,
) -> Result<FeatureMap<T>> {
    if patch_side == 0 || channels == 0 {
        return Err(Error::InvalidArgument(
            "patch side and channels must be positive".into(),
        ));
    }
    let expected = patch_side * patch_side * channels;
    if grid.patch_dim() != expected {
        return Err(Error::ShapeMismatch {
            context: "unpatchify",
            expected: format!("patch_dim {patch_side}x{patch_side}x{channels} = {expected}"),
            actual: format!("patch_dim {}", grid.patch_dim()),
        });
    }
    let n = grid.n();
    let side = n * patch_side;
    let mut map = FeatureMap::zeros(side, side, channels);
    let row_len = patch_side * channels;
    for p in 0..n * n {
        let (pr, pc) = (p / n, p % n);
        for (dr, src) in grid.patch(p).chunks_exact(row_len).enumerate() {
            let start = map.index(pr * patch_side + dr, pc * patch_side, 0);
            map.data_mut()[start..start + row_len].copy_from_slice(src);
        }
    }
    Ok(map)
}
