use crate::error::{ensure_len, Error, Result};
use crate::scalar::Scalar;

/// Fully connected layer `y = W x + b` with `W` stored row-major as
/// `out_dim × in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    in_dim: usize,
    out_dim: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        ensure_len("dense weights", in_dim * out_dim, weights.len())?;
        ensure_len("dense bias", out_dim, bias.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    /// Multiply-accumulates for one application (bias adds excluded).
    pub fn macs(&self) -> u64 {
        (self.in_dim * self.out_dim) as u64
    }

    pub fn param_count(&self) -> u64 {
        (self.weights.len() + self.bias.len()) as u64
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        ensure_len("dense input", self.in_dim, x.len())?;
        let mut y = vec![T::zero(); self.out_dim];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked hot path; lengths are asserted in debug builds only.
    #[inline]
    pub fn forward_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (i, out) in y.iter_mut().enumerate() {
            *out = dot(self.row(i), x) + self.bias[i];
        }
    }

    pub(crate) fn check_input(&self, context: &'static str, len: usize) -> Result<()> {
        if len == self.in_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected: self.in_dim,
                actual: len,
            })
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

const LANES: usize = 8;

/// Dot product with a fixed eight-lane accumulation order.
///
/// The order depends only on the slice length, so results are identical no
/// matter which thread or call site evaluates them.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let a_chunks = a.chunks_exact(LANES);
    let b_chunks = b.chunks_exact(LANES);
    let (a_tail, b_tail) = (a_chunks.remainder(), b_chunks.remainder());
    for (x, y) in a_chunks.zip(b_chunks) {
        for k in 0..LANES {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    for (k, (x, y)) in a_tail.iter().zip(b_tail).enumerate() {
        acc[k] = acc[k] + *x * *y;
    }
    let s0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let s1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    s0 + s1
}

pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, x: &[T]) -> Result<Vec<T>> {
    layer.forward(x)
}
