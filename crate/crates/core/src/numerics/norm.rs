use crate::error::{ensure_len, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Affine LayerNorm over one vector, population variance.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub(crate) gamma: Vec<T>,
    pub(crate) beta: Vec<T>,
    epsilon: T,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn new(gamma: Vec<T>, beta: Vec<T>, epsilon: T) -> Result<Self> {
        ensure_len("layer norm beta", gamma.len(), beta.len())?;
        if gamma.is_empty() {
            return Err(Error::InvalidArgument("layer norm dim must be >= 1".into()));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "layer norm epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            gamma,
            beta,
            epsilon,
        })
    }

    /// gamma = 1, beta = 0.
    pub fn identity(dim: usize, epsilon: T) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            epsilon,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn gamma_mut(&mut self) -> &mut [T] {
        &mut self.gamma
    }

    pub fn beta_mut(&mut self) -> &mut [T] {
        &mut self.beta
    }

    pub fn param_count(&self) -> u64 {
        (self.gamma.len() + self.beta.len()) as u64
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        ensure_len("layer norm input", self.dim(), x.len())?;
        let mut y = x.to_vec();
        self.forward_in_place(&mut y);
        Ok(y)
    }

    /// Normalizes `x` in place; returns `1 / sqrt(var + eps)`.
    #[inline]
    pub fn forward_in_place(&self, x: &mut [T]) -> T {
        debug_assert_eq!(x.len(), self.dim());
        let (mean, inv_std) = moments(x, self.epsilon);
        for ((v, g), b) in x.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *v = *g * ((*v - mean) * inv_std) + *b;
        }
        inv_std
    }

    pub fn cast<U: Scalar>(&self) -> LayerNormParams<U> {
        LayerNormParams {
            gamma: self.gamma.iter().map(|v| U::lit(v.as_f64())).collect(),
            beta: self.beta.iter().map(|v| U::lit(v.as_f64())).collect(),
            epsilon: U::lit(self.epsilon.as_f64()),
        }
    }
}

/// Mean and `1 / sqrt(var + eps)`, two-pass.
#[inline]
pub(crate) fn moments<T: Scalar>(x: &[T], epsilon: T) -> (T, T) {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x
        .iter()
        .map(|v| {
            let d = *v - mean;
            d * d
        })
        .sum::<T>()
        / n;
    (mean, T::one() / (var + epsilon).sqrt())
}

pub fn layer_norm<T: Scalar>(params: &LayerNormParams<T>, x: &[T]) -> Result<Vec<T>> {
    params.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_yields_beta() {
        let p = LayerNormParams::new(vec![2.0f64, -3.0, 0.5], vec![0.1, 0.2, 0.3], 1e-5).unwrap();
        assert_eq!(p.forward(&[4.0, 4.0, 4.0]).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn unit_variance_input_passes_through() {
        let p = LayerNormParams::identity(2, 1e-300f64);
        let y = p.forward(&[1.0, -1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LayerNormParams::new(vec![1.0f32], vec![0.0], 0.0).is_err());
        assert!(LayerNormParams::new(vec![1.0f32], vec![0.0, 0.0], 1e-5).is_err());
        assert!(LayerNormParams::<f32>::new(vec![], vec![], 1e-5).is_err());
        let p = LayerNormParams::identity(3, 1e-5f32);
        assert!(p.forward(&[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariant(x in prop::collection::vec(-5.0f64..5.0, 2..32), c in -100.0f64..100.0) {
            let p = LayerNormParams::identity(x.len(), DEFAULT_EPSILON);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let (a, b) = (p.forward(&x).unwrap(), p.forward(&shifted).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn standardizes_non_constant_input(x in prop::collection::vec(-5.0f64..5.0, 2..64)) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 0.5);
            // epsilon small enough that its effect is below tolerance
            let p = LayerNormParams::identity(x.len(), 1e-12);
            let y = p.forward(&x).unwrap();
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
