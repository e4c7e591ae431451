use crate::scalar::Scalar;

/// Exact GELU, `x · Φ(x)` with Φ the standard normal CDF.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    x * normal_cdf(x)
}

#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    // 1 / sqrt(2π)
    T::lit(0.398_942_280_401_432_7) * (-(x * x) * T::lit(0.5)).exp()
}

/// d/dx GELU(x) = Φ(x) + x·φ(x).
#[inline]
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn gelu_in_place<T: Scalar>(xs: &mut [T]) {
    for v in xs {
        *v = gelu(*v);
    }
}
