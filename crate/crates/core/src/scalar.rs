//! Floating-point abstraction shared by the metric and ranking code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type usable for concordance scores and ranking vectors.
///
/// Implemented for `f32` and `f64`. Metric denominators are integer pixel
/// counts, so conversion goes through `FromPrimitive`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("pixel count representable as float")
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        Self::lit(0.5 * libm::erfc(-self.as_f64() / std::f64::consts::SQRT_2))
    }

    /// Standard normal density.
    fn norm_pdf(self) -> Self {
        let x = self.as_f64();
        Self::lit((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((0.0f64.norm_cdf() - 0.5).abs() < 1e-15);
        assert!((1.959963984540054f64.norm_cdf() - 0.975).abs() < 1e-12);
        assert!(((-1.0f64).norm_cdf() - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((0.674_489_75_f32.norm_cdf() - 0.75).abs() < 1e-6);
    }

    #[test]
    fn normal_pdf_peak() {
        assert!((0.0f64.norm_pdf() - 0.398_942_280_401_432_7).abs() < 1e-15);
    }
}
