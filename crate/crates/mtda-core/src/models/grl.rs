//! Gradient reversal: identity forward, negated scaled gradient backward.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The reversal operator. `forward` is the exact identity; `backward` maps an
/// upstream gradient g to -lambda * g elementwise.
#[derive(Debug, Clone, Copy)]
pub struct GradientReversal<S> {
    lambda: S,
}

impl<S: Scalar> GradientReversal<S> {
    pub fn new(lambda: S) -> Result<Self> {
        if lambda < S::zero() {
            return Err(Error::Argument(format!("lambda {lambda} must be nonnegative")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    /// Bit-exact identity.
    pub fn forward(&self, features: &Array2<S>) -> Array2<S> {
        features.clone()
    }

    /// -lambda * g, elementwise.
    pub fn backward(&self, upstream: &Array2<S>) -> Array2<S> {
        upstream.mapv(|g| -self.lambda * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_is_identity_bit_exact() {
        let grl = GradientReversal::new(0.5f64).unwrap();
        let x = array![[1.5, -2.0], [0.1, 1e-300]];
        let y = grl.forward(&x);
        for (a, b) in x.iter().zip(y.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn backward_negates_and_scales() {
        let grl = GradientReversal::new(0.5f64).unwrap();
        let g = grl.backward(&array![[1.0, -2.0]]);
        assert_eq!(g, array![[-0.5, 1.0]]);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(GradientReversal::new(-0.1f64).is_err());
    }
}
