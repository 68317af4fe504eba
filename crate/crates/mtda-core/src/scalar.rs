//! Generic scalar type for all numeric kernels.
//!
//! Training and evaluation run either in `f32` (default, fast) or `f64`
//! (deterministic oracle mode, selected via `MTDA_DETERMINISTIC=1` in the
//! CLI). Everything numeric is generic over [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable in every kernel: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short dtype tag recorded in checkpoints and dataset containers.
    const DTYPE: &'static str;

    /// Lossless conversion from f64 literals (rounds for f32).
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Bit pattern, zero-extended to 64 bits. Used for checksums.
    fn bits64(self) -> u64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn bits64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn bits64(self) -> u64 {
        self.to_bits()
    }
}

/// FNV-1a over the bit patterns of a parameter stream. Bit-exact equality
/// proxy for "these tensors are identical".
pub fn fold_bits(hash: &mut u64, values: &[impl Scalar + Copy]) {
    const PRIME: u64 = 0x100_0000_01b3;
    for v in values {
        let mut b = v.bits64();
        for _ in 0..8 {
            *hash ^= b & 0xff;
            *hash = hash.wrapping_mul(PRIME);
            b >>= 8;
        }
    }
}

/// Starting value for [`fold_bits`] chains.
pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_roundtrip() {
        assert_eq!(1.5f32.bits64(), u64::from(1.5f32.to_bits()));
        assert_eq!(1.5f64.bits64(), 1.5f64.to_bits());
    }

    #[test]
    fn fold_bits_discriminates() {
        let mut a = FNV_OFFSET;
        let mut b = FNV_OFFSET;
        fold_bits(&mut a, &[1.0f64, 2.0]);
        fold_bits(&mut b, &[1.0f64, 2.0000000001]);
        assert_ne!(a, b);

        let mut c = FNV_OFFSET;
        fold_bits(&mut c, &[1.0f64, 2.0]);
        assert_eq!(a, c);
    }
}
