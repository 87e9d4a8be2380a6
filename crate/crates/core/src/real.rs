use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type used throughout the crate: `f32` or `f64`.
///
/// On top of nalgebra's `RealField` this adds the few constants that
/// depend on precision and a bit-exact hexadecimal encoding used by the
/// model container.
pub trait Real:
    RealField + Copy + ToPrimitive + FromPrimitive + FromStr + Display + Debug + LowerExp + Send + Sync
{
    /// Name written into serialized models.
    const NAME: &'static str;

    /// Default Stiefel feasibility tolerance on `||H^T H - I||_F`.
    fn feasibility_tol() -> Self;

    /// Smallest kernel-smoother denominator accepted before reporting underflow.
    fn underflow_floor() -> Self;

    /// Threshold under which a singular value is treated as zero.
    fn rank_tol() -> Self;

    /// Raw IEEE-754 bits as a hex string, e.g. `0x3ff0000000000000`.
    fn to_hex(self) -> String;

    /// Inverse of [`Real::to_hex`].
    fn from_hex(s: &str) -> Option<Self>;

    fn is_finite_value(self) -> bool;

    /// Lossy conversion from a literal. Panics only for values unrepresentable
    /// even approximately, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal converts to Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to Real")
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn feasibility_tol() -> Self {
        1e-8
    }

    fn underflow_floor() -> Self {
        1e-300
    }

    fn rank_tol() -> Self {
        1e-12
    }

    fn to_hex(self) -> String {
        format!("{:#018x}", self.to_bits())
    }

    fn from_hex(s: &str) -> Option<Self> {
        let digits = s.strip_prefix("0x")?;
        u64::from_str_radix(digits, 16).ok().map(f64::from_bits)
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn feasibility_tol() -> Self {
        1e-4
    }

    fn underflow_floor() -> Self {
        f32::MIN_POSITIVE
    }

    fn rank_tol() -> Self {
        1e-6
    }

    fn to_hex(self) -> String {
        format!("{:#010x}", self.to_bits())
    }

    fn from_hex(s: &str) -> Option<Self> {
        let digits = s.strip_prefix("0x")?;
        u32::from_str_radix(digits, 16).ok().map(f32::from_bits)
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_examples() {
        assert_eq!(1.0f64.to_hex(), "0x3ff0000000000000");
        assert_eq!(1.0f32.to_hex(), "0x3f800000");
        assert_eq!(f64::from_hex("0x3ff0000000000000"), Some(1.0));
        assert_eq!(f64::from_hex("3ff0000000000000"), None);
        assert_eq!(f64::from_hex("0xzz"), None);
    }

    proptest! {
        #[test]
        fn hex_round_trip_is_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            let back = f64::from_hex(&v.to_hex()).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
