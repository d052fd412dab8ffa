//! Arithmetic in the 64-bit prime field with modulus `p = 2^64 - 2^32 + 1`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

/// `2^32 - 1`, so that `p = 2^64 - EPSILON`.
const EPSILON: u64 = 0xFFFF_FFFF;

/// A field element held in canonical form `[0, p)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Felt(u64);

impl Felt {
    pub const MODULUS: u64 = 0xFFFF_FFFF_0000_0001;
    pub const ZERO: Felt = Felt(0);
    pub const ONE: Felt = Felt(1);

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub const fn new(v: u64) -> Self {
        if v >= Self::MODULUS {
            Felt(v - Self::MODULUS)
        } else {
            Felt(v)
        }
    }

    /// Maps a signed integer to its residue class.
    #[inline]
    pub fn from_i64(v: i64) -> Self {
        if v >= 0 {
            Felt::new(v as u64)
        } else {
            -Felt::new(v.unsigned_abs())
        }
    }

    #[inline]
    pub const fn as_u64(self) -> u64 {
        self.0
    }

    /// Signed interpretation: values above `p/2` are read as negative.
    pub fn to_i64_centered(self) -> Option<i64> {
        let half = Self::MODULUS / 2;
        if self.0 <= half {
            i64::try_from(self.0).ok()
        } else {
            i64::try_from(Self::MODULUS - self.0).ok().map(|v| -v)
        }
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = Felt::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base = base.square();
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(Self::MODULUS - 2))
        }
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    /// Strict decoding: rejects non-canonical encodings.
    pub fn from_le_bytes(bytes: [u8; 8]) -> Option<Self> {
        let v = u64::from_le_bytes(bytes);
        (v < Self::MODULUS).then_some(Felt(v))
    }

    /// Fixed-width (16 hex digit) big-endian rendering.
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        let v = u64::from_str_radix(s, 16).ok()?;
        (v < Self::MODULUS).then_some(Felt(v))
    }
}

#[inline]
fn reduce128(x: u128) -> u64 {
    let lo = x as u64;
    let hi = (x >> 64) as u64;
    let hi_hi = hi >> 32;
    let hi_lo = hi & EPSILON;

    let (mut t0, borrow) = lo.overflowing_sub(hi_hi);
    if borrow {
        t0 = t0.wrapping_sub(EPSILON);
    }
    let t1 = hi_lo * EPSILON;
    let (sum, carry) = t0.overflowing_add(t1);
    let r = sum.wrapping_add(EPSILON * carry as u64);
    if r >= Felt::MODULUS {
        r - Felt::MODULUS
    } else {
        r
    }
}

impl Add for Felt {
    type Output = Felt;
    #[inline]
    fn add(self, rhs: Felt) -> Felt {
        let (s, carry) = self.0.overflowing_add(rhs.0);
        if carry {
            Felt(s.wrapping_add(EPSILON))
        } else if s >= Self::MODULUS {
            Felt(s - Self::MODULUS)
        } else {
            Felt(s)
        }
    }
}

impl Sub for Felt {
    type Output = Felt;
    #[inline]
    fn sub(self, rhs: Felt) -> Felt {
        let (d, borrow) = self.0.overflowing_sub(rhs.0);
        if borrow {
            Felt(d.wrapping_sub(EPSILON))
        } else {
            Felt(d)
        }
    }
}

impl Mul for Felt {
    type Output = Felt;
    #[inline]
    fn mul(self, rhs: Felt) -> Felt {
        Felt(reduce128(self.0 as u128 * rhs.0 as u128))
    }
}

impl Neg for Felt {
    type Output = Felt;
    #[inline]
    fn neg(self) -> Felt {
        if self.0 == 0 {
            self
        } else {
            Felt(Self::MODULUS - self.0)
        }
    }
}

impl AddAssign for Felt {
    fn add_assign(&mut self, rhs: Felt) {
        *self = *self + rhs;
    }
}

impl SubAssign for Felt {
    fn sub_assign(&mut self, rhs: Felt) {
        *self = *self - rhs;
    }
}

impl MulAssign for Felt {
    fn mul_assign(&mut self, rhs: Felt) {
        *self = *self * rhs;
    }
}

impl Sum for Felt {
    fn sum<I: Iterator<Item = Felt>>(iter: I) -> Felt {
        iter.fold(Felt::ZERO, |a, b| a + b)
    }
}

impl From<u64> for Felt {
    fn from(v: u64) -> Self {
        Felt::new(v)
    }
}

impl From<bool> for Felt {
    fn from(v: bool) -> Self {
        Felt(v as u64)
    }
}

impl fmt::Debug for Felt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Felt({})", self.0)
    }
}

impl fmt::Display for Felt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Field elements travel through JSON as 16-digit hex strings.
impl Serialize for Felt {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Felt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Felt::from_hex(&s).ok_or_else(|| de::Error::custom(format!("invalid field element {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: u128 = Felt::MODULUS as u128;

    fn reference_mul(a: u64, b: u64) -> u64 {
        ((a as u128 % P) * (b as u128 % P) % P) as u64
    }

    proptest! {
        #[test]
        fn ops_match_wide_reference(a in any::<u64>(), b in any::<u64>()) {
            let (fa, fb) = (Felt::new(a), Felt::new(b));
            let (ra, rb) = (a as u128 % P, b as u128 % P);
            prop_assert_eq!((fa + fb).as_u64() as u128, (ra + rb) % P);
            prop_assert_eq!((fa - fb).as_u64() as u128, (ra + P - rb) % P);
            prop_assert_eq!((fa * fb).as_u64(), reference_mul(a, b));
            prop_assert_eq!(fa + (-fa), Felt::ZERO);
        }

        #[test]
        fn inverse_is_inverse(a in 1u64..Felt::MODULUS) {
            let f = Felt::new(a);
            prop_assert_eq!(f * f.inverse().unwrap(), Felt::ONE);
        }

        #[test]
        fn distributive(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let (a, b, c) = (Felt::new(a), Felt::new(b), Felt::new(c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
        }

        #[test]
        fn hex_round_trip(a in any::<u64>()) {
            let f = Felt::new(a);
            prop_assert_eq!(Felt::from_hex(&f.to_hex()), Some(f));
        }
    }

    #[test]
    fn extreme_products_reduce() {
        let m1 = Felt::new(Felt::MODULUS - 1);
        assert_eq!(m1 * m1, Felt::ONE);
        assert_eq!(Felt::new(u64::MAX).as_u64(), u64::MAX - Felt::MODULUS);
        assert!(Felt::ZERO.inverse().is_none());
    }

    #[test]
    fn signed_round_trip() {
        for v in [-5i64, 0, 7, -1 << 40, 1 << 40] {
            assert_eq!(Felt::from_i64(v).to_i64_centered(), Some(v));
        }
    }

    #[test]
    fn non_canonical_bytes_rejected() {
        assert!(Felt::from_le_bytes(u64::MAX.to_le_bytes()).is_none());
        assert!(Felt::from_hex("ffffffffffffffff").is_none());
    }
}
