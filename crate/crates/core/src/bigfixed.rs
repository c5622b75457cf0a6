//! Binary fixed-point reals on top of `BigInt`: value = mantissa · 2^-bits.
//!
//! Just enough arithmetic for the final-size recursion, where every
//! quantity is bounded and what matters is absolute accuracy.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Fixed {
    pub mantissa: BigInt,
    pub bits: u64,
}

impl Fixed {
    pub fn zero(bits: u64) -> Self {
        Fixed { mantissa: BigInt::zero(), bits }
    }

    pub fn one(bits: u64) -> Self {
        Fixed { mantissa: BigInt::one() << bits, bits }
    }

    /// Exact for every finite double whose lowest set bit is at or above
    /// 2^-bits; otherwise truncated.
    pub fn from_f64(x: f64, bits: u64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fixed::zero(bits);
        }
        let raw = x.abs().to_bits();
        let exp = ((raw >> 52) & 0x7ff) as i64;
        let frac = raw & ((1u64 << 52) - 1);
        let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        let mut mantissa = BigInt::from(m);
        let shift = e + bits as i64;
        if shift >= 0 {
            mantissa <<= shift as u64;
        } else {
            mantissa >>= (-shift) as u64;
        }
        if x < 0.0 {
            mantissa = -mantissa;
        }
        Fixed { mantissa, bits }
    }

    pub fn to_f64(&self) -> f64 {
        let negative = self.mantissa.is_negative();
        let mag = self.mantissa.abs();
        let len = mag.bits();
        let shift = len.saturating_sub(64);
        let top = (&mag >> shift).to_f64().unwrap_or(0.0);
        let v = ldexp(top, shift as i64 - self.bits as i64);
        if negative {
            -v
        } else {
            v
        }
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        debug_assert_eq!(self.bits, o.bits);
        Fixed { mantissa: &self.mantissa + &o.mantissa, bits: self.bits }
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        debug_assert_eq!(self.bits, o.bits);
        Fixed { mantissa: &self.mantissa - &o.mantissa, bits: self.bits }
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        debug_assert_eq!(self.bits, o.bits);
        Fixed { mantissa: (&self.mantissa * &o.mantissa) >> self.bits, bits: self.bits }
    }

    pub fn mul_int(&self, k: &BigInt) -> Fixed {
        Fixed { mantissa: &self.mantissa * k, bits: self.bits }
    }

    pub fn div(&self, o: &Fixed) -> Fixed {
        debug_assert_eq!(self.bits, o.bits);
        Fixed { mantissa: (&self.mantissa << self.bits) / &o.mantissa, bits: self.bits }
    }

    pub fn div_int(&self, k: u64) -> Fixed {
        Fixed { mantissa: &self.mantissa / BigInt::from(k), bits: self.bits }
    }

    pub fn powi(&self, mut e: u32) -> Fixed {
        let mut base = self.clone();
        let mut acc = Fixed::one(self.bits);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    fn rescale(&self, bits: u64) -> Fixed {
        let mantissa = if bits >= self.bits {
            &self.mantissa << (bits - self.bits)
        } else {
            &self.mantissa >> (self.bits - bits)
        };
        Fixed { mantissa, bits }
    }

    /// e^{-x} for x ≥ 0: argument halving, Taylor series, repeated squaring.
    pub fn exp_neg(&self) -> Fixed {
        assert!(!self.mantissa.is_negative(), "exp_neg needs x >= 0");
        let int_bits = (&self.mantissa >> self.bits).bits();
        let halvings = int_bits + 6;
        let work = self.bits + 64 + halvings;
        let mut y = self.rescale(work);
        y.mantissa >>= halvings;
        let mut sum = Fixed::one(work);
        let mut term = Fixed::one(work);
        let mut j = 1u64;
        loop {
            term = term.mul(&y).div_int(j);
            if term.mantissa.is_zero() {
                break;
            }
            if j % 2 == 1 {
                sum = sum.sub(&term);
            } else {
                sum = sum.add(&term);
            }
            j += 1;
        }
        for _ in 0..halvings {
            sum = sum.mul(&sum);
        }
        sum.rescale(self.bits)
    }
}

fn ldexp(x: f64, e: i64) -> f64 {
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_doubles() {
        for x in [0.0, 1.0, -2.5, 0.1, 1e-30, 123456.789] {
            assert_eq!(Fixed::from_f64(x, 300).to_f64(), x);
        }
        assert_eq!(Fixed::from_f64(0.75, 4000).to_f64(), 0.75);
    }

    #[test]
    fn exp_matches_libm() {
        for x in [0.0, 1e-5, 0.5, 1.0, 2.0, 7.3, 40.0] {
            let v = Fixed::from_f64(x, 256).exp_neg().to_f64();
            assert!((v - (-x).exp()).abs() <= 1e-15 * (-x).exp(), "{x}");
        }
    }

    #[test]
    fn exp_is_multiplicative_to_high_precision() {
        let bits = 400;
        let a = Fixed::from_f64(0.3, bits);
        let b = Fixed::from_f64(1.7, bits);
        let lhs = a.add(&b).exp_neg();
        let rhs = a.exp_neg().mul(&b.exp_neg());
        let diff = lhs.sub(&rhs).mantissa.abs();
        assert!(diff.bits() < 8, "{}", diff);
    }

    #[test]
    fn arithmetic() {
        let bits = 128;
        let a = Fixed::from_f64(3.0, bits);
        let b = Fixed::from_f64(0.5, bits);
        assert_eq!(a.mul(&b).to_f64(), 1.5);
        assert_eq!(a.div(&b).to_f64(), 6.0);
        assert_eq!(b.powi(5).to_f64(), 1.0 / 32.0);
        assert_eq!(a.mul_int(&BigInt::from(7)).to_f64(), 21.0);
    }
}
