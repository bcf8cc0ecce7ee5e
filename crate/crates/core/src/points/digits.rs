//! Digit-level primitives: the digit weight, digit interlacing and Walsh
//! functions on fixed-point coordinates.
//!
//! A fixed-point coordinate with `d` base-b digits is stored as its numerator
//! over `b^d`; digit position 1 is the most significant fractional digit.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `b^e`, failing when it does not fit in a `u64`.
pub fn checked_pow(b: u32, e: u32) -> Result<u64> {
    (b as u64)
        .checked_pow(e)
        .ok_or_else(|| Error::Overflow(format!("{b}^{e} does not fit in 64 bits")))
}

/// Digit at fractional position `pos` (1-based) of a coordinate with
/// `digits` digits.
#[inline]
pub fn digit_at(x: u64, pos: u32, digits: u32, b: u32) -> u32 {
    if pos > digits {
        return 0;
    }
    let shift = digits - pos;
    if b == 2 {
        return ((x >> shift) & 1) as u32;
    }
    ((x / (b as u64).pow(shift)) % b as u64) as u32
}

/// Digit weight `mu_alpha(k)`: the sum of the positions of the `alpha` most
/// significant nonzero base-b digits of `k`, where digit `b^(a-1)` sits at
/// position `a`.
pub fn digit_weight(k: u64, alpha: u32, b: u32) -> u32 {
    let mut positions = Vec::new();
    let (mut k, mut pos) = (k, 1u32);
    while k > 0 {
        if k % b as u64 != 0 {
            positions.push(pos);
        }
        k /= b as u64;
        pos += 1;
    }
    positions.iter().rev().take(alpha as usize).sum()
}

/// Interlaces `alpha` coordinates of `m` digits each into one coordinate of
/// `alpha * m` digits: output position `alpha*(l-1) + i` holds digit `l` of
/// input `i`.
pub fn interlace(alpha: u32, b: u32, m: u32, slots: &[u64]) -> Result<u64> {
    if slots.len() != alpha as usize {
        return Err(Error::DimensionMismatch(format!(
            "interlacing of order {alpha} needs {alpha} inputs, got {}",
            slots.len()
        )));
    }
    let limit = checked_pow(b, m)?;
    let total = alpha
        .checked_mul(m)
        .ok_or_else(|| Error::Overflow("alpha * m".into()))?;
    checked_pow(b, total)?;
    if slots.iter().any(|&v| v >= limit) {
        return Err(Error::CoordinateOutOfRange);
    }
    let mut out = 0u64;
    for l in 1..=m {
        for &slot in slots {
            out = out * b as u64 + digit_at(slot, l, m, b) as u64;
        }
    }
    Ok(out)
}

/// Walsh function `wal_k(x) = prod_a zeta^(kappa_a * xi_a)` with
/// `zeta = exp(2 pi i / b)`, pairing the digit of `k` at `b^(a-1)` with the
/// fractional digit of `x` at position `a`.
pub fn walsh_eval(k: u64, x: u64, digits: u32, b: u32) -> Complex64 {
    let mut exponent = 0u64;
    let (mut k, mut pos) = (k, 1u32);
    while k > 0 && pos <= digits {
        let kappa = k % b as u64;
        if kappa != 0 {
            exponent += kappa * digit_at(x, pos, digits, b) as u64;
        }
        k /= b as u64;
        pos += 1;
    }
    let e = exponent % b as u64;
    if e == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if b == 2 {
        return Complex64::new(-1.0, 0.0);
    }
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * e as f64 / b as f64)
}
