//! Polynomials over a prime field F_b.
//!
//! [`PolyFb`] is the exact-arithmetic carrier for the modulus and generating
//! polynomials of polynomial lattice rules. Polynomials are identified with
//! integers through their base-b digits (coefficient `i` is digit `i`), so
//! `x^2 + x + 1` over F_2 is the integer 7.
//!
//! [`ResidueRing`] works directly on those integer encodings modulo a fixed
//! irreducible modulus and is what point generation and the CBC search use in
//! their inner loops.

use std::fmt;

use crate::error::{Error, Result};

/// Smallest-weight irreducible polynomials over F_2, indexed by degree.
const BINARY_IRREDUCIBLE: [u64; 21] = [
    0,
    0b10,                       // x
    0b111,                      // x^2+x+1
    0b1011,                     // x^3+x+1
    0b10011,                    // x^4+x+1
    0b100101,                   // x^5+x^2+1
    0b1000011,                  // x^6+x+1
    0b10000011,                 // x^7+x+1
    0x11D,                      // x^8+x^4+x^3+x^2+1
    0x211,                      // x^9+x^4+1
    0x409,                      // x^10+x^3+1
    0x805,                      // x^11+x^2+1
    0x1053,                     // x^12+x^6+x^4+x+1
    0x201B,                     // x^13+x^4+x^3+x+1
    0x4443,                     // x^14+x^10+x^6+x+1
    0x8003,                     // x^15+x+1
    0x1100B,                    // x^16+x^12+x^3+x+1
    0x20009,                    // x^17+x^3+1
    0x40081,                    // x^18+x^7+1
    0x80027,                    // x^19+x^5+x^2+x+1
    0x100009,                   // x^20+x^3+1
];

pub fn is_prime(b: u32) -> bool {
    if b < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= b as u64 {
        if b.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

fn check_base(b: u32) -> Result<()> {
    if is_prime(b) {
        Ok(())
    } else {
        Err(Error::InvalidBase(b))
    }
}

fn inv_mod(a: u32, b: u32) -> u32 {
    debug_assert!(!a.is_multiple_of(b));
    // Fermat: a^(b-2) mod b
    let (mut base, mut e, mut acc) = (a as u64 % b as u64, b - 2, 1u64);
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * base % b as u64;
        }
        base = base * base % b as u64;
        e >>= 1;
    }
    acc as u32
}

/// A polynomial over F_b in canonical form (no trailing zero coefficients).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PolyFb {
    base: u32,
    coeffs: Vec<u32>,
}

impl fmt::Debug for PolyFb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolyFb(b={}, {:?})", self.base, self.coeffs)
    }
}

impl fmt::Display for PolyFb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match (i, c) {
                (0, _) => write!(f, "{c}")?,
                (1, 1) => write!(f, "x")?,
                (1, _) => write!(f, "{c}x")?,
                (_, 1) => write!(f, "x^{i}")?,
                _ => write!(f, "{c}x^{i}")?,
            }
        }
        Ok(())
    }
}

impl PolyFb {
    /// Builds a polynomial from coefficients (index `i` holds the coefficient
    /// of `x^i`), trimming trailing zeros.
    pub fn new(base: u32, coeffs: Vec<u32>) -> Result<Self> {
        check_base(base)?;
        if let Some(&coeff) = coeffs.iter().find(|&&c| c >= base) {
            return Err(Error::CoefficientOutOfRange { coeff, base });
        }
        Ok(Self::from_raw(base, coeffs))
    }

    fn from_raw(base: u32, mut coeffs: Vec<u32>) -> Self {
        while coeffs.last() == Some(&0) {
            coeffs.pop();
        }
        PolyFb { base, coeffs }
    }

    pub fn zero(base: u32) -> Result<Self> {
        Self::new(base, Vec::new())
    }

    pub fn one(base: u32) -> Result<Self> {
        Self::new(base, vec![1])
    }

    /// `x^k`.
    pub fn monomial(base: u32, k: usize) -> Result<Self> {
        let mut coeffs = vec![0; k + 1];
        coeffs[k] = 1;
        Self::new(base, coeffs)
    }

    /// Decodes the base-b digits of `enc` into coefficients.
    pub fn from_int(base: u32, mut enc: u64) -> Result<Self> {
        check_base(base)?;
        let mut coeffs = Vec::new();
        while enc > 0 {
            coeffs.push((enc % base as u64) as u32);
            enc /= base as u64;
        }
        Ok(PolyFb { base, coeffs })
    }

    /// Inverse of [`PolyFb::from_int`].
    pub fn to_int(&self) -> Result<u64> {
        let mut acc: u64 = 0;
        for &c in self.coeffs.iter().rev() {
            acc = acc
                .checked_mul(self.base as u64)
                .and_then(|v| v.checked_add(c as u64))
                .ok_or_else(|| Error::Overflow(format!("{self} in base {}", self.base)))?;
        }
        Ok(acc)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    /// Coefficient of `x^i` (zero past the degree).
    pub fn coeff(&self, i: usize) -> u32 {
        self.coeffs.get(i).copied().unwrap_or(0)
    }

    /// `None` encodes the degree of the zero polynomial (-infinity).
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn leading(&self) -> u32 {
        self.coeffs.last().copied().unwrap_or(0)
    }

    fn same_base(&self, other: &PolyFb) -> Result<()> {
        if self.base != other.base {
            Err(Error::BaseMismatch(self.base, other.base))
        } else {
            Ok(())
        }
    }

    pub fn add(&self, other: &PolyFb) -> Result<PolyFb> {
        self.same_base(other)?;
        let b = self.base;
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|i| (self.coeff(i) + other.coeff(i)) % b)
            .collect();
        Ok(Self::from_raw(b, coeffs))
    }

    pub fn sub(&self, other: &PolyFb) -> Result<PolyFb> {
        self.same_base(other)?;
        let b = self.base;
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|i| (self.coeff(i) + b - other.coeff(i)) % b)
            .collect();
        Ok(Self::from_raw(b, coeffs))
    }

    pub fn mul(&self, other: &PolyFb) -> Result<PolyFb> {
        self.same_base(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Self::from_raw(self.base, Vec::new()));
        }
        let b = self.base as u64;
        let mut acc = vec![0u64; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &x) in self.coeffs.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in other.coeffs.iter().enumerate() {
                acc[i + j] = (acc[i + j] + x as u64 * y as u64) % b;
            }
        }
        Ok(Self::from_raw(self.base, acc.into_iter().map(|c| c as u32).collect()))
    }

    /// Euclidean division: returns `(quotient, remainder)` with
    /// `deg(remainder) < deg(divisor)`.
    pub fn div_rem(&self, divisor: &PolyFb) -> Result<(PolyFb, PolyFb)> {
        self.same_base(divisor)?;
        let dd = divisor.degree().ok_or(Error::ZeroModulus)?;
        let b = self.base as u64;
        let inv = inv_mod(divisor.leading(), self.base) as u64;
        let mut rem: Vec<u64> = self.coeffs.iter().map(|&c| c as u64).collect();
        if rem.len() <= dd {
            return Ok((Self::from_raw(self.base, Vec::new()), self.clone()));
        }
        let mut quot = vec![0u64; rem.len() - dd];
        for top in (dd..rem.len()).rev() {
            let c = rem[top] % b;
            if c == 0 {
                continue;
            }
            let factor = c * inv % b;
            quot[top - dd] = factor;
            for (i, &d) in divisor.coeffs.iter().enumerate() {
                let idx = top - dd + i;
                rem[idx] = (rem[idx] + b * b - factor * d as u64 % b) % b;
            }
        }
        rem.truncate(dd);
        Ok((
            Self::from_raw(self.base, quot.into_iter().map(|c| c as u32).collect()),
            Self::from_raw(self.base, rem.into_iter().map(|c| c as u32).collect()),
        ))
    }

    pub fn rem(&self, divisor: &PolyFb) -> Result<PolyFb> {
        Ok(self.div_rem(divisor)?.1)
    }
}

/// `(a * c) mod p`.
pub fn poly_mul_mod(a: &PolyFb, c: &PolyFb, p: &PolyFb) -> Result<PolyFb> {
    a.same_base(c)?;
    a.same_base(p)?;
    match p.degree() {
        None => return Err(Error::ZeroModulus),
        Some(0) => return Err(Error::ConstantPolynomial),
        Some(_) => {}
    }
    a.mul(c)?.rem(p)
}

/// Trial division by every monic polynomial of degree `1..=deg(p)/2`.
pub fn is_irreducible(p: &PolyFb) -> Result<bool> {
    let d = match p.degree() {
        None | Some(0) => return Err(Error::ConstantPolynomial),
        Some(d) => d,
    };
    let b = p.base as u64;
    for k in 1..=d / 2 {
        let count = b.pow(k as u32);
        for low in 0..count {
            let mut coeffs = Vec::with_capacity(k + 1);
            let mut t = low;
            for _ in 0..k {
                coeffs.push((t % b) as u32);
                t /= b;
            }
            coeffs.push(1);
            let g = PolyFb { base: p.base, coeffs };
            if p.rem(&g)?.is_zero() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// First `w` coefficients `u_1..u_w` of the Laurent expansion
/// `n(x) q(x) / p(x) = sum_{l >= 1} u_l x^{-l}` (polynomial part dropped).
pub fn laurent_digits(n: &PolyFb, q: &PolyFb, p: &PolyFb, w: usize) -> Result<Vec<u32>> {
    n.same_base(q)?;
    n.same_base(p)?;
    let dp = match p.degree() {
        None => return Err(Error::ZeroModulus),
        Some(0) => return Err(Error::ConstantPolynomial),
        Some(d) => d,
    };
    if w == 0 {
        return Err(Error::InvalidArgument("digit count must be >= 1".into()));
    }
    for (name, poly) in [("numerator", n), ("generator", q)] {
        if poly.degree().is_some_and(|d| d >= dp) {
            return Err(Error::Degree(format!(
                "{name} degree must be below the modulus degree {dp}"
            )));
        }
    }
    if !is_irreducible(p)? {
        return Err(Error::ReducibleModulus);
    }
    let b = p.base as u64;
    let inv = inv_mod(p.leading(), p.base) as u64;
    let mut r: Vec<u64> = poly_mul_mod(n, q, p)?
        .coeffs
        .iter()
        .map(|&c| c as u64)
        .collect();
    r.resize(dp, 0);
    let mut digits = Vec::with_capacity(w);
    for _ in 0..w {
        // r <- x * r, then cancel the x^dp term
        r.insert(0, 0);
        let u = r[dp] * inv % b;
        for (i, &pc) in p.coeffs.iter().enumerate() {
            r[i] = (r[i] + b * b - u * pc as u64 % b) % b;
        }
        debug_assert_eq!(r[dp], 0);
        r.truncate(dp);
        digits.push(u as u32);
    }
    Ok(digits)
}

/// An irreducible modulus of degree `m` over F_b: a fixed table for `b = 2`,
/// `m <= 20`, otherwise the smallest monic irreducible found by enumeration.
pub fn irreducible_modulus(b: u32, m: u32) -> Result<PolyFb> {
    check_base(b)?;
    if m == 0 {
        return Err(Error::NoModulus { b, m });
    }
    if b == 2 && (m as usize) < BINARY_IRREDUCIBLE.len() {
        return PolyFb::from_int(2, BINARY_IRREDUCIBLE[m as usize]);
    }
    let lead = (b as u64)
        .checked_pow(m)
        .filter(|v| v.checked_mul(b as u64).is_some())
        .ok_or(Error::NoModulus { b, m })?;
    // enumerating beyond a million candidates is not desk scale
    if lead > 1 << 20 {
        return Err(Error::NoModulus { b, m });
    }
    for low in 0..lead {
        let p = PolyFb::from_int(b, lead + low)?;
        if is_irreducible(&p)? {
            return Ok(p);
        }
    }
    Err(Error::NoModulus { b, m })
}

/// Arithmetic on integer-encoded residues modulo a fixed irreducible modulus
/// of degree `m`, plus the table of Laurent-digit numerators `r(x)/p(x)`.
#[derive(Clone, Debug)]
pub struct ResidueRing {
    base: u32,
    degree: u32,
    modulus: PolyFb,
    size: u64,
    modulus_enc: u64,
    lead_inv: u32,
    numerators: Vec<u64>,
}

impl ResidueRing {
    pub fn new(modulus: &PolyFb) -> Result<Self> {
        let degree = match modulus.degree() {
            None => return Err(Error::ZeroModulus),
            Some(0) => return Err(Error::ConstantPolynomial),
            Some(d) => d as u32,
        };
        if !is_irreducible(modulus)? {
            return Err(Error::ReducibleModulus);
        }
        let base = modulus.base;
        let size = (base as u64)
            .checked_pow(degree)
            .filter(|&s| s <= 1 << 26)
            .ok_or_else(|| Error::Overflow(format!("{base}^{degree} residues")))?;
        let modulus_enc = modulus.to_int()?;
        let mut ring = ResidueRing {
            base,
            degree,
            modulus: modulus.clone(),
            size,
            modulus_enc,
            lead_inv: inv_mod(modulus.leading(), base),
            numerators: Vec::new(),
        };
        let numerators = (0..size)
            .map(|r| {
                let mut cur = r;
                let mut num = 0u64;
                for _ in 0..degree {
                    let (next, u) = ring.shift(cur);
                    cur = next;
                    num = num * base as u64 + u as u64;
                }
                num
            })
            .collect();
        ring.numerators = numerators;
        Ok(ring)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn modulus(&self) -> &PolyFb {
        &self.modulus
    }

    /// Number of residues, `b^m`.
    pub fn size(&self) -> u64 {
        self.size
    }

    fn add(&self, x: u64, y: u64) -> u64 {
        if self.base == 2 {
            return x ^ y;
        }
        let b = self.base as u64;
        let (mut x, mut y, mut out, mut place) = (x, y, 0u64, 1u64);
        while x > 0 || y > 0 {
            out += ((x % b + y % b) % b) * place;
            x /= b;
            y /= b;
            place *= b;
        }
        out
    }

    fn scale(&self, d: u64, x: u64) -> u64 {
        if d == 1 {
            return x;
        }
        let b = self.base as u64;
        let (mut x, mut out, mut place) = (x, 0u64, 1u64);
        while x > 0 {
            out += (x % b * d % b) * place;
            x /= b;
            place *= b;
        }
        out
    }

    /// Multiplies the residue `r` by `x` and reduces. Returns the new residue
    /// and the quotient digit, which is the next Laurent digit of `r/p`.
    fn shift(&self, r: u64) -> (u64, u32) {
        let b = self.base as u64;
        let shifted = r * b;
        let top = shifted / self.size;
        let low = shifted % self.size;
        if top == 0 {
            return (low, 0);
        }
        let u = top * self.lead_inv as u64 % b;
        // subtract u * p; its x^m term cancels `top`
        let up = self.scale(u, self.modulus_enc);
        let up_low = up % self.size;
        let neg = self.scale(b - 1, up_low);
        (self.add(low, neg), u as u32)
    }

    /// `n(x) q(x) mod p` for every `n` in `0..b^m`, indexed by the integer
    /// encoding of `n`.
    pub fn multiples(&self, q: u64) -> Vec<u64> {
        let n = self.size as usize;
        let mut powers = Vec::with_capacity(self.degree as usize);
        let mut cur = q;
        for _ in 0..self.degree {
            powers.push(cur);
            cur = self.shift(cur).0;
        }
        let mut out = vec![0u64; n];
        if self.base == 2 {
            for idx in 1..n {
                let t = usize::BITS - 1 - idx.leading_zeros();
                out[idx] = out[idx ^ (1 << t)] ^ powers[t as usize];
            }
        } else {
            let b = self.base as usize;
            let mut place = 1usize;
            let mut t = 0usize;
            for idx in 1..n {
                if idx >= place * b {
                    place *= b;
                    t += 1;
                }
                let d = idx / place;
                out[idx] = self.add(out[idx - d * place], self.scale(d as u64, powers[t]));
            }
        }
        out
    }

    /// Numerator over `b^m` of the coordinate whose digits are the first `m`
    /// Laurent digits of `r(x)/p(x)`.
    pub fn numerator(&self, r: u64) -> u64 {
        self.numerators[r as usize]
    }
}
