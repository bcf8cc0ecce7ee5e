//! Truncated higher-order Walsh kernel
//! `omega(x) = sum_{k=1}^{b^(alpha m)-1} b^(-mu_alpha(k)) wal_k(x)`.
//!
//! The sum is evaluated by a dynamic program over the digit positions of the
//! frequency `k`, visiting the largest position `alpha*m` first. The state is
//! the number of nonzero frequency digits taken so far, capped at `alpha`; a
//! nonzero digit at position `a` picks up `b^(-a)` while the count is below
//! `alpha`, so exactly the `alpha` largest positions enter `mu_alpha(k)`.
//! Summing the character over the `b-1` nonzero digit values gives `b-1` when
//! the coordinate digit is zero and `-1` otherwise.

use crate::error::{Error, Result};

use super::digits::{checked_pow, digit_at};

pub const MAX_ALPHA: u32 = 16;

/// Prepared kernel for fixed `(b, alpha, m)`.
#[derive(Clone, Debug)]
pub struct WalshKernel {
    b: u32,
    alpha: u32,
    digits: u32,
    limit: u64,
    pow_neg: Vec<f64>,
    chunks: Option<ByteChunks>,
}

/// For base 2: the DP transfer over each group of 8 bit positions, tabulated
/// per byte value. Entry `[c][byte][from][to]`, stored flat.
#[derive(Clone, Debug)]
struct ByteChunks {
    count: usize,
    dim: usize,
    table: Vec<f64>,
}

impl ByteChunks {
    fn new(alpha: u32, digits: u32, pow_neg: &[f64]) -> Self {
        let dim = alpha as usize + 1;
        let count = digits.div_ceil(8) as usize;
        let mut table = vec![0.0; count * 256 * dim * dim];
        for c in 0..count {
            let bits = (digits as usize - 8 * c).min(8);
            for byte in 0..(1usize << bits) {
                let mut mat = vec![0.0; dim * dim];
                for i in 0..dim {
                    mat[i * dim + i] = 1.0;
                }
                for t in 0..bits {
                    let a = digits as usize - (8 * c + t);
                    let f = if (byte >> t) & 1 == 0 { 1.0 } else { -1.0 };
                    let fw = f * pow_neg[a];
                    // right-multiply by the single-position transfer
                    let mut next = vec![0.0; dim * dim];
                    for i in 0..dim {
                        for j in 0..dim {
                            let v = mat[i * dim + j];
                            if v == 0.0 {
                                continue;
                            }
                            if j < dim - 1 {
                                next[i * dim + j] += v;
                                next[i * dim + j + 1] += v * fw;
                            } else {
                                next[i * dim + j] += v * (1.0 + f);
                            }
                        }
                    }
                    mat = next;
                }
                let off = (c * 256 + byte) * dim * dim;
                table[off..off + dim * dim].copy_from_slice(&mat);
            }
        }
        ByteChunks { count, dim, table }
    }

    #[inline]
    fn eval(&self, x: u64) -> f64 {
        let dim = self.dim;
        let mut st = [0.0f64; MAX_ALPHA as usize + 1];
        st[0] = 1.0;
        for c in 0..self.count {
            let byte = ((x >> (8 * c)) & 0xFF) as usize;
            let mat = &self.table[(c * 256 + byte) * dim * dim..][..dim * dim];
            let mut next = [0.0f64; MAX_ALPHA as usize + 1];
            for i in 0..dim {
                let si = st[i];
                if si == 0.0 {
                    continue;
                }
                for j in i..dim {
                    next[j] += si * mat[i * dim + j];
                }
            }
            st = next;
        }
        st[..dim].iter().sum::<f64>() - 1.0
    }
}

impl WalshKernel {
    pub fn new(b: u32, alpha: u32, m: u32) -> Result<Self> {
        if !crate::gfpoly::is_prime(b) {
            return Err(Error::InvalidBase(b));
        }
        if alpha == 0 || alpha > MAX_ALPHA {
            return Err(Error::InvalidArgument(format!(
                "interlacing order must lie in 1..={MAX_ALPHA}, got {alpha}"
            )));
        }
        let digits = alpha
            .checked_mul(m)
            .ok_or_else(|| Error::Overflow("alpha * m".into()))?;
        let limit = checked_pow(b, digits)?;
        let pow_neg: Vec<f64> = (0..=digits).map(|a| (b as f64).powi(-(a as i32))).collect();
        let chunks = (b == 2).then(|| ByteChunks::new(alpha, digits, &pow_neg));
        Ok(WalshKernel {
            b,
            alpha,
            digits,
            limit,
            pow_neg,
            chunks,
        })
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    /// Kernel value at the coordinate with numerator `x` over `b^(alpha m)`.
    pub fn eval(&self, x: u64) -> Result<f64> {
        if x >= self.limit {
            return Err(Error::CoordinateOutOfRange);
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: u64) -> f64 {
        match &self.chunks {
            Some(chunks) => chunks.eval(x),
            None => self.eval_digitwise(x),
        }
    }

    /// The DP one digit position at a time.
    pub fn eval_digitwise(&self, x: u64) -> f64 {
        let alpha = self.alpha as usize;
        let mut st = [0.0f64; MAX_ALPHA as usize + 1];
        st[0] = 1.0;
        let nonzero_on_zero = (self.b - 1) as f64;
        for a in (1..=self.digits).rev() {
            let xi = digit_at(x, a, self.digits, self.b);
            let f = if xi == 0 { nonzero_on_zero } else { -1.0 };
            let fw = f * self.pow_neg[a as usize];
            st[alpha] = st[alpha] * (1.0 + f) + st[alpha - 1] * fw;
            for c in (1..alpha).rev() {
                st[c] += st[c - 1] * fw;
            }
        }
        st[..=alpha].iter().sum::<f64>() - 1.0
    }
}

/// One-off evaluation of the kernel at a coordinate with `alpha * m` digits.
pub fn walsh_kernel(x: u64, alpha: u32, m: u32, b: u32) -> Result<f64> {
    WalshKernel::new(b, alpha, m)?.eval(x)
}
