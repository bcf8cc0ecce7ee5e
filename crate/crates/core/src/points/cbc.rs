//! Component-by-component construction of interlaced polynomial lattice
//! rules under SPOD weights.
//!
//! The figure of merit for a rule with `j` parametric dimensions is
//!
//! ```text
//! E = (1/N) sum_n sum_{l=1}^{alpha j} l! Q_{j,l,n}
//! Q_{r,l,n} = Q_{r-1,l,n} + omega(x_n^(r)) sum_{nu=1}^{min(l,alpha)} 2^[nu=alpha] beta_r^nu Q_{r-1,l-nu,n}
//! ```
//!
//! which expands to `sum_{u != {}} gamma_u (1/N) sum_n prod_{r in u} omega(x_n^(r))`.
//! The DP is carried in the scaled form `P_l = l! Q_l` so that large orders
//! neither overflow nor underflow.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gfpoly::{irreducible_modulus, PolyFb, ResidueRing};
use crate::numeric::NeumaierSum;

use super::kernel::WalshKernel;
use super::rule::{points_from_generators, InterlacedRuleSpec, PointSet, Spreader};
use super::spod::SpodWeights;

/// Candidates whose criterion lies within this fraction of the largest
/// score magnitude of the minimum are treated as tied; the smallest encoding
/// among them wins.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-12;

/// `l! / (l - nu)!`
fn falling(l: usize, nu: usize) -> f64 {
    ((l - nu + 1)..=l).map(|v| v as f64).product()
}

/// Scaled order-dependent DP state, `levels` entries per point.
struct OrderState {
    levels: usize,
    alpha: usize,
    p: Vec<f64>,
    filled: usize,
}

impl OrderState {
    fn new(n: usize, alpha: usize, dims: usize) -> Self {
        let levels = alpha * dims + 1;
        let mut p = vec![0.0; n * levels];
        for row in p.chunks_mut(levels) {
            row[0] = 1.0;
        }
        OrderState {
            levels,
            alpha,
            p,
            filled: 0,
        }
    }

    fn row(&self, n: usize) -> &[f64] {
        &self.p[n * self.levels..(n + 1) * self.levels]
    }

    /// `(1/N) sum_n sum_{l >= 1} P_{l,n}`
    fn criterion(&self) -> f64 {
        let top = self.alpha * self.filled;
        let n = self.p.len() / self.levels;
        let mut acc = NeumaierSum::new();
        for i in 0..n {
            acc.add(self.row(i)[1..=top].iter().sum::<f64>());
        }
        acc.value() / n as f64
    }

    /// Per-point weight multiplying the kernel value of the next dimension.
    fn candidate_weights(&self, factors: &[f64]) -> Vec<f64> {
        let top = self.alpha * self.filled;
        let n = self.p.len() / self.levels;
        (0..n)
            .map(|i| {
                let row = self.row(i);
                let mut acc = 0.0;
                for (nu0, &f) in factors.iter().enumerate() {
                    let nu = nu0 + 1;
                    let inner: f64 = (0..=top).map(|l| falling(l + nu, nu) * row[l]).sum();
                    acc += f * inner;
                }
                acc
            })
            .collect()
    }

    fn push_dimension(&mut self, omega: &[f64], factors: &[f64]) {
        self.filled += 1;
        let top = self.alpha * self.filled;
        let levels = self.levels;
        for (row, &w) in self.p.chunks_mut(levels).zip(omega) {
            for l in (1..=top).rev() {
                let mut acc = 0.0;
                for nu in 1..=l.min(self.alpha) {
                    acc += factors[nu - 1] * falling(l, nu) * row[l - nu];
                }
                row[l] += w * acc;
            }
        }
    }
}

/// Figure of merit of a point set (all of its dimensions) under SPOD weights.
pub fn cbc_criterion(points: &PointSet, weights: &SpodWeights) -> Result<f64> {
    if weights.alpha() != points.alpha() {
        return Err(Error::DimensionMismatch(format!(
            "weights of order {} for a rule of order {}",
            weights.alpha(),
            points.alpha()
        )));
    }
    if weights.len() < points.s() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} dimensions",
            weights.len(),
            points.s()
        )));
    }
    let kernel = WalshKernel::new(points.b(), points.alpha(), points.m())?;
    let n = points.n_points();
    let mut state = OrderState::new(n, points.alpha() as usize, points.s());
    for j in 0..points.s() {
        let factors = weights.order_factors(j + 1)?;
        let omega: Vec<f64> = (0..n)
            .map(|i| kernel.eval(points.coord(i, j)))
            .collect::<Result<_>>()?;
        state.push_dimension(&omega, &factors);
    }
    Ok(state.criterion())
}

/// Criterion of the rule defined by a possibly incomplete generator list
/// (unset interlace slots contribute zero digits).
pub fn prefix_criterion(
    b: u32,
    m: u32,
    alpha: u32,
    modulus: &PolyFb,
    gens: &[u64],
    weights: &SpodWeights,
) -> Result<f64> {
    let s = gens.len().div_ceil(alpha as usize).max(1);
    let points = points_from_generators(b, m, alpha, s, modulus, gens)?;
    cbc_criterion(&points, weights)
}

/// Knobs for [`cbc_construct_with`]. The default searches every candidate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CbcOptions {
    /// Restrict each step to this many candidates drawn without replacement
    /// from the nonzero polynomials of degree `< m`.
    pub max_candidates: Option<usize>,
    pub candidate_seed: u64,
}

#[derive(Clone, Debug)]
pub struct CbcOutcome {
    pub spec: InterlacedRuleSpec,
    /// Criterion after fixing each underlying component, in order.
    pub criteria: Vec<f64>,
}

/// Index of the minimum score, resolving near-ties toward the lowest index.
pub fn select_candidate(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite or empty candidate scores".into()));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = scores.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
    let tol = TIE_RELATIVE_TOLERANCE * scale;
    Ok(scores
        .iter()
        .position(|&s| s <= min + tol)
        .expect("minimum is present"))
}

fn candidate_set(size: u64, k: usize, options: &CbcOptions) -> Vec<u64> {
    let total = (size - 1) as usize;
    match options.max_candidates {
        Some(cap) if cap < total => {
            let seed = options
                .candidate_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<u64> = sample(&mut rng, total, cap.max(1))
                .into_iter()
                .map(|i| i as u64 + 1)
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => (1..size).collect(),
    }
}

/// Full-search CBC construction.
pub fn cbc_construct(b: u32, m: u32, alpha: u32, s: usize, weights: &SpodWeights) -> Result<InterlacedRuleSpec> {
    Ok(cbc_construct_with(b, m, alpha, s, weights, &CbcOptions::default())?.spec)
}

/// CBC construction: the first generator is 1, every later one minimizes
/// the criterion with all earlier components held fixed.
pub fn cbc_construct_with(
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    weights: &SpodWeights,
    options: &CbcOptions,
) -> Result<CbcOutcome> {
    if weights.alpha() != alpha {
        return Err(Error::DimensionMismatch(format!(
            "weights of order {} for a rule of order {alpha}",
            weights.alpha()
        )));
    }
    if s == 0 || weights.len() < s {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {s} dimensions",
            weights.len()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidSpec("m must be >= 1".into()));
    }
    let modulus = irreducible_modulus(b, m)?;
    let ring = ResidueRing::new(&modulus)?;
    let kernel = WalshKernel::new(b, alpha, m)?;
    let spreader = Spreader::new(b, m, alpha)?;
    let n = ring.size() as usize;
    let inv_n = 1.0 / n as f64;
    let alpha_us = alpha as usize;

    let mut state = OrderState::new(n, alpha_us, s);
    let mut gens: Vec<u64> = Vec::with_capacity(alpha_us * s);
    let mut criteria = Vec::with_capacity(alpha_us * s);

    for j in 0..s {
        let factors = weights.order_factors(j + 1)?;
        let base = state.criterion();
        let weights_n = state.candidate_weights(&factors);
        let mut fixed = vec![0u64; n];
        let score = |slot: usize, residues: &[u64], fixed: &[u64]| -> f64 {
            let mut acc = NeumaierSum::new();
            for idx in 0..n {
                let x = fixed[idx] + spreader.spread(slot, ring.numerator(residues[idx]));
                acc.add(kernel.eval_unchecked(x) * weights_n[idx]);
            }
            base + acc.value() * inv_n
        };
        for slot in 0..alpha_us {
            let k = j * alpha_us + slot;
            let (chosen, value) = if k == 0 {
                (1u64, score(slot, &ring.multiples(1), &fixed))
            } else {
                let candidates = candidate_set(ring.size(), k, options);
                let scores: Vec<f64> = candidates
                    .par_iter()
                    .map(|&q| score(slot, &ring.multiples(q), &fixed))
                    .collect();
                let best = select_candidate(&scores)?;
                (candidates[best], scores[best])
            };
            let residues = ring.multiples(chosen);
            for (x, &r) in fixed.iter_mut().zip(&residues) {
                *x += spreader.spread(slot, ring.numerator(r));
            }
            gens.push(chosen);
            criteria.push(value);
        }
        let omega: Vec<f64> = fixed.iter().map(|&x| kernel.eval_unchecked(x)).collect();
        state.push_dimension(&omega, &factors);
    }

    let spec = InterlacedRuleSpec::from_ints(b, m, alpha, s, modulus.to_int()?, &gens)?;
    Ok(CbcOutcome { spec, criteria })
}
