//! Smoothness-driven product and order dependent (SPOD) weights
//! `gamma_u = sum_{nu in {1..alpha}^|u|} |nu|! prod_{j in u} 2^[nu_j = alpha] beta_j^nu_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpodWeights {
    alpha: u32,
    beta: Vec<f64>,
}

impl SpodWeights {
    /// `beta` must be non-negative and non-increasing.
    pub fn new(alpha: u32, beta: Vec<f64>) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::InvalidWeights("alpha must be >= 1".into()));
        }
        if let Some((j, &v)) = beta
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v.is_finite() && v >= 0.0))
        {
            return Err(Error::InvalidWeights(format!(
                "beta_{} = {v} is not a non-negative number",
                j + 1
            )));
        }
        if let Some(j) = beta.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidWeights(format!(
                "beta must be non-increasing: beta_{} < beta_{}",
                j + 1,
                j + 2
            )));
        }
        Ok(SpodWeights { alpha, beta })
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Per-order factors `2^[nu = alpha] beta_j^nu` for `nu = 1..=alpha`
    /// (index `nu - 1`), with `j` 1-based.
    pub fn order_factors(&self, j: usize) -> Result<Vec<f64>> {
        let beta = *self
            .beta
            .get(j.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidWeights(format!("no beta stored for dimension {j}")))?;
        Ok((1..=self.alpha)
            .map(|nu| {
                let doubled = if nu == self.alpha { 2.0 } else { 1.0 };
                doubled * beta.powi(nu as i32)
            })
            .collect())
    }
}

/// `gamma_u` for a set of 1-based dimension indices; `gamma_{} = 1`.
pub fn spod_set_weight(u: &[usize], weights: &SpodWeights) -> Result<f64> {
    let alpha = weights.alpha as usize;
    // coefficients of prod_{j in u} (sum_nu factor_nu t^nu), indexed by |nu|
    let mut poly = vec![1.0f64];
    for &j in u {
        let factors = weights.order_factors(j)?;
        let mut next = vec![0.0; poly.len() + alpha];
        for (deg, &c) in poly.iter().enumerate() {
            for (nu, &f) in factors.iter().enumerate() {
                next[deg + nu + 1] += c * f;
            }
        }
        poly = next;
    }
    let mut factorial = 1.0f64;
    let mut total = 0.0;
    for (deg, &c) in poly.iter().enumerate() {
        if deg > 0 {
            factorial *= deg as f64;
        }
        total += factorial * c;
    }
    Ok(total)
}
