//! Single-level and multi-level QMC estimators of `E[G(u)]`, the plain
//! Monte Carlo baseline, dimension-truncation bounds, the level-schedule
//! optimizer and the error split against an overkill reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_mean, NeumaierSum};
use crate::pde::{beta_sequence, AffineDiffusionProblem, Discretization, Mesh};
use crate::points::{cbc_construct_with, generate_points, CbcOptions, InterlacedRuleSpec, PointSet, SpodWeights};

/// A function on `[-1/2, 1/2]^dim` with a per-evaluation work count.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64]) -> Result<f64>;
    /// Work units per evaluation.
    fn cost(&self) -> u64;
}

impl Integrand for Discretization {
    fn dim(&self) -> usize {
        self.s()
    }

    fn eval(&self, y: &[f64]) -> Result<f64> {
        self.evaluate(y)
    }

    fn cost(&self) -> u64 {
        self.mesh().interior() as u64
    }
}

/// `G(u_fine(y)) - G(u_coarse(y_1..y_s'))`, the coarse term padded with zeros.
struct LevelDifference<'a> {
    fine: &'a Discretization,
    coarse: Option<&'a Discretization>,
}

impl Integrand for LevelDifference<'_> {
    fn dim(&self) -> usize {
        self.fine.s()
    }

    fn eval(&self, y: &[f64]) -> Result<f64> {
        let fine = self.fine.evaluate(y)?;
        match self.coarse {
            None => Ok(fine),
            Some(c) => Ok(fine - c.evaluate(&y[..c.s()])?),
        }
    }

    fn cost(&self) -> u64 {
        self.fine.cost() + self.coarse.map_or(0, |c| c.cost())
    }
}

/// Mean of `values` computed as `v_0 + mean(v_i - v_0)`, so a constant
/// sequence averages to itself exactly.
pub fn shifted_mean(values: &[f64]) -> f64 {
    match values.first() {
        None => f64::NAN,
        Some(&first) => {
            let diffs: Vec<f64> = values.iter().map(|v| v - first).collect();
            first + compensated_mean(&diffs)
        }
    }
}

fn evaluate_all<I: Integrand + ?Sized>(f: &I, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points.par_iter().map(|y| f.eval(y)).collect()
}

/// `y_n - 1/2` for every row of the point set.
pub fn shifted_points(points: &PointSet) -> Vec<Vec<f64>> {
    (0..points.n_points())
        .map(|n| (0..points.s()).map(|j| points.coord_f64(n, j) - 0.5).collect())
        .collect()
}

/// `(1/N) sum_n f(y_n - 1/2)`; the mean is accumulated in row order.
pub fn qmc_average<I: Integrand + ?Sized>(f: &I, points: &PointSet) -> Result<f64> {
    if points.s() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rule of dimension {} for an integrand of dimension {}",
            points.s(),
            f.dim()
        )));
    }
    Ok(shifted_mean(&evaluate_all(f, &shifted_points(points))?))
}

/// Truncation dimension, mesh and QMC rule of a single-level estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SingleLevelFields", into = "SingleLevelFields")]
pub struct SingleLevelConfig {
    s: usize,
    mesh: Mesh,
    rule: InterlacedRuleSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SingleLevelFields {
    s: usize,
    #[serde(rename = "M")]
    mesh: usize,
    rule: InterlacedRuleSpec,
}

impl TryFrom<SingleLevelFields> for SingleLevelConfig {
    type Error = Error;
    fn try_from(f: SingleLevelFields) -> Result<Self> {
        SingleLevelConfig::new(f.s, Mesh::new(f.mesh)?, f.rule)
    }
}

impl From<SingleLevelConfig> for SingleLevelFields {
    fn from(c: SingleLevelConfig) -> Self {
        SingleLevelFields {
            s: c.s,
            mesh: c.mesh.interior(),
            rule: c.rule,
        }
    }
}

impl SingleLevelConfig {
    pub fn new(s: usize, mesh: Mesh, rule: InterlacedRuleSpec) -> Result<Self> {
        if rule.s() != s {
            return Err(Error::DimensionMismatch(format!(
                "rule of dimension {} for truncation dimension {s}",
                rule.s()
            )));
        }
        Ok(SingleLevelConfig { s, mesh, rule })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn rule(&self) -> &InterlacedRuleSpec {
        &self.rule
    }

    pub fn work(&self) -> u64 {
        self.rule.n_points() * self.mesh.interior() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleLevelEstimate {
    pub value: f64,
    pub work: u64,
    pub n_points: u64,
}

pub fn run_single_level(problem: &AffineDiffusionProblem, cfg: &SingleLevelConfig) -> Result<SingleLevelEstimate> {
    let points = generate_points(&cfg.rule)?;
    run_single_level_on_points(problem, cfg.mesh, &points)
}

/// Single-level estimate from an explicit point set (its dimension is the
/// truncation dimension).
pub fn run_single_level_on_points(
    problem: &AffineDiffusionProblem,
    mesh: Mesh,
    points: &PointSet,
) -> Result<SingleLevelEstimate> {
    let disc = Discretization::new(problem, mesh, points.s())?;
    let value = qmc_average(&disc, points)?;
    let n = points.n_points() as u64;
    Ok(SingleLevelEstimate {
        value,
        work: n * disc.cost(),
        n_points: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    #[serde(rename = "M")]
    pub mesh: usize,
    pub s: usize,
    pub rule: InterlacedRuleSpec,
}

/// Levels `0..=L` of a multi-level estimator. Meshes must not coarsen and
/// truncation dimensions must not shrink from one level to the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFields")]
pub struct LevelSchedule {
    levels: Vec<Level>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFields {
    levels: Vec<Level>,
}

impl TryFrom<ScheduleFields> for LevelSchedule {
    type Error = Error;
    fn try_from(f: ScheduleFields) -> Result<Self> {
        LevelSchedule::new(f.levels)
    }
}

impl LevelSchedule {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one level".into()));
        }
        for (l, level) in levels.iter().enumerate() {
            Mesh::new(level.mesh)?;
            if level.rule.s() != level.s {
                return Err(Error::DimensionMismatch(format!(
                    "level {l}: rule of dimension {} for s = {}",
                    level.rule.s(),
                    level.s
                )));
            }
        }
        for (l, pair) in levels.windows(2).enumerate() {
            if pair[1].mesh < pair[0].mesh {
                return Err(Error::InvalidArgument(format!("level {}: mesh coarsens", l + 1)));
            }
            if pair[1].s < pair[0].s {
                return Err(Error::InvalidArgument(format!(
                    "level {}: truncation dimension shrinks",
                    l + 1
                )));
            }
        }
        Ok(LevelSchedule { levels })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Index of the finest level.
    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    /// `sum_l N_l (M_l + M_{l-1})` with `M_{-1} = 0`.
    pub fn work(&self) -> Result<u64> {
        let mut total = 0u64;
        let mut prev = 0u64;
        for level in &self.levels {
            let per_point = level.mesh as u64 + prev;
            let w = level
                .rule
                .n_points()
                .checked_mul(per_point)
                .ok_or_else(|| Error::Overflow("work units".into()))?;
            total = total
                .checked_add(w)
                .ok_or_else(|| Error::Overflow("work units".into()))?;
            prev = level.mesh as u64;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelContribution {
    pub value: f64,
    pub work: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelEstimate {
    pub value: f64,
    pub work: u64,
    pub levels: Vec<LevelContribution>,
}

/// Telescoping sum of per-level QMC averages of `G_l - G_{l-1}`, both terms
/// evaluated at the same points.
pub fn run_multi_level(problem: &AffineDiffusionProblem, schedule: &LevelSchedule) -> Result<MultiLevelEstimate> {
    let discs = schedule
        .levels
        .iter()
        .map(|l| Discretization::new(problem, Mesh::new(l.mesh)?, l.s))
        .collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::with_capacity(discs.len());
    let mut total = NeumaierSum::new();
    for (l, level) in schedule.levels.iter().enumerate() {
        let integrand = LevelDifference {
            fine: &discs[l],
            coarse: l.checked_sub(1).map(|k| &discs[k]),
        };
        let points = generate_points(&level.rule)?;
        let value = qmc_average(&integrand, &points)?;
        total.add(value);
        levels.push(LevelContribution {
            value,
            work: level.rule.n_points() * integrand.cost(),
        });
    }
    Ok(MultiLevelEstimate {
        value: total.value(),
        work: schedule.work()?,
        levels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    /// `sum_{j > s} beta_j` over the stored sequence.
    pub explicit_tail: f64,
    /// `min(1/(1/p0 - 1), 1) (sum_j beta_j^p0)^(1/p0) s^-(1/p0 - 1)`.
    pub bound: f64,
    /// `bound^2`, the shape of the QoI truncation error.
    pub qoi_bound: f64,
}

pub fn truncation_tail_bound(beta: &[f64], s: usize, p0: f64) -> Result<TailBound> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidArgument(format!("p0 must lie in (0, 1), got {p0}")));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("s must be >= 1".into()));
    }
    if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) || beta.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidWeights("beta must be non-negative and non-increasing".into()));
    }
    let explicit_tail = beta.iter().skip(s).rev().copied().collect::<NeumaierSum>().value();
    let decay = 1.0 / p0 - 1.0;
    let norm = beta
        .iter()
        .rev()
        .map(|b| b.powf(p0))
        .collect::<NeumaierSum>()
        .value()
        .powf(1.0 / p0);
    let bound = (1.0 / decay).min(1.0) * norm * (s as f64).powf(-decay);
    Ok(TailBound {
        explicit_tail,
        bound,
        qoi_bound: bound * bound,
    })
}

/// The order `floor(1/p0) + 1` matched to summability exponent `p0`.
pub fn order_for(p0: f64) -> u32 {
    (1.0 / p0).floor() as u32 + 1
}

/// A rule for `problem` by CBC with SPOD weights built from its beta sequence.
pub fn construct_rule(
    problem: &AffineDiffusionProblem,
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    options: &CbcOptions,
) -> Result<InterlacedRuleSpec> {
    let weights = SpodWeights::new(alpha, beta_sequence(problem, s))?;
    Ok(cbc_construct_with(b, m, alpha, s, &weights, options)?.spec)
}

/// Rate parameters consumed by the schedule optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub p0: f64,
    pub pt: f64,
    pub t: f64,
    pub t_prime: f64,
}

impl Rates {
    /// `pt = p0`, `t = t' = 1`.
    pub fn nominal(p0: f64) -> Self {
        Rates {
            p0,
            pt: p0,
            t: 1.0,
            t_prime: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 <= self.pt && self.pt < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < p0 <= pt < 1, got p0 = {}, pt = {}",
                self.p0, self.pt
            )));
        }
        if !(self.t > 0.0 && self.t_prime > 0.0) {
            return Err(Error::InvalidArgument("t and t' must be positive".into()));
        }
        Ok(())
    }

    fn pg_order(&self) -> f64 {
        self.t + self.t_prime
    }

    fn truncation_order(&self) -> f64 {
        2.0 * (1.0 / self.p0 - 1.0)
    }

    fn coupling(&self, s: usize) -> f64 {
        if self.pt > self.p0 {
            (s as f64).powf(-(1.0 / self.p0 - 1.0 / self.pt))
        } else {
            0.0
        }
    }
}

/// Base, coarsest mesh and resource limits for the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkModel {
    pub b: u32,
    pub coarse_mesh: usize,
    pub max_m: u32,
    pub max_mesh: usize,
    pub max_s: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedLevel {
    #[serde(rename = "M")]
    pub mesh: usize,
    pub s: usize,
    pub m: u32,
}

/// Level parameters before rule construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub rates: Rates,
    pub b: u32,
    pub target: f64,
    pub levels: Vec<PlannedLevel>,
}

fn mesh_width(mesh: usize) -> f64 {
    1.0 / (mesh + 1) as f64
}

impl SchedulePlan {
    /// The multi-level error bound with unit constants:
    /// `s_L^-2(1/p0-1) + h_L^(t+t') + sum_l N_l^(-1/pt) d_l`, with `d_0 = 1` and
    /// `d_l = h_{l-1}^(t+t') + s_{l-1}^-(1/p0-1/pt)` (the last term only for `pt > p0`).
    pub fn bound(&self) -> f64 {
        let r = &self.rates;
        let last = self.levels.last().expect("non-empty plan");
        let mut acc = NeumaierSum::new();
        acc.add((last.s as f64).powf(-r.truncation_order()));
        acc.add(mesh_width(last.mesh).powf(r.pg_order()));
        for (l, level) in self.levels.iter().enumerate() {
            let n = (self.b as f64).powi(level.m as i32);
            acc.add(n.powf(-1.0 / r.pt) * self.level_scale(l));
        }
        acc.value()
    }

    fn level_scale(&self, l: usize) -> f64 {
        level_scale(&self.rates, &self.levels, l)
    }

    pub fn work(&self) -> u64 {
        let mut prev = 0u64;
        let mut total = 0u64;
        for level in &self.levels {
            total += (self.b as u64).pow(level.m) * (level.mesh as u64 + prev);
            prev = level.mesh as u64;
        }
        total
    }

    /// Single-level configuration `(h_L, s_L, N_0)` used as the comparison point.
    pub fn single_level_equivalent(&self) -> PlannedLevel {
        let last = self.levels.last().expect("non-empty plan");
        PlannedLevel {
            mesh: last.mesh,
            s: last.s,
            m: self.levels[0].m,
        }
    }

    /// Builds one CBC rule per level from the problem's weights.
    pub fn realize(&self, problem: &AffineDiffusionProblem, alpha: u32, options: &CbcOptions) -> Result<LevelSchedule> {
        let levels = self
            .levels
            .iter()
            .map(|p| {
                Ok(Level {
                    mesh: p.mesh,
                    s: p.s,
                    rule: construct_rule(problem, self.b, p.m, alpha, p.s, options)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LevelSchedule::new(levels)
    }
}

fn level_scale(rates: &Rates, levels: &[PlannedLevel], l: usize) -> f64 {
    if l == 0 {
        1.0
    } else {
        let prev = &levels[l - 1];
        mesh_width(prev.mesh).powf(rates.pg_order()) + rates.coupling(prev.s)
    }
}

/// Geometric multi-level schedule for `target` with unit constants. The
/// budget is split evenly between truncation, discretization and
/// integration; sample sizes come from the Lagrange condition for minimal
/// work `sum_l N_l (M_l + M_{l-1})`, rounded up to powers of `b`.
pub fn optimize_schedule(rates: Rates, model: &WorkModel, target: f64) -> Result<SchedulePlan> {
    rates.validate()?;
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidArgument(format!("target must be positive, got {target}")));
    }
    if model.coarse_mesh == 0 || model.b < 2 {
        return Err(Error::InvalidArgument("work model needs a mesh and a base".into()));
    }
    let budget = target / 3.0;

    let mut levels_count = 0usize;
    let mut meshes = vec![model.coarse_mesh];
    while mesh_width(*meshes.last().unwrap()).powf(rates.pg_order()) > budget {
        levels_count += 1;
        let next = (model.coarse_mesh + 1)
            .checked_mul(1usize << levels_count.min(62))
            .map(|v| v - 1)
            .filter(|&v| v <= model.max_mesh)
            .ok_or_else(|| Error::Infeasible(format!("target {target} needs a mesh finer than {}", model.max_mesh)))?;
        meshes.push(next);
    }

    let growth = rates.pg_order() / rates.truncation_order();
    let factors: Vec<usize> = (0..=levels_count)
        .map(|l| 1usize << ((l as f64 * growth - 1e-9).ceil().max(0.0) as u32))
        .collect();
    let last_factor = *factors.last().unwrap();
    let meets = |s0: usize| ((s0 * last_factor) as f64).powf(-rates.truncation_order()) <= budget;
    let needed = budget.powf(-1.0 / rates.truncation_order()) / last_factor as f64;
    let mut s0 = (needed.ceil() as usize).max(1);
    while !meets(s0) {
        s0 += 1;
    }
    while s0 > 1 && meets(s0 - 1) {
        s0 -= 1;
    }
    if s0 * last_factor > model.max_s {
        return Err(Error::Infeasible(format!(
            "target {target} needs more than {} dimensions",
            model.max_s
        )));
    }

    let mut levels: Vec<PlannedLevel> = meshes
        .iter()
        .zip(&factors)
        .map(|(&mesh, &f)| PlannedLevel { mesh, s: s0 * f, m: 0 })
        .collect();

    // Minimize sum N_l W_l subject to sum d_l N_l^-q = budget:
    // N_l = K (d_l / W_l)^(1/(q+1)), K^q = sum_l d_l^(1/(q+1)) W_l^(q/(q+1)) / budget.
    let q = 1.0 / rates.pt;
    let scales: Vec<f64> = (0..levels.len()).map(|l| level_scale(&rates, &levels, l)).collect();
    let costs: Vec<f64> = (0..levels.len())
        .map(|l| (levels[l].mesh + if l > 0 { levels[l - 1].mesh } else { 0 }) as f64)
        .collect();
    let sum: f64 = scales
        .iter()
        .zip(&costs)
        .map(|(d, w)| d.powf(1.0 / (q + 1.0)) * w.powf(q / (q + 1.0)))
        .collect::<NeumaierSum>()
        .value();
    let k = (sum / budget).powf(1.0 / q);
    for (l, level) in levels.iter_mut().enumerate() {
        let n = k * (scales[l] / costs[l]).powf(1.0 / (q + 1.0));
        let m = (n.ln() / (model.b as f64).ln() - 1e-12).ceil().max(1.0) as u32;
        if m > model.max_m {
            return Err(Error::Infeasible(format!(
                "level {l} needs {} > b^{} points",
                n, model.max_m
            )));
        }
        level.m = m;
    }
    Ok(SchedulePlan {
        rates,
        b: model.b,
        target,
        levels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard error; absent for a single sample.
    pub stderr: Option<f64>,
}

/// Plain Monte Carlo with i.i.d. uniform points on `[-1/2, 1/2)^s` drawn
/// from a ChaCha8 stream seeded with `seed`.
pub fn mc_baseline(problem: &AffineDiffusionProblem, s: usize, mesh: Mesh, n: usize, seed: u64) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let disc = Discretization::new(problem, mesh, s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..s).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let values = evaluate_all(&disc, &points)?;
    let mean = shifted_mean(&values);
    let stderr = (n > 1).then(|| {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = NeumaierSum::from_iter(sq).value() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Ok(McEstimate { mean, stderr })
}

/// Error components of a single-level configuration against an overkill
/// reference configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub truncation: f64,
    pub integration: f64,
    pub pg: f64,
    pub total: f64,
    pub reference: f64,
}

/// `truncation = |Q_ref(s_ref, h_ref) - Q_ref(s, h_ref)|`,
/// `integration = |Q_ref(s, h_ref) - Q_cfg(s, h_ref)|`,
/// `pg = |Q_cfg(s, h_ref) - Q_cfg(s, h)|`, `total = |Q_cfg(s, h) - Q_ref(s_ref, h_ref)|`.
/// The reference rule's prefix serves for dimension `s`.
pub fn error_breakdown(
    problem: &AffineDiffusionProblem,
    cfg: &SingleLevelConfig,
    reference: &SingleLevelConfig,
) -> Result<ErrorBreakdown> {
    if reference.mesh.interior() < cfg.mesh.interior()
        || reference.s < cfg.s
        || reference.rule.n_points() < cfg.rule.n_points()
    {
        return Err(Error::InvalidArgument("reference does not dominate the configuration".into()));
    }
    let ref_points = generate_points(&reference.rule)?;
    let ref_prefix = generate_points(&reference.rule.prefix(cfg.s)?)?;
    let cfg_points = generate_points(&cfg.rule)?;

    let q_ref = run_single_level_on_points(problem, reference.mesh, &ref_points)?.value;
    let q_ref_s = run_single_level_on_points(problem, reference.mesh, &ref_prefix)?.value;
    let q_cfg_href = run_single_level_on_points(problem, reference.mesh, &cfg_points)?.value;
    let q_cfg = run_single_level_on_points(problem, cfg.mesh, &cfg_points)?.value;
    Ok(ErrorBreakdown {
        truncation: (q_ref - q_ref_s).abs(),
        integration: (q_ref_s - q_cfg_href).abs(),
        pg: (q_cfg_href - q_cfg).abs(),
        total: (q_cfg - q_ref).abs(),
        reference: q_ref,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::SourceTerm;
    use proptest::prelude::*;

    fn rule(problem: &AffineDiffusionProblem, m: u32, alpha: u32, s: usize) -> InterlacedRuleSpec {
        construct_rule(problem, 2, m, alpha, s, &CbcOptions::default()).unwrap()
    }

    fn mesh(m: usize) -> Mesh {
        Mesh::new(m).unwrap()
    }

    #[test]
    fn constant_integrand_is_reproduced_exactly() {
        let p = AffineDiffusionProblem::default_model().with_c(0.0).unwrap();
        let g = Discretization::new(&p, mesh(31), 0).unwrap().evaluate(&[]).unwrap();
        for (m, s) in [(1u32, 1usize), (3, 2), (5, 4)] {
            let cfg = SingleLevelConfig::new(s, mesh(31), rule(&p, m, 2, s)).unwrap();
            assert_eq!(run_single_level(&p, &cfg).unwrap().value, g);
        }
        for seed in [0u64, 7] {
            let est = mc_baseline(&p, 3, mesh(31), 37, seed).unwrap();
            assert_eq!(est.mean, g);
            assert_eq!(est.stderr, Some(0.0));
        }
    }

    #[test]
    fn two_point_rule_averages_both_points() {
        let p = AffineDiffusionProblem::default_model();
        let spec = InterlacedRuleSpec::from_ints(2, 1, 1, 1, 3, &[1]).unwrap();
        let cfg = SingleLevelConfig::new(1, mesh(15), spec).unwrap();
        let d = Discretization::new(&p, mesh(15), 1).unwrap();
        let direct = 0.5 * (d.evaluate(&[-0.5]).unwrap() + d.evaluate(&[0.0]).unwrap());
        let est = run_single_level(&p, &cfg).unwrap();
        assert!((est.value - direct).abs() <= 1e-16);
        assert_eq!(est.work, 2 * 15);
    }

    #[test]
    fn one_dimensional_rule_against_gauss_quadrature() {
        // tiny fluctuation in one dimension; oracle: 2-point Gauss on 50_000 panels
        let p = AffineDiffusionProblem::default_model().with_c(0.01).unwrap();
        let d = Discretization::new(&p, mesh(31), 1).unwrap();
        let panels = 50_000;
        let node = 0.5 / 3f64.sqrt();
        let mut acc = NeumaierSum::new();
        for k in 0..panels {
            let mid = -0.5 + (k as f64 + 0.5) / panels as f64;
            let half = 0.5 / panels as f64;
            for sign in [-1.0, 1.0] {
                acc.add(d.evaluate(&[mid + sign * 2.0 * node * half]).unwrap() * half);
            }
        }
        let gauss = acc.value();
        let center = d.evaluate(&[0.0]).unwrap();
        assert!((gauss - center).abs() < 1e-6);
        let cfg = SingleLevelConfig::new(1, mesh(31), rule(&p, 10, 3, 1)).unwrap();
        let qmc = run_single_level(&p, &cfg).unwrap().value;
        assert!((qmc - gauss).abs() < 1e-12, "{qmc} vs {gauss}");
    }

    #[test]
    fn single_level_ignores_row_order() {
        let p = AffineDiffusionProblem::default_model();
        let spec = rule(&p, 6, 2, 4);
        let pts = generate_points(&spec).unwrap();
        let n = pts.n_points();
        let order: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let a = run_single_level_on_points(&p, mesh(31), &pts).unwrap().value;
        let b = run_single_level_on_points(&p, mesh(31), &pts.permuted(&order).unwrap()).unwrap().value;
        assert!((a - b).abs() <= 1e-13 * a.abs());
    }

    struct Combination<'a> {
        first: &'a Discretization,
        second: &'a Discretization,
        lambda: f64,
    }

    impl Integrand for Combination<'_> {
        fn dim(&self) -> usize {
            self.first.s()
        }
        fn eval(&self, y: &[f64]) -> Result<f64> {
            Ok(self.first.evaluate(y)? + self.lambda * self.second.evaluate(y)?)
        }
        fn cost(&self) -> u64 {
            0
        }
    }

    #[test]
    fn estimates_are_linear_in_the_functional() {
        let p1 = AffineDiffusionProblem::default_model();
        let p2 = p1.with_sources(SourceTerm::Constant(1.0), SourceTerm::Sine(3)).unwrap();
        let d1 = Discretization::new(&p1, mesh(31), 3).unwrap();
        let d2 = Discretization::new(&p2, mesh(31), 3).unwrap();
        let pts = generate_points(&rule(&p1, 5, 2, 3)).unwrap();
        for lambda in [-2.5, 0.3, 7.0] {
            let combo = Combination {
                first: &d1,
                second: &d2,
                lambda,
            };
            let lhs = qmc_average(&combo, &pts).unwrap();
            let rhs = qmc_average(&d1, &pts).unwrap() + lambda * qmc_average(&d2, &pts).unwrap();
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn telescoping_with_identical_levels() {
        let p = AffineDiffusionProblem::default_model();
        let spec = rule(&p, 5, 2, 4);
        let level = Level {
            mesh: 31,
            s: 4,
            rule: spec.clone(),
        };
        let single = run_single_level(&p, &SingleLevelConfig::new(4, mesh(31), spec).unwrap()).unwrap();
        for count in 1..=3 {
            let schedule = LevelSchedule::new(vec![level.clone(); count]).unwrap();
            let ml = run_multi_level(&p, &schedule).unwrap();
            assert!((ml.value - single.value).abs() <= 1e-13 * single.value.abs());
        }
    }

    #[test]
    fn single_level_base_case_and_constant_problem() {
        let p = AffineDiffusionProblem::default_model();
        let spec = rule(&p, 4, 2, 3);
        let cfg = SingleLevelConfig::new(3, mesh(15), spec.clone()).unwrap();
        let schedule = LevelSchedule::new(vec![Level { mesh: 15, s: 3, rule: spec }]).unwrap();
        assert_eq!(
            run_multi_level(&p, &schedule).unwrap().value,
            run_single_level(&p, &cfg).unwrap().value
        );

        let flat = p.with_c(0.0).unwrap();
        let schedule = LevelSchedule::new(vec![
            Level { mesh: 7, s: 2, rule: rule(&flat, 5, 2, 2) },
            Level { mesh: 15, s: 3, rule: rule(&flat, 3, 2, 3) },
            Level { mesh: 31, s: 5, rule: rule(&flat, 2, 2, 5) },
        ])
        .unwrap();
        let exact = Discretization::new(&flat, mesh(31), 0).unwrap().evaluate(&[]).unwrap();
        let ml = run_multi_level(&flat, &schedule).unwrap();
        assert!((ml.value - exact).abs() <= 1e-15);
    }

    #[test]
    fn work_is_counted_exactly() {
        let p = AffineDiffusionProblem::default_model();
        let schedule = LevelSchedule::new(vec![
            Level { mesh: 7, s: 2, rule: rule(&p, 5, 2, 2) },
            Level { mesh: 15, s: 3, rule: rule(&p, 3, 2, 3) },
            Level { mesh: 31, s: 3, rule: rule(&p, 2, 2, 3) },
        ])
        .unwrap();
        let expected = 32 * 7 + 8 * (15 + 7) + 4 * (31 + 15);
        assert_eq!(schedule.work().unwrap(), expected);
        let ml = run_multi_level(&p, &schedule).unwrap();
        assert_eq!(ml.work, expected);
        assert_eq!(ml.levels.iter().map(|l| l.work).sum::<u64>(), expected);
    }

    #[test]
    fn schedule_validation() {
        let p = AffineDiffusionProblem::default_model();
        let r2 = rule(&p, 3, 2, 2);
        assert!(LevelSchedule::new(vec![]).is_err());
        assert!(LevelSchedule::new(vec![Level { mesh: 7, s: 3, rule: r2.clone() }]).is_err());
        assert!(LevelSchedule::new(vec![
            Level { mesh: 15, s: 2, rule: r2.clone() },
            Level { mesh: 7, s: 2, rule: r2.clone() },
        ])
        .is_err());
        let sched = LevelSchedule::new(vec![Level { mesh: 7, s: 2, rule: r2 }]).unwrap();
        let json = serde_json::to_string(&sched).unwrap();
        assert_eq!(serde_json::from_str::<LevelSchedule>(&json).unwrap(), sched);
    }

    #[test]
    fn tail_bound_examples() {
        let beta: Vec<f64> = (1..=10_000).map(|j| (j as f64).powi(-2)).collect();
        let half = truncation_tail_bound(&beta, 10, 0.5).unwrap();
        let exact: f64 = (11..=1_000_000).map(|j| (j as f64).powi(-2)).sum();
        assert!((exact - 0.0952).abs() < 1e-4);
        assert!(half.bound >= exact);
        assert_eq!(half.qoi_bound, half.bound * half.bound);
        // p0 = 1/2: prefactor 1 and rate s^-1
        let b20 = truncation_tail_bound(&beta, 20, 0.5).unwrap();
        assert!((half.bound / b20.bound - 2.0).abs() < 1e-12);
        let b = truncation_tail_bound(&beta, 10, 0.6).unwrap();
        assert!(b.bound >= exact);
        let short = [0.5, 0.25, 0.125];
        assert_eq!(truncation_tail_bound(&short, 3, 0.5).unwrap().explicit_tail, 0.0);
        assert!(truncation_tail_bound(&short, 1, 1.0).is_err());
        assert!(truncation_tail_bound(&[0.1, 0.2], 1, 0.5).is_err());
    }

    fn model() -> WorkModel {
        WorkModel {
            b: 2,
            coarse_mesh: 15,
            max_m: 30,
            max_mesh: 1 << 20,
            max_s: 1 << 20,
        }
    }

    #[test]
    fn loose_target_gives_single_level() {
        let plan = optimize_schedule(Rates::nominal(0.5), &model(), 0.1).unwrap();
        assert_eq!(plan.levels.len(), 1);
        assert!(plan.bound() <= 0.1);
    }

    #[test]
    fn balanced_schedule_halves_points_per_level() {
        for target in [1e-4, 1e-5, 3e-6] {
            let plan = optimize_schedule(Rates::nominal(0.5), &model(), target).unwrap();
            assert!(plan.levels.len() >= 3, "{plan:?}");
            for pair in plan.levels[1..].windows(2) {
                let drop = pair[0].m as i64 - pair[1].m as i64;
                assert!((0..=2).contains(&drop), "{plan:?}");
                assert_eq!(pair[1].mesh, 2 * pair[0].mesh + 1);
                assert!(pair[1].s >= pair[0].s);
            }
            assert!(plan.bound() <= target, "{} > {target}", plan.bound());
        }
    }

    #[test]
    fn schedule_bound_respects_target_for_split_scales() {
        let rates = Rates { p0: 0.4, pt: 0.6, t: 1.0, t_prime: 0.5 };
        for target in [1e-2, 1e-3, 1e-4] {
            let plan = optimize_schedule(rates, &model(), target).unwrap();
            assert!(plan.bound() <= target);
        }
        let tight = WorkModel { max_m: 4, ..model() };
        assert!(matches!(optimize_schedule(Rates::nominal(0.5), &tight, 1e-6), Err(Error::Infeasible(_))));
        assert!(optimize_schedule(Rates { pt: 0.3, ..Rates::nominal(0.5) }, &model(), 1e-3).is_err());
    }

    #[test]
    fn mc_is_reproducible_and_has_an_error_bar() {
        let p = AffineDiffusionProblem::default_model();
        let a = mc_baseline(&p, 4, mesh(15), 200, 3).unwrap();
        let b = mc_baseline(&p, 4, mesh(15), 200, 3).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = mc_baseline(&p, 4, mesh(15), 200, 4).unwrap();
        assert_ne!(a.mean, c.mean);
        assert!(a.stderr.unwrap() > 0.0);
        assert!((a.mean - c.mean).abs() < 10.0 * a.stderr.unwrap());
        assert!(mc_baseline(&p, 4, mesh(15), 1, 3).unwrap().stderr.is_none());
    }

    #[test]
    fn breakdown_cases() {
        let p = AffineDiffusionProblem::default_model();
        let spec = rule(&p, 4, 2, 3);
        let cfg = SingleLevelConfig::new(3, mesh(15), spec).unwrap();
        let same = error_breakdown(&p, &cfg, &cfg).unwrap();
        assert_eq!((same.truncation, same.integration, same.pg, same.total), (0.0, 0.0, 0.0, 0.0));

        let reference = SingleLevelConfig::new(6, mesh(63), rule(&p, 7, 3, 6)).unwrap();
        let e = error_breakdown(&p, &cfg, &reference).unwrap();
        assert!(e.total <= e.truncation + e.integration + e.pg + 1e-15);
        assert!(error_breakdown(&p, &reference, &cfg).is_err());

        let flat = p.with_c(0.0).unwrap();
        let e = error_breakdown(&flat, &cfg, &reference).unwrap();
        assert_eq!((e.truncation, e.integration), (0.0, 0.0));
        let coarse = Discretization::new(&flat, mesh(15), 0).unwrap().evaluate(&[]).unwrap();
        let fine = Discretization::new(&flat, mesh(63), 0).unwrap().evaluate(&[]).unwrap();
        assert!((e.pg - (fine - coarse).abs()).abs() <= 1e-16);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shifted_mean_tracks_the_plain_mean(values in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let plain: f64 = values.iter().sum::<f64>() / values.len() as f64;
            prop_assert!((shifted_mean(&values) - plain).abs() <= 1e-9);
        }

        #[test]
        fn schedule_meets_its_target(exp in 2.0f64..5.5) {
            let target = 10f64.powf(-exp);
            let plan = optimize_schedule(Rates::nominal(0.5), &model(), target).unwrap();
            prop_assert!(plan.bound() <= target);
        }
    }
}
