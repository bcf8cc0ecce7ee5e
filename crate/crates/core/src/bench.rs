//! Convergence sweeps over mesh size, truncation dimension, number of QMC or
//! MC points, and multi-level versus single-level cost, with log-log slope
//! fits and CSV/JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    construct_rule, mc_baseline, optimize_schedule, order_for, run_multi_level, run_single_level,
    Rates, SingleLevelConfig, WorkModel,
};
use crate::numeric::NeumaierSum;
use crate::pde::{AffineDiffusionProblem, Mesh};
use crate::points::{generate_points, CbcOptions, InterlacedRuleSpec};

pub const TOOL_NAME: &str = "hoqmc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_HEADER: &str = "axis,value,error,work,slope_fit";

/// Rows whose error is at most this multiple of the reference floor are
/// left out of the slope fit.
pub const FLOOR_FACTOR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "mesh")]
    Mesh,
    #[serde(rename = "truncation")]
    Truncation,
    #[serde(rename = "qmc-N")]
    QmcN,
    #[serde(rename = "mc-N")]
    McN,
    #[serde(rename = "ml-vs-sl")]
    MlVsSl,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Mesh => "mesh",
            Axis::Truncation => "truncation",
            Axis::QmcN => "qmc-N",
            Axis::McN => "mc-N",
            Axis::MlVsSl => "ml-vs-sl",
        }
    }

    fn is_fitted(&self) -> bool {
        !matches!(self, Axis::MlVsSl)
    }

    /// Variable the slope is fitted against.
    fn fit_variable(&self) -> Option<&'static str> {
        match self {
            Axis::Mesh => Some("h"),
            Axis::Truncation => Some("s"),
            Axis::QmcN | Axis::McN => Some("N"),
            Axis::MlVsSl => None,
        }
    }
}

/// Values of the axes that are not swept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
}

/// Overkill reference; unset fields take axis-dependent defaults (three more
/// digits, order plus one, a 4x finer mesh, twice the dimension).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReferenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<u32>,
    /// Candidate cap for the reference CBC search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_candidates: Option<usize>,
    #[serde(default)]
    pub candidate_seed: u64,
    /// Exact value to use instead of a computed reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<f64>,
    /// Additional known resolution limit of the reference.
    #[serde(default)]
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_seeds() -> u32 {
    20
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            seeds: default_seeds(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MultiLevelConfig {
    #[serde(rename = "coarse-M")]
    pub coarse_mesh: usize,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default = "one")]
    pub t_prime: f64,
    /// Defaults to the problem's `p0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt: Option<f64>,
    #[serde(default = "default_max_m")]
    pub max_m: u32,
    #[serde(default = "default_max_mesh", rename = "max-M")]
    pub max_mesh: usize,
    #[serde(default = "default_max_s")]
    pub max_s: usize,
}

fn one() -> f64 {
    1.0
}

fn default_max_m() -> u32 {
    20
}

fn default_max_mesh() -> usize {
    1 << 16
}

fn default_max_s() -> usize {
    4096
}

impl Default for MultiLevelConfig {
    fn default() -> Self {
        MultiLevelConfig {
            coarse_mesh: 63,
            t: 1.0,
            t_prime: 1.0,
            pt: None,
            max_m: default_max_m(),
            max_mesh: default_max_mesh(),
            max_s: default_max_s(),
        }
    }
}

/// Candidate cap for the CBC searches of the rules under test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CbcConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_candidates: Option<usize>,
    #[serde(default)]
    pub candidate_seed: u64,
}

impl CbcConfig {
    fn options(&self) -> CbcOptions {
        CbcOptions {
            max_candidates: self.max_candidates,
            candidate_seed: self.candidate_seed,
        }
    }
}

/// A fully resolved sweep. Grid values are mesh interior node counts,
/// truncation dimensions, point counts `N`, or error targets, by axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepPlan {
    pub axis: Axis,
    pub grid: Vec<f64>,
    pub problem: AffineDiffusionProblem,
    #[serde(default = "default_base")]
    pub b: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<u32>,
    #[serde(default)]
    pub fixed: FixedConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub ml: MultiLevelConfig,
    #[serde(default)]
    pub cbc: CbcConfig,
}

fn default_base() -> u32 {
    2
}

/// Plan file layout: a `SweepPlan` whose problem is given either inline as
/// a `[problem]` table or by `problem-file`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct PlanFile {
    axis: Axis,
    grid: Vec<f64>,
    #[serde(default)]
    problem: Option<AffineDiffusionProblem>,
    #[serde(default)]
    problem_file: Option<String>,
    #[serde(default = "default_base")]
    b: u32,
    #[serde(default)]
    alpha: Option<u32>,
    #[serde(default)]
    fixed: FixedConfig,
    #[serde(default)]
    reference: ReferenceConfig,
    #[serde(default)]
    mc: McConfig,
    #[serde(default)]
    ml: MultiLevelConfig,
    #[serde(default)]
    cbc: CbcConfig,
}

impl SweepPlan {
    /// Parses a plan file; `problem-file` is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let problem = match (file.problem, file.problem_file) {
            (Some(p), None) => p,
            (None, Some(path)) => {
                let full = match base_dir {
                    Some(dir) => dir.join(&path),
                    None => path.into(),
                };
                AffineDiffusionProblem::from_toml_str(&std::fs::read_to_string(&full)?)?
            }
            _ => {
                return Err(Error::Parse(
                    "plan needs exactly one of `problem` and `problem-file`".into(),
                ))
            }
        };
        let plan = SweepPlan {
            axis: file.axis,
            grid: file.grid,
            problem,
            b: file.b,
            alpha: file.alpha,
            fixed: file.fixed,
            reference: file.reference,
            mc: file.mc,
            ml: file.ml,
            cbc: file.cbc,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn alpha(&self) -> u32 {
        self.alpha.unwrap_or_else(|| order_for(self.problem.p0()))
    }

    /// Grid sorted ascending.
    pub fn sorted_grid(&self) -> Vec<f64> {
        let mut g = self.grid.clone();
        g.sort_by(f64::total_cmp);
        g
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.sorted_grid();
        if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("grid values must be positive".into()));
        }
        if grid.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("grid values must be distinct".into()));
        }
        let min_len = if self.axis.is_fitted() { 4 } else { 1 };
        if grid.len() < min_len {
            return Err(Error::InvalidArgument(format!(
                "the {} axis needs at least {min_len} grid values",
                self.axis.name()
            )));
        }
        match self.axis {
            Axis::Mesh | Axis::Truncation => {
                if grid.iter().any(|v| v.fract() != 0.0) {
                    return Err(Error::InvalidArgument("grid values must be integers".into()));
                }
            }
            Axis::QmcN | Axis::McN => {
                for &v in &grid {
                    self.points_exponent(v)?;
                }
            }
            Axis::MlVsSl => {}
        }
        if self.mc.seeds == 0 {
            return Err(Error::InvalidArgument("mc.seeds must be >= 1".into()));
        }
        Ok(())
    }

    /// `m` with `b^m = n`.
    fn points_exponent(&self, n: f64) -> Result<u32> {
        let mut value = 1u64;
        for m in 0..64u32 {
            if value as f64 == n && m >= 1 {
                return Ok(m);
            }
            match value.checked_mul(self.b as u64) {
                Some(v) => value = v,
                None => break,
            }
        }
        Err(Error::InvalidArgument(format!(
            "N = {n} is not a positive power of b = {}",
            self.b
        )))
    }

    fn need<T: Copy>(&self, value: Option<T>, what: &str) -> Result<T> {
        value.ok_or_else(|| {
            Error::InvalidArgument(format!("the {} axis needs {what}", self.axis.name()))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// OLS slope of log(error) against log(x).
    pub slope: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
    pub used: usize,
    /// Rows dropped for non-positive error.
    pub dropped: usize,
}

/// Least squares on `(ln x, ln err)` over rows with positive `x` and `err`.
pub fn fit_slope(rows: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(x, e)| *x > 0.0 && *e > 0.0 && x.is_finite() && e.is_finite())
        .map(|(x, e)| (x.ln(), e.ln()))
        .collect();
    let dropped = rows.len() - usable.len();
    if usable.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least 4 rows with positive error, have {} ({dropped} dropped)",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|r| r.0).collect::<NeumaierSum>().value() / n;
    let my = usable.iter().map(|r| r.1).collect::<NeumaierSum>().value() / n;
    let sxx = usable.iter().map(|r| (r.0 - mx).powi(2)).collect::<NeumaierSum>().value();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    let sxy = usable
        .iter()
        .map(|r| (r.0 - mx) * (r.1 - my))
        .collect::<NeumaierSum>()
        .value();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = usable
        .iter()
        .map(|r| (r.1 - intercept - slope * r.0).powi(2))
        .collect::<NeumaierSum>()
        .value();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        half_width: 2.0 * stderr,
        used: usable.len(),
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `"qmc"`, `"mc"`, `"pg"`, `"truncation"`, `"ml"` or `"sl"`.
    pub series: String,
    pub value: f64,
    pub estimate: Option<f64>,
    pub error: Option<f64>,
    pub work: u64,
    /// Parameters of the configuration behind the row.
    pub mesh: usize,
    pub s: usize,
    pub n_points: u64,
    /// Digests of the rules used (one per level for multi-level rows).
    pub rule_digests: Vec<String>,
    pub in_fit: bool,
    /// `None` when the row succeeded, otherwise the failure message.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEcho {
    pub value: f64,
    pub analytic: bool,
    pub mesh: Option<usize>,
    pub s: Option<usize>,
    pub rule: Option<InterlacedRuleSpec>,
    pub rule_digest: Option<String>,
    /// Resolution floor: `64 eps |value|` plus the configured floor.
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tool: String,
    pub version: String,
    pub plan: SweepPlan,
    pub alpha: u32,
    pub reference: ReferenceEcho,
    pub rows: Vec<ReportRow>,
    pub fit_variable: Option<String>,
    pub fit: Option<SlopeFit>,
    /// `"ok"`, `"degenerate"` (every error is zero) or the reason no fit exists.
    pub fit_status: String,
    /// Observed order: `-slope` in `s` and `N`, `+slope` in `h`.
    pub observed_rate: Option<f64>,
    pub predicted_rate: Option<f64>,
}

impl ConvergenceReport {
    pub fn all_rows_ok(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `axis,value,error,work,slope_fit`; numbers with 17 significant digits,
    /// `slope_fit` only on rows that entered the fit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let axis = if self.plan.axis == Axis::MlVsSl {
                format!("{}:{}", self.plan.axis.name(), row.series)
            } else {
                self.plan.axis.name().to_string()
            };
            let error = row.error.map(|e| format!("{e:.16e}")).unwrap_or_default();
            let slope = match (&self.fit, row.in_fit) {
                (Some(fit), true) => format!("{:.16e}", fit.slope),
                _ => String::new(),
            };
            let _ = writeln!(out, "{axis},{:.16e},{error},{},{slope}", row.value, row.work);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn emit(report: &ConvergenceReport, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json()?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

struct Row {
    series: &'static str,
    value: f64,
    outcome: Result<(f64, u64)>,
    mesh: usize,
    s: usize,
    n_points: u64,
    rule_digests: Vec<String>,
}

fn resolution_floor(value: f64, extra: f64) -> f64 {
    64.0 * f64::EPSILON * value.abs() + extra
}

fn qmc_value(problem: &AffineDiffusionProblem, mesh: usize, rule: &InterlacedRuleSpec) -> Result<(f64, u64)> {
    let est = run_single_level(problem, &SingleLevelConfig::new(rule.s(), Mesh::new(mesh)?, rule.clone())?)?;
    Ok((est.value, est.work))
}

fn computed_reference(
    plan: &SweepPlan,
    mesh: usize,
    s: usize,
    m: u32,
    alpha: u32,
) -> Result<(ReferenceEcho, InterlacedRuleSpec)> {
    let options = CbcOptions {
        max_candidates: plan.reference.max_candidates,
        candidate_seed: plan.reference.candidate_seed,
    };
    let rule = construct_rule(&plan.problem, plan.b, m, alpha, s, &options)?;
    let (value, _) = qmc_value(&plan.problem, mesh, &rule)?;
    Ok((
        ReferenceEcho {
            value,
            analytic: false,
            mesh: Some(mesh),
            s: Some(s),
            rule_digest: Some(rule.digest()),
            rule: Some(rule.clone()),
            floor: resolution_floor(value, plan.reference.floor),
        },
        rule,
    ))
}

fn infeasible(what: &str) -> Error {
    Error::Infeasible(format!("reference does not dominate the grid: {what}"))
}

/// Runs every grid entry against one common reference. Rows are produced in
/// ascending grid order; a failing row is kept with its message and left out
/// of the fit.
pub fn run_sweep(plan: &SweepPlan) -> Result<ConvergenceReport> {
    plan.validate()?;
    let grid = plan.sorted_grid();
    let alpha = plan.alpha();
    let problem = &plan.problem;
    let opts = plan.cbc.options();
    let r = &plan.reference;
    let mut rows = Vec::new();

    let (reference, predicted) = match plan.axis {
        Axis::Mesh => {
            let s = plan.need(plan.fixed.s, "fixed.s")?;
            let m = plan.need(plan.fixed.m, "fixed.m")?;
            let rule = construct_rule(problem, plan.b, m, alpha, s, &opts)?;
            let max_mesh = *grid.last().unwrap() as usize;
            let reference = match r.analytic {
                Some(value) => ReferenceEcho {
                    value,
                    analytic: true,
                    mesh: None,
                    s: None,
                    rule: None,
                    rule_digest: None,
                    floor: resolution_floor(value, r.floor),
                },
                None => {
                    let ref_mesh = r.mesh.unwrap_or(4 * (max_mesh + 1) - 1);
                    if ref_mesh < max_mesh {
                        return Err(infeasible("mesh"));
                    }
                    let (value, _) = qmc_value(problem, ref_mesh, &rule)?;
                    ReferenceEcho {
                        value,
                        analytic: false,
                        mesh: Some(ref_mesh),
                        s: Some(s),
                        rule_digest: Some(rule.digest()),
                        rule: Some(rule.clone()),
                        floor: resolution_floor(value, r.floor),
                    }
                }
            };
            for &v in &grid {
                let mesh = v as usize;
                rows.push(Row {
                    series: "pg",
                    value: v,
                    outcome: qmc_value(problem, mesh, &rule),
                    mesh,
                    s,
                    n_points: rule.n_points(),
                    rule_digests: vec![rule.digest()],
                });
            }
            (reference, Some(2.0))
        }
        Axis::Truncation => {
            let mesh = plan.need(plan.fixed.mesh, "fixed.M")?;
            let max_s = *grid.last().unwrap() as usize;
            let ref_s = r.s.unwrap_or(2 * max_s);
            if ref_s < max_s {
                return Err(infeasible("s"));
            }
            let m = match r.m {
                Some(m) => m,
                None => plan.need(plan.fixed.m, "fixed.m or reference.m")? + 3,
            };
            let (reference, rule) = computed_reference(plan, mesh, ref_s, m, r.alpha.unwrap_or(alpha + 1))?;
            for &v in &grid {
                let s = v as usize;
                let outcome = rule.prefix(s).and_then(|p| qmc_value(problem, mesh, &p));
                rows.push(Row {
                    series: "truncation",
                    value: v,
                    outcome,
                    mesh,
                    s,
                    n_points: rule.n_points(),
                    rule_digests: rule.prefix(s).map(|p| vec![p.digest()]).unwrap_or_default(),
                });
            }
            (reference, Some(2.0 * (1.0 / problem.p0() - 1.0)))
        }
        Axis::QmcN | Axis::McN => {
            let s = plan.need(plan.fixed.s, "fixed.s")?;
            let mesh = plan.need(plan.fixed.mesh, "fixed.M")?;
            let max_m = plan.points_exponent(*grid.last().unwrap())?;
            let ref_m = r.m.unwrap_or(max_m + 3);
            if ref_m < max_m {
                return Err(infeasible("N"));
            }
            let (reference, _) = computed_reference(plan, mesh, s, ref_m, r.alpha.unwrap_or(alpha + 1))?;
            for &v in &grid {
                let m = plan.points_exponent(v)?;
                if plan.axis == Axis::QmcN {
                    let rule = construct_rule(problem, plan.b, m, alpha, s, &opts);
                    let digests = rule.as_ref().map(|r| vec![r.digest()]).unwrap_or_default();
                    rows.push(Row {
                        series: "qmc",
                        value: v,
                        outcome: rule.and_then(|rule| qmc_value(problem, mesh, &rule)),
                        mesh,
                        s,
                        n_points: v as u64,
                        rule_digests: digests,
                    });
                } else {
                    let outcome = mc_rmse(plan, s, mesh, v as usize, reference.value);
                    rows.push(Row {
                        series: "mc",
                        value: v,
                        outcome,
                        mesh,
                        s,
                        n_points: v as u64,
                        rule_digests: vec![],
                    });
                }
            }
            let predicted = if plan.axis == Axis::QmcN {
                1.0 / problem.p0()
            } else {
                0.5
            };
            (reference, Some(predicted))
        }
        Axis::MlVsSl => {
            let rates = Rates {
                p0: problem.p0(),
                pt: plan.ml.pt.unwrap_or(problem.p0()),
                t: plan.ml.t,
                t_prime: plan.ml.t_prime,
            };
            let model = WorkModel {
                b: plan.b,
                coarse_mesh: plan.ml.coarse_mesh,
                max_m: plan.ml.max_m,
                max_mesh: plan.ml.max_mesh,
                max_s: plan.ml.max_s,
            };
            let plans = grid
                .iter()
                .map(|&target| optimize_schedule(rates, &model, target))
                .collect::<Result<Vec<_>>>()?;
            let sls: Vec<_> = plans.iter().map(|p| p.single_level_equivalent()).collect();
            let max_mesh = sls.iter().map(|c| c.mesh).max().unwrap();
            let max_s = sls.iter().map(|c| c.s).max().unwrap();
            let max_m = sls.iter().map(|c| c.m).max().unwrap();
            let ref_mesh = r.mesh.unwrap_or(4 * (max_mesh + 1) - 1);
            let ref_s = r.s.unwrap_or(2 * max_s);
            let ref_m = r.m.unwrap_or(max_m + 3);
            if ref_mesh < max_mesh || ref_s < max_s || ref_m < max_m {
                return Err(infeasible("multi-level grid"));
            }
            let (reference, _) = computed_reference(plan, ref_mesh, ref_s, ref_m, r.alpha.unwrap_or(alpha + 1))?;
            for ((&target, schedule_plan), sl) in grid.iter().zip(&plans).zip(&sls) {
                let schedule = schedule_plan.realize(problem, alpha, &opts);
                let digests = schedule
                    .as_ref()
                    .map(|s| s.levels().iter().map(|l| l.rule.digest()).collect())
                    .unwrap_or_default();
                let finest = schedule_plan.levels.last().unwrap();
                rows.push(Row {
                    series: "ml",
                    value: target,
                    outcome: schedule
                        .and_then(|s| run_multi_level(problem, &s))
                        .map(|e| (e.value, e.work)),
                    mesh: finest.mesh,
                    s: finest.s,
                    n_points: (plan.b as u64).pow(schedule_plan.levels[0].m),
                    rule_digests: digests,
                });
                let rule = construct_rule(problem, plan.b, sl.m, alpha, sl.s, &opts);
                let digests = rule.as_ref().map(|r| vec![r.digest()]).unwrap_or_default();
                rows.push(Row {
                    series: "sl",
                    value: target,
                    outcome: rule.and_then(|rule| qmc_value(problem, sl.mesh, &rule)),
                    mesh: sl.mesh,
                    s: sl.s,
                    n_points: (plan.b as u64).pow(sl.m),
                    rule_digests: digests,
                });
            }
            (reference, None)
        }
    };

    let threshold = FLOOR_FACTOR * reference.floor;
    let mut report_rows: Vec<ReportRow> = rows
        .into_iter()
        .map(|row| {
            let (estimate, error, work, failure) = match row.outcome {
                Ok((est, work)) => {
                    // MC rows carry their RMSE directly in place of an estimate.
                    let (estimate, error) = if row.series == "mc" {
                        (None, est)
                    } else {
                        (Some(est), (est - reference.value).abs())
                    };
                    (estimate, Some(error), work, None)
                }
                Err(e) => (None, None, 0, Some(e.to_string())),
            };
            ReportRow {
                series: row.series.to_string(),
                value: row.value,
                estimate,
                in_fit: plan.axis.is_fitted() && error.is_some_and(|e| e > threshold),
                error,
                work,
                mesh: row.mesh,
                s: row.s,
                n_points: row.n_points,
                rule_digests: row.rule_digests,
                failure,
            }
        })
        .collect();

    let (fit, fit_status) = if !plan.axis.is_fitted() {
        (None, "not fitted".to_string())
    } else if report_rows.iter().all(|r| r.error == Some(0.0)) {
        (None, "degenerate".to_string())
    } else {
        let points: Vec<(f64, f64)> = report_rows
            .iter()
            .filter(|r| r.in_fit)
            .map(|r| (fit_abscissa(plan.axis, r.value), r.error.unwrap()))
            .collect();
        match fit_slope(&points) {
            Ok(fit) => (Some(fit), "ok".to_string()),
            Err(e) => {
                for row in report_rows.iter_mut() {
                    row.in_fit = false;
                }
                (None, e.to_string())
            }
        }
    };
    let observed_rate = fit.map(|f| if plan.axis == Axis::Mesh { f.slope } else { -f.slope });
    Ok(ConvergenceReport {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        plan: plan.clone(),
        alpha,
        reference,
        rows: report_rows,
        fit_variable: plan.axis.fit_variable().map(str::to_string),
        fit,
        fit_status,
        observed_rate,
        predicted_rate: predicted,
    })
}

fn fit_abscissa(axis: Axis, value: f64) -> f64 {
    match axis {
        Axis::Mesh => 1.0 / (value + 1.0),
        _ => value,
    }
}

/// Root mean square error over the configured seeds, returned with the work
/// of a single estimate.
fn mc_rmse(plan: &SweepPlan, s: usize, mesh: usize, n: usize, reference: f64) -> Result<(f64, u64)> {
    let mesh_obj = Mesh::new(mesh)?;
    let mut acc = NeumaierSum::new();
    for k in 0..plan.mc.seeds {
        let seed = plan.mc.seed.wrapping_add(k as u64);
        let est = mc_baseline(&plan.problem, s, mesh_obj, n, seed)?;
        acc.add((est.mean - reference).powi(2));
    }
    let rmse = (acc.value() / plan.mc.seeds as f64).sqrt();
    Ok((rmse, (n * mesh) as u64))
}

/// Point-set file text for a rule (header plus rows), as written by the CLI.
pub fn point_set_text(spec: &InterlacedRuleSpec) -> Result<String> {
    generate_points(spec)?.to_text(spec)
}
