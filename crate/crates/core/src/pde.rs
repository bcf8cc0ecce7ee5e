//! Affine-parametric 1D diffusion `-(a(x,y) u')' = f` on (0,1) with
//! homogeneous Dirichlet data, `a(x,y) = a0 + sum_j y_j c j^-theta sin(j pi x)`,
//! discretized by piecewise-linear finite elements on a uniform mesh.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;

/// Half-width of the parameter box `[-1/2, 1/2]^s`.
pub const BOX_HALF_WIDTH: f64 = 0.5;

/// A load or functional weight: `const:v` or `sin:k` (meaning `sin(k pi x)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SourceTerm {
    Constant(f64),
    Sine(u32),
}

impl SourceTerm {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            SourceTerm::Constant(v) => v,
            SourceTerm::Sine(k) => (k as f64 * PI * x).sin(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            SourceTerm::Constant(v) => v.abs(),
            SourceTerm::Sine(_) => 1.0,
        }
    }

    /// `int_0^1 self * phi_i` for the hat function at node `x_i` of width `h`.
    fn hat_moment(&self, x_i: f64, h: f64) -> f64 {
        match *self {
            SourceTerm::Constant(v) => v * h,
            SourceTerm::Sine(k) => {
                let w = k as f64 * PI;
                let z = 0.5 * w * h;
                let sinc = if z == 0.0 { 1.0 } else { z.sin() / z };
                (w * x_i).sin() * h * sinc * sinc
            }
        }
    }
}

impl fmt::Display for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTerm::Constant(v) => write!(f, "const:{v}"),
            SourceTerm::Sine(k) => write!(f, "sin:{k}"),
        }
    }
}

impl FromStr for SourceTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected const:<value> or sin:<k>, got {s:?}"));
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "const" => {
                let v: f64 = arg.trim().parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                Ok(SourceTerm::Constant(v))
            }
            "sin" => {
                let k: u32 = arg.trim().parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(SourceTerm::Sine(k))
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for SourceTerm {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SourceTerm> for String {
    fn from(t: SourceTerm) -> String {
        t.to_string()
    }
}

fn default_term() -> SourceTerm {
    SourceTerm::Constant(1.0)
}

/// Constant nominal coefficient `a0`, fluctuations `psi_j = c j^-theta sin(j pi x)`,
/// load `f`, QoI weight `g` and the nominal summability exponent `p0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFields")]
pub struct AffineDiffusionProblem {
    a0: f64,
    c: f64,
    theta: f64,
    f: SourceTerm,
    g: SourceTerm,
    p0: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFields {
    a0: f64,
    c: f64,
    theta: f64,
    #[serde(default = "default_term")]
    f: SourceTerm,
    #[serde(default = "default_term")]
    g: SourceTerm,
    p0: f64,
}

impl TryFrom<ProblemFields> for AffineDiffusionProblem {
    type Error = Error;
    fn try_from(p: ProblemFields) -> Result<Self> {
        AffineDiffusionProblem::new(p.a0, p.c, p.theta, p.f, p.g, p.p0)
    }
}

impl AffineDiffusionProblem {
    /// Validates parameter ranges only; use [`check_admissibility`] for the
    /// smallness condition on the fluctuations.
    pub fn new(a0: f64, c: f64, theta: f64, f: SourceTerm, g: SourceTerm, p0: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if !(a0.is_finite() && a0 > 0.0) {
            return bad(format!("a0 must be positive, got {a0}"));
        }
        if !(c.is_finite() && c >= 0.0) {
            return bad(format!("c must be non-negative, got {c}"));
        }
        if !(theta.is_finite() && theta > 1.0) {
            return bad(format!("theta must exceed 1, got {theta}"));
        }
        if !(p0 > 0.0 && p0 < 1.0) {
            return bad(format!("p0 must lie in (0, 1), got {p0}"));
        }
        Ok(AffineDiffusionProblem { a0, c, theta, f, g, p0 })
    }

    /// The model used throughout the benchmarks: a0 = 1, c = 0.3, theta = 2,
    /// f = g = 1, p0 = 1/2.
    pub fn default_model() -> Self {
        Self::new(1.0, 0.3, 2.0, default_term(), default_term(), 0.5).expect("valid constants")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        format!(
            "a0 = {:?}\nc = {:?}\ntheta = {:?}\nf = \"{}\"\ng = \"{}\"\np0 = {:?}\n",
            self.a0, self.c, self.theta, self.f, self.g, self.p0
        )
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn f(&self) -> SourceTerm {
        self.f
    }

    pub fn g(&self) -> SourceTerm {
        self.g
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::new(self.a0, c, self.theta, self.f, self.g, self.p0)
    }

    pub fn with_sources(&self, f: SourceTerm, g: SourceTerm) -> Result<Self> {
        Self::new(self.a0, self.c, self.theta, f, g, self.p0)
    }

    /// Sup-norm of `psi_j`, `j >= 1`.
    pub fn fluctuation_amplitude(&self, j: usize) -> f64 {
        self.c * (j as f64).powf(-self.theta)
    }

    /// `a(x, y)` evaluated pointwise (y shorter than needed means trailing zeros).
    pub fn coefficient(&self, x: f64, y: &[f64]) -> f64 {
        let mut acc = NeumaierSum::new();
        acc.add(self.a0);
        for (j, &yj) in y.iter().enumerate() {
            acc.add(yj * self.fluctuation_amplitude(j + 1) * ((j + 1) as f64 * PI * x).sin());
        }
        acc.value()
    }

    /// Upper bound of the tail `sum_{j > s} beta_j` by the integral test.
    pub fn beta_tail_bound(&self, s: usize) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        if s == 0 {
            return self.c / self.a0 * (1.0 + 1.0 / (self.theta - 1.0));
        }
        self.c / (self.a0 * (self.theta - 1.0)) * (s as f64).powf(1.0 - self.theta)
    }

    /// Essential infimum of the coefficient over the parameter box, from the
    /// (upper bound of the) fluctuation sum.
    pub fn coefficient_lower_bound(&self) -> f64 {
        (1.0 - 0.5 * check_admissibility(self, ADMISSIBILITY_TERMS).kappa) * self.a0
    }
}

/// Terms summed explicitly before the analytic tail takes over.
pub const ADMISSIBILITY_TERMS: usize = 4096;

/// `beta_j = ||psi_j||_inf / a0 = c j^-theta / a0` for `j = 1..=s`.
pub fn beta_sequence(problem: &AffineDiffusionProblem, s: usize) -> Vec<f64> {
    (1..=s)
        .map(|j| problem.fluctuation_amplitude(j) / problem.a0)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub kappa: f64,
    pub mu0: f64,
    pub mu: f64,
    pub ok: bool,
}

impl AdmissibilityReport {
    pub fn from_parts(kappa: f64, mu0: f64) -> Self {
        AdmissibilityReport {
            kappa,
            mu0,
            mu: (1.0 - kappa / 2.0) * mu0,
            ok: kappa < 2.0,
        }
    }
}

/// `kappa = sum_{j <= s_max} beta_j` plus the analytic tail bound.
pub fn check_admissibility(problem: &AffineDiffusionProblem, s_max: usize) -> AdmissibilityReport {
    let beta = beta_sequence(problem, s_max);
    let mut acc: NeumaierSum = beta.iter().rev().copied().collect();
    acc.add(problem.beta_tail_bound(s_max));
    AdmissibilityReport::from_parts(acc.value(), problem.a0)
}

/// Uniform mesh with `m` interior nodes `x_i = i h`, `h = 1/(m+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mesh {
    m: usize,
}

impl Mesh {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one interior node".into()));
        }
        Ok(Mesh { m })
    }

    /// Number of interior nodes (degrees of freedom).
    pub fn interior(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.m + 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn elements(&self) -> usize {
        self.m + 1
    }

    pub fn midpoint(&self, e: usize) -> f64 {
        (e as f64 + 0.5) * self.h()
    }
}

/// Finite-element data for one `(problem, mesh, s)` triple, reusable across
/// parameter values.
#[derive(Clone, Debug)]
pub struct Discretization {
    problem: AffineDiffusionProblem,
    mesh: Mesh,
    s: usize,
    /// `psi_j` at element midpoints, element-major: `modes[e*s + j]`.
    modes: Vec<f64>,
    load: Vec<f64>,
    functional: Vec<f64>,
}

impl Discretization {
    /// Fails unless the problem is admissible.
    pub fn new(problem: &AffineDiffusionProblem, mesh: Mesh, s: usize) -> Result<Self> {
        let report = check_admissibility(problem, ADMISSIBILITY_TERMS.max(s));
        if !report.ok {
            return Err(Error::NotAdmissible(report.kappa));
        }
        let ne = mesh.elements();
        let mut modes = Vec::with_capacity(ne * s);
        for e in 0..ne {
            let x = mesh.midpoint(e);
            for j in 1..=s {
                modes.push(problem.fluctuation_amplitude(j) * (j as f64 * PI * x).sin());
            }
        }
        let h = mesh.h();
        let load = (1..=mesh.interior())
            .map(|i| problem.f.hat_moment(mesh.node(i), h))
            .collect();
        let functional = (1..=mesh.interior())
            .map(|i| problem.g.hat_moment(mesh.node(i), h))
            .collect();
        Ok(Discretization {
            problem: problem.clone(),
            mesh,
            s,
            modes,
            load,
            functional,
        })
    }

    pub fn problem(&self) -> &AffineDiffusionProblem {
        &self.problem
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn s(&self) -> usize {
        self.s
    }

    fn check_parameter(&self, y: &[f64]) -> Result<()> {
        if y.len() > self.s {
            return Err(Error::DimensionMismatch(format!(
                "parameter of length {} for truncation dimension {}",
                y.len(),
                self.s
            )));
        }
        if let Some(j) = y.iter().position(|v| !(v.abs() <= BOX_HALF_WIDTH)) {
            return Err(Error::InvalidArgument(format!(
                "y_{} = {} outside [-1/2, 1/2]",
                j + 1,
                y[j]
            )));
        }
        Ok(())
    }

    /// Element-midpoint coefficient values; `y` may be shorter than `s`
    /// (missing entries are zero). Terms are added in the given order.
    pub fn coefficients(&self, y: &[f64]) -> Result<Vec<f64>> {
        let order: Vec<usize> = (0..y.len()).collect();
        self.coefficients_in_order(y, &order)
    }

    /// As [`Self::coefficients`] with the fluctuation terms added in `order`.
    pub fn coefficients_in_order(&self, y: &[f64], order: &[usize]) -> Result<Vec<f64>> {
        self.check_parameter(y)?;
        let s = self.s;
        let a = (0..self.mesh.elements())
            .map(|e| {
                let row = &self.modes[e * s..(e + 1) * s];
                let mut acc = NeumaierSum::new();
                acc.add(self.problem.a0);
                for &j in order {
                    acc.add(y[j] * row[j]);
                }
                acc.value()
            })
            .collect();
        Ok(a)
    }

    /// Nodal values at the interior nodes.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        let a = self.coefficients(y)?;
        self.solve_with_coefficients(&a)
    }

    pub fn solve_with_coefficients(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.mesh.elements() {
            return Err(Error::DimensionMismatch("coefficient count differs from element count".into()));
        }
        if let Some(e) = a.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::NonPositiveCoefficient { element: e, value: a[e] });
        }
        let inv_h = 1.0 / self.mesh.h();
        let m = self.mesh.interior();
        // Thomas elimination on K_ii = (a_{i-1} + a_i)/h, K_{i,i+1} = -a_i/h
        // (interior node i sits between elements i-1 and i).
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        let mut prev_upper = 0.0;
        let mut prev_rhs = 0.0;
        for i in 0..m {
            let lower = -a[i] * inv_h;
            let diag = (a[i] + a[i + 1]) * inv_h;
            let pivot = diag - if i > 0 { lower * prev_upper } else { 0.0 };
            if !(pivot.abs() > 0.0) || !pivot.is_finite() {
                return Err(Error::Singular(i));
            }
            let off = -a[i + 1] * inv_h;
            prev_upper = off / pivot;
            prev_rhs = (self.load[i] - if i > 0 { lower * prev_rhs } else { 0.0 }) / pivot;
            upper[i] = prev_upper;
            rhs[i] = prev_rhs;
        }
        let mut u = vec![0.0; m];
        let mut next = 0.0;
        for i in (0..m).rev() {
            next = rhs[i] - upper[i] * next;
            u[i] = next;
        }
        Ok(u)
    }

    /// `int g u_h` for interior nodal values `dof`; exact for piecewise-linear `u_h`.
    pub fn qoi(&self, dof: &[f64]) -> Result<f64> {
        if dof.len() != self.mesh.interior() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodal values for a mesh with {} interior nodes",
                dof.len(),
                self.mesh.interior()
            )));
        }
        Ok(dof
            .iter()
            .zip(&self.functional)
            .map(|(u, w)| u * w)
            .collect::<NeumaierSum>()
            .value())
    }

    /// `G(u_h(y))`.
    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        let u = self.solve(y)?;
        self.qoi(&u)
    }
}

/// One-shot solve; see [`Discretization`] for repeated solves.
pub fn solve(problem: &AffineDiffusionProblem, y: &[f64], mesh: Mesh) -> Result<Vec<f64>> {
    Discretization::new(problem, mesh, y.len())?.solve(y)
}

pub fn qoi(problem: &AffineDiffusionProblem, dof: &[f64], mesh: Mesh) -> Result<f64> {
    Discretization::new(problem, mesh, 0)?.qoi(dof)
}
