//! Interlaced polynomial lattice rules: the rule specification, point
//! generation, and the line-oriented text formats for specs and point sets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gfpoly::{is_irreducible, is_prime, PolyFb, ResidueRing};

use super::digits::{checked_pow, digit_at};
use super::kernel::MAX_ALPHA;

pub const POINTSET_MAGIC: &str = "hoqmc-pointset v1";

/// `(b, m, alpha, s, modulus, generators)`; generator `k = (j-1)*alpha + i`
/// (1-based) drives interlace slot `i` of parametric dimension `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpecFields", into = "RuleSpecFields")]
pub struct InterlacedRuleSpec {
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    modulus: PolyFb,
    gen: Vec<PolyFb>,
}

impl InterlacedRuleSpec {
    pub fn new(
        b: u32,
        m: u32,
        alpha: u32,
        s: usize,
        modulus: PolyFb,
        gen: Vec<PolyFb>,
    ) -> Result<Self> {
        check_shape(b, m, alpha)?;
        if s == 0 {
            return Err(Error::InvalidSpec("s must be >= 1".into()));
        }
        check_modulus(b, m, &modulus)?;
        if gen.len() != alpha as usize * s {
            return Err(Error::InvalidSpec(format!(
                "expected {} generating polynomials, got {}",
                alpha as usize * s,
                gen.len()
            )));
        }
        for (k, q) in gen.iter().enumerate() {
            if q.base() != b {
                return Err(Error::BaseMismatch(b, q.base()));
            }
            match q.degree() {
                None => {
                    return Err(Error::InvalidSpec(format!(
                        "generator {} is the zero polynomial",
                        k + 1
                    )))
                }
                Some(d) if d >= m as usize => {
                    return Err(Error::InvalidSpec(format!(
                        "generator {} has degree {d} >= m = {m}",
                        k + 1
                    )))
                }
                _ => {}
            }
        }
        if gen[0].coeffs() != [1] {
            return Err(Error::InvalidSpec("the first generator must be 1".into()));
        }
        Ok(InterlacedRuleSpec {
            b,
            m,
            alpha,
            s,
            modulus,
            gen,
        })
    }

    /// Builds a spec from integer encodings of the modulus and generators.
    pub fn from_ints(b: u32, m: u32, alpha: u32, s: usize, modulus: u64, gen: &[u64]) -> Result<Self> {
        let modulus = PolyFb::from_int(b, modulus)?;
        let gen = gen
            .iter()
            .map(|&q| PolyFb::from_int(b, q))
            .collect::<Result<Vec<_>>>()?;
        Self::new(b, m, alpha, s, modulus, gen)
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn modulus(&self) -> &PolyFb {
        &self.modulus
    }

    pub fn generators(&self) -> &[PolyFb] {
        &self.gen
    }

    pub fn generator_ints(&self) -> Vec<u64> {
        self.gen
            .iter()
            .map(|q| q.to_int().expect("degree < m fits"))
            .collect()
    }

    /// Number of points, `b^m`.
    pub fn n_points(&self) -> u64 {
        (self.b as u64).pow(self.m)
    }

    /// The rule restricted to the first `s` parametric dimensions.
    pub fn prefix(&self, s: usize) -> Result<Self> {
        if s == 0 || s > self.s {
            return Err(Error::DimensionMismatch(format!(
                "prefix of {s} dimensions from a rule with {}",
                self.s
            )));
        }
        let mut out = self.clone();
        out.s = s;
        out.gen.truncate(self.alpha as usize * s);
        Ok(out)
    }

    /// The two header lines shared by rule-spec and point-set files.
    pub fn header_text(&self) -> String {
        let gen = self
            .generator_ints()
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "{POINTSET_MAGIC}\nb={} m={} alpha={} s={} N={} modulus={} gen={}\n",
            self.b,
            self.m,
            self.alpha,
            self.s,
            self.n_points(),
            self.modulus.to_int().expect("modulus fits"),
            gen
        )
    }

    /// Parses a rule-spec file (the header; any point rows are ignored).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        parse_header(&mut lines)
    }

    /// SHA-256 of the header text, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.header_text().as_bytes());
        hash.iter().fold(String::with_capacity(64), |mut acc, byte| {
            let _ = write!(acc, "{byte:02x}");
            acc
        })
    }
}

/// Serialized form: integer encodings of the modulus and generators.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpecFields {
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    modulus: u64,
    gen: Vec<u64>,
}

impl TryFrom<RuleSpecFields> for InterlacedRuleSpec {
    type Error = Error;
    fn try_from(f: RuleSpecFields) -> Result<Self> {
        InterlacedRuleSpec::from_ints(f.b, f.m, f.alpha, f.s, f.modulus, &f.gen)
    }
}

impl From<InterlacedRuleSpec> for RuleSpecFields {
    fn from(spec: InterlacedRuleSpec) -> Self {
        RuleSpecFields {
            b: spec.b,
            m: spec.m,
            alpha: spec.alpha,
            s: spec.s,
            modulus: spec.modulus.to_int().expect("modulus fits"),
            gen: spec.generator_ints(),
        }
    }
}

fn check_shape(b: u32, m: u32, alpha: u32) -> Result<()> {
    if !is_prime(b) {
        return Err(Error::InvalidBase(b));
    }
    if m == 0 {
        return Err(Error::InvalidSpec("m must be >= 1".into()));
    }
    if alpha == 0 || alpha > MAX_ALPHA {
        return Err(Error::InvalidSpec(format!(
            "alpha must lie in 1..={MAX_ALPHA}, got {alpha}"
        )));
    }
    checked_pow(b, alpha * m)?;
    Ok(())
}

fn check_modulus(b: u32, m: u32, modulus: &PolyFb) -> Result<()> {
    if modulus.base() != b {
        return Err(Error::BaseMismatch(b, modulus.base()));
    }
    if modulus.degree() != Some(m as usize) {
        return Err(Error::InvalidSpec(format!(
            "modulus degree {:?} differs from m = {m}",
            modulus.degree()
        )));
    }
    if !is_irreducible(modulus)? {
        return Err(Error::ReducibleModulus);
    }
    Ok(())
}

fn parse_header<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<InterlacedRuleSpec> {
    let magic = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
    if magic.trim() != POINTSET_MAGIC {
        return Err(Error::Parse(format!("bad header line {magic:?}")));
    }
    let params = lines
        .next()
        .ok_or_else(|| Error::Parse("missing parameter line".into()))?;
    let mut fields = std::collections::BTreeMap::new();
    for token in params.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad token {token:?}")))?;
        fields.insert(k, v);
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::Parse(format!("missing key {key}")))
    };
    let num = |key: &str| -> Result<u64> {
        get(key)?
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("{key}: {e}")))
    };
    let b = num("b")? as u32;
    let m = num("m")? as u32;
    let alpha = num("alpha")? as u32;
    let s = num("s")? as usize;
    let n = num("N")?;
    let modulus = num("modulus")?;
    let gen = get("gen")?
        .split(',')
        .map(|g| {
            g.parse::<u64>()
                .map_err(|e| Error::Parse(format!("gen: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = InterlacedRuleSpec::from_ints(b, m, alpha, s, modulus, &gen)?;
    if spec.n_points() != n {
        return Err(Error::Parse(format!(
            "N = {n} disagrees with b^m = {}",
            spec.n_points()
        )));
    }
    Ok(spec)
}

/// `N x s` fixed-point coordinates, each a numerator over `b^(alpha m)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointSet {
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    coords: Vec<u64>,
}

impl PointSet {
    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn n_points(&self) -> usize {
        self.coords.len() / self.s.max(1)
    }

    /// Number of base-b digits per coordinate, `alpha * m`.
    pub fn digits(&self) -> u32 {
        self.alpha * self.m
    }

    pub fn row(&self, n: usize) -> &[u64] {
        &self.coords[n * self.s..(n + 1) * self.s]
    }

    pub fn coord(&self, n: usize, j: usize) -> u64 {
        self.coords[n * self.s + j]
    }

    /// Coordinate as a real number in `[0, 1)`.
    pub fn coord_f64(&self, n: usize, j: usize) -> f64 {
        self.coord(n, j) as f64 / (self.b as f64).powi(self.digits() as i32)
    }

    /// Column `j` of the point set.
    pub fn column(&self, j: usize) -> Vec<u64> {
        (0..self.n_points()).map(|n| self.coord(n, j)).collect()
    }

    /// A new point set with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<PointSet> {
        let n = self.n_points();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("not a permutation of the rows".into()));
        }
        let coords = order.iter().flat_map(|&i| self.row(i).to_vec()).collect();
        Ok(PointSet { coords, ..self.clone() })
    }

    /// Point-set file: the spec header followed by one row of `s`
    /// numerators per point.
    pub fn to_text(&self, spec: &InterlacedRuleSpec) -> Result<String> {
        if (spec.b, spec.m, spec.alpha, spec.s) != (self.b, self.m, self.alpha, self.s) {
            return Err(Error::DimensionMismatch("spec does not describe this point set".into()));
        }
        let mut out = spec.header_text();
        for n in 0..self.n_points() {
            let row = self.row(n);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a point-set file and checks it against the rule in its header.
    pub fn from_text(text: &str) -> Result<(InterlacedRuleSpec, PointSet)> {
        let mut lines = text.lines();
        let spec = parse_header(&mut lines)?;
        let mut coords = Vec::with_capacity(spec.n_points() as usize * spec.s);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<u64>().map_err(|e| Error::Parse(format!("row: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != spec.s {
                return Err(Error::Parse(format!("row has {} entries, expected {}", row.len(), spec.s)));
            }
            coords.extend(row);
        }
        let points = PointSet {
            b: spec.b,
            m: spec.m,
            alpha: spec.alpha,
            s: spec.s,
            coords,
        };
        if points.n_points() as u64 != spec.n_points() {
            return Err(Error::Parse(format!(
                "{} rows, expected {}",
                points.n_points(),
                spec.n_points()
            )));
        }
        if points != generate_points(&spec)? {
            return Err(Error::Parse("rows do not match the rule in the header".into()));
        }
        Ok((spec, points))
    }
}

/// Per-slot tables mapping an `m`-digit numerator to its contribution to
/// the interlaced `alpha*m`-digit numerator.
#[derive(Clone, Debug)]
pub(crate) struct Spreader {
    tables: Vec<Vec<u64>>,
}

impl Spreader {
    pub(crate) fn new(b: u32, m: u32, alpha: u32) -> Result<Self> {
        let size = checked_pow(b, m)?;
        let total = alpha * m;
        checked_pow(b, total)?;
        let tables = (1..=alpha)
            .map(|i| {
                (0..size)
                    .map(|v| {
                        (1..=m).fold(0u64, |acc, l| {
                            let d = digit_at(v, l, m, b) as u64;
                            let pos = alpha * (l - 1) + i;
                            acc + d * (b as u64).pow(total - pos)
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(Spreader { tables })
    }

    #[inline]
    pub(crate) fn spread(&self, slot: usize, v: u64) -> u64 {
        self.tables[slot][v as usize]
    }
}

/// Points of an interlaced polynomial lattice rule whose generator list may
/// stop short of `alpha * s` entries; missing generators (and zero
/// encodings) contribute zero digits to their slot.
pub fn points_from_generators(
    b: u32,
    m: u32,
    alpha: u32,
    s: usize,
    modulus: &PolyFb,
    gens: &[u64],
) -> Result<PointSet> {
    check_shape(b, m, alpha)?;
    check_modulus(b, m, modulus)?;
    if gens.len() > alpha as usize * s {
        return Err(Error::DimensionMismatch(format!(
            "{} generators for {} slots",
            gens.len(),
            alpha as usize * s
        )));
    }
    let ring = ResidueRing::new(modulus)?;
    let spreader = Spreader::new(b, m, alpha)?;
    let n = ring.size() as usize;
    if let Some(&bad) = gens.iter().find(|&&q| q >= ring.size()) {
        return Err(Error::Degree(format!("generator {bad} has degree >= m")));
    }
    let mut coords = vec![0u64; n * s];
    for (k, &q) in gens.iter().enumerate() {
        if q == 0 {
            continue;
        }
        let (j, slot) = (k / alpha as usize, k % alpha as usize);
        let residues = ring.multiples(q);
        for (idx, &r) in residues.iter().enumerate() {
            coords[idx * s + j] += spreader.spread(slot, ring.numerator(r));
        }
    }
    Ok(PointSet {
        b,
        m,
        alpha,
        s,
        coords,
    })
}

/// All `b^m` points of the rule, row `n` built from the digit polynomial of
/// the integer `n`.
pub fn generate_points(spec: &InterlacedRuleSpec) -> Result<PointSet> {
    points_from_generators(
        spec.b,
        spec.m,
        spec.alpha,
        spec.s,
        &spec.modulus,
        &spec.generator_ints(),
    )
}
