//! Increment distributions: finite-support lattice laws and continuous
//! (non-lattice) laws given by a density and a sampler.
//!
//! Lattice structure is detected over exact rationals. Every support value
//! is reconstructed as `p/q` by continued fractions (tolerance `1e-12`
//! relative, `q <= 10^6`), so the span is an exact gcd rather than a
//! floating-point one.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_integer::Integer;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quad;

const SNAP_TOL: f64 = 1e-12;
const MAX_DENOMINATOR: i128 = 1_000_000;

/// Minimal lattice `span*Z + shift` carrying the increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub span: f64,
    pub shift: f64,
}

impl LatticeSpec {
    /// Whether `z` lies in `span*Z + offset`, up to snapping tolerance.
    pub fn contains_shifted(&self, z: f64, offset: f64) -> bool {
        let k = (z - offset) / self.span;
        (k - k.round()).abs() <= 1e-9
    }

    /// `{t}_span`: the representative of `t` in `[0, span)`.
    pub fn reduce(&self, t: f64) -> f64 {
        let mut r = t.rem_euclid(self.span);
        if (self.span - r) <= 1e-9 * self.span {
            r = 0.0;
        }
        if r.abs() <= 1e-12 * self.span.max(1.0) {
            r = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub delta: f64,
    pub abs_moment: f64,
    pub delta1: f64,
}

/// Integer step representation used by the dynamic programs: every support
/// value equals `unit * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    pub unit: f64,
    pub steps: Vec<(i64, f64)>,
}

impl StepGrid {
    pub fn min_step(&self) -> i64 {
        self.steps.first().map(|s| s.0).unwrap_or(0)
    }

    pub fn max_step(&self) -> i64 {
        self.steps.last().map(|s| s.0).unwrap_or(0)
    }
}

pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;
pub type Cdf = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A law with a density on a bounded support interval.
#[derive(Clone)]
pub struct ContinuousLaw {
    pub density: Density,
    pub sampler: Sampler,
    pub cdf: Option<Cdf>,
    pub support: (f64, f64),
}

#[derive(Clone)]
pub enum LawKind {
    Lattice {
        pmf: Vec<(f64, f64)>,
        spec: LatticeSpec,
        grid: StepGrid,
    },
    NonLattice(ContinuousLaw),
}

#[derive(Clone)]
pub struct IncrementLaw {
    name: String,
    reversed: bool,
    kind: LawKind,
    moments: MomentSummary,
}

impl fmt::Debug for IncrementLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("IncrementLaw");
        d.field("name", &self.id()).field("moments", &self.moments);
        match &self.kind {
            LawKind::Lattice { pmf, spec, .. } => d.field("pmf", pmf).field("lattice", spec),
            LawKind::NonLattice(c) => d.field("support", &c.support),
        };
        d.finish()
    }
}

impl PartialEq for IncrementLaw {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (LawKind::Lattice { pmf: a, spec: sa, .. }, LawKind::Lattice { pmf: b, spec: sb, .. }) => {
                a == b && sa == sb
            }
            (LawKind::NonLattice(a), LawKind::NonLattice(b)) => {
                Arc::ptr_eq(&a.density, &b.density) && self.reversed == other.reversed
            }
            _ => false,
        }
    }
}

impl IncrementLaw {
    /// Identifier such as `skipfree` or `skipfree~rev`.
    pub fn id(&self) -> String {
        if self.reversed {
            format!("{}~rev", self.name)
        } else {
            self.name.clone()
        }
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn moments(&self) -> &MomentSummary {
        &self.moments
    }

    pub fn sigma(&self) -> f64 {
        self.moments.variance.sqrt()
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.kind, LawKind::Lattice { .. })
    }

    pub fn lattice(&self) -> Option<&LatticeSpec> {
        match &self.kind {
            LawKind::Lattice { spec, .. } => Some(spec),
            LawKind::NonLattice(_) => None,
        }
    }

    pub fn pmf(&self) -> Option<&[(f64, f64)]> {
        match &self.kind {
            LawKind::Lattice { pmf, .. } => Some(pmf),
            LawKind::NonLattice(_) => None,
        }
    }

    pub fn grid(&self) -> Option<&StepGrid> {
        match &self.kind {
            LawKind::Lattice { grid, .. } => Some(grid),
            LawKind::NonLattice(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&ContinuousLaw> {
        match &self.kind {
            LawKind::NonLattice(c) => Some(c),
            LawKind::Lattice { .. } => None,
        }
    }

    /// Smallest and largest possible increment.
    pub fn support_bounds(&self) -> (f64, f64) {
        match &self.kind {
            LawKind::Lattice { pmf, .. } => (pmf[0].0, pmf[pmf.len() - 1].0),
            LawKind::NonLattice(c) => c.support,
        }
    }

    /// Largest possible downward jump, `max(0, -min support)`.
    pub fn max_down(&self) -> f64 {
        (-self.support_bounds().0).max(0.0)
    }

    /// `P(X < t)`.
    pub fn prob_below(&self, t: f64) -> f64 {
        match &self.kind {
            LawKind::Lattice { pmf, grid, .. } => {
                let tol = 1e-9 * grid.unit;
                quad::neumaier_sum(pmf.iter().filter(|(v, _)| *v < t - tol).map(|(_, p)| *p))
            }
            LawKind::NonLattice(c) => continuous_cdf(c, t),
        }
    }

    /// `P(X > t)`.
    pub fn prob_above(&self, t: f64) -> f64 {
        match &self.kind {
            LawKind::Lattice { pmf, grid, .. } => {
                let tol = 1e-9 * grid.unit;
                quad::neumaier_sum(pmf.iter().filter(|(v, _)| *v > t + tol).map(|(_, p)| *p))
            }
            LawKind::NonLattice(c) => 1.0 - continuous_cdf(c, t),
        }
    }

    /// `P(X = t)` (zero for non-lattice laws).
    pub fn prob_at(&self, t: f64) -> f64 {
        match &self.kind {
            LawKind::Lattice { pmf, grid, .. } => {
                let tol = 1e-9 * grid.unit;
                pmf.iter().filter(|(v, _)| (*v - t).abs() <= tol).map(|(_, p)| *p).sum()
            }
            LawKind::NonLattice(_) => 0.0,
        }
    }

    /// One draw from the law.
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match &self.kind {
            LawKind::Lattice { pmf, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in pmf {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                pmf[pmf.len() - 1].0
            }
            LawKind::NonLattice(c) => (c.sampler)(rng),
        }
    }
}

fn continuous_cdf(c: &ContinuousLaw, t: f64) -> f64 {
    if let Some(cdf) = &c.cdf {
        return cdf(t);
    }
    let (lo, hi) = c.support;
    if t <= lo {
        return 0.0;
    }
    if t >= hi {
        return 1.0;
    }
    let density = c.density.clone();
    quad::integrate(move |s| density(s), lo, t, 1e-13)
        .map(|r| r.value.clamp(0.0, 1.0))
        .unwrap_or(f64::NAN)
}

/// Best rational approximation `p/q` of `v` with `q <= max_den` within `tol`.
fn rationalize(v: f64, tol: f64, max_den: i128) -> Option<(i128, i128)> {
    if !v.is_finite() {
        return None;
    }
    let (mut h0, mut h1): (i128, i128) = (0, 1);
    let (mut k0, mut k1): (i128, i128) = (1, 0);
    let mut r = v;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let ai = a as i128;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (v - h1 as f64 / k1 as f64).abs() <= tol {
            return Some((h1, k1));
        }
        let frac = r - a;
        if frac == 0.0 {
            return Some((h1, k1));
        }
        r = 1.0 / frac;
    }
    None
}

struct RationalSupport {
    numerators: Vec<i128>,
    denominator: i128,
}

fn rational_support(points: &[f64]) -> Result<RationalSupport> {
    let mut fracs = Vec::with_capacity(points.len());
    for &v in points {
        let tol = SNAP_TOL * v.abs().max(1.0);
        let r = rationalize(v, tol, MAX_DENOMINATOR)
            .ok_or_else(|| Error::NotLattice(format!("{v} has no rational form with denominator <= 1e6")))?;
        fracs.push(r);
    }
    let mut denominator: i128 = 1;
    for &(_, q) in &fracs {
        denominator = denominator.lcm(&q);
        if denominator > 1_000_000_000_000 {
            return Err(Error::NotLattice("common denominator too large".into()));
        }
    }
    let numerators = fracs.iter().map(|&(p, q)| p * (denominator / q)).collect();
    Ok(RationalSupport { numerators, denominator })
}

/// Minimal `(span, shift)` such that every point lies in `span*Z + shift`.
pub fn detect_lattice(points: &[f64]) -> Result<LatticeSpec> {
    if points.len() < 2 {
        return Err(Error::Precondition("lattice detection needs at least two support points".into()));
    }
    let rs = rational_support(points)?;
    let first = rs.numerators[0];
    let g = rs.numerators.iter().fold(0i128, |g, &n| g.gcd(&(n - first)));
    if g == 0 {
        return Err(Error::NotLattice("support is a single point".into()));
    }
    let min = *rs.numerators.iter().min().expect("non-empty");
    let shift = min.rem_euclid(g);
    Ok(LatticeSpec {
        span: g as f64 / rs.denominator as f64,
        shift: shift as f64 / rs.denominator as f64,
    })
}

/// Builds a validated lattice law from `(value, probability)` pairs.
pub fn make_lattice_law(points: &[(f64, f64)], delta: f64) -> Result<IncrementLaw> {
    make_named_lattice_law("custom", points, delta)
}

pub fn make_named_lattice_law(name: &str, points: &[(f64, f64)], delta: f64) -> Result<IncrementLaw> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::DomainError(format!("moment exponent delta must be positive, got {delta}")));
    }
    if let Some(&(v, p)) = points.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::BadProbabilities(format!("probability {p} at {v} is not positive")));
    }
    let total = quad::neumaier_sum(points.iter().map(|(_, p)| *p));
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::BadProbabilities(format!("probabilities sum to {total}")));
    }
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (v, p) in sorted {
        match merged.last_mut() {
            Some(last) if (last.0 - v).abs() <= SNAP_TOL * v.abs().max(1.0) => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    if merged.len() < 2 {
        return Err(Error::DegenerateLaw);
    }
    let values: Vec<f64> = merged.iter().map(|m| m.0).collect();
    let spec = detect_lattice(&values)?;
    let rs = rational_support(&values)?;
    let unit_num = rs.numerators.iter().fold(0i128, |g, &n| g.gcd(&n));
    let unit = unit_num as f64 / rs.denominator as f64;
    let steps: Vec<(i64, f64)> = rs
        .numerators
        .iter()
        .zip(&merged)
        .map(|(&n, &(_, p))| ((n / unit_num) as i64, p))
        .collect();
    // Snap the stored values onto the exact rational grid.
    let pmf: Vec<(f64, f64)> = steps.iter().map(|&(s, p)| (s as f64 * unit, p)).collect();
    let moments = lattice_moments(&pmf, delta)?;
    Ok(IncrementLaw {
        name: name.to_string(),
        reversed: false,
        kind: LawKind::Lattice { pmf, spec, grid: StepGrid { unit, steps } },
        moments,
    })
}

fn lattice_moments(pmf: &[(f64, f64)], delta: f64) -> Result<MomentSummary> {
    let mean = quad::neumaier_sum(pmf.iter().map(|(v, p)| v * p));
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMean(mean));
    }
    let variance = quad::neumaier_sum(pmf.iter().map(|(v, p)| (v - mean) * (v - mean) * p));
    if variance <= 0.0 {
        return Err(Error::DegenerateLaw);
    }
    let abs_moment = quad::neumaier_sum(pmf.iter().map(|(v, p)| v.abs().powf(2.0 + delta) * p));
    Ok(MomentSummary { mean, variance, delta, abs_moment, delta1: delta.min(1.0) })
}

/// Builds a continuous law and checks the sampler against the density by
/// comparing the first two sample moments with quadrature moments.
pub fn make_continuous_law(
    name: &str,
    density: Density,
    sampler: Sampler,
    cdf: Option<Cdf>,
    support: (f64, f64),
    delta: f64,
) -> Result<IncrementLaw> {
    let (lo, hi) = support;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Precondition("continuous laws need a bounded support interval".into()));
    }
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::DomainError(format!("moment exponent delta must be positive, got {delta}")));
    }
    let moment = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let f = density.clone();
        Ok(quad::integrate_piecewise(|s| g(s) * f(s), lo, hi, &[0.0], 1e-13)?.value)
    };
    let mass = moment(&|_| 1.0)?;
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::BadProbabilities(format!("density integrates to {mass}")));
    }
    let mean = moment(&|s| s)?;
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMean(mean));
    }
    let variance = moment(&|s| (s - mean) * (s - mean))?;
    if variance <= 0.0 {
        return Err(Error::DegenerateLaw);
    }
    let fourth = moment(&|s| (s - mean).powi(4))?;
    let abs_moment = moment(&|s| s.abs().powf(2.0 + delta))?;
    if !abs_moment.is_finite() {
        return Err(Error::DomainError("E|X|^(2+delta) is not finite".into()));
    }

    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a77);
    let (mut s1, mut s2) = (quad::KahanSum::default(), quad::KahanSum::default());
    for _ in 0..DRAWS {
        let x = sampler(&mut rng);
        s1.add(x);
        s2.add((x - mean) * (x - mean));
    }
    let n = DRAWS as f64;
    let sample_mean = s1.value() / n;
    let sample_var = s2.value() / n;
    let se_mean = (variance / n).sqrt();
    let se_var = ((fourth - variance * variance).max(0.0) / n).sqrt();
    if (sample_mean - mean).abs() > 5.0 * se_mean || (sample_var - variance).abs() > 5.0 * se_var {
        return Err(Error::Precondition(format!(
            "sampler inconsistent with density: sample mean {sample_mean:.5}, variance {sample_var:.5} vs {variance:.5}"
        )));
    }
    Ok(IncrementLaw {
        name: name.to_string(),
        reversed: false,
        kind: LawKind::NonLattice(ContinuousLaw { density, sampler, cdf, support }),
        moments: MomentSummary { mean, variance, delta, abs_moment, delta1: delta.min(1.0) },
    })
}

/// Law of `-X`.
pub fn reverse(law: &IncrementLaw) -> IncrementLaw {
    let kind = match &law.kind {
        LawKind::Lattice { pmf, grid, .. } => {
            let pmf: Vec<(f64, f64)> = pmf.iter().rev().map(|&(v, p)| (-v, p)).collect();
            let steps = grid.steps.iter().rev().map(|&(s, p)| (-s, p)).collect();
            let values: Vec<f64> = pmf.iter().map(|m| m.0).collect();
            let spec = detect_lattice(&values).expect("negated lattice support stays a lattice");
            LawKind::Lattice { pmf, spec, grid: StepGrid { unit: grid.unit, steps } }
        }
        LawKind::NonLattice(c) => {
            let density = c.density.clone();
            let sampler = c.sampler.clone();
            let cdf = c.cdf.clone();
            LawKind::NonLattice(ContinuousLaw {
                density: Arc::new(move |x| density(-x)),
                sampler: Arc::new(move |rng| -sampler(rng)),
                cdf: cdf.map(|f| -> Cdf { Arc::new(move |t| 1.0 - f(-t)) }),
                support: (-c.support.1, -c.support.0),
            })
        }
    };
    let m = law.moments;
    IncrementLaw {
        name: law.name.clone(),
        reversed: !law.reversed,
        kind,
        moments: MomentSummary { mean: -m.mean, ..m },
    }
}

/// Built-in laws: `ssrw`, `trinomial`, `skipfree`, `uniform`.
pub fn builtin(name: &str) -> Option<IncrementLaw> {
    let law = match name {
        "ssrw" => make_named_lattice_law("ssrw", &[(-1.0, 0.5), (1.0, 0.5)], 1.0),
        "trinomial" => make_named_lattice_law("trinomial", &[(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)], 1.0),
        "skipfree" => make_named_lattice_law("skipfree", &[(-1.0, 2.0 / 3.0), (2.0, 1.0 / 3.0)], 1.0),
        "uniform" => uniform_law(1.0),
        _ => return None,
    };
    Some(law.expect("built-in laws are valid"))
}

/// Continuous Uniform[-1, 1], sampled by inverse CDF.
pub fn uniform_law(delta: f64) -> Result<IncrementLaw> {
    make_continuous_law(
        "uniform",
        Arc::new(|x: f64| if (-1.0..=1.0).contains(&x) { 0.5 } else { 0.0 }),
        Arc::new(|rng: &mut dyn RngCore| 2.0 * rng.random::<f64>() - 1.0),
        Some(Arc::new(|t: f64| ((t + 1.0) / 2.0).clamp(0.0, 1.0))),
        (-1.0, 1.0),
        delta,
    )
}

fn parse_number(token: &str) -> Result<f64> {
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("cannot parse number '{token}'")))
    };
    match token.split_once('/') {
        Some((num, den)) => Ok(parse(num)? / parse(den)?),
        None => parse(token),
    }
}

/// Parses a law definition: one `value prob` pair per line, `#` comments.
/// Probabilities and values may be written as fractions (`2/3`).
pub fn parse_law_text(name: &str, text: &str, delta: f64) -> Result<IncrementLaw> {
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let (Some(v), Some(p), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(Error::Config(format!("line {}: expected 'value prob'", lineno + 1)));
        };
        points.push((parse_number(v)?, parse_number(p)?));
    }
    make_named_lattice_law(name, &points, delta)
}

/// Resolves a built-in law name or a law definition file.
pub fn resolve_law(spec: &str, delta: f64) -> Result<IncrementLaw> {
    if let Some(law) = builtin(spec) {
        if (law.moments().delta - delta).abs() > 0.0 {
            return match spec {
                "uniform" => uniform_law(delta),
                _ => {
                    let pmf = law.pmf().expect("lattice built-in").to_vec();
                    make_named_lattice_law(spec, &pmf, delta)
                }
            };
        }
        return Ok(law);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("unknown law '{spec}' ({e})")))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("file");
    parse_law_text(name, &text, delta)
}
