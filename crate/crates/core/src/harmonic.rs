//! Harmonic function `V(x) = -E S_{tau_x}` of the walk killed below zero,
//! and its reversed-walk counterpart.
//!
//! Lattice laws use the truncated expectations `W_n(x) = E(x + S_n; tau_x > n)`,
//! which increase to `V(x)` with `V(x) - W_n(x) <= d P(tau_x > n)` for the
//! largest downward jump `d`. All start states are handled together by the
//! backward recursion `W_{k+1}(x) = E[W_k(x + X); x + X >= 0]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::{reverse, IncrementLaw, LawKind};
use crate::kernel;
use crate::montecarlo;
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reversed,
}

impl Direction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" | "V" => Ok(Self::Forward),
            "reversed" | "reverse" | "Vcheck" => Ok(Self::Reversed),
            _ => Err(Error::Config(format!("unknown direction '{s}'"))),
        }
    }

    /// The law whose `V` this direction refers to.
    pub fn apply(self, law: &IncrementLaw) -> IncrementLaw {
        match self {
            Self::Forward => law.clone(),
            Self::Reversed => reverse(law),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    SkipfreeExact,
    Extrapolated,
    MonteCarlo,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "skipfree" | "skipfree_exact" | "exact" => Ok(Self::SkipfreeExact),
            "extrapolated" | "richardson" => Ok(Self::Extrapolated),
            "mc" | "monte_carlo" => Ok(Self::MonteCarlo),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SkipfreeExact => "skipfree_exact",
            Self::Extrapolated => "extrapolated",
            Self::MonteCarlo => "monte_carlo",
        })
    }
}

/// Tabulated `V` on `0, h, 2h, ..., x_max`.
///
/// Lattice tables are step functions (`V(x) = V(h floor(x/h))` when `h` is the
/// support gcd); continuous tables are linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTable {
    pub law_id: String,
    pub direction: Direction,
    pub method: Method,
    pub spacing: f64,
    pub lattice: bool,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl HarmonicTable {
    pub fn states(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| i as f64 * self.spacing)
    }

    pub fn max_state(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.spacing
    }

    /// `(V(x), error bound)` for `0 <= x <= max_state`.
    pub fn lookup(&self, x: f64) -> Result<(f64, f64)> {
        if x < -1e-12 * self.spacing {
            return Err(Error::Precondition(format!("table covers x >= 0 only, got {x}")));
        }
        let t = (x / self.spacing).max(0.0);
        let last = self.values.len() - 1;
        if self.lattice {
            let i = (t + 1e-9).floor() as usize;
            if i > last {
                return Err(Error::InsufficientTable(x));
            }
            return Ok((self.values[i], self.errors[i]));
        }
        if t > last as f64 + 1e-9 {
            return Err(Error::InsufficientTable(x));
        }
        let i = (t.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return Ok((self.values[0], self.errors[0]));
        }
        let w = (t - i as f64).clamp(0.0, 1.0);
        let (a, b) = (self.values[i], self.values[i + 1]);
        let value = a + w * (b - a);
        let node_err = self.errors[i].max(self.errors[i + 1]);
        Ok((value, node_err + self.curvature(i) * w * (1.0 - w)))
    }

    /// Second-difference size near node `i`, bounding linear interpolation.
    fn curvature(&self, i: usize) -> f64 {
        let v = &self.values;
        let second = |j: usize| (v[j + 1] - 2.0 * v[j] + v[j - 1]).abs();
        let mut c: f64 = 0.0;
        if i >= 1 && i + 1 < v.len() {
            c = c.max(second(i));
        }
        if i + 2 < v.len() {
            c = c.max(second(i + 1));
        }
        c
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        Ok(self.lookup(x)?.0)
    }

    /// `max V(x)/(1+x)` over the table, a diagnostic for the linear growth bound.
    pub fn growth_ratio(&self) -> f64 {
        self.states().zip(&self.values).map(|(x, v)| v / (1.0 + x)).fold(0.0, f64::max)
    }

    /// Whether values are nondecreasing within twice the error bounds.
    pub fn is_monotone(&self) -> bool {
        self.values
            .windows(2)
            .zip(self.errors.windows(2))
            .all(|(v, e)| v[1] >= v[0] - 2.0 * (e[0] + e[1]))
    }
}

fn grid_index(law: &IncrementLaw, x: f64) -> Result<usize> {
    let grid = law.grid().ok_or(Error::UnsupportedLaw)?;
    if x < 0.0 {
        return Err(Error::Precondition(format!("start state must be nonnegative, got {x}")));
    }
    let t = x / grid.unit;
    if (t - t.round()).abs() > 1e-9 {
        return Err(Error::OffLattice(x));
    }
    Ok(t.round() as usize)
}

/// `W_n(x)` and `P(tau_x > n)` for `x = 0, h, ..., imax*h` at each ladder `n`.
#[derive(Debug, Clone)]
pub struct TruncatedSequence {
    pub ladder: Vec<u64>,
    /// `w[l][i]` is `W_{ladder[l]}(i h)`.
    pub w: Vec<Vec<f64>>,
    /// `survival[l][i]` is `P(tau_{ih} > ladder[l])`.
    pub survival: Vec<Vec<f64>>,
}

/// Backward recursion on the grid: one pass serves every start state.
pub fn truncated_sequence(law: &IncrementLaw, imax: usize, ladder: &[u64]) -> Result<TruncatedSequence> {
    let grid = law.grid().ok_or(Error::UnsupportedLaw)?;
    if ladder.is_empty() || ladder.iter().any(|&n| n == 0) {
        return Err(Error::Precondition("ladder entries must be at least 1".into()));
    }
    let mut order = ladder.to_vec();
    order.sort_unstable();
    order.dedup();
    let n_max = *order.last().expect("non-empty") as usize;
    let up = grid.max_step().max(0) as usize;
    let len0 = imax + n_max * up + 1;
    let mut w: Vec<f64> = (0..len0).map(|i| i as f64 * grid.unit).collect();
    let mut p: Vec<f64> = vec![1.0; len0];
    let mut out_w = Vec::new();
    let mut out_p = Vec::new();
    let mut next_rec = 0;
    for k in 1..=n_max {
        let len = imax + (n_max - k) * up + 1;
        let mut nw = vec![0.0; len];
        let mut np = vec![0.0; len];
        for &(s, prob) in &grid.steps {
            let start = (-s).max(0) as usize;
            for i in start..len {
                let j = (i as i64 + s) as usize;
                nw[i] += prob * w[j];
                np[i] += prob * p[j];
            }
        }
        w = nw;
        p = np;
        if k as u64 == order[next_rec] {
            out_w.push(w[..=imax].to_vec());
            out_p.push(p[..=imax].to_vec());
            next_rec += 1;
        }
    }
    // Return rows in the caller's ladder order.
    let pick = |n: u64| order.iter().position(|&m| m == n).expect("recorded");
    Ok(TruncatedSequence {
        ladder: ladder.to_vec(),
        w: ladder.iter().map(|&n| out_w[pick(n)].clone()).collect(),
        survival: ladder.iter().map(|&n| out_p[pick(n)].clone()).collect(),
    })
}

/// `(W_n(x), d P(tau_x > n))`, so `W_n(x) <= V(x) <= W_n(x) + d P(tau_x > n)`.
pub fn v_partial(law: &IncrementLaw, x: f64, n: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let i = grid_index(law, x)?;
    let seq = truncated_sequence(law, i, &[n])?;
    Ok((seq.w[0][i], law.max_down() * seq.survival[0][i]))
}

/// Richardson limit of `W_n` assuming `W_n = V - c n^{-1/2} + o(n^{-1/2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    pub value: f64,
    pub error: f64,
    /// Rigorous bracket at the largest ladder entry.
    pub bracket: (f64, f64),
}

fn extrapolate(ladder: &[u64], w: &[f64], bias: f64) -> Result<Extrapolation> {
    for pair in w.windows(2) {
        if pair[1] < pair[0] - 1e-12 * pair[0].abs().max(1.0) {
            return Err(Error::NonMonotone(format!("W went from {} to {}", pair[0], pair[1])));
        }
    }
    let extrapolants: Vec<f64> = (1..w.len())
        .map(|i| {
            let r = (ladder[i] as f64 / ladder[i - 1] as f64).sqrt();
            (r * w[i] - w[i - 1]) / (r - 1.0)
        })
        .collect();
    let last = *extrapolants.last().expect("at least two points");
    let prev = extrapolants[extrapolants.len() - 2];
    let w_last = *w.last().expect("non-empty");
    let bracket = (w_last, w_last + bias);
    let floor = 1e-12 * w_last.abs().max(1.0);
    let value = last.clamp(bracket.0, bracket.1);
    let error = ((last - prev).abs() + floor).min(bias.max(floor));
    Ok(Extrapolation { value, error, bracket })
}

fn check_ladder(ladder: &[u64]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::Precondition("extrapolation needs at least three ladder points".into()));
    }
    if ladder.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Precondition("ladder must be strictly increasing".into()));
    }
    Ok(())
}

pub fn v_extrapolated(law: &IncrementLaw, x: f64, ladder: &[u64]) -> Result<Extrapolation> {
    check_ladder(ladder)?;
    let i = grid_index(law, x)?;
    let seq = truncated_sequence(law, i, ladder)?;
    let w: Vec<f64> = seq.w.iter().map(|row| row[i]).collect();
    let bias = law.max_down() * seq.survival.last().expect("non-empty")[i];
    extrapolate(ladder, &w, bias)
}

/// Grid unit `h` if the law only steps down by exactly `h`.
fn skipfree_unit(law: &IncrementLaw) -> Result<f64> {
    let grid = law.grid().ok_or(Error::UnsupportedLaw)?;
    let down: Vec<i64> = grid.steps.iter().map(|s| s.0).filter(|&s| s < 0).collect();
    match down.as_slice() {
        [-1] => Ok(grid.unit),
        _ => Err(Error::NotSkipFree(format!(
            "downward steps {:?} (grid unit {})",
            down.iter().map(|&s| s as f64 * grid.unit).collect::<Vec<_>>(),
            grid.unit
        ))),
    }
}

/// Closed form for walks whose only downward step is one grid unit `h`: the
/// exit lands on `{x}_h - h`, so `V(x) = h floor(x/h) + h`.
pub fn v_skipfree(law: &IncrementLaw, x: f64) -> Result<f64> {
    let h = skipfree_unit(law)?;
    if x < 0.0 {
        return Err(Error::Precondition(format!("start state must be nonnegative, got {x}")));
    }
    Ok(h * (x / h + 1e-9).floor() + h)
}

/// `V(x) = E[V(x + X); x + X >= 0]`, the extension of `V` below zero.
pub fn v_negative(law: &IncrementLaw, table: &HarmonicTable, x: f64) -> Result<f64> {
    match law.kind() {
        LawKind::Lattice { pmf, .. } => {
            let mut acc = quad::KahanSum::default();
            for &(s, p) in pmf {
                let z = x + s;
                if z >= -1e-9 * table.spacing {
                    let z = z.max(0.0);
                    if z > table.max_state() + 1e-9 * table.spacing {
                        return Err(Error::InsufficientTable(z));
                    }
                    acc.add(p * table.value(z)?);
                }
            }
            Ok(acc.value())
        }
        LawKind::NonLattice(c) => {
            let (lo, hi) = c.support;
            let a = (-x).max(lo);
            if a >= hi {
                return Ok(0.0);
            }
            if x + hi > table.max_state() + 1e-9 * table.spacing {
                return Err(Error::InsufficientTable(x + hi));
            }
            let density = c.density.clone();
            let nodes: Vec<f64> = table.states().map(|z| z - x).collect();
            let f = |s: f64| density(s) * table.value((x + s).max(0.0)).unwrap_or(f64::NAN);
            Ok(quad::integrate_piecewise(f, a, hi, &nodes, 1e-10)?.value)
        }
    }
}

/// Monte Carlo `V` on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McHarmonic {
    pub estimate: f64,
    pub stderr: f64,
    pub bias_bound: f64,
}

/// `E(x + S_n; tau_x > n)` by simulation, with `bias_bound = d P(tau_x > n)`
/// (the survival probability is itself estimated and inflated by two
/// standard errors).
pub fn v_mc(law: &IncrementLaw, x: f64, n_cap: u64, paths: u64, seed: u64) -> Result<McHarmonic> {
    Ok(mc_rows(law, &[x], n_cap, paths, seed)?[0])
}

fn mc_rows(law: &IncrementLaw, starts: &[f64], n_cap: u64, paths: u64, seed: u64) -> Result<Vec<McHarmonic>> {
    if n_cap == 0 {
        return Err(Error::Precondition("n_cap must be at least 1".into()));
    }
    let means = montecarlo::mc_truncated_means(law, starts, n_cap, paths, seed)?;
    let d = law.max_down();
    Ok(means
        .into_iter()
        .map(|m| {
            let p_se = (m.survival * (1.0 - m.survival) / paths as f64).sqrt();
            McHarmonic { estimate: m.mean, stderr: m.stderr, bias_bound: d * (m.survival + 2.0 * p_se) }
        })
        .collect())
}

/// Settings for table construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    pub ladder: Vec<u64>,
    pub spacing: f64,
    pub n_cap: u64,
    pub paths: u64,
    pub seed: u64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { ladder: vec![256, 1024, 4096], spacing: 0.05, n_cap: 4096, paths: 100_000, seed: 1 }
    }
}

/// Builds a table of `V` (forward) or of the reversed-walk function.
pub fn build_table(
    law: &IncrementLaw,
    direction: Direction,
    x_max: f64,
    method: Method,
    opts: &TableOptions,
) -> Result<HarmonicTable> {
    if !(x_max >= 0.0) {
        return Err(Error::Precondition(format!("x_max must be nonnegative, got {x_max}")));
    }
    let walk = direction.apply(law);
    let law_id = law.id();
    match method {
        Method::SkipfreeExact => {
            let h = skipfree_unit(&walk)?;
            let imax = (x_max / h + 1e-9).floor() as usize;
            let values = (0..=imax).map(|i| (i + 1) as f64 * h).collect();
            Ok(HarmonicTable {
                law_id,
                direction,
                method,
                spacing: h,
                lattice: true,
                values,
                errors: vec![0.0; imax + 1],
            })
        }
        Method::Extrapolated => {
            check_ladder(&opts.ladder)?;
            let grid = walk.grid().ok_or(Error::UnsupportedLaw)?;
            let imax = (x_max / grid.unit + 1e-9).floor() as usize;
            let seq = truncated_sequence(&walk, imax, &opts.ladder)?;
            let d = walk.max_down();
            let mut values = Vec::with_capacity(imax + 1);
            let mut errors = Vec::with_capacity(imax + 1);
            for i in 0..=imax {
                let w: Vec<f64> = seq.w.iter().map(|row| row[i]).collect();
                let bias = d * seq.survival.last().expect("non-empty")[i];
                let e = extrapolate(&opts.ladder, &w, bias)?;
                values.push(e.value);
                errors.push(e.error);
            }
            Ok(HarmonicTable { law_id, direction, method, spacing: grid.unit, lattice: true, values, errors })
        }
        Method::MonteCarlo => {
            let (spacing, lattice) = match walk.grid() {
                Some(g) => (g.unit, true),
                None => (opts.spacing, false),
            };
            let imax = (x_max / spacing + 1e-9).floor() as usize;
            let starts: Vec<f64> = (0..=imax).map(|i| i as f64 * spacing).collect();
            let rows = mc_rows(&walk, &starts, opts.n_cap, opts.paths, opts.seed)?;
            // The midpoint of [W, W + bias] halves the worst-case truncation error.
            let values = rows.iter().map(|r| r.estimate + 0.5 * r.bias_bound).collect();
            let errors = rows.iter().map(|r| 0.5 * r.bias_bound + r.stderr).collect();
            Ok(HarmonicTable { law_id, direction, method, spacing, lattice, values, errors })
        }
    }
}

/// `V_n(x) = V(x) L(x/(sigma sqrt(n)))`.
pub fn vn(table: &HarmonicTable, x: f64, n: u64, sigma: f64) -> Result<f64> {
    Ok(table.value(x)? * kernel::big_l(x / (sigma * (n as f64).sqrt())))
}

/// Largest `|E[V(x + X); x + X >= 0] - V(x)|` over table states whose one-step
/// successors stay inside the table.
pub fn harmonicity_residual(law: &IncrementLaw, table: &HarmonicTable) -> Result<f64> {
    let walk = table.direction.apply(law);
    let up = walk.support_bounds().1.max(0.0);
    let mut worst: f64 = 0.0;
    for (x, v) in table.states().zip(&table.values) {
        if x + up > table.max_state() + 1e-9 * table.spacing {
            break;
        }
        worst = worst.max((v_negative(&walk, table, x)? - v).abs());
    }
    Ok(worst)
}
