//! Exact finite-`n` laws of lattice walks by forward dynamic programming.
//!
//! States are `origin + unit * i` where `unit` is the gcd of the support, so
//! an off-lattice start is handled by shifting the origin. Killing keeps an
//! index window `[min_keep, max_keep]`; both the kept and the killed mass are
//! reported, so exit probabilities come straight from the removed mass and
//! are exactly zero when no state can leave.

use crate::error::{Error, Result};
use crate::increments::{reverse, IncrementLaw, StepGrid};
use crate::kernel;
use crate::quad::{self, KahanSum};

/// Which prefix of the path must stay in `[0, inf)`.
///
/// `tau_x > m` means `x + S_j >= 0` for `j = 1..=m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `tau_x > n - 1`: the last step is free.
    SurviveThroughPrev,
    /// `tau_x > n`.
    SurviveThrough,
}

impl Constraint {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n-1" | "prev" | "survive_through(n-1)" => Ok(Self::SurviveThroughPrev),
            "n" | "survive_through(n)" => Ok(Self::SurviveThrough),
            _ => Err(Error::Config(format!("unknown constraint '{s}' (use n-1 or n)"))),
        }
    }

    fn killed_steps(self, n: u64) -> u64 {
        match self {
            Self::SurviveThroughPrev => n.saturating_sub(1),
            Self::SurviveThrough => n,
        }
    }
}

const INDEX_TOL: f64 = 1e-9;

/// Smallest index `i` with `origin + unit * i >= level`.
pub fn first_index_at_or_above(origin: f64, unit: f64, level: f64) -> i64 {
    ((level - origin) / unit - INDEX_TOL).ceil() as i64
}

/// Largest index `i` with `origin + unit * i <= level`.
pub fn last_index_at_or_below(origin: f64, unit: f64, level: f64) -> i64 {
    ((level - origin) / unit + INDEX_TOL).floor() as i64
}

/// Forward evolution of a lattice walk with an optional absorbing window.
#[derive(Debug, Clone)]
pub struct LatticeDp {
    unit: f64,
    steps: Vec<(i64, f64)>,
    min_step: i64,
    width: usize,
    origin: f64,
    lo: i64,
    mass: Vec<f64>,
    min_keep: Option<i64>,
    max_keep: Option<i64>,
    float_error: f64,
    prune: f64,
    time: u64,
    running_mass: f64,
}

impl LatticeDp {
    pub fn new(law: &IncrementLaw, origin: f64) -> Result<Self> {
        let grid: &StepGrid = law.grid().ok_or(Error::UnsupportedLaw)?;
        let min_step = grid.min_step();
        Ok(Self {
            unit: grid.unit,
            steps: grid.steps.clone(),
            min_step,
            width: (grid.max_step() - min_step) as usize + 1,
            origin,
            lo: 0,
            mass: vec![1.0],
            min_keep: None,
            max_keep: None,
            float_error: 0.0,
            prune: f64::MIN_POSITIVE,
            time: 0,
            running_mass: 1.0,
        })
    }

    /// Kill states strictly below `level` (tolerant to rounding).
    pub fn keep_at_or_above(mut self, level: f64) -> Self {
        self.min_keep = Some(first_index_at_or_above(self.origin, self.unit, level));
        self
    }

    /// Kill states strictly above `level`.
    pub fn keep_at_or_below(mut self, level: f64) -> Self {
        self.max_keep = Some(last_index_at_or_below(self.origin, self.unit, level));
        self
    }

    /// Kill states whose index lies outside `[lo, hi]`.
    pub fn keep_indices(mut self, lo: Option<i64>, hi: Option<i64>) -> Self {
        self.min_keep = lo;
        self.max_keep = hi;
        self
    }

    /// Flush cells below `threshold`, charging them to the error bound.
    pub fn prune_below(mut self, threshold: f64) -> Self {
        self.prune = threshold.max(f64::MIN_POSITIVE);
        self
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn float_error(&self) -> f64 {
        self.float_error
    }

    pub fn value_of(&self, index: i64) -> f64 {
        self.origin + self.unit * index as f64
    }

    /// Lowest stored index and the mass vector starting there.
    pub fn raw(&self) -> (i64, &[f64]) {
        (self.lo, &self.mass)
    }

    /// `(index, mass)` for stored cells.
    pub fn cells(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.mass.iter().enumerate().map(move |(j, &m)| (self.lo + j as i64, m))
    }

    pub fn total(&self) -> f64 {
        quad::neumaier_sum(self.mass.iter().copied())
    }

    /// Mass stored at indices in `[lo, hi]` (inclusive, clipped).
    pub fn mass_between(&self, lo: i64, hi: i64) -> f64 {
        let a = (lo - self.lo).max(0);
        let b = (hi - self.lo + 1).min(self.mass.len() as i64);
        if a >= b {
            return 0.0;
        }
        quad::lane_sum(&self.mass[a as usize..b as usize])
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Compensated sum of `f(value) * mass` over stored states.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = KahanSum::default();
        for (i, m) in self.cells() {
            if m != 0.0 {
                acc.add(f(self.value_of(i)) * m);
            }
        }
        acc.value()
    }

    /// One convolution step; killing applies when `kill` is set. Returns the
    /// mass removed by killing.
    pub fn advance(&mut self, kill: bool) -> f64 {
        let len = self.mass.len();
        let mut next = vec![0.0; len + self.width - 1];
        for &(s, p) in &self.steps {
            let off = (s - self.min_step) as usize;
            for (dst, &m) in next[off..off + len].iter_mut().zip(&self.mass) {
                *dst += p * m;
            }
        }
        self.float_error += 2.0 * self.steps.len() as f64 * f64::EPSILON * self.running_mass;
        self.lo += self.min_step;
        self.mass = next;
        self.time += 1;

        let mut killed = KahanSum::default();
        if kill {
            if let Some(hi) = self.max_keep {
                let keep = (hi - self.lo + 1).clamp(0, self.mass.len() as i64) as usize;
                for &m in &self.mass[keep..] {
                    killed.add(m);
                }
                self.mass.truncate(keep);
            }
            if let Some(lo) = self.min_keep {
                let cut = (lo - self.lo).clamp(0, self.mass.len() as i64) as usize;
                for &m in &self.mass[..cut] {
                    killed.add(m);
                }
                self.mass.drain(..cut);
                self.lo += cut as i64;
            }
        }
        let flushed = self.flush_and_trim();
        let killed = killed.value();
        self.running_mass = (self.running_mass - killed - flushed).max(0.0);
        killed
    }

    fn flush_and_trim(&mut self) -> f64 {
        let mut flushed = 0.0;
        for m in self.mass.iter_mut() {
            if *m != 0.0 && *m < self.prune {
                flushed += *m;
                *m = 0.0;
            }
        }
        self.float_error += flushed;
        let first = self.mass.iter().position(|&m| m != 0.0);
        match first {
            None => {
                self.mass.clear();
            }
            Some(f) => {
                let last = self.mass.iter().rposition(|&m| m != 0.0).expect("non-empty");
                self.mass.truncate(last + 1);
                self.mass.drain(..f);
                self.lo += f as i64;
            }
        }
        flushed
    }
}

/// Exact conditioned law `y -> P(x + S_n = y, tau_x > m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedLawTable {
    pub law_id: String,
    pub x: f64,
    pub n: u64,
    pub constraint: Constraint,
    /// `(y, probability)` with positive probability, increasing in `y`.
    pub mass: Vec<(f64, f64)>,
    /// `P(tau_x > m)` where `m` is the constrained prefix length.
    pub persistence: f64,
    pub float_error_bound: f64,
}

impl ConditionedLawTable {
    pub fn total(&self) -> f64 {
        quad::neumaier_sum(self.mass.iter().map(|m| m.1))
    }

    /// Probability at `y` (zero when absent).
    pub fn get(&self, y: f64) -> f64 {
        let tol = 1e-9 * y.abs().max(1.0);
        self.mass
            .iter()
            .find(|(v, _)| (v - y).abs() <= tol)
            .map(|m| m.1)
            .unwrap_or(0.0)
    }
}

fn check_start(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::DomainError(format!("start state must be finite, got {x}")));
    }
    Ok(())
}

/// Forward DP for the joint law of the endpoint and survival.
pub fn joint_law(law: &IncrementLaw, x: f64, n: u64, constraint: Constraint) -> Result<ConditionedLawTable> {
    check_start(x)?;
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let mut dp = LatticeDp::new(law, x)?.keep_at_or_above(0.0);
    let killed_steps = constraint.killed_steps(n);
    for k in 1..=n {
        dp.advance(k <= killed_steps);
    }
    let mass: Vec<(f64, f64)> = dp
        .cells()
        .filter(|&(_, m)| m > 0.0)
        .map(|(i, m)| (dp.value_of(i), m))
        .collect();
    // A free last step preserves mass, so the total is the persistence of
    // the constrained prefix in both cases.
    let total = dp.total();
    Ok(ConditionedLawTable {
        law_id: law.id(),
        x,
        n,
        constraint,
        mass,
        persistence: total,
        float_error_bound: dp.float_error() + mass_rounding(total, n),
    })
}

fn mass_rounding(total: f64, n: u64) -> f64 {
    (n as f64 + 1.0) * f64::EPSILON * total.max(f64::EPSILON)
}

/// `P(tau_x > n)`; `n = 0` gives 1.
pub fn persistence(law: &IncrementLaw, x: f64, n: u64) -> Result<f64> {
    Ok(persistence_curve(law, x, n)?[n as usize])
}

/// `[P(tau_x > k) for k in 0..=n_max]` from one DP pass.
pub fn persistence_curve(law: &IncrementLaw, x: f64, n_max: u64) -> Result<Vec<f64>> {
    check_start(x)?;
    let mut dp = LatticeDp::new(law, x)?.keep_at_or_above(0.0);
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(1.0);
    for _ in 0..n_max {
        dp.advance(true);
        out.push(dp.total());
    }
    Ok(out)
}

/// `[P(tau_x = k)]` indexed by `k` (entry 0 is zero), up to `n_max`.
pub fn exit_pmf(law: &IncrementLaw, x: f64, n_max: u64) -> Result<Vec<f64>> {
    check_start(x)?;
    let mut dp = LatticeDp::new(law, x)?.keep_at_or_above(0.0);
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(0.0);
    for _ in 0..n_max {
        out.push(dp.advance(true));
    }
    Ok(out)
}

/// `P(x + S_n <= u sigma sqrt(n), tau_x > n)`.
pub fn conditional_cdf(law: &IncrementLaw, x: f64, n: u64, u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::DomainError(format!("u must be nonnegative, got {u}")));
    }
    let table = joint_law(law, x, n, Constraint::SurviveThrough)?;
    let level = u * law.sigma() * (n as f64).sqrt();
    let tol = 1e-9 * level.max(1.0);
    Ok(quad::neumaier_sum(table.mass.iter().filter(|(y, _)| *y <= level + tol).map(|m| m.1)))
}

/// `z -> P(S_n = z)`.
pub fn unconditioned_law(law: &IncrementLaw, n: u64) -> Result<Vec<(f64, f64)>> {
    let mut dp = LatticeDp::new(law, 0.0)?;
    for _ in 0..n {
        dp.advance(false);
    }
    Ok(dp.cells().filter(|&(_, m)| m > 0.0).map(|(i, m)| (dp.value_of(i), m)).collect())
}

/// `sup_z |P(S_n = z) - hbar phi_{sigma^2 n}(z)|` over `z` in `hbar Z + n a`.
pub fn llt_sup_error(law: &IncrementLaw, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let spec = *law.lattice().ok_or(Error::UnsupportedLaw)?;
    let var = law.moments().variance * n as f64;
    let shift = n as f64 * spec.shift;
    let mut dp = LatticeDp::new(law, 0.0)?;
    for _ in 0..n {
        dp.advance(false);
    }
    let (lo, mass) = dp.raw();
    // Scan past the stored range so that lattice points with zero mass near
    // the centre are also covered.
    let pad = 2 * (spec.span / dp.unit()).round() as i64 + 2;
    let mut sup: f64 = 0.0;
    for i in (lo - pad)..(lo + mass.len() as i64 + pad) {
        let z = dp.value_of(i);
        if !spec.contains_shifted(z, shift) {
            continue;
        }
        let j = i - lo;
        let p = if j >= 0 && (j as usize) < mass.len() { mass[j as usize] } else { 0.0 };
        let g = spec.span * kernel::gaussian_pdf(var, z)?;
        sup = sup.max((p - g).abs());
    }
    Ok(sup)
}

/// Forward versus reversed-walk probability for the same transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityCheck {
    pub forward: f64,
    pub backward: f64,
    pub residual: f64,
    pub float_error_bound: f64,
}

/// `P(x + S_n = y, tau_x > n-1)` against `P(y + S'_n = x, tau'_y > n-1)`
/// for the reversed walk `S'`.
pub fn duality_check(law: &IncrementLaw, x: f64, y: f64, n: u64) -> Result<DualityCheck> {
    let spec = law.lattice().ok_or(Error::UnsupportedLaw)?;
    if !spec.contains_shifted(y - x, n as f64 * spec.shift) {
        return Err(Error::LatticeMismatch(y - x));
    }
    let fwd = joint_law(law, x, n, Constraint::SurviveThroughPrev)?;
    let bwd = joint_law(&reverse(law), y, n, Constraint::SurviveThroughPrev)?;
    let (forward, backward) = (fwd.get(y), bwd.get(x));
    Ok(DualityCheck {
        forward,
        backward,
        residual: (forward - backward).abs(),
        float_error_bound: fwd.float_error_bound + bwd.float_error_bound,
    })
}

pub fn duality_residual(law: &IncrementLaw, x: f64, y: f64, n: u64) -> Result<f64> {
    Ok(duality_check(law, x, y, n)?.residual)
}

/// `2 exp[(u/v)(1 + ln(n/(u v)))] + n P(|X| > v)`.
pub fn fuk_nagaev_bound(law: &IncrementLaw, n: u64, u: f64, v: f64) -> Result<f64> {
    if !(u > 0.0 && v > 0.0) {
        return Err(Error::DomainError("u and v must be positive".into()));
    }
    let nf = n as f64;
    let tail = law.prob_above(v) + law.prob_below(-v);
    Ok(2.0 * ((u / v) * (1.0 + (nf / (u * v)).ln())).exp() + nf * tail)
}

/// Exact `P(max_{k<=n} |S_k| > u)` and the Fuk-Nagaev bound.
pub fn fuk_nagaev_check(law: &IncrementLaw, n: u64, u: f64, v: f64) -> Result<(f64, f64)> {
    let bound = fuk_nagaev_bound(law, n, u, v)?;
    let mut dp = LatticeDp::new(law, 0.0)?.keep_at_or_above(-u).keep_at_or_below(u);
    let mut escaped = KahanSum::default();
    for _ in 0..n {
        escaped.add(dp.advance(true));
        if dp.is_empty() {
            break;
        }
    }
    Ok((escaped.value().clamp(0.0, 1.0), bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::builtin;

    fn ssrw() -> IncrementLaw {
        builtin("ssrw").unwrap()
    }

    #[test]
    fn ssrw_two_steps() {
        let t = joint_law(&ssrw(), 0.0, 2, Constraint::SurviveThroughPrev).unwrap();
        assert_eq!(t.mass, vec![(0.0, 0.25), (2.0, 0.25)]);
        let t = joint_law(&ssrw(), 0.0, 2, Constraint::SurviveThrough).unwrap();
        assert_eq!(t.mass, vec![(0.0, 0.25), (2.0, 0.25)]);
        assert_eq!(t.persistence, 0.5);
    }

    #[test]
    fn single_free_step_is_shifted_pmf() {
        let law = builtin("skipfree").unwrap();
        let t = joint_law(&law, 0.5, 1, Constraint::SurviveThroughPrev).unwrap();
        assert_eq!(t.mass, vec![(-0.5, 2.0 / 3.0), (2.5, 1.0 / 3.0)]);
    }

    #[test]
    fn free_last_step_reaches_negative_states() {
        let t = joint_law(&ssrw(), 1.0, 2, Constraint::SurviveThroughPrev).unwrap();
        assert!(t.mass.iter().any(|&(y, _)| y < 0.0));
        let t = joint_law(&ssrw(), 1.0, 2, Constraint::SurviveThrough).unwrap();
        assert!(t.mass.iter().all(|&(y, _)| y >= 0.0));
    }

    #[test]
    fn persistence_values() {
        assert_eq!(persistence(&ssrw(), 0.0, 2).unwrap(), 0.5);
        assert_eq!(persistence(&ssrw(), -5.0, 3).unwrap(), 0.0);
        assert_eq!(persistence(&ssrw(), 0.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn exit_pmf_values() {
        let pmf = exit_pmf(&ssrw(), 0.0, 4).unwrap();
        assert_eq!(pmf[1], 0.5);
        assert_eq!(pmf[2], 0.0);
        assert_eq!(pmf[3], 0.125);
        assert_eq!(pmf[4], 0.0);
        let law = builtin("skipfree").unwrap();
        assert_eq!(exit_pmf(&law, 0.0, 1).unwrap()[1], 2.0 / 3.0);
    }

    #[test]
    fn conditional_cdf_limits() {
        let law = ssrw();
        assert_eq!(conditional_cdf(&law, 0.0, 4, 0.0).unwrap(), joint_law(&law, 0.0, 4, Constraint::SurviveThrough).unwrap().get(0.0));
        assert_eq!(conditional_cdf(&law, 0.0, 4, 100.0).unwrap(), persistence(&law, 0.0, 4).unwrap());
        // Paths of length 4 staying >= 0 ending at 0 or 2: 2/16 and 3/16.
        assert_eq!(conditional_cdf(&law, 0.0, 4, 1.0).unwrap(), 5.0 / 16.0);
    }

    #[test]
    fn unconditioned_binomial() {
        assert_eq!(unconditioned_law(&ssrw(), 2).unwrap(), vec![(-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]);
        let e = llt_sup_error(&ssrw(), 2).unwrap();
        assert!((e - (2.0 / (4.0 * std::f64::consts::PI).sqrt() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn duality_small() {
        let r = duality_check(&ssrw(), 0.0, 2.0, 2).unwrap();
        assert_eq!(r.forward, 0.25);
        assert!(r.residual <= 1e-15);
        assert!(matches!(duality_residual(&ssrw(), 0.0, 1.0, 2), Err(Error::LatticeMismatch(_))));
    }

    #[test]
    fn fuk_nagaev_unreachable() {
        let (p, b) = fuk_nagaev_check(&ssrw(), 10, 10.5, 1.0).unwrap();
        assert_eq!(p, 0.0);
        assert!(b > 0.0);
    }

    #[test]
    fn nonlattice_rejected() {
        let law = builtin("uniform").unwrap();
        assert!(matches!(joint_law(&law, 0.0, 3, Constraint::SurviveThrough), Err(Error::UnsupportedLaw)));
    }
}
