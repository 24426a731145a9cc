//! Closed-form asymptotic predictors, error envelopes and the regime
//! classifier.
//!
//! Every predictor reads `V` and the reversed-walk `V` from tables held in
//! [`PredictorInputs`]. Below zero both are extended by one step of
//! harmonicity.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{self, Direction, HarmonicTable, Method, TableOptions};
use crate::increments::{IncrementLaw, LatticeSpec};
use crate::kernel::{self, big_l, ell, int_ell, p_kernel, phi};
use crate::quad;
use crate::renewal;

/// Step used by the composite Simpson rules below.
const SIMPSON_STEP: f64 = 1e-2;
/// Relative gap allowed between the two non-lattice kappa integrals.
pub const KAPPA_REL_TOL: f64 = 0.02;

/// Inputs shared by all predictors.
#[derive(Debug)]
pub struct PredictorInputs {
    pub law: IncrementLaw,
    pub sigma: f64,
    /// Lattice span, `0` for non-lattice laws.
    pub hbar: f64,
    /// Lattice shift `a` (`0` for non-lattice laws).
    pub shift: f64,
    pub v: HarmonicTable,
    pub vcheck: HarmonicTable,
    pub delta: f64,
    reversed: IncrementLaw,
    kappa: OnceLock<KappaForms>,
}

/// The two integral forms of the non-lattice `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaForms {
    /// Integral of the reversed-walk function over the negative half-line.
    pub first: f64,
    /// Integral of the reversed-walk function against `P(X < -y)`.
    pub second: f64,
    /// Table error propagated into either form.
    pub error: f64,
}

impl KappaForms {
    pub fn value(&self) -> f64 {
        0.5 * (self.first + self.second)
    }
}

/// Envelope value at one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub n: u64,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

impl PredictorInputs {
    /// Checks that `v` is the forward table and `vcheck` the reversed one for
    /// `law`.
    pub fn new(law: &IncrementLaw, v: HarmonicTable, vcheck: HarmonicTable) -> Result<Self> {
        let id = law.id();
        for (t, want) in [(&v, Direction::Forward), (&vcheck, Direction::Reversed)] {
            if t.law_id != id {
                return Err(Error::Precondition(format!("table built for {}, law is {id}", t.law_id)));
            }
            if t.direction != want {
                return Err(Error::Precondition(format!("expected a {want:?} table, got {:?}", t.direction)));
            }
            if t.values.is_empty() || t.values.len() != t.errors.len() {
                return Err(Error::Precondition("empty or malformed harmonic table".into()));
            }
            if t.lattice != law.is_lattice() {
                return Err(Error::Precondition("table lattice flag does not match the law".into()));
            }
        }
        let (hbar, shift) = match law.lattice() {
            Some(s) => (s.span, s.shift),
            None => (0.0, 0.0),
        };
        let sigma = law.sigma();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateLaw);
        }
        Ok(Self {
            law: law.clone(),
            sigma,
            hbar,
            shift,
            v,
            vcheck,
            delta: law.moments().delta,
            reversed: crate::increments::reverse(law),
            kappa: OnceLock::new(),
        })
    }

    /// Builds both tables up to `x_max`: exact for skip-free walks, ladder
    /// extrapolation for other lattice walks, Monte Carlo otherwise.
    pub fn build(law: &IncrementLaw, x_max: f64, opts: &TableOptions) -> Result<Self> {
        let table = |d| {
            if law.is_lattice() {
                renewal::best_table(law, d, x_max, &opts.ladder)
            } else {
                harmonic::build_table(law, d, x_max, Method::MonteCarlo, opts)
            }
        };
        Self::new(law, table(Direction::Forward)?, table(Direction::Reversed)?)
    }

    fn lattice_spec(&self) -> Result<LatticeSpec> {
        self.law.lattice().copied().ok_or(Error::UnsupportedLaw)
    }

    fn scale(&self, n: u64) -> f64 {
        self.sigma * (n as f64).sqrt()
    }

    /// `V(x)` with its error bound; negative `x` uses one harmonic step.
    pub fn v_at(&self, x: f64) -> Result<(f64, f64)> {
        extended(&self.law, &self.v, x)
    }

    /// Reversed-walk `V(y)` with its error bound.
    pub fn vcheck_at(&self, y: f64) -> Result<(f64, f64)> {
        extended(&self.reversed, &self.vcheck, y)
    }

    /// `V_n(x) = V(x) L(x/(sigma sqrt n))`.
    pub fn v_n(&self, x: f64, n: u64) -> Result<f64> {
        Ok(self.v_at(x)?.0 * big_l(x / self.scale(n)))
    }

    pub fn vcheck_n(&self, y: f64, n: u64) -> Result<f64> {
        Ok(self.vcheck_at(y)?.0 * big_l(y / self.scale(n)))
    }

    fn check_offset(&self, x: f64, y: f64, n: u64) -> Result<()> {
        let spec = self.lattice_spec()?;
        if !spec.contains_shifted(y - x, n as f64 * spec.shift) {
            return Err(Error::LatticeMismatch(y - x));
        }
        Ok(())
    }
}

fn extended(law: &IncrementLaw, table: &HarmonicTable, x: f64) -> Result<(f64, f64)> {
    if x >= 0.0 {
        return table.lookup(x);
    }
    let worst = table.errors.iter().copied().fold(0.0, f64::max);
    Ok((harmonic::v_negative(law, table, x)?, worst))
}

fn check_n(n: u64, min: u64) -> Result<()> {
    if n < min {
        return Err(Error::Precondition(format!("n must be at least {min}, got {n}")));
    }
    Ok(())
}

/// `V_n(x)/(sigma sqrt n)`.
pub fn persistence_pred(inputs: &PredictorInputs, x: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    Ok(inputs.v_n(x, n)? / inputs.scale(n))
}

/// `V_n(x)/(sigma sqrt n) * int_0^u ell(x/(sigma sqrt n), z) dz`.
pub fn cdf_pred(inputs: &PredictorInputs, x: f64, u: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    if !(u >= 0.0) {
        return Err(Error::DomainError(format!("u must be nonnegative, got {u}")));
    }
    let s = inputs.scale(n);
    Ok(inputs.v_n(x, n)? / s * int_ell(x / s, u)?)
}

/// Lattice local predictor `hbar V_n(x) Vc_n(y) p(x', y') / (sigma^3 n^{3/2})`.
pub fn local_pred(inputs: &PredictorInputs, x: f64, y: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    inputs.check_offset(x, y, n)?;
    let s = inputs.scale(n);
    let (vx, vy) = (inputs.v_n(x, n)?, inputs.vcheck_n(y, n)?);
    Ok(inputs.hbar * vx * vy / (s * s * s) * p_kernel(x / s, y / s))
}

/// `hbar V_n(x)/(sigma^2 n) * ell(x', y')`.
pub fn caravenna_pred(inputs: &PredictorInputs, x: f64, y: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    inputs.check_offset(x, y, n)?;
    let s = inputs.scale(n);
    Ok(inputs.hbar * inputs.v_n(x, n)? / (s * s) * ell(x / s, y / s))
}

/// `sum V_check(y) P(X < -y)` over `y >= 0` with `y - x` in `hbar Z + n a`.
pub fn varkappa_n(inputs: &PredictorInputs, x: f64, n: u64) -> Result<f64> {
    let spec = inputs.lattice_spec()?;
    let off = x + n as f64 * spec.shift;
    let j0 = ((-off) / spec.span - 1e-9).ceil() as i64;
    let reach = inputs.law.max_down();
    let mut total = 0.0;
    for j in j0.. {
        let y = (off + spec.span * j as f64).max(0.0);
        if y >= reach - 1e-9 * spec.span {
            break;
        }
        total += inputs.vcheck_at(y)?.0 * inputs.law.prob_below(-y);
    }
    Ok(total)
}

/// `sum_k V_check(hbar k + u) P(X < -hbar k - u)` for `u` in `[0, hbar)`.
pub fn varkappa_u(inputs: &PredictorInputs, u: f64) -> Result<f64> {
    let spec = inputs.lattice_spec()?;
    if !(u >= 0.0 && u < spec.span) {
        return Err(Error::DomainError(format!("u must lie in [0, {}), got {u}", spec.span)));
    }
    let reach = inputs.law.max_down();
    let mut total = 0.0;
    for k in 0.. {
        let y = spec.span * k as f64 + u;
        if y >= reach - 1e-9 * spec.span {
            break;
        }
        total += inputs.vcheck_at(y)?.0 * inputs.law.prob_below(-y);
    }
    Ok(total)
}

/// `hbar phi(x') 2 V(x) kappa_n(x) / (sigma^3 n^{3/2})`, a prediction of
/// `P(tau_x = n + 1)`.
pub fn exit_pred_lattice(inputs: &PredictorInputs, x: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    let kappa = varkappa_n(inputs, x, n)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let s = inputs.scale(n);
    Ok(inputs.hbar * phi(x / s) * 2.0 * inputs.v_at(x)?.0 * kappa / (s * s * s))
}

/// Non-lattice interval predictor with its propagated uncertainty.
pub fn interval_pred_with_error(inputs: &PredictorInputs, x: f64, y: f64, v: f64, n: u64) -> Result<(f64, f64)> {
    check_n(n, 1)?;
    if inputs.law.is_lattice() {
        return Err(Error::UnsupportedLaw);
    }
    if !(v >= 0.0) {
        return Err(Error::DomainError(format!("interval width must be nonnegative, got {v}")));
    }
    let max = inputs.vcheck.max_state();
    if y < 0.0 || y + v > max + 1e-9 * inputs.vcheck.spacing {
        return Err(Error::TableCoverage { lo: y, hi: y + v, max });
    }
    if v == 0.0 {
        return Ok((0.0, 0.0));
    }
    let s = inputs.scale(n);
    let (vx, ex) = inputs.v_at(x)?;
    let lx = big_l(x / s);
    let tab = &inputs.vcheck;
    let weight = |z: f64| big_l(z / s) * p_kernel(x / s, z / s);
    let main = quad::simpson(|z| tab.lookup(z.min(max)).map_or(f64::NAN, |(w, _)| w) * weight(z), y, y + v, SIMPSON_STEP);
    let spread = quad::simpson(|z| tab.lookup(z.min(max)).map_or(f64::NAN, |(_, e)| e) * weight(z), y, y + v, SIMPSON_STEP);
    if !main.is_finite() {
        return Err(Error::TableCoverage { lo: y, hi: y + v, max });
    }
    let c = lx / (s * s * s);
    Ok((c * vx * main, c * (ex * main + vx * spread)))
}

/// `V_n(x)/(sigma^3 n^{3/2}) int_y^{y+v} Vc_n(z) p(x', z') dz`.
pub fn interval_pred(inputs: &PredictorInputs, x: f64, y: f64, v: f64, n: u64) -> Result<f64> {
    Ok(interval_pred_with_error(inputs, x, y, v, n)?.0)
}

/// Both forms of the non-lattice `kappa`; errors when they disagree by more
/// than [`KAPPA_REL_TOL`].
pub fn kappa_forms(inputs: &PredictorInputs) -> Result<KappaForms> {
    if let Some(k) = inputs.kappa.get() {
        return Ok(*k);
    }
    if inputs.law.is_lattice() {
        return Err(Error::UnsupportedLaw);
    }
    let rev = &inputs.reversed;
    let tab = &inputs.vcheck;
    // Reversed-walk jumps reach up to max X, so the function vanishes below -max X.
    let up = rev.max_down();
    let reach = inputs.law.max_down();
    if reach > tab.max_state() + 1e-9 * tab.spacing || up > tab.max_state() + 1e-9 * tab.spacing {
        return Err(Error::InsufficientTable(reach.max(up)));
    }
    let first = quad::integrate(|y| harmonic::v_negative(rev, tab, y).unwrap_or(f64::NAN), -up, 0.0, 1e-8)?.value;
    let nodes: Vec<f64> = tab.states().take_while(|&z| z < reach).collect();
    let second = quad::integrate_piecewise(
        |y| tab.value(y).unwrap_or(f64::NAN) * inputs.law.prob_below(-y),
        0.0,
        reach,
        &nodes,
        1e-8,
    )?
    .value;
    let worst = tab.errors.iter().copied().fold(0.0, f64::max);
    let mean_down = quad::integrate(|t| inputs.law.prob_below(-t), 0.0, reach, 1e-10)?.value;
    let forms = KappaForms { first, second, error: worst * mean_down };
    if !first.is_finite() || !second.is_finite() || (first - second).abs() > KAPPA_REL_TOL * forms.value().abs() {
        return Err(Error::KappaDisagreement { first, second });
    }
    Ok(*inputs.kappa.get_or_init(|| forms))
}

pub fn kappa_nonlattice(inputs: &PredictorInputs) -> Result<f64> {
    Ok(kappa_forms(inputs)?.value())
}

/// `phi(x') 2 V(x) kappa / (sigma^3 n^{3/2})`, a prediction of `P(tau_x = n)`.
pub fn exit_pred_nonlattice(inputs: &PredictorInputs, x: f64, n: u64) -> Result<f64> {
    check_n(n, 1)?;
    let kappa = kappa_nonlattice(inputs)?;
    let s = inputs.scale(n);
    Ok(phi(x / s) * 2.0 * inputs.v_at(x)?.0 * kappa / (s * s * s))
}

/// Shape of the local-limit error bound (constant omitted).
pub fn error_envelope(inputs: &PredictorInputs, x: f64, y: f64, n: u64) -> Result<ErrorEnvelope> {
    check_n(n, 2)?;
    let d = inputs.delta;
    let nf = n as f64;
    let a = nf.powf(-d / 8.0);
    let value = (a + inputs.v_n(x, n)?) * (a + inputs.vcheck_n(y, n)?) * nf.powf(-d / (8.0 * (3.0 + d))) * nf.ln()
        / nf.powf(1.5);
    Ok(ErrorEnvelope { n, x, y, value })
}

/// `R_n(x) = n^{-delta/4} + V_n(x) n^{-delta/(4(3+delta))} log n`.
pub fn rate_rn(inputs: &PredictorInputs, x: f64, n: u64) -> Result<f64> {
    check_n(n, 2)?;
    let d = inputs.delta;
    let nf = n as f64;
    Ok(nf.powf(-d / 4.0) + inputs.v_n(x, n)? * nf.powf(-d / (4.0 * (3.0 + d))) * nf.ln())
}

/// Regime tags for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    QMember,
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    B1,
    B2,
    B3,
    None,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::QMember => "Q_member",
            Self::A1 => "a1",
            Self::A2 => "a2",
            Self::A3 => "a3",
            Self::A4 => "a4",
            Self::A5 => "a5",
            Self::A6 => "a6",
            Self::A7 => "a7",
            Self::B1 => "b1",
            Self::B2 => "b2",
            Self::B3 => "b3",
            Self::None => "none",
        })
    }
}

/// Joins tags with `|` for CSV cells.
pub fn format_tags(tags: &[Regime]) -> String {
    tags.iter().map(Regime::to_string).collect::<Vec<_>>().join("|")
}

/// Tags every scenario whose conditions hold, with vanishing sequence
/// `n^{-1/4}` and diverging sequence `n^{1/4}`. Lattice tags (`hbar > 0`)
/// ignore `v`; non-lattice tags (`hbar == 0`) use it.
pub fn classify_regime(x: f64, y: f64, v: f64, n: u64, q: f64, sigma: f64, hbar: f64) -> Vec<Regime> {
    let nf = n as f64;
    let rn = nf.sqrt();
    let alpha = nf.powf(-0.25);
    let beta = nf.powf(0.25);
    let band = sigma * (2.0 * q * nf * nf.ln()).max(0.0).sqrt();
    let s = sigma * rn;
    let mut tags = Vec::new();
    if p_kernel(x / s, y / s) >= nf.powf(-q) || (y - x).abs() <= band || (y + x).abs() <= band {
        tags.push(Regime::QMember);
    }
    if x >= 0.0 && y >= 0.0 {
        let small_x = x.abs() / rn <= alpha;
        let small_y = y.abs() / rn <= alpha;
        let small_xy = (x * y).abs() / nf <= alpha;
        let both_large = x >= beta && y >= beta;
        if hbar > 0.0 {
            let checks = [
                (Regime::A1, small_x && small_xy && y <= band),
                (Regime::A2, small_y && small_xy && x <= band),
                (Regime::A3, both_large && (y - x).abs() <= band),
                (Regime::A4, small_x && small_y),
                (Regime::A5, small_x && y / rn >= alpha && y / rn <= beta),
                (Regime::A6, small_x && small_xy && band > 0.0 && (y / band - 1.0).abs() <= alpha),
                (Regime::A7, both_large && x * y / nf >= beta && (y - x).abs() <= band),
            ];
            tags.extend(checks.iter().filter(|c| c.1).map(|c| c.0));
        } else if v > 0.0 {
            let cross = ((x * y).abs() + (x * v).abs()) / nf <= alpha;
            let within = (x - y).abs() + v <= band;
            let checks = [
                (Regime::B1, x / rn <= alpha && cross && within),
                (Regime::B2, (y.abs() + v.abs()) / rn <= alpha && cross && within),
                (Regime::B3, both_large && within),
            ];
            tags.extend(checks.iter().filter(|c| c.1).map(|c| c.0));
        }
    }
    if tags.is_empty() {
        tags.push(Regime::None);
    }
    tags
}

/// Largest `q` allowed by the equivalence results for moment index `delta`.
pub fn q_limit(delta: f64) -> f64 {
    delta / (8.0 * (3.0 + delta))
}

/// Membership threshold for `Q(alpha)` in kernel coordinates.
pub fn q_band(alpha: f64) -> Result<f64> {
    kernel::q_alpha(alpha)
}
