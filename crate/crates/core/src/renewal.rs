//! Spitzer-type constants and ladder renewal functions of lattice walks.
//!
//! Every series here has terms of order `k^{-3/2}`. Partial sums run to `K`
//! with exact DP probabilities; the remainder is `alpha * 2/sqrt(K + 1/2)`
//! where `alpha` is a least-squares fit of `t_k ~ alpha k^{-3/2}` over the last
//! decade. Fitting over the whole decade averages out lattice periodicity.
//!
//! Conventions: `c_0 = sum_k P(S_k = 0)/k`, so that `c_+ + c_- + c_0 = 0` holds
//! term by term, and the renewal sums start at `k = 1` on top of `1{x >= 0}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{self, Direction, HarmonicTable, Method, TableOptions};
use crate::increments::{reverse, IncrementLaw};
use crate::lattice_oracle::LatticeDp;

/// Least-squares tail model `t_k = alpha k^{-3/2}` over `(K/10, K]`, with a
/// separate fit on each half of the window and block sums for the exponent.
#[derive(Debug, Clone, Default)]
struct TailFit {
    k_max: u64,
    tw: [f64; 2],
    ww: [f64; 2],
    blocks: [f64; 2],
}

impl TailFit {
    fn new(k_max: u64) -> Self {
        Self { k_max, ..Self::default() }
    }

    fn push(&mut self, k: u64, t: f64) {
        let kf = k as f64;
        if 10 * k > self.k_max {
            let h = usize::from(20 * k > 11 * self.k_max);
            let w = kf.powf(-1.5);
            self.tw[h] += t * w;
            self.ww[h] += w * w;
        }
        if 4 * k > self.k_max && 2 * k <= self.k_max {
            self.blocks[0] += t;
        } else if 2 * k > self.k_max {
            self.blocks[1] += t;
        }
    }

    fn amplitude(&self) -> f64 {
        (self.tw[0] + self.tw[1]) / (self.ww[0] + self.ww[1])
    }

    fn spread(&self) -> f64 {
        (self.tw[0] / self.ww[0] - self.tw[1] / self.ww[1]).abs()
    }

    fn tail_factor(&self) -> f64 {
        2.0 / (self.k_max as f64 + 0.5).sqrt()
    }

    fn tail(&self) -> f64 {
        self.amplitude() * self.tail_factor()
    }

    /// Uncertainty of the tail: amplitude instability across the window plus
    /// a tenth of the tail itself for the neglected higher-order terms.
    fn tail_error(&self) -> f64 {
        self.spread() * self.tail_factor() + 0.1 * self.tail().abs()
    }

    /// Fitted decay exponent `e` in `t_k ~ k^e`; `-inf` when the blocks vanish.
    fn exponent(&self) -> f64 {
        let (b1, b2) = (self.blocks[0].abs(), self.blocks[1].abs());
        if b1 == 0.0 || b2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        -1.0 - (b1 / b2).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpitzerConstants {
    pub c_plus: f64,
    pub c_minus: f64,
    pub c_zero: f64,
    pub terms_used: u64,
    /// Largest extrapolated remainder among the three series.
    pub tail_estimate: f64,
    /// Uncertainty of each remainder: `[plus, minus, zero]`.
    pub tail_errors: [f64; 3],
    /// Fitted decay exponents `[plus, minus, zero]`.
    pub exponents: [f64; 3],
}

const MAX_EXPONENT: f64 = -1.2;

fn check_decay(exponents: &[f64]) -> Result<()> {
    if let Some(&e) = exponents.iter().find(|&&e| e > MAX_EXPONENT) {
        return Err(Error::SlowDecay(e));
    }
    Ok(())
}

fn check_terms(k_max: u64) -> Result<()> {
    if k_max < 1000 {
        return Err(Error::Precondition(format!("need at least 1000 terms, got {k_max}")));
    }
    Ok(())
}

/// `c_+ = sum (P(S_k > 0) - 1/2)/k`, `c_- = sum (P(S_k < 0) - 1/2)/k`,
/// `c_0 = sum P(S_k = 0)/k`.
pub fn spitzer_constants(law: &IncrementLaw, k_max: u64) -> Result<SpitzerConstants> {
    check_terms(k_max)?;
    let mut dp = LatticeDp::new(law, 0.0)?;
    let mut sums = [0.0f64; 3];
    let mut comp = [0.0f64; 3];
    let mut fits = [TailFit::new(k_max), TailFit::new(k_max), TailFit::new(k_max)];
    for k in 1..=k_max {
        dp.advance(false);
        let neg = dp.mass_between(i64::MIN / 2, -1);
        let zero = dp.mass_between(0, 0);
        let pos = dp.mass_between(1, i64::MAX / 2);
        let kf = k as f64;
        let terms = [(pos - 0.5) / kf, (neg - 0.5) / kf, zero / kf];
        for j in 0..3 {
            // Neumaier step, inlined to keep the three sums independent.
            let t = sums[j] + terms[j];
            comp[j] += if sums[j].abs() >= terms[j].abs() { (sums[j] - t) + terms[j] } else { (terms[j] - t) + sums[j] };
            sums[j] = t;
            fits[j].push(k, terms[j]);
        }
    }
    let exponents = [fits[0].exponent(), fits[1].exponent(), fits[2].exponent()];
    check_decay(&exponents)?;
    let total = |j: usize| sums[j] + comp[j] + fits[j].tail();
    let tails = [fits[0].tail(), fits[1].tail(), fits[2].tail()];
    Ok(SpitzerConstants {
        c_plus: total(0),
        c_minus: total(1),
        c_zero: total(2),
        terms_used: k_max,
        tail_estimate: tails.iter().fold(0.0f64, |m, t| m.max(t.abs())),
        tail_errors: [fits[0].tail_error(), fits[1].tail_error(), fits[2].tail_error()],
        exponents,
    })
}

/// A renewal function on `x = 0, h, ..., x_max` with per-state remainder error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalTable {
    pub name: String,
    pub spacing: f64,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl RenewalTable {
    pub fn at(&self, x: f64) -> Result<(f64, f64)> {
        let i = (x / self.spacing + 1e-9).floor();
        if i < 0.0 || i as usize >= self.values.len() {
            return Err(Error::InsufficientTable(x));
        }
        Ok((self.values[i as usize], self.errors[i as usize]))
    }
}

/// Which path constraint and which endpoint event define a renewal series.
#[derive(Debug, Clone, Copy)]
enum Series {
    /// `sum P(S_k <= x, S_1..S_k > 0)`.
    StrictAboveEndBelow,
    /// `sum P(S_k >= -x, S_1..S_k <= 0)`.
    WeakBelowEndAbove,
    /// `sum P(S_k >= -x, S_1..S_k < 0)`.
    StrictBelowEndAbove,
    /// `sum P(S_k <= x, S_1..S_k >= 0)`.
    WeakAboveEndBelow,
}

fn renewal_series(law: &IncrementLaw, name: &str, series: Series, x_max: f64, k_max: u64) -> Result<RenewalTable> {
    let unit = law.grid().ok_or(Error::UnsupportedLaw)?.unit;
    let imax = (x_max / unit + 1e-9).floor() as i64;
    let (keep_lo, keep_hi, upward) = match series {
        Series::StrictAboveEndBelow => (Some(1), None, true),
        Series::WeakAboveEndBelow => (Some(0), None, true),
        Series::WeakBelowEndAbove => (None, Some(0), false),
        Series::StrictBelowEndAbove => (None, Some(-1), false),
    };
    let mut dp = LatticeDp::new(law, 0.0)?.keep_indices(keep_lo, keep_hi);
    let n = imax as usize + 1;
    let mut sums = vec![0.0f64; n];
    let mut fits = vec![TailFit::new(k_max); n];
    let mut cells = vec![0.0f64; n];
    for k in 1..=k_max {
        dp.advance(true);
        // cells[i]: mass at index i (upward) or -i (downward).
        let (lo, mass) = dp.raw();
        cells.iter_mut().for_each(|c| *c = 0.0);
        for (i, c) in cells.iter_mut().enumerate() {
            let idx = if upward { i as i64 } else { -(i as i64) };
            let j = idx - lo;
            if j >= 0 && (j as usize) < mass.len() {
                *c = mass[j as usize];
            }
        }
        // Event probability for x = i h: everything on the near side of i.
        let mut cum = 0.0;
        for i in 0..n {
            cum += cells[i];
            sums[i] += cum;
            fits[i].push(k, cum);
        }
        if dp.is_empty() {
            break;
        }
    }
    let exps: Vec<f64> = fits.iter().map(TailFit::exponent).collect();
    check_decay(&exps)?;
    let values = (0..n).map(|i| 1.0 + sums[i] + fits[i].tail()).collect();
    let errors = (0..n)
        .map(|i| fits[i].tail_error() + dp.float_error() + k_max as f64 * f64::EPSILON * 4.0)
        .collect();
    Ok(RenewalTable { name: name.to_string(), spacing: unit, values, errors })
}

/// Renewal functions of a lattice law and of its reversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalFunctions {
    /// `U_D(x) = 1 + sum P(S_k <= x, S_1..S_k > 0)`.
    pub u_d: RenewalTable,
    /// `V_D(x) = 1 + sum P(S_k >= -x, S_1..S_k <= 0)`.
    pub v_d: RenewalTable,
    /// `U_K(x) = 1 + sum P(S_k >= -x, S_1..S_k < 0)`, equal to the reversed `U_D`.
    pub u_k: RenewalTable,
    /// Reversed-walk `V_D`: `1 + sum P(S_k <= x, S_1..S_k >= 0)`.
    pub v_d_rev: RenewalTable,
    /// Reversed-walk `U_K`, computed on the reversed law; equals `U_D`.
    pub u_k_rev: RenewalTable,
}

pub fn renewal_functions(law: &IncrementLaw, x_max: f64, k_max: u64) -> Result<RenewalFunctions> {
    check_terms(k_max)?;
    let rev = reverse(law);
    Ok(RenewalFunctions {
        u_d: renewal_series(law, "U_D", Series::StrictAboveEndBelow, x_max, k_max)?,
        v_d: renewal_series(law, "V_D", Series::WeakBelowEndAbove, x_max, k_max)?,
        u_k: renewal_series(law, "U_K", Series::StrictBelowEndAbove, x_max, k_max)?,
        v_d_rev: renewal_series(law, "V_D_rev", Series::WeakAboveEndBelow, x_max, k_max)?,
        u_k_rev: renewal_series(&rev, "U_K_rev", Series::StrictBelowEndAbove, x_max, k_max)?,
    })
}

/// One identity comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub identity: String,
    pub x: f64,
    pub y: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityRow {
    fn new(identity: &str, x: f64, y: f64, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let residual = (lhs - rhs).abs();
        Self { identity: identity.into(), x, y, lhs, rhs, residual, tolerance, pass: residual <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub constants: SpitzerConstants,
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityOptions {
    pub x_max: f64,
    pub spitzer_terms: u64,
    pub renewal_terms: u64,
    pub ladder: Vec<u64>,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self { x_max: 10.0, spitzer_terms: 100_000, renewal_terms: 20_000, ladder: vec![1024, 4096, 16384] }
    }
}

/// Exact closed form when available, otherwise the extrapolated table.
pub fn best_table(law: &IncrementLaw, direction: Direction, x_max: f64, ladder: &[u64]) -> Result<HarmonicTable> {
    let opts = TableOptions { ladder: ladder.to_vec(), ..TableOptions::default() };
    match harmonic::build_table(law, direction, x_max, Method::SkipfreeExact, &opts) {
        Err(Error::NotSkipFree(_)) => harmonic::build_table(law, direction, x_max, Method::Extrapolated, &opts),
        other => other,
    }
}

/// Residuals of the constant and renewal identities against `V` and the
/// reversed-walk `V`.
pub fn identity_report(law: &IncrementLaw, opts: &IdentityOptions) -> Result<IdentityReport> {
    let c = spitzer_constants(law, opts.spitzer_terms)?;
    let r = renewal_functions(law, opts.x_max, opts.renewal_terms)?;
    let v = best_table(law, Direction::Forward, opts.x_max, &opts.ladder)?;
    let vr = best_table(law, Direction::Reversed, opts.x_max, &opts.ladder)?;
    let sigma = law.sigma();
    let mut rows = Vec::new();

    let sum = c.c_plus + c.c_minus + c.c_zero;
    rows.push(IdentityRow::new("constants-sum", 0.0, 0.0, sum, 0.0, 3.0 * c.tail_estimate + 1e-10));

    let (v0, ev0) = v.lookup(0.0)?;
    let (vr0, evr0) = vr.lookup(0.0)?;
    let pred_v0 = sigma * (-c.c_minus).exp() / std::f64::consts::SQRT_2;
    let pred_vr0 = sigma * (-c.c_plus).exp() / std::f64::consts::SQRT_2;
    rows.push(IdentityRow::new("V(0)-from-c-", 0.0, 0.0, v0, pred_v0, 3.0 * (ev0 + pred_v0 * c.tail_errors[1]) + 1e-9));
    rows.push(IdentityRow::new("Vrev(0)-from-c+", 0.0, 0.0, vr0, pred_vr0, 3.0 * (evr0 + pred_vr0 * c.tail_errors[0]) + 1e-9));

    let ec0 = c.tail_errors[2];
    let states: Vec<f64> = v.states().collect();
    for &x in &states {
        let (vx, evx) = v.lookup(x)?;
        let (vrx, evrx) = vr.lookup(x)?;
        let (ud, eud) = r.u_d.at(x)?;
        let (vd, evd) = r.v_d.at(x)?;
        let (uk, euk) = r.u_k.at(x)?;
        let (vdr, evdr) = r.v_d_rev.at(x)?;
        let (ukr, eukr) = r.u_k_rev.at(x)?;
        let ratio_r = vrx / vr0;
        let ratio_r_err = evrx / vr0 + ratio_r * evr0 / vr0;
        let ratio = vx / v0;
        let ratio_err = evx / v0 + ratio * ev0 / v0;
        let e0 = (-c.c_zero).exp();
        rows.push(IdentityRow::new("U_D=Vrev/Vrev(0)", x, 0.0, ud, ratio_r, 3.0 * (eud + ratio_r_err) + 1e-9));
        rows.push(IdentityRow::new("U_D=U_K(rev)", x, 0.0, ud, ukr, 3.0 * (eud + eukr) + 1e-9));
        rows.push(IdentityRow::new(
            "V/V(0)=e^-c0*V_D",
            x,
            0.0,
            ratio,
            e0 * vd,
            3.0 * (ratio_err + e0 * (evd + vd * ec0)) + 1e-9,
        ));
        rows.push(IdentityRow::new("U_K=V/V(0)", x, 0.0, uk, ratio, 3.0 * (euk + ratio_err) + 1e-9));
        rows.push(IdentityRow::new(
            "Vrev/Vrev(0)=e^-c0*V_D(rev)",
            x,
            0.0,
            ratio_r,
            e0 * vdr,
            3.0 * (ratio_r_err + e0 * (evdr + vdr * ec0)) + 1e-9,
        ));
    }
    let half_s2 = sigma * sigma / 2.0;
    let ec = c.c_zero.exp();
    for &x in states.iter().take(6) {
        for &y in states.iter().take(6) {
            let (vx, evx) = v.lookup(x)?;
            let (vry, evry) = vr.lookup(y)?;
            let lhs = vx * vry;
            let lhs_err = evx * vry + vx * evry;
            let (ukx, eukx) = r.u_k.at(x)?;
            let (udy, eudy) = r.u_d.at(y)?;
            let (vdx, evdx) = r.v_d.at(x)?;
            let (vdry, evdry) = r.v_d_rev.at(y)?;
            let prod_k = ukx * udy * half_s2 * ec;
            let prod_k_err = (eukx * udy + ukx * eudy) * half_s2 * ec + prod_k * ec0;
            rows.push(IdentityRow::new("V*Vrev=U_K*U_D*e^c0*s2/2", x, y, lhs, prod_k, 3.0 * (lhs_err + prod_k_err) + 1e-9));
            let prod_d = vdx * udy * half_s2;
            let prod_d_err = (evdx * udy + vdx * eudy) * half_s2;
            rows.push(IdentityRow::new("V*Vrev=V_D*U_D*s2/2", x, y, lhs, prod_d, 3.0 * (lhs_err + prod_d_err) + 1e-9));
            let prod_r = ukx * vdry * half_s2;
            let prod_r_err = (eukx * vdry + ukx * evdry) * half_s2;
            rows.push(IdentityRow::new("V*Vrev=U_K*V_D(rev)*s2/2", x, y, lhs, prod_r, 3.0 * (lhs_err + prod_r_err) + 1e-9));
        }
    }
    Ok(IdentityReport { constants: c, rows })
}
