//! Experiment runner: evaluates oracles and predictors over the grid.
//!
//! Cells sharing a dynamic program or a Monte Carlo path set are grouped;
//! groups run on the rayon pool and are collected in grid order. Monte Carlo
//! seeds derive from `(seed, experiment index, group index)`, so the output
//! is independent of the thread count.

use rayon::prelude::*;

use super::config::{Experiment, ExperimentConfig};
use super::report::{PredictionReport, ReportRow};
use crate::error::{Error, Result};
use crate::harmonic::TableOptions;
use crate::increments::{resolve_law, IncrementLaw};
use crate::kernel;
use crate::lattice_oracle::{self as oracle, Constraint};
use crate::montecarlo::{self as mc, derive_seed};
use crate::predict::{self, format_tags, PredictorInputs};
use crate::renewal::{self, IdentityOptions};

const DUALITY_TOL: f64 = 1e-12;
const KERNEL_TOL: f64 = 1e-8;

/// Runs every experiment in `cfg` on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PredictionReport> {
    let law = resolve_law(&cfg.law, cfg.delta)?;
    let needs_tables = cfg.experiments.iter().any(|e| {
        matches!(
            e,
            Experiment::Persistence
                | Experiment::Local
                | Experiment::Caravenna
                | Experiment::Exit
                | Experiment::Interval
                | Experiment::Cdf
        )
    });
    let inputs = if needs_tables && !cfg.n.is_empty() { Some(build_inputs(cfg, &law)?) } else { None };
    let mut report = PredictionReport::default();
    for (k, &exp) in cfg.experiments.iter().enumerate() {
        let ctx = Ctx { cfg, law: &law, inputs: inputs.as_ref(), seed: derive_seed(cfg.seed, k as u64), exp };
        let (mut rows, failures) = ctx.run()?;
        rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.x.total_cmp(&b.x)).then(a.y.total_cmp(&b.y)));
        report.rows.extend(rows);
        report.failures.extend(failures);
    }
    Ok(report)
}

/// Runs on a dedicated pool with `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<PredictionReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

fn build_inputs(cfg: &ExperimentConfig, law: &IncrementLaw) -> Result<PredictorInputs> {
    let (lo, hi) = law.support_bounds();
    let reach = hi.max(-lo);
    let grid_max = cfg
        .x
        .iter()
        .copied()
        .chain(cfg.y.iter().flat_map(|&y| cfg.v.iter().map(move |&v| y + v.max(0.0))))
        .fold(0.0, f64::max);
    let x_max = cfg.x_max.unwrap_or(grid_max + reach + 1.0);
    let opts = TableOptions {
        ladder: cfg.ladder.clone(),
        spacing: cfg.spacing,
        n_cap: cfg.n_cap,
        paths: cfg.table_paths,
        seed: derive_seed(cfg.seed, u64::MAX),
    };
    PredictorInputs::build(law, x_max, &opts)
}

type Rows = (Vec<ReportRow>, Vec<String>);

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    law: &'a IncrementLaw,
    inputs: Option<&'a PredictorInputs>,
    seed: u64,
    exp: Experiment,
}

fn cell_err(n: u64, x: f64, y: f64, v: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::Cell { .. } => e,
        e => Error::Cell { n, x, y, v, source: Box::new(e) },
    }
}

/// Runs `f` over `groups` in parallel and concatenates in order.
fn par_groups<G: Sync, F>(groups: &[G], f: F) -> Result<Rows>
where
    F: Fn(usize, &G) -> Result<Rows> + Sync,
{
    let parts: Vec<Result<Rows>> = groups.par_iter().enumerate().map(|(i, g)| f(i, g)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for p in parts {
        let (r, f) = p?;
        rows.extend(r);
        failures.extend(f);
    }
    Ok((rows, failures))
}

impl Ctx<'_> {
    fn name(&self) -> &'static str {
        self.exp.name()
    }

    fn inputs(&self) -> &PredictorInputs {
        self.inputs.expect("tables are built for predictor experiments")
    }

    fn group_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, i as u64)
    }

    fn n_x(&self) -> Vec<(u64, f64)> {
        self.cfg.n.iter().flat_map(|&n| self.cfg.x.iter().map(move |&x| (n, x))).collect()
    }

    fn tags(&self, x: f64, y: f64, v: f64, n: u64) -> String {
        let inp = self.inputs();
        format_tags(&predict::classify_regime(x, y, v, n, self.cfg.q, inp.sigma, inp.hbar))
    }

    fn run(&self) -> Result<Rows> {
        if self.cfg.n.is_empty() && !matches!(self.exp, Experiment::KernelIdentities | Experiment::Renewal | Experiment::LevelSets) {
            return Ok((Vec::new(), Vec::new()));
        }
        match self.exp {
            Experiment::Persistence => self.persistence(),
            Experiment::Cdf => self.cdf(),
            Experiment::Local | Experiment::Caravenna => self.local(),
            Experiment::Exit => self.exit(),
            Experiment::Interval => self.interval(),
            Experiment::Duality => self.duality(),
            Experiment::KernelIdentities => self.kernel_identities(),
            Experiment::Renewal => self.renewal(),
            Experiment::LltRate => self.llt_rate(),
            Experiment::FukNagaev => self.fuk_nagaev(),
            Experiment::LevelSets => self.level_sets(),
        }
    }

    fn persistence(&self) -> Result<Rows> {
        let n_max = *self.cfg.n.iter().max().expect("non-empty");
        par_groups(&self.cfg.x, |i, &x| {
            let inp = self.inputs();
            let curve = if self.law.is_lattice() {
                Some(oracle::persistence_curve(self.law, x, n_max).map_err(cell_err(n_max, x, 0.0, 0.0))?)
            } else {
                None
            };
            let mut rows = Vec::new();
            for (j, &n) in self.cfg.n.iter().enumerate() {
                let err = cell_err(n, x, 0.0, 0.0);
                let o = match &curve {
                    Some(c) => c[n as usize],
                    None => mc::mc_persistence(self.law, x, n, self.cfg.paths, derive_seed(self.group_seed(i), j as u64))
                        .map_err(&err)?
                        .value,
                };
                let p = predict::persistence_pred(inp, x, n).map_err(&err)?;
                let env = predict::rate_rn(inp, x, n).map_err(&err)? / (n as f64).sqrt();
                rows.push(ReportRow::new(self.name(), n, (x, 0.0, 0.0), o, p, Some(env)));
            }
            Ok((rows, Vec::new()))
        })
    }

    fn cdf(&self) -> Result<Rows> {
        par_groups(&self.n_x(), |i, &(n, x)| {
            let inp = self.inputs();
            let s = inp.sigma * (n as f64).sqrt();
            let table = if self.law.is_lattice() {
                Some(oracle::joint_law(self.law, x, n, Constraint::SurviveThrough).map_err(cell_err(n, x, 0.0, 0.0))?)
            } else {
                None
            };
            let mc_values = if table.is_none() {
                // The last step of a surviving path lands in [0, u s].
                let ivs: Vec<(f64, f64)> = self.cfg.y.iter().map(|&u| (0.0, u.max(0.0) * s)).collect();
                mc::mc_joint_intervals(self.law, x, &ivs, n, self.cfg.paths, self.group_seed(i))
                    .map_err(cell_err(n, x, 0.0, 0.0))?
            } else {
                Vec::new()
            };
            let mut rows = Vec::new();
            for (j, &u) in self.cfg.y.iter().enumerate() {
                let err = cell_err(n, x, u, 0.0);
                let o = match &table {
                    Some(t) => {
                        let level = u * s;
                        let tol = 1e-9 * level.max(1.0);
                        crate::quad::neumaier_sum(t.mass.iter().filter(|(y, _)| *y <= level + tol).map(|m| m.1))
                    }
                    None => mc_values[j].value,
                };
                let p = predict::cdf_pred(inp, x, u, n).map_err(&err)?;
                let env = predict::rate_rn(inp, x, n).map_err(&err)? / (n as f64).sqrt();
                rows.push(ReportRow::new(self.name(), n, (x, u, 0.0), o, p, Some(env)));
            }
            Ok((rows, Vec::new()))
        })
    }

    fn local(&self) -> Result<Rows> {
        let caravenna = self.exp == Experiment::Caravenna;
        par_groups(&self.n_x(), |_, &(n, x)| {
            let inp = self.inputs();
            let table =
                oracle::joint_law(self.law, x, n, Constraint::SurviveThroughPrev).map_err(cell_err(n, x, 0.0, 0.0))?;
            let mut rows = Vec::new();
            for &y in &self.cfg.y {
                let err = cell_err(n, x, y, 0.0);
                let o = table.get(y);
                let pred = if caravenna { predict::caravenna_pred(inp, x, y, n) } else { predict::local_pred(inp, x, y, n) };
                let row = match pred {
                    Err(Error::LatticeMismatch(_)) => ReportRow::new(self.name(), n, (x, y, 0.0), o, 0.0, None).tag("off-lattice"),
                    other => {
                        let p = other.map_err(&err)?;
                        let env = predict::error_envelope(inp, x, y, n).map_err(&err)?.value;
                        ReportRow::new(self.name(), n, (x, y, 0.0), o, p, Some(env))
                    }
                };
                rows.push(row.tag(&self.tags(x, y, 0.0, n)));
            }
            Ok((rows, Vec::new()))
        })
    }

    fn exit(&self) -> Result<Rows> {
        let n_max = *self.cfg.n.iter().max().expect("non-empty");
        par_groups(&self.cfg.x, |i, &x| {
            let inp = self.inputs();
            let lattice = self.law.is_lattice();
            // Lattice predictions target P(tau = n + 1), non-lattice ones P(tau = n).
            let pmf: Vec<f64> = if lattice {
                oracle::exit_pmf(self.law, x, n_max + 1).map_err(cell_err(n_max, x, 0.0, 0.0))?
            } else {
                let h = mc::mc_exit_pmf(self.law, x, n_max, self.cfg.paths, self.group_seed(i))
                    .map_err(cell_err(n_max, x, 0.0, 0.0))?;
                (0..=n_max as usize).map(|k| h.pmf(k).value).collect()
            };
            let mut rows = Vec::new();
            for &n in &self.cfg.n {
                let err = cell_err(n, x, 0.0, 0.0);
                let (o, p) = if lattice {
                    (pmf[n as usize + 1], predict::exit_pred_lattice(inp, x, n).map_err(&err)?)
                } else {
                    (pmf[n as usize], predict::exit_pred_nonlattice(inp, x, n).map_err(&err)?)
                };
                let env = predict::error_envelope(inp, x, 0.0, n).map_err(&err)?.value;
                rows.push(ReportRow::new(self.name(), n, (x, 0.0, 0.0), o, p, Some(env)));
            }
            Ok((rows, Vec::new()))
        })
    }

    fn interval(&self) -> Result<Rows> {
        let yv: Vec<(f64, f64)> = self.cfg.y.iter().flat_map(|&y| self.cfg.v.iter().map(move |&v| (y, v))).collect();
        par_groups(&self.n_x(), |i, &(n, x)| {
            let inp = self.inputs();
            let mut rows = Vec::new();
            if self.law.is_lattice() {
                let table =
                    oracle::joint_law(self.law, x, n, Constraint::SurviveThroughPrev).map_err(cell_err(n, x, 0.0, 0.0))?;
                let spec = *self.law.lattice().expect("lattice law");
                for &(y, v) in &yv {
                    let err = cell_err(n, x, y, v);
                    let o: f64 = table.mass.iter().filter(|(z, _)| *z >= y && *z < y + v).map(|m| m.1).sum();
                    // Lattice points of x + n a + hbar Z inside [y, y + v).
                    let off = x + n as f64 * spec.shift;
                    let j0 = ((y - off) / spec.span - 1e-9).ceil() as i64;
                    let mut p = 0.0;
                    let mut j = j0;
                    loop {
                        let z = off + spec.span * j as f64;
                        if z >= y + v - 1e-9 * spec.span {
                            break;
                        }
                        p += predict::local_pred(inp, x, z, n).map_err(&err)?;
                        j += 1;
                    }
                    rows.push(ReportRow::new(self.name(), n, (x, y, v), o, p, None).tag(&self.tags(x, y, v, n)));
                }
            } else {
                let est = mc::mc_joint_intervals(self.law, x, &yv, n, self.cfg.paths, self.group_seed(i))
                    .map_err(cell_err(n, x, 0.0, 0.0))?;
                for (&(y, v), e) in yv.iter().zip(est) {
                    let err = cell_err(n, x, y, v);
                    let (p, unc) = predict::interval_pred_with_error(inp, x, y, v, n).map_err(&err)?;
                    let env = 3.0 * (e.stderr + unc);
                    rows.push(ReportRow::new(self.name(), n, (x, y, v), e.value, p, Some(env)).tag(&self.tags(x, y, v, n)));
                }
            }
            Ok((rows, Vec::new()))
        })
    }

    fn duality(&self) -> Result<Rows> {
        let cells: Vec<(u64, f64, f64)> =
            self.n_x().into_iter().flat_map(|(n, x)| self.cfg.y.iter().map(move |&y| (n, x, y))).collect();
        par_groups(&cells, |_, &(n, x, y)| {
            let row = match oracle::duality_check(self.law, x, y, n) {
                Err(Error::LatticeMismatch(_)) => {
                    ReportRow::new(self.name(), n, (x, y, 0.0), 0.0, 0.0, None).tag("off-lattice")
                }
                other => {
                    let d = other.map_err(cell_err(n, x, y, 0.0))?;
                    let row = ReportRow::new(self.name(), n, (x, y, 0.0), d.forward, d.backward, Some(DUALITY_TOL));
                    if d.residual > DUALITY_TOL {
                        return Ok((vec![row], vec![format!("duality residual {:e} at n={n}, x={x}, y={y}", d.residual)]));
                    }
                    row
                }
            };
            Ok((vec![row], Vec::new()))
        })
    }

    /// Heat-kernel identities on the `(x, y)` grid; `v` supplies split times
    /// in `(0, 1)` (other values fall back to `1/2`).
    fn kernel_identities(&self) -> Result<Rows> {
        let cells: Vec<(f64, f64, f64)> = self
            .cfg
            .x
            .iter()
            .flat_map(|&x| self.cfg.y.iter().flat_map(move |&y| self.cfg.v.iter().map(move |&v| (x, y, v))))
            .collect();
        let mut out = par_groups(&cells, |_, &(x, y, v)| {
            let s = if v > 0.0 && v < 1.0 { v } else { 0.5 };
            let err = cell_err(0, x, y, v);
            let target = kernel::psi(x, y);
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for (tag, res) in [
                ("semigroup", kernel::semigroup_residual(s, 1.0 - s, x, y).map_err(&err)?),
                ("convolution", kernel::convolution_residual(s, x, y).map_err(&err)?),
            ] {
                rows.push(ReportRow::new(self.name(), 0, (x, y, s), target + res, target, Some(KERNEL_TOL)).tag(tag));
                if res > KERNEL_TOL {
                    failures.push(format!("{tag} residual {res:e} at x={x}, y={y}, s={s}"));
                }
            }
            Ok((rows, failures))
        })?;
        for &x in &self.cfg.x {
            let m = kernel::ell_mass(x).map_err(cell_err(0, x, 0.0, 0.0))?;
            out.0.push(ReportRow::new(self.name(), 0, (x, 0.0, 0.0), m, 1.0, Some(1e-10)).tag("ell-mass"));
            if (m - 1.0).abs() > 1e-10 {
                out.1.push(format!("ell mass {m} at x={x}"));
            }
        }
        Ok(out)
    }

    fn renewal(&self) -> Result<Rows> {
        let mut opts = IdentityOptions::default();
        if let Some(x_max) = self.cfg.x_max {
            opts.x_max = x_max;
        }
        let report = renewal::identity_report(self.law, &opts)?;
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for r in &report.rows {
            rows.push(ReportRow::new(self.name(), 0, (r.x, r.y, 0.0), r.lhs, r.rhs, Some(r.tolerance)).tag(&r.identity));
            if !r.pass {
                failures.push(format!("{} at x={}, y={}: residual {:e} > {:e}", r.identity, r.x, r.y, r.residual, r.tolerance));
            }
        }
        Ok((rows, failures))
    }

    /// Oracle: sup error at `2n`; predictor: sup error at `n` scaled by the
    /// rate `2^{-delta1/2}`.
    fn llt_rate(&self) -> Result<Rows> {
        let factor = 2f64.powf(-self.law.moments().delta1 / 2.0);
        par_groups(&self.cfg.n, |_, &n| {
            let err = cell_err(n, 0.0, 0.0, 0.0);
            let a = oracle::llt_sup_error(self.law, n).map_err(&err)?;
            let b = oracle::llt_sup_error(self.law, 2 * n).map_err(&err)?;
            Ok((vec![ReportRow::new(self.name(), n, (0.0, 0.0, 0.0), b, a * factor, None)], Vec::new()))
        })
    }

    /// `x` is the level `u`, `y` the truncation `v`.
    fn fuk_nagaev(&self) -> Result<Rows> {
        let cells: Vec<(u64, f64, f64)> =
            self.n_x().into_iter().flat_map(|(n, u)| self.cfg.y.iter().map(move |&v| (n, u, v))).collect();
        par_groups(&cells, |i, &(n, u, v)| {
            let err = cell_err(n, u, v, 0.0);
            let (o, bound, slack) = if self.law.is_lattice() {
                let (o, b) = oracle::fuk_nagaev_check(self.law, n, u, v).map_err(&err)?;
                (o, b, 0.0)
            } else {
                let e = mc::mc_max_abs(self.law, n, u, self.cfg.paths, self.group_seed(i)).map_err(&err)?;
                (e.value, oracle::fuk_nagaev_bound(self.law, n, u, v).map_err(&err)?, 4.0 * e.stderr)
            };
            let row = ReportRow::new(self.name(), n, (u, v, 0.0), o, bound, None);
            let failures =
                if o > bound + slack { vec![format!("bound {bound:e} below probability {o:e} at n={n}, u={u}, v={v}")] } else { Vec::new() };
            Ok((vec![row], failures))
        })
    }

    /// `v` is the level `alpha`.
    fn level_sets(&self) -> Result<Rows> {
        let mut rows = Vec::new();
        for &x in &self.cfg.x {
            for &y in &self.cfg.y {
                for &alpha in &self.cfg.v {
                    let p = kernel::p_kernel(x, y);
                    let tag = if kernel::superlevel_member(alpha, x, y) { "inside" } else { "outside" };
                    rows.push(ReportRow::new(self.name(), 0, (x, y, alpha), p, alpha, None).tag(tag));
                }
            }
        }
        Ok((rows, Vec::new()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_gives_empty_report() {
        let cfg = ExperimentConfig::parse("law = ssrw\nexperiment = local, exit\n").unwrap();
        let r = run_experiment(&cfg).unwrap();
        assert!(r.rows.is_empty() && r.passed());
    }

    #[test]
    fn duality_rows_pass() {
        let cfg = ExperimentConfig::parse("law = skipfree\nexperiment = duality\n[grid]\nn = 8\nx = 0, 1, 2\ny = 0, 1, 2, 3\n")
            .unwrap();
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert!(r.passed());
    }

    #[test]
    fn cell_errors_carry_coordinates() {
        let cfg = ExperimentConfig::parse("law = uniform\nexperiment = llt-rate\n[grid]\nn = 4\n").unwrap();
        match run_experiment(&cfg) {
            Err(Error::Cell { n: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
