use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use condwalk_core::harmonic::{build_table, TableOptions};
use condwalk_core::harness::{self, report, ConfigFile, ExperimentConfig};
use condwalk_core::increments::resolve_law;
use condwalk_core::kernel::{self, linspace_step};
use condwalk_core::lattice_oracle::{self as oracle, Constraint};
use condwalk_core::montecarlo::mc_joint_interval;
use condwalk_core::predict::{self, PredictorInputs};
use condwalk_core::renewal::{identity_report, IdentityOptions};
use condwalk_core::{Direction, IncrementLaw, Method};

#[derive(Parser)]
#[command(name = "condwalk", version, about = "Conditioned random walk oracles and heat-kernel predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct LawArgs {
    #[arg(long)]
    law: Option<String>,
    /// Moment index used by the error envelopes.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    #[arg(long)]
    y_max: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// `x,y,p,ell,psi` on a grid.
    KernelTable {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// `alpha,x,y,inside` for superlevel sets of p.
    LevelSets {
        #[command(flatten)]
        grid: GridArgs,
        /// Comma-separated levels.
        #[arg(long)]
        alpha: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// `x,L`.
    LCurve {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// `x,V,err,method` for the harmonic function of a law.
    Harmonic {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        xmax: Option<f64>,
        #[arg(long)]
        method: Option<String>,
        /// Comma-separated truncation ladder.
        #[arg(long)]
        ladder: Option<String>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// `y,prob`: exact conditioned law of the endpoint.
    Oracle {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
        /// `n-1` or `n`.
        #[arg(long)]
        constraint: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// `k,prob`: exact exit-time distribution.
    ExitPmf {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// `k,prob`: exact persistence curve.
    Persistence {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// `n,x,y,predictor,value`.
    Predict {
        #[command(flatten)]
        law: LawArgs,
        /// persistence, cdf, local, caravenna, exit or interval.
        #[arg(long)]
        predictor: Option<String>,
        /// Comma-separated lists.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        v: Option<f64>,
        #[arg(long)]
        xmax: Option<f64>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// One Monte Carlo interval estimate.
    Mc {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<f64>,
        #[arg(long)]
        v: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Series constants and renewal identities.
    Renewal {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        xmax: Option<f64>,
        /// Series terms for the constants.
        #[arg(long)]
        terms: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs a configured experiment and writes its report.
    Run {
        /// csv or json.
        #[arg(long)]
        format: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Config file values overridden by flags.
struct Settings {
    file: ConfigFile,
}

impl Settings {
    fn load(common: &Common) -> Result<Self> {
        let file = match &common.config {
            Some(p) => ConfigFile::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ConfigFile::default(),
        };
        Ok(Self { file })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => Ok(self.file.value(key)?),
        }
    }

    fn or<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    fn need<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key, flag)?.with_context(|| format!("missing --{key}"))
    }

    fn list<T: std::str::FromStr>(&self, key: &str, flag: Option<String>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let mut f = ConfigFile::default();
        if let Some(s) = flag.or_else(|| self.file.get(key).map(str::to_string)) {
            f.set(key, s);
        }
        Ok(f.list(key)?)
    }

    fn law(&self, args: &LawArgs) -> Result<IncrementLaw> {
        let name: String = self.need("law", args.law.clone())?;
        let delta = self.or("delta", args.delta, 1.0)?;
        Ok(resolve_law(&name, delta)?)
    }

    fn grid(&self, g: &GridArgs, lo: f64, hi: f64, step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let step = self.or("step", g.step, step)?;
        if !(step > 0.0) {
            bail!("step must be positive");
        }
        let xs = linspace_step(self.or("x_min", g.x_min, lo)?, self.or("x_max", g.x_max, hi)?, step);
        let ys = linspace_step(self.or("y_min", g.y_min, lo)?, self.or("y_max", g.y_max, hi)?, step);
        Ok((xs, ys))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn e(v: f64) -> String {
    format!("{v:.16e}")
}

/// Returns whether every check passed.
fn execute(cli: Cli) -> Result<bool> {
    let common = match &cli.command {
        Command::KernelTable { common, .. }
        | Command::LevelSets { common, .. }
        | Command::LCurve { common, .. }
        | Command::Harmonic { common, .. }
        | Command::Oracle { common, .. }
        | Command::ExitPmf { common, .. }
        | Command::Persistence { common, .. }
        | Command::Predict { common, .. }
        | Command::Mc { common, .. }
        | Command::Renewal { common, .. }
        | Command::Run { common, .. } => common.clone(),
    };
    let s = Settings::load(&common)?;
    if let Some(t) = s.get::<usize>("threads", common.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring threads")?;
    }
    let out = common.out.clone();
    let mut text = String::new();
    let mut ok = true;
    match cli.command {
        Command::KernelTable { grid, .. } => {
            let (xs, ys) = s.grid(&grid, 0.0, 4.0, 0.25)?;
            text.push_str("x,y,p,ell,psi\n");
            for &x in &xs {
                for &y in &ys {
                    let row = [x, y, kernel::p_kernel(x, y), kernel::ell(x, y), kernel::psi(x, y)].map(e);
                    writeln!(text, "{}", row.join(","))?;
                }
            }
        }
        Command::LevelSets { grid, alpha, .. } => {
            let (xs, ys) = s.grid(&grid, 0.0, 5.0, 0.05)?;
            let mut alphas: Vec<f64> = s.list("alpha", alpha)?;
            if alphas.is_empty() {
                alphas = vec![0.025, 0.1, 0.4, 0.8, 1.2];
            }
            text.push_str("alpha,x,y,inside\n");
            for &a in &alphas {
                for &x in &xs {
                    for &y in &ys {
                        writeln!(text, "{},{},{},{}", e(a), e(x), e(y), u8::from(kernel::superlevel_member(a, x, y)))?;
                    }
                }
            }
        }
        Command::LCurve { grid, .. } => {
            let step = s.or("step", grid.step, 0.01)?;
            text.push_str("x,L\n");
            for x in linspace_step(s.or("x_min", grid.x_min, -5.0)?, s.or("x_max", grid.x_max, 5.0)?, step) {
                writeln!(text, "{},{}", e(x), e(kernel::big_l(x)))?;
            }
        }
        Command::Harmonic { law, direction, xmax, method, ladder, paths, seed, .. } => {
            let l = s.law(&law)?;
            let direction = Direction::parse(&s.or("direction", direction, "forward".into())?)?;
            let default_method = if l.is_lattice() { "extrapolated" } else { "monte_carlo" };
            let method = Method::parse(&s.or("method", method, default_method.into())?)?;
            let mut opts = TableOptions::default();
            let ladder: Vec<u64> = s.list("ladder", ladder)?;
            if !ladder.is_empty() {
                opts.ladder = ladder;
            }
            opts.paths = s.or("paths", paths, opts.paths)?;
            opts.seed = s.or("seed", seed, opts.seed)?;
            let table = build_table(&l, direction, s.or("xmax", xmax, 10.0)?, method, &opts)?;
            text.push_str("x,V,err,method\n");
            for ((x, v), err) in table.states().zip(&table.values).zip(&table.errors) {
                writeln!(text, "{},{},{},{}", e(x), e(*v), e(*err), table.method)?;
            }
        }
        Command::Oracle { law, x, n, constraint, .. } => {
            let l = s.law(&law)?;
            let c = Constraint::parse(&s.or("constraint", constraint, "n-1".into())?)?;
            let t = oracle::joint_law(&l, s.or("x", x, 0.0)?, s.need("n", n)?, c)?;
            text.push_str("y,prob\n");
            for (y, p) in &t.mass {
                writeln!(text, "{},{}", e(*y), e(*p))?;
            }
        }
        Command::ExitPmf { law, x, n, .. } => {
            let l = s.law(&law)?;
            let pmf = oracle::exit_pmf(&l, s.or("x", x, 0.0)?, s.need("n", n)?)?;
            text.push_str("k,prob\n");
            for (k, p) in pmf.iter().enumerate().skip(1) {
                writeln!(text, "{k},{}", e(*p))?;
            }
        }
        Command::Persistence { law, x, n, .. } => {
            let l = s.law(&law)?;
            let curve = oracle::persistence_curve(&l, s.or("x", x, 0.0)?, s.need("n", n)?)?;
            text.push_str("k,prob\n");
            for (k, p) in curve.iter().enumerate() {
                writeln!(text, "{k},{}", e(*p))?;
            }
        }
        Command::Predict { law, predictor, x, y, n, v, xmax, paths, seed, .. } => {
            let l = s.law(&law)?;
            let which: String = s.or("predictor", predictor, "persistence".into())?;
            let xs: Vec<f64> = non_empty(s.list("x", x)?);
            let ys: Vec<f64> = non_empty(s.list("y", y)?);
            let ns: Vec<u64> = s.list("n", n)?;
            if ns.is_empty() {
                bail!("missing --n");
            }
            let v = s.or("v", v, 1.0)?;
            let top = xs.iter().chain(&ys).fold(0.0f64, |m, t| m.max(*t)) + v.max(0.0);
            let (lo, hi) = l.support_bounds();
            let opts = TableOptions {
                paths: s.or("paths", paths, 200_000)?,
                seed: s.or("seed", seed, 1)?,
                ..TableOptions::default()
            };
            let inputs = PredictorInputs::build(&l, s.or("xmax", xmax, top + hi.max(-lo) + 1.0)?, &opts)?;
            text.push_str("n,x,y,predictor,value\n");
            for &nn in &ns {
                for &xx in &xs {
                    for &yy in &ys {
                        let value = match which.as_str() {
                            "persistence" => predict::persistence_pred(&inputs, xx, nn),
                            "cdf" => predict::cdf_pred(&inputs, xx, yy, nn),
                            "local" => predict::local_pred(&inputs, xx, yy, nn),
                            "caravenna" => predict::caravenna_pred(&inputs, xx, yy, nn),
                            "exit" if l.is_lattice() => predict::exit_pred_lattice(&inputs, xx, nn),
                            "exit" => predict::exit_pred_nonlattice(&inputs, xx, nn),
                            "interval" => predict::interval_pred(&inputs, xx, yy, v, nn),
                            other => bail!("unknown predictor `{other}`"),
                        };
                        let value = match value {
                            Err(condwalk_core::Error::LatticeMismatch(_)) => 0.0,
                            r => r?,
                        };
                        writeln!(text, "{nn},{},{},{which},{}", e(xx), e(yy), e(value))?;
                    }
                }
            }
        }
        Command::Mc { law, x, y, v, n, paths, seed, .. } => {
            let l = s.law(&law)?;
            let (xx, yy, vv) = (s.or("x", x, 0.0)?, s.or("y", y, 0.0)?, s.or("v", v, 1.0)?);
            let nn = s.need("n", n)?;
            let (p, sd) = (s.or("paths", paths, 1_000_000)?, s.or("seed", seed, 1)?);
            let est = mc_joint_interval(&l, xx, yy, vv, nn, p, sd)?;
            text.push_str("n,x,y,v,paths,seed,value,stderr\n");
            writeln!(text, "{nn},{},{},{},{p},{sd},{},{}", e(xx), e(yy), e(vv), e(est.value), e(est.stderr))?;
        }
        Command::Renewal { law, xmax, terms, .. } => {
            let l = s.law(&law)?;
            let mut opts = IdentityOptions::default();
            opts.x_max = s.or("xmax", xmax, opts.x_max)?;
            opts.spitzer_terms = s.or("terms", terms, opts.spitzer_terms)?;
            let r = identity_report(&l, &opts)?;
            let c = &r.constants;
            text.push_str("identity,x,y,lhs,rhs,residual,tolerance,pass\n");
            for (name, value, err) in [
                ("c_plus", c.c_plus, c.tail_errors[0]),
                ("c_minus", c.c_minus, c.tail_errors[1]),
                ("c_zero", c.c_zero, c.tail_errors[2]),
            ] {
                writeln!(text, "{name},,,{},,,{},true", e(value), e(err))?;
            }
            for row in &r.rows {
                writeln!(
                    text,
                    "{},{},{},{},{},{},{},{}",
                    row.identity,
                    e(row.x),
                    e(row.y),
                    e(row.lhs),
                    e(row.rhs),
                    e(row.residual),
                    e(row.tolerance),
                    row.pass
                )?;
            }
            ok = r.all_pass();
        }
        Command::Run { format, .. } => {
            let path = common.config.as_deref().context("run needs --config")?;
            let cfg = ExperimentConfig::from_file(&ConfigFile::load(path)?)?;
            let report = harness::run_experiment(&cfg)?;
            text = match s.or("format", format, "csv".into())?.as_str() {
                "csv" => report::to_csv(&report),
                "json" => report::to_json(&report)?,
                other => bail!("unknown format `{other}`"),
            };
            for f in &report.failures {
                eprintln!("check failed: {f}");
            }
            ok = report.passed();
            let target = out.clone().or(cfg.output.clone());
            emit(target.as_deref(), &text)?;
            return Ok(ok);
        }
    }
    emit(out.as_deref(), &text)?;
    Ok(ok)
}

fn non_empty(v: Vec<f64>) -> Vec<f64> {
    if v.is_empty() { vec![0.0] } else { v }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
