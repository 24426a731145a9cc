//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing the harness capture) and then asserts.

use std::io::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condwalk_core::harmonic::{self, build_table, truncated_sequence, Direction, Method, TableOptions};
use condwalk_core::harness::{self, report, ExperimentConfig};
use condwalk_core::increments::{builtin, make_named_lattice_law, IncrementLaw};
use condwalk_core::kernel::{self, p_kernel, phi};
use condwalk_core::lattice_oracle::{self as oracle, Constraint};
use condwalk_core::montecarlo::{mc_joint_interval, mc_max_abs};
use condwalk_core::predict::{self, PredictorInputs};
use condwalk_core::renewal::{identity_report, spitzer_constants, IdentityOptions};
use condwalk_core::Error;

fn verdict(id: u32, name: &str, pass: bool, started: Instant, detail: &str) {
    let line = format!(
        "acceptance {id:02} {name}: {} ({:.1} s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn law(name: &str) -> IncrementLaw {
    builtin(name).unwrap()
}

fn central_binomial(m: u64) -> f64 {
    // C(2m, m) / 4^m as a product of (2i - 1) / 2i.
    (1..=m).fold(1.0, |acc, i| acc * (2 * i - 1) as f64 / (2 * i) as f64)
}

#[test]
fn criterion_01_kernel_identities() {
    let t = Instant::now();
    let mut worst = [0.0f64; 5];
    worst[0] = (p_kernel(0.0, 0.0) - (2.0 * std::f64::consts::PI).sqrt() / 2.0).abs();
    for x in [0.0, 0.5, 1.0, 3.0, 8.0] {
        worst[1] = worst[1].max((kernel::ell_mass(x).unwrap() - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (s, tt) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let (x, y) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
        let v = rng.random_range(0.05..0.95);
        worst[2] = worst[2]
            .max(kernel::semigroup_residual(s, tt, x, y).unwrap())
            .max(kernel::convolution_residual(v, x, y).unwrap())
            .max(kernel::ell_convolution_residual(v, x, y).unwrap());
    }
    for _ in 0..1000 {
        let (x, y) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let p = p_kernel(x, y);
        let scale = p.abs().max(kernel::psi(x, y).abs()).max(1.0);
        let r = [
            (p - p_kernel(y, x)).abs(),
            (p - p_kernel(-x, -y)).abs(),
            (kernel::psi(x, y) + kernel::psi(-x, y)).abs(),
            (kernel::ell(x, y) + kernel::ell(x, -y)).abs(),
        ];
        worst[3] = worst[3].max(r.iter().fold(0.0f64, |a, b| a.max(*b)) / scale);
    }
    for h in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        worst[4] = worst[4].max((p_kernel(8.0, 8.0 - h) - phi(h)).abs());
    }
    let limits = [1e-12, 1e-10, 1e-8, 1e-13, 1e-6];
    let pass = worst.iter().zip(limits).all(|(w, l)| *w <= l) && t.elapsed().as_secs_f64() < 5.0;
    verdict(1, "kernel identities", pass, t, &format!("worst residuals {} vs {}", sci(&worst), sci(&limits)));
}

#[test]
fn criterion_02_duality() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for name in ["ssrw", "trinomial", "skipfree"] {
        let l = law(name);
        for n in [8u64, 32, 64] {
            for x in 0..=20 {
                for y in 0..=20 {
                    match oracle::duality_check(&l, x as f64, y as f64, n) {
                        Ok(d) => {
                            worst = worst.max(d.residual);
                            checked += 1;
                        }
                        Err(Error::LatticeMismatch(_)) => {}
                        Err(e) => panic!("{e}"),
                    }
                }
            }
        }
    }
    let pass = worst <= 1e-12 && t.elapsed().as_secs_f64() < 10.0;
    verdict(2, "duality", pass, t, &format!("{checked} admissible cells, max residual {worst:.2e}"));
}

#[test]
fn criterion_03_persistence() {
    let t = Instant::now();
    let l = law("ssrw");
    let inputs = PredictorInputs::build(&l, 4.0, &TableOptions::default()).unwrap();
    let curve = oracle::persistence_curve(&l, 0.0, 4096).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for n in [256u64, 1024, 4096] {
        let o = curve[n as usize];
        let closed = central_binomial(n / 2);
        let cross = (o - closed).abs() / closed;
        let dev = (o / predict::persistence_pred(&inputs, 0.0, n).unwrap() - 1.0).abs();
        ok &= cross <= 1e-12 && dev <= 1.0 / (4.0 * n as f64) + 1e-4;
        detail += &format!("n={n}: closed-form gap {cross:.1e}, |ratio-1| {dev:.3e}; ");
    }
    verdict(3, "persistence", ok && t.elapsed().as_secs_f64() < 10.0, t, &detail);
}

fn local_gaps(l: &IncrementLaw, inputs: &PredictorInputs, x: f64, y: f64, ns: &[u64]) -> Vec<f64> {
    ns.iter()
        .map(|&n| {
            let o = oracle::joint_law(l, x, n, Constraint::SurviveThroughPrev).unwrap().get(y);
            (o / predict::local_pred(inputs, x, y, n).unwrap() - 1.0).abs()
        })
        .collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn criterion_04_local_theorem() {
    let t = Instant::now();
    let ssrw = law("ssrw");
    let inp = PredictorInputs::build(&ssrw, 8.0, &TableOptions::default()).unwrap();
    let gaps = local_gaps(&ssrw, &inp, 0.0, 0.0, &[256, 1024, 4096]);
    let mut ok = gaps[2] <= 0.05 && strictly_decreasing(&gaps);
    let mut detail = format!("ssrw (0,0) gaps {}; ", sci(&gaps));
    let sf = law("skipfree");
    let inp = PredictorInputs::build(&sf, 8.0, &TableOptions::default()).unwrap();
    // Span 3 and shift 2: y - x must be 0 mod 3 when n is.
    for (x, y) in [(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (5.0, 5.0)] {
        let g = local_gaps(&sf, &inp, x, y, &[255, 1023, 4095]);
        ok &= strictly_decreasing(&g);
        detail += &format!("skipfree ({x},{y}) {}; ", sci(&g));
    }
    verdict(4, "local theorem", ok && t.elapsed().as_secs_f64() < 60.0, t, &detail);
}

#[test]
fn criterion_05_exit_time() {
    let t = Instant::now();
    let l = law("ssrw");
    let inp = PredictorInputs::build(&l, 4.0, &TableOptions::default()).unwrap();
    let pmf = oracle::exit_pmf(&l, 0.0, 4098).unwrap();
    let mut gaps = Vec::new();
    let mut ok = true;
    for n in [256u64, 1024, 4096] {
        let o = pmf[n as usize + 1];
        // First exit at n + 1 = Catalan(n/2) / 2^{n+1}.
        let m = n / 2;
        let closed = central_binomial(m) / (m as f64 + 1.0) / 2.0;
        ok &= (o - closed).abs() <= 1e-10 * closed;
        gaps.push((o / predict::exit_pred_lattice(&inp, 0.0, n).unwrap() - 1.0).abs());
        // Odd x + n: both sides vanish.
        ok &= pmf[n as usize] == 0.0 && predict::exit_pred_lattice(&inp, 0.0, n - 1).unwrap() == 0.0;
        ok &= predict::exit_pred_lattice(&inp, 1.0, n).unwrap() == 0.0
            && oracle::exit_pmf(&l, 1.0, n + 1).unwrap()[n as usize + 1] == 0.0;
    }
    ok &= gaps[2] <= 0.02 && strictly_decreasing(&gaps);
    verdict(5, "exit time", ok && t.elapsed().as_secs_f64() < 30.0, t, &format!("|ratio-1| {}", sci(&gaps)));
}

#[test]
fn criterion_06_harmonic() {
    let t = Instant::now();
    let opts = TableOptions { ladder: vec![1024, 4096, 16384], ..TableOptions::default() };
    let mut ok = true;
    let mut detail = String::new();
    // Unshifted skip-free law (span 1, down-step -1) and the shifted built-in.
    let plain = make_named_lattice_law("skipfree0", &[(-1.0, 0.5), (0.0, 0.25), (2.0, 0.25)], 1.0).unwrap();
    for (l, down) in [(plain, 1.0), (law("skipfree"), 1.0)] {
        let exact = build_table(&l, Direction::Forward, 10.0, Method::SkipfreeExact, &opts).unwrap();
        let extra = build_table(&l, Direction::Forward, 10.0, Method::Extrapolated, &opts).unwrap();
        let hbar = l.lattice().unwrap().span;
        let mut gap = 0.0f64;
        for x in 0..=10 {
            let x = x as f64;
            let v = exact.value(x).unwrap();
            let want = if l.lattice().unwrap().shift == 0.0 { x + hbar } else { x + down };
            ok &= v == want;
            gap = gap.max((extra.value(x).unwrap() - v).abs());
        }
        let res = harmonic::harmonicity_residual(&l, &exact).unwrap();
        ok &= gap <= 1e-2 && res <= 1e-9;
        detail += &format!("{} (span {hbar}): extrapolation gap {gap:.2e}, residual {res:.1e}; ", l.id());
    }
    let ssrw = law("ssrw");
    let ladder = [256u64, 1024, 4096, 16384];
    let seq = truncated_sequence(&ssrw, 10, &ladder).unwrap();
    let mut bracket_ok = true;
    for (k, _) in ladder.iter().enumerate() {
        for i in 0..=10 {
            let v = i as f64 + 1.0;
            let (w, p) = (seq.w[k][i], seq.survival[k][i]);
            bracket_ok &= w <= v + 1e-12 && v <= w + p + 1e-12;
        }
    }
    ok &= bracket_ok;
    detail += &format!("ssrw brackets {}", if bracket_ok { "hold" } else { "violated" });
    verdict(6, "harmonic functions", ok && t.elapsed().as_secs_f64() < 30.0, t, &detail);
}

#[test]
fn criterion_07_renewal() {
    let t = Instant::now();
    let l = law("ssrw");
    let c = spitzer_constants(&l, 100_000).unwrap();
    let target = -std::f64::consts::LN_2 / 2.0;
    let c_gap = (c.c_minus - target).abs();
    let sum = (c.c_plus + c.c_minus + c.c_zero).abs();
    let v0_pred = l.sigma() * (-c.c_minus).exp() / std::f64::consts::SQRT_2;
    let v0 = harmonic::v_skipfree(&l, 0.0).unwrap();
    let v0_gap = (v0 / v0_pred - 1.0).abs();
    let report = identity_report(&l, &IdentityOptions { x_max: 10.0, ..IdentityOptions::default() }).unwrap();
    let renewal_rows: Vec<_> = report.rows.iter().filter(|r| r.identity.starts_with("U_") || r.identity.starts_with("V/V(0)")).collect();
    let rows_ok = !renewal_rows.is_empty() && renewal_rows.iter().all(|r| r.pass && r.x <= 10.0);
    let pass = c_gap <= 1e-3 && sum <= 3.0 * c.tail_estimate.max(f64::EPSILON) && v0_gap <= 5e-3 && rows_ok;
    verdict(
        7,
        "renewal identities",
        pass && t.elapsed().as_secs_f64() < 120.0,
        t,
        &format!(
            "c- gap {c_gap:.2e}, |c+ + c- + c0| {sum:.1e} (tail {:.1e}), V(0) gap {v0_gap:.1e}, {} renewal rows pass={rows_ok}",
            c.tail_estimate,
            renewal_rows.len()
        ),
    );
}

#[test]
fn criterion_08_llt_rate() {
    let t = Instant::now();
    let l = law("trinomial");
    let errs: Vec<f64> = [512u64, 1024, 2048, 4096].iter().map(|&n| oracle::llt_sup_error(&l, n).unwrap()).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = ratios.iter().all(|r| (0.4..=0.65).contains(r)) && t.elapsed().as_secs_f64() < 20.0;
    // The skip-free law is asymmetric, so its leading correction is of order 1/n.
    let sf = law("skipfree");
    let sf_errs: Vec<f64> = [512u64, 1024, 2048, 4096].iter().map(|&n| oracle::llt_sup_error(&sf, n).unwrap()).collect();
    let sf_ratios: Vec<f64> = sf_errs.windows(2).map(|w| w[1] / w[0]).collect();
    verdict(
        8,
        "llt rate",
        pass,
        t,
        &format!("trinomial ratios {ratios:.4?} (target [0.4, 0.65]); skip-free ratios {sf_ratios:.4?}"),
    );
}

#[test]
fn criterion_09_fuk_nagaev() {
    let t = Instant::now();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in ["ssrw", "trinomial"] {
        let l = law(name);
        let n = 1000u64;
        let nf = n as f64;
        let mut triples = vec![(n, (nf * nf.ln()).sqrt(), nf.sqrt())];
        for _ in 0..10 {
            let n = rng.random_range(10u64..2000);
            let nf = n as f64;
            let v = rng.random_range(1.0..2.0 * nf.sqrt());
            let u = rng.random_range(v..3.0 * (nf * nf.ln()).sqrt() + v);
            triples.push((n, u, v));
        }
        for (n, u, v) in triples {
            let (p, b) = oracle::fuk_nagaev_check(&l, n, u, v).unwrap();
            ok &= p <= b;
            worst = worst.max(p / b);
        }
    }
    let uni = law("uniform");
    let (n, nf) = (1000u64, 1000f64);
    let mut uni_detail = String::new();
    for (u, seed) in [((nf * nf.ln()).sqrt(), 5u64), (2.0 * nf.sqrt(), 6)] {
        let e = mc_max_abs(&uni, n, u, 100_000, seed).unwrap();
        let b = oracle::fuk_nagaev_bound(&uni, n, u, nf.sqrt()).unwrap();
        ok &= e.value <= b + 4.0 * e.stderr;
        uni_detail += &format!("u={u:.1}: mc {:.3e} +- {:.1e} vs bound {b:.3e}; ", e.value, e.stderr);
    }
    verdict(
        9,
        "fuk-nagaev",
        ok && t.elapsed().as_secs_f64() < 30.0,
        t,
        &format!("max exact/bound {worst:.3e}; uniform {uni_detail}"),
    );
}

#[test]
fn criterion_10_interval_theorem() {
    let t = Instant::now();
    let l = law("uniform");
    let opts = TableOptions { paths: 1_000_000, n_cap: 4096, spacing: 0.05, seed: 3, ..TableOptions::default() };
    let inputs = PredictorInputs::build(&l, 2.0, &opts).unwrap();
    let (pred, unc) = predict::interval_pred_with_error(&inputs, 0.0, 0.0, 1.0, 512).unwrap();
    let mc = mc_joint_interval(&l, 0.0, 0.0, 1.0, 512, 10_000_000, 17).unwrap();
    let gap = (mc.value - pred).abs();
    let tol = 3.0 * (mc.stderr + unc);
    verdict(
        10,
        "interval theorem",
        gap <= tol && t.elapsed().as_secs_f64() < 180.0,
        t,
        &format!("mc {:.5e} +- {:.1e}, predictor {pred:.5e} +- {unc:.1e}, gap {gap:.2e} <= {tol:.2e}", mc.value, mc.stderr),
    );
}

#[test]
fn criterion_11_kappa() {
    let t = Instant::now();
    let uni = law("uniform");
    let opts = TableOptions { paths: 200_000, n_cap: 4096, spacing: 0.05, seed: 5, ..TableOptions::default() };
    let inputs = PredictorInputs::build(&uni, 2.0, &opts).unwrap();
    let forms = predict::kappa_forms(&inputs).unwrap();
    let rel = (forms.first - forms.second).abs() / forms.value();
    let mut ok = rel <= 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for name in ["ssrw", "trinomial", "skipfree"] {
        let l = law(name);
        let inp = PredictorInputs::build(&l, 12.0, &TableOptions::default()).unwrap();
        let spec = *l.lattice().unwrap();
        for _ in 0..1000 {
            let x = rng.random_range(0.0..10.0);
            let n = rng.random_range(1u64..10_000);
            let u = spec.reduce(n as f64 * spec.shift + x);
            ok &= predict::varkappa_n(&inp, x, n).unwrap() == predict::varkappa_u(&inp, u).unwrap();
            checked += 1;
        }
    }
    verdict(
        11,
        "kappa consistency",
        ok && t.elapsed().as_secs_f64() < 60.0,
        t,
        &format!("uniform forms {:.6} / {:.6} (rel {rel:.1e}); {checked} lattice identities exact", forms.first, forms.second),
    );
}

#[test]
fn criterion_12_determinism() {
    let t = Instant::now();
    let configs = [
        "law = uniform\nexperiment = persistence, exit, interval, cdf, fuk-nagaev\npaths = 20000\nseed = 42\n\
         [grid]\nn = 32, 64\nx = 0.5, 2\ny = 0.5, 1\nv = 0.5\n[tables]\npaths = 20000\nn_cap = 512\n",
        "law = trinomial\nexperiment = persistence, local, caravenna, exit, duality, llt-rate\n\
         [grid]\nn = 16, 64\nx = 0, 2\ny = 0, 1, 3\n",
    ];
    let mut ok = true;
    let mut bytes = 0;
    for text in configs {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let a = report::to_csv(&harness::run_with_threads(&cfg, 1).unwrap());
        let b = report::to_csv(&harness::run_with_threads(&cfg, 3).unwrap());
        ok &= a == b && a.lines().count() > 1;
        bytes += a.len();
    }
    verdict(12, "determinism", ok && t.elapsed().as_secs_f64() < 60.0, t, &format!("{bytes} CSV bytes identical across 1 and 3 threads"));
}
