//! Certifies the floating-point dynamic programs against exact rational
//! arithmetic and against combinatorial closed forms.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use condwalk_core::increments::builtin;
use condwalk_core::lattice_oracle::{exit_pmf, joint_law, persistence_curve, Constraint};

type Law = Vec<(i64, BigRational)>;

fn q(p: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(d))
}

fn exact_law(name: &str) -> Law {
    match name {
        "ssrw" => vec![(-1, q(1, 2)), (1, q(1, 2))],
        "trinomial" => vec![(-1, q(1, 4)), (0, q(1, 2)), (1, q(1, 4))],
        "skipfree" => vec![(-1, q(2, 3)), (2, q(1, 3))],
        _ => unreachable!(),
    }
}

/// Exact `y -> P(x + S_n = y, tau_x > n - 1)`, with persistence and exit
/// probabilities along the way.
struct Exact {
    endpoint: BTreeMap<i64, BigRational>,
    persistence: Vec<BigRational>,
    exits: Vec<BigRational>,
}

fn exact_walk(law: &Law, x: i64, n: usize) -> Exact {
    let mut state: BTreeMap<i64, BigRational> = BTreeMap::from([(x, BigRational::one())]);
    let mut persistence = vec![BigRational::one()];
    let mut exits = vec![BigRational::zero()];
    let mut endpoint = BTreeMap::new();
    for k in 1..=n {
        let mut next: BTreeMap<i64, BigRational> = BTreeMap::new();
        for (s, m) in &state {
            for (step, p) in law {
                *next.entry(s + step).or_insert_with(BigRational::zero) += m * p;
            }
        }
        if k == n {
            endpoint = next.clone();
        }
        let exit: BigRational = next.iter().filter(|(s, _)| **s < 0).map(|(_, m)| m.clone()).sum();
        next.retain(|s, _| *s >= 0);
        persistence.push(next.values().cloned().sum());
        exits.push(exit);
        state = next;
    }
    Exact { endpoint, persistence, exits }
}

fn f(r: &BigRational) -> f64 {
    r.to_f64().unwrap()
}

#[test]
fn dynamic_programs_match_exact_rationals() {
    for name in ["ssrw", "trinomial", "skipfree"] {
        let law = builtin(name).unwrap();
        let exact_l = exact_law(name);
        for x in [0i64, 1, 3] {
            let n = 36;
            let ex = exact_walk(&exact_l, x, n);
            let t = joint_law(&law, x as f64, n as u64, Constraint::SurviveThroughPrev).unwrap();
            let mut worst: f64 = 0.0;
            for (y, p) in &ex.endpoint {
                if *y >= 0 {
                    worst = worst.max((t.get(*y as f64) - f(p)).abs());
                }
            }
            assert!(worst <= t.float_error_bound + 1e-16, "{name} x={x}: {worst:e}");
            let curve = persistence_curve(&law, x as f64, n as u64).unwrap();
            let exits = exit_pmf(&law, x as f64, n as u64).unwrap();
            for k in 0..=n {
                assert!((curve[k] - f(&ex.persistence[k])).abs() <= 1e-15, "{name} persistence k={k}");
                assert!((exits[k] - f(&ex.exits[k])).abs() <= 1e-15, "{name} exit k={k}");
            }
        }
    }
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn ratio(num: BigInt, pow2: u64) -> f64 {
    f(&BigRational::new(num, BigInt::one() << pow2))
}

#[test]
fn simple_walk_closed_forms() {
    let law = builtin("ssrw").unwrap();
    let curve = persistence_curve(&law, 0.0, 4097).unwrap();
    let exits = exit_pmf(&law, 0.0, 4097).unwrap();
    for n in [2u64, 10, 256, 1024, 4096] {
        // Nonnegative paths of length n: C(n, floor(n/2)).
        let want = ratio(binomial(n, n / 2), n);
        assert!((curve[n as usize] - want).abs() <= 1e-12 * want, "n={n}");
        // Nonnegative excursions returning to 0 count as Catalan numbers;
        // one more down-step exits.
        let m = n / 2;
        let catalan = binomial(2 * m, m) / BigInt::from(m + 1);
        let want_exit = ratio(catalan.clone(), n + 1);
        assert!((exits[n as usize + 1] - want_exit).abs() <= 1e-12 * want_exit, "exit n={n}");
        assert_eq!(exits[n as usize], 0.0);
        let local = joint_law(&law, 0.0, n, Constraint::SurviveThroughPrev).unwrap().get(0.0);
        let want_local = ratio(catalan, n);
        assert!((local - want_local).abs() <= 1e-12 * want_local, "local n={n}");
    }
}
