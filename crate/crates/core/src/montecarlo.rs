//! Seeded Monte Carlo for conditioned walk events.
//!
//! Path `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so any path can
//! be regenerated alone. Paths are grouped into fixed-size chunks, chunks run
//! on the rayon pool and partial results are merged in chunk order: the output
//! does not depend on the number of worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementLaw;

const CHUNK: u64 = 4096;
/// Smallest path count accepted by the public estimators.
pub const MIN_PATHS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub paths: u64,
    pub seed: u64,
    pub n: u64,
}

impl McEstimate {
    fn from_count(hits: u64, paths: u64, seed: u64, n: u64) -> Self {
        let p = hits as f64 / paths as f64;
        Self { value: p, stderr: (p * (1.0 - p) / paths as f64).sqrt(), paths, seed, n }
    }
}

/// RNG for one path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// SplitMix64 finaliser, used to derive per-cell seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `per_path` over all path indices and folds the chunk accumulators in
/// index order.
pub fn run_paths<A, F, M>(paths: u64, seed: u64, init: impl Fn() -> A + Sync, per_path: F, merge: M) -> A
where
    A: Send,
    F: Fn(&mut A, &mut dyn RngCore) + Sync,
    M: Fn(A, A) -> A,
{
    let chunks = paths.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                let mut rng = path_rng(seed, i);
                per_path(&mut acc, &mut rng);
            }
            acc
        })
        .collect();
    parts.into_iter().fold(init(), merge)
}

fn check_paths(paths: u64) -> Result<()> {
    if paths < MIN_PATHS {
        return Err(Error::Precondition(format!("need at least {MIN_PATHS} paths, got {paths}")));
    }
    Ok(())
}

/// Estimates of `P(x + S_n in [y_i, y_i + v_i), tau_x > n-1)` for several
/// intervals from one path set.
pub fn mc_joint_intervals(
    law: &IncrementLaw,
    x: f64,
    intervals: &[(f64, f64)],
    n: u64,
    paths: u64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    check_paths(paths)?;
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    if let Some(&(_, v)) = intervals.iter().find(|(_, v)| !(*v >= 0.0)) {
        return Err(Error::DomainError(format!("interval width must be nonnegative, got {v}")));
    }
    let hits = run_paths(
        paths,
        seed,
        || vec![0u64; intervals.len()],
        |acc, rng| {
            let mut s = x;
            for j in 1..=n {
                s += law.sample(rng);
                if j < n && s < 0.0 {
                    return;
                }
            }
            for (h, &(y, v)) in acc.iter_mut().zip(intervals) {
                if s >= y && s < y + v {
                    *h += 1;
                }
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
            a
        },
    );
    Ok(hits.into_iter().map(|h| McEstimate::from_count(h, paths, seed, n)).collect())
}

pub fn mc_joint_interval(law: &IncrementLaw, x: f64, y: f64, v: f64, n: u64, paths: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_joint_intervals(law, x, &[(y, v)], n, paths, seed)?[0])
}

/// Exit-time histogram from one path set.
#[derive(Debug, Clone, PartialEq)]
pub struct McExitHistogram {
    /// `counts[k]` = paths with `tau_x = k` (index 0 unused).
    pub counts: Vec<u64>,
    pub survivors: u64,
    pub paths: u64,
    pub seed: u64,
}

impl McExitHistogram {
    pub fn pmf(&self, k: usize) -> McEstimate {
        let n = self.counts.len() as u64 - 1;
        McEstimate::from_count(self.counts.get(k).copied().unwrap_or(0), self.paths, self.seed, n)
    }

    pub fn persistence(&self) -> McEstimate {
        McEstimate::from_count(self.survivors, self.paths, self.seed, self.counts.len() as u64 - 1)
    }
}

pub fn mc_exit_pmf(law: &IncrementLaw, x: f64, n: u64, paths: u64, seed: u64) -> Result<McExitHistogram> {
    check_paths(paths)?;
    let len = n as usize + 1;
    let counts = run_paths(
        paths,
        seed,
        || vec![0u64; len + 1],
        |acc, rng| {
            let mut s = x;
            for j in 1..=n as usize {
                s += law.sample(rng);
                if s < 0.0 {
                    acc[j] += 1;
                    return;
                }
            }
            acc[len] += 1;
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
            a
        },
    );
    let survivors = counts[len];
    Ok(McExitHistogram { counts: counts[..len].to_vec(), survivors, paths, seed })
}

pub fn mc_persistence(law: &IncrementLaw, x: f64, n: u64, paths: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_exit_pmf(law, x, n, paths, seed)?.persistence())
}

/// `P(max_{k<=n} |S_k| > u)`.
pub fn mc_max_abs(law: &IncrementLaw, n: u64, u: f64, paths: u64, seed: u64) -> Result<McEstimate> {
    check_paths(paths)?;
    if !(u > 0.0) {
        return Err(Error::DomainError(format!("u must be positive, got {u}")));
    }
    let hits = run_paths(
        paths,
        seed,
        || 0u64,
        |acc, rng| {
            let mut s = 0.0;
            for _ in 0..n {
                s += law.sample(rng);
                if s.abs() > u {
                    *acc += 1;
                    return;
                }
            }
        },
        |a, b| a + b,
    );
    Ok(McEstimate::from_count(hits, paths, seed, n))
}

/// Per-start summary of `(x + S_n) 1{tau_x > n}` over a shared path set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMean {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub survival: f64,
}

/// `E(x + S_n; tau_x > n)` for every `x` in `starts`, from one path set. A
/// path is recorded by its running minimum and endpoint, then dropped once it
/// falls below every start's barrier.
pub fn mc_truncated_means(
    law: &IncrementLaw,
    starts: &[f64],
    n: u64,
    paths: u64,
    seed: u64,
) -> Result<Vec<TruncatedMean>> {
    check_paths(paths)?;
    let x_max = starts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    #[derive(Clone)]
    struct Acc {
        sum: Vec<f64>,
        sq: Vec<f64>,
        alive: Vec<u64>,
    }
    let k = starts.len();
    let acc = run_paths(
        paths,
        seed,
        || Acc { sum: vec![0.0; k], sq: vec![0.0; k], alive: vec![0; k] },
        |acc, rng| {
            let (mut s, mut min) = (0.0f64, 0.0f64);
            for _ in 0..n {
                s += law.sample(rng);
                min = min.min(s);
                if min < -x_max {
                    return;
                }
            }
            for (i, &x) in starts.iter().enumerate() {
                if min >= -x {
                    let w = x + s;
                    acc.sum[i] += w;
                    acc.sq[i] += w * w;
                    acc.alive[i] += 1;
                }
            }
        },
        |mut a, b| {
            for i in 0..k {
                a.sum[i] += b.sum[i];
                a.sq[i] += b.sq[i];
                a.alive[i] += b.alive[i];
            }
            a
        },
    );
    let m = paths as f64;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mean = acc.sum[i] / m;
            let var = (acc.sq[i] / m - mean * mean).max(0.0) * m / (m - 1.0);
            TruncatedMean { x, mean, stderr: (var / m).sqrt(), survival: acc.alive[i] as f64 / m }
        })
        .collect())
}
