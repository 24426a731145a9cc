//! Numerical integration: globally adaptive 15-point Gauss–Kronrod and
//! composite Simpson on uniform nodes.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the 7-point rule, matched to XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// Integrates `f` over `[a, b]` until the summed Gauss–Kronrod error estimate
/// falls below `abs_tol`. Fails after `max_segments` bisections.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Integral> {
    integrate_with_limit(f, a, b, abs_tol, 2000)
}

pub fn integrate_with_limit<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<Integral> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut segments = vec![gk15(&f, lo, hi)];
    loop {
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= abs_tol {
            let value = neumaier_sum(segments.iter().map(|s| s.value));
            return Ok(Integral { value: sign * value, error });
        }
        if segments.len() >= max_segments {
            return Err(Error::QuadratureFailure { tolerance: abs_tol, estimate: error });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|l, r| l.1.error.total_cmp(&r.1.error))
            .expect("non-empty");
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(Error::QuadratureFailure { tolerance: abs_tol, estimate: error });
        }
        segments.push(gk15(&f, s.a, mid));
        segments.push(gk15(&f, mid, s.b));
    }
}

/// Integrates over `[a, b]` split at the given interior break points (kinks,
/// discontinuities), sharing the tolerance between pieces.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
) -> Result<Integral> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&c| c > a && c < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut nodes = Vec::with_capacity(cuts.len() + 2);
    nodes.push(a);
    nodes.extend(cuts);
    nodes.push(b);
    let share = abs_tol / (nodes.len() - 1) as f64;
    let mut value = 0.0;
    let mut error = 0.0;
    for w in nodes.windows(2) {
        let piece = integrate(&f, w[0], w[1], share)?;
        value += piece.value;
        error += piece.error;
    }
    Ok(Integral { value, error })
}

/// Composite Simpson rule on the smallest even number of panels whose width
/// does not exceed `max_step`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, max_step: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut panels = ((b - a).abs() / max_step).ceil() as usize;
    panels = panels.max(2);
    if panels % 2 == 1 {
        panels += 1;
    }
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = KahanSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Eight-lane sum of a slice; vectorizes and keeps partial sums short.
pub fn lane_sum(values: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let chunks = values.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for (l, v) in lanes.iter_mut().zip(c) {
            *l += v;
        }
    }
    let mut acc = KahanSum::default();
    for l in lanes.into_iter().chain(rest.iter().copied()) {
        acc.add(l);
    }
    acc.value()
}

/// Running compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
    terms: u64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
        self.terms += 1;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn terms(&self) -> u64 {
        self.terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x * x * x - 2.0 * x, -1.0, 2.0, 1e-14).unwrap();
        assert!((r.value - (15.0 / 4.0 - 3.0)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_mass() {
        let r = integrate(|x| (-x * x / 2.0).exp(), -12.0, 12.0, 1e-13).unwrap();
        assert!((r.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let r = integrate(|x| x, 1.0, 0.0, 1e-14).unwrap();
        assert!((r.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn kink_handled_by_breaks() {
        let r = integrate_piecewise(|x: f64| x.abs(), -1.0, 2.0, &[0.0], 1e-14).unwrap();
        assert!((r.value - 2.5).abs() < 1e-14);
    }

    #[test]
    fn simpson_cubic_exact() {
        let s = simpson(|x| x * x * x, 0.0, 1.0, 0.5);
        assert!((s - 0.25).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut terms = vec![1.0];
        terms.extend(std::iter::repeat(1e-16).take(1000));
        assert!((neumaier_sum(terms) - (1.0 + 1e-13)).abs() < 1e-16);
    }
}
