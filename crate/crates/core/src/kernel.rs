//! Gaussian heat kernel on the half line and its normalizations.
//!
//! Cancellation-prone differences are factored through `expm1`:
//! `phi(x-y) - phi(x+y) = -phi(x-y) * expm1(-2xy)`. The normalized forms
//! `p` and `ell` divide out the `x -> 0` zero of `H` analytically via
//! `L(x) = H(x)/x` and `s(u) = (1 - e^{-u})/u`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::quad;

/// `1/sqrt(2 pi)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_9;
/// `L(0) = 2/sqrt(2 pi)`.
pub const L_ZERO: f64 = 2.0 * INV_SQRT_2PI;

const L_SERIES_CUTOFF: f64 = 1e-3;
const S_SERIES_CUTOFF: f64 = 1e-8;

/// Standard normal density.
#[inline]
pub fn phi(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Normal density with variance `t`.
pub fn gaussian_pdf(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::DomainError(format!("variance must be positive, got {t}")));
    }
    Ok(phi(x / t.sqrt()) / t.sqrt())
}

/// Standard normal CDF.
#[inline]
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)`, accurate for large positive `x`.
#[inline]
pub fn gaussian_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `H(x) = 2 Phi(x) - 1`.
#[inline]
pub fn big_h(x: f64) -> f64 {
    libm::erf(x * FRAC_1_SQRT_2)
}

/// `L(x) = H(x)/x`, with `L(0) = 2/sqrt(2 pi)`.
pub fn big_l(x: f64) -> f64 {
    let a = x.abs();
    if a < L_SERIES_CUTOFF {
        let z = a * a;
        L_ZERO * (1.0 - z / 6.0 + z * z / 40.0 - z * z * z / 336.0)
    } else {
        big_h(a) / a
    }
}

/// `s(u) = (1 - e^{-u})/u`, `s(0) = 1`.
pub fn s_fn(u: f64) -> f64 {
    if u.abs() < S_SERIES_CUTOFF {
        1.0 - u / 2.0 + u * u / 6.0 - u * u * u / 24.0
    } else {
        -(-u).exp_m1() / u
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `psi(x, y) = phi(x - y) - phi(x + y)`.
pub fn psi(x: f64, y: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    sign(x) * sign(y) * phi(ax - ay) * -(-2.0 * ax * ay).exp_m1()
}

/// `psi_t(x, y) = t^{-1/2} psi(x/sqrt(t), y/sqrt(t))`.
pub fn psi_t(t: f64, x: f64, y: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::DomainError(format!("time must be positive, got {t}")));
    }
    let r = t.sqrt();
    Ok(psi(x / r, y / r) / r)
}

/// `ell(x, y) = psi(x, y)/H(x)`; a probability density in `y` on `[0, inf)`.
pub fn ell(x: f64, y: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    sign(y) * phi(ax - ay) * 2.0 * ay * s_fn(2.0 * ax * ay) / big_l(ax)
}

/// `ell_v(x, y) = psi_v(x, y)/H(x)`.
pub fn ell_v(v: f64, x: f64, y: f64) -> Result<f64> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::DomainError(format!("v must lie in (0, 1], got {v}")));
    }
    let r = v.sqrt();
    let (ax, ay) = (x.abs(), y.abs());
    let (bx, by) = (ax / r, ay / r);
    Ok(sign(y) * phi(bx - by) * 2.0 * ay * s_fn(2.0 * bx * by) / (v * r * big_l(ax)))
}

/// Two-sided normalized kernel `p(x, y) = psi(x, y)/(H(x) H(y))`.
pub fn p_kernel(x: f64, y: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    2.0 * phi(ax - ay) * s_fn(2.0 * ax * ay) / (big_l(ax) * big_l(ay))
}

/// `phi_L(y) = e^{-y^2/2}/L(y) = p(0, y)`.
pub fn phi_l(y: f64) -> f64 {
    (-0.5 * y * y).exp() / big_l(y)
}

/// `int_0^u ell(x, z) dz`.
pub fn int_ell(x: f64, u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::DomainError(format!("upper limit must be nonnegative, got {u}")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    let a = x.abs();
    let value = if a < L_SERIES_CUTOFF {
        // D = P(u-x < Z < u+x) and H(x) expanded to the same order.
        let z = a * a;
        let u2 = u * u;
        let d = 1.0 + z * (u2 - 1.0) / 6.0 + z * z * (u2 * u2 - 6.0 * u2 + 3.0) / 120.0;
        let h = 1.0 - z / 6.0 + z * z / 40.0;
        1.0 - (-0.5 * u2).exp() * d / h
    } else {
        let d = gaussian_sf(u - a) - gaussian_sf(u + a);
        1.0 - d / big_h(a)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// `q_alpha = sqrt(-2 ln(sqrt(2 pi) alpha))`, the radius where `phi` equals `alpha`.
pub fn q_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= INV_SQRT_2PI) {
        return Err(Error::DomainError(format!("alpha must lie in (0, 1/sqrt(2 pi)], got {alpha}")));
    }
    Ok((-2.0 * ((2.0 * PI).sqrt() * alpha).ln()).max(0.0).sqrt())
}

/// Membership of `(x, y)` in the superlevel set `{p >= alpha}`.
pub fn superlevel_member(alpha: f64, x: f64, y: f64) -> bool {
    p_kernel(x, y) >= alpha
}

fn window(x: f64, y: f64, scale: f64) -> f64 {
    x.abs().max(y.abs()) + 12.0 * scale.max(1.0)
}

const IDENTITY_TOL: f64 = 1e-11;

/// `|int_0^inf psi_s(x, z) psi_t(z, y) dz - psi_{s+t}(x, y)|`.
pub fn semigroup_residual(s: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    let target = psi_t(s + t, x, y)?;
    let (rs, rt) = (s.sqrt(), t.sqrt());
    let hi = window(x, y, rs.max(rt));
    let f = |z: f64| psi(x / rs, z / rs) / rs * psi(z / rt, y / rt) / rt;
    let integral = quad::integrate_piecewise(f, 0.0, hi, &[x.abs(), y.abs()], IDENTITY_TOL)?;
    Ok((integral.value - target).abs())
}

/// `|int_R phi_v(y - z) psi_{1-v}(x, z) dz - psi(x, y)|` for `v` in `(0, 1)`.
pub fn convolution_residual(v: f64, x: f64, y: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::DomainError(format!("v must lie in (0, 1), got {v}")));
    }
    let (rv, rw) = (v.sqrt(), (1.0 - v).sqrt());
    let hi = window(x, y, 1.0);
    let f = |z: f64| phi((y - z) / rv) / rv * psi(x / rw, z / rw) / rw;
    let integral = quad::integrate_piecewise(f, -hi, hi, &[-x.abs(), 0.0, x.abs(), y], IDENTITY_TOL)?;
    Ok((integral.value - psi(x, y)).abs())
}

/// `|int_R phi_v(y - z) ell_{1-v}(x, z) dz - ell(x, y)|` for `v` in `(0, 1)`.
pub fn ell_convolution_residual(v: f64, x: f64, y: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::DomainError(format!("v must lie in (0, 1), got {v}")));
    }
    let rv = v.sqrt();
    let hi = window(x, y, 1.0);
    let f = |z: f64| phi((y - z) / rv) / rv * ell_v(1.0 - v, x, z).unwrap_or(f64::NAN);
    let integral = quad::integrate_piecewise(f, -hi, hi, &[-x.abs(), 0.0, x.abs(), y], IDENTITY_TOL)?;
    Ok((integral.value - ell(x, y)).abs())
}

/// `|int_0^inf phi_s(z - x) phi_t(z - y) dz - phi_{s+t}(x - y) Phi_{st/(s+t)}((tx + sy)/(s+t))|`.
pub fn half_line_product_residual(s: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    let st = s + t;
    let target = gaussian_pdf(st, x - y)? * gaussian_cdf(((t * x + s * y) / st) / (s * t / st).sqrt());
    let (rs, rt) = (s.sqrt(), t.sqrt());
    let hi = window(x, y, rs.max(rt));
    let f = |z: f64| phi((z - x) / rs) / rs * phi((z - y) / rt) / rt;
    let integral = quad::integrate_piecewise(f, 0.0, hi, &[x, y], IDENTITY_TOL)?;
    Ok((integral.value - target).abs())
}

/// `int_0^inf ell(x, y) dy`, which should be 1.
pub fn ell_mass(x: f64) -> Result<f64> {
    let hi = x.abs() + 40.0;
    Ok(quad::integrate_piecewise(|y| ell(x, y), 0.0, hi, &[x.abs()], 1e-13)?.value)
}

/// Kernel values on a product grid, stored row-major (`x` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub values: Vec<f64>,
}

impl KernelGrid {
    pub fn build(x_values: Vec<f64>, y_values: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        if !sorted(&x_values) || !sorted(&y_values) {
            return Err(Error::Precondition("grid axes must be sorted".into()));
        }
        let mut values = Vec::with_capacity(x_values.len() * y_values.len());
        for &x in &x_values {
            for &y in &y_values {
                values.push(f(x, y));
            }
        }
        Ok(Self { x_values, y_values, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y_values.len() + j]
    }

    /// Position and value of the largest entry.
    pub fn argmax(&self) -> (f64, f64, f64) {
        let mut best = (f64::NAN, f64::NAN, f64::NEG_INFINITY);
        for (i, &x) in self.x_values.iter().enumerate() {
            for (j, &y) in self.y_values.iter().enumerate() {
                let v = self.get(i, j);
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        best
    }
}

/// `lo, lo + step, ..., hi` (inclusive, snapped to the step count).
pub fn linspace_step(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_and_cdf_values() {
        assert_eq!(gaussian_pdf(1.0, 0.0).unwrap(), 0.398_942_280_401_432_7);
        assert_eq!(gaussian_cdf(0.0), 0.5);
        assert!((gaussian_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!(gaussian_pdf(0.0, 1.0).is_err());
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, 1.0), 0.0);
        let expected = (1.0 - (-2.0f64).exp()) * INV_SQRT_2PI;
        assert!((psi(1.0, 1.0) - expected).abs() < 1e-16);
        assert!((psi(0.3, -1.7) + psi(0.3, 1.7)).abs() < 1e-17);
    }

    #[test]
    fn l_function() {
        assert_eq!(big_h(0.0), 0.0);
        assert_eq!(big_l(0.0), 0.797_884_560_802_865_4);
        let a = big_l(0.999e-3);
        let b = big_l(1.001e-3);
        assert!((a - b).abs() < 1e-9);
        assert!((50.0 * big_l(50.0) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn ell_values() {
        assert!((ell(0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(ell(2.5, 0.0), 0.0);
        assert!((ell_v(1.0, 0.7, 1.2).unwrap() - ell(0.7, 1.2)).abs() < 1e-15);
    }

    #[test]
    fn ell_is_density() {
        for x in [0.0, 0.5, 1.0, 3.0, 8.0] {
            assert!((ell_mass(x).unwrap() - 1.0).abs() <= 1e-10, "x={x}");
        }
    }

    #[test]
    fn p_at_origin() {
        let expected = (2.0 * PI).sqrt() / 2.0;
        assert!((p_kernel(0.0, 0.0) - expected).abs() < 1e-15);
        assert!((phi_l(0.0) - expected).abs() < 1e-15);
        assert!((phi_l(3.0) - (-4.5f64).exp() / (big_h(3.0) / 3.0)).abs() < 1e-16);
    }

    #[test]
    fn p_far_from_boundary() {
        for h in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!((p_kernel(8.0, 8.0 - h) - phi(h)).abs() <= 1e-6);
        }
    }

    #[test]
    fn int_ell_values() {
        assert_eq!(int_ell(1.3, 0.0).unwrap(), 0.0);
        for u in [0.1, 1.0, 2.5] {
            assert!((int_ell(0.0, u).unwrap() - (1.0 - (-u * u / 2.0f64).exp())).abs() < 1e-15);
        }
        assert!((int_ell(1.0, 40.0).unwrap() - 1.0).abs() <= 1e-12);
        let a = int_ell(0.999e-3, 1.3).unwrap();
        let b = int_ell(1.001e-3, 1.3).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn int_ell_matches_quadrature() {
        for (x, u) in [(0.5, 1.0), (2.0, 3.0), (4.0, 2.0)] {
            let q = quad::integrate_piecewise(|y| ell(x, y), 0.0, u, &[x], 1e-14).unwrap();
            assert!((q.value - int_ell(x, u).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn q_alpha_values() {
        assert_eq!(q_alpha(INV_SQRT_2PI).unwrap(), 0.0);
        assert!(q_alpha(1.0).is_err());
        assert!(superlevel_member(1.0, 0.0, 0.0));
    }

    #[test]
    fn heat_identities() {
        assert!(semigroup_residual(1.0, 1.0, 0.7, 1.3).unwrap() <= 1e-8);
        assert!(convolution_residual(0.3, 0.7, 1.3).unwrap() <= 1e-8);
        assert!(ell_convolution_residual(0.4, 0.2, 1.1).unwrap() <= 1e-8);
        assert!(half_line_product_residual(0.5, 2.0, -0.4, 1.3).unwrap() <= 1e-10);
    }

    #[test]
    fn grid_argmax_at_origin() {
        let axis = linspace_step(-2.0, 2.0, 0.05);
        let g = KernelGrid::build(axis.clone(), axis, p_kernel).unwrap();
        let (x, y, v) = g.argmax();
        assert!(x.abs() < 1e-12 && y.abs() < 1e-12);
        assert!((v - (2.0 * PI).sqrt() / 2.0).abs() < 1e-9);
    }
}
