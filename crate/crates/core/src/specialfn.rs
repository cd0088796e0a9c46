//! Exponentially scaled modified Bessel functions of real order.
//!
//! The wedge heat kernel needs `e^{-z} I_nu(z)` for orders `nu = n*pi/kappa0`
//! and arguments `z = r r' / (2t)` that range from zero to very large values
//! when `t` is small. Everything here works in scaled form so nothing
//! overflows.
//!
//! Three regimes are used:
//!
//! * ascending power series for `z <= max(30, nu^2/20)`,
//! * the Hankel large-argument expansion beyond that,
//! * the Debye uniform expansion for large orders (`nu >= 200`).

use crate::error::{Error, Result};

/// Order above which the Debye uniform expansion is used.
const DEBYE_MIN_ORDER: f64 = 200.0;
/// Lower bound on the series/Hankel switch point.
const SERIES_MIN_SWITCH: f64 = 30.0;

/// Non-negative, finite order of a modified Bessel function.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu < 0.0 {
            return Err(Error::domain(format!("Bessel order must be finite and >= 0, got {nu}")));
        }
        Ok(Self(nu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `e^{-z} I_nu(z)` for a validated order and `z >= 0`.
pub fn bessel_i_scaled(nu: BesselOrder, z: f64) -> Result<f64> {
    if !z.is_finite() || z < 0.0 {
        return Err(Error::domain(format!("Bessel argument must be finite and >= 0, got {z}")));
    }
    Ok(scaled_i(nu.0, z))
}

/// Unchecked hot-path variant of [`bessel_i_scaled`].
///
/// Callers guarantee `nu >= 0` and `z >= 0`.
#[inline]
pub fn scaled_i(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if nu >= DEBYE_MIN_ORDER {
        return debye(nu, z);
    }
    if z <= series_switch(nu) {
        series(nu, z)
    } else {
        hankel(nu, z)
    }
}

/// Argument at which evaluation moves from the power series to the
/// Hankel expansion.
pub fn series_switch(nu: f64) -> f64 {
    SERIES_MIN_SWITCH.max(nu * nu / 20.0)
}

/// Ascending series `sum (z/2)^{2m+nu} / (m! Gamma(m+nu+1))`, scaled by `e^{-z}`.
///
/// All terms are positive, so there is no cancellation. The running sum is
/// renormalized to keep it inside the `f64` range.
pub(crate) fn series(nu: f64, z: f64) -> f64 {
    const RESCALE: f64 = 1e280;
    let log_first = nu * (0.5 * z).ln() - ln_gamma_unchecked(nu + 1.0) - z;
    let q = 0.25 * z * z;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut log_scale = 0.0_f64;
    let mut m = 0.0_f64;
    loop {
        m += 1.0;
        term *= q / (m * (m + nu));
        sum += term;
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            log_scale += RESCALE.ln();
        }
        // Past the peak the ratio is below one and the remaining tail is
        // bounded by a geometric series.
        let ratio = q / ((m + 1.0) * (m + 1.0 + nu));
        if ratio < 1.0 && term * ratio / (1.0 - ratio) <= f64::EPSILON * 0.25 * sum {
            break;
        }
    }
    (log_first + log_scale + sum.ln()).exp()
}

/// Hankel expansion `(2 pi z)^{-1/2} sum (-1)^k a_k(nu) / z^k`, truncated at
/// the smallest term.
pub(crate) fn hankel(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut prev_abs = f64::INFINITY;
    for k in 1..=1000 {
        let odd = (2 * k - 1) as f64;
        term *= -(mu - odd * odd) / (8.0 * k as f64 * z);
        let a = term.abs();
        if a > prev_abs && a < 1e-3 {
            // asymptotic series started to diverge; drop this term
            break;
        }
        sum += term;
        if a <= f64::EPSILON * 0.1 * sum.abs() {
            break;
        }
        prev_abs = a;
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

/// Debye uniform asymptotic expansion for large order.
pub(crate) fn debye(nu: f64, z: f64) -> f64 {
    let w = z / nu;
    let sq = (1.0 + w * w).sqrt();
    let p = 1.0 / sq;
    // nu*eta - z with eta = sq + ln(w / (1 + sq)); sq - w = 1/(sq + w)
    let exponent = nu * (1.0 / (sq + w) + (w / (1.0 + sq)).ln());
    let p2 = p * p;
    let u1 = p * (3.0 - 5.0 * p2) / 24.0;
    let u2 = p2 * (81.0 - 462.0 * p2 + 385.0 * p2 * p2) / 1152.0;
    let u3 = p * p2
        * (30375.0 - 369603.0 * p2 + 765765.0 * p2 * p2 - 425425.0 * p2 * p2 * p2)
        / 414720.0;
    let p4 = p2 * p2;
    let u4 = p4
        * (4465125.0 - 94121676.0 * p2 + 349922430.0 * p4 - 446185740.0 * p4 * p2
            + 185910725.0 * p4 * p4)
        / 39813120.0;
    let inv = 1.0 / nu;
    let corr = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
    exponent.exp() / ((2.0 * std::f64::consts::PI * nu).sqrt() * sq.sqrt()) * corr
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires finite x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x >= 10.0 {
        return stirling(x);
    }
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let s = (std::f64::consts::PI * x).sin();
        return (std::f64::consts::PI / s).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let xm = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (xm + i as f64);
    }
    let t = xm + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (xm + 0.5) * t.ln() - t + a.ln()
}

fn stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0)))));
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent oracle: plain power series for I_0 without scaling tricks.
    fn i0_series_oracle(z: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..200 {
            let mf = m as f64;
            term *= (z / 2.0) * (z / 2.0) / (mf * mf);
            sum += term;
        }
        sum
    }

    #[test]
    fn order_zero_at_one() {
        let expected = (-1.0f64).exp() * i0_series_oracle(1.0);
        assert_abs_diff_eq!(expected, 0.465_759_607_593_640_4, epsilon = 1e-12);
        let got = bessel_i_scaled(BesselOrder::new(0.0).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn half_order_closed_form() {
        let half = |z: f64| (2.0 / (std::f64::consts::PI * z)).sqrt() * 0.5 * (1.0 - (-2.0 * z).exp());
        assert_abs_diff_eq!(half(1.0), 0.344_951_313_888_244_7, epsilon = 1e-12);
        for &z in &[0.01, 0.5, 1.0, 7.0, 29.0, 31.0, 80.0, 500.0, 1e4, 1e6] {
            let got = scaled_i(0.5, z);
            assert_abs_diff_eq!(got, half(z), epsilon = 1e-13);
        }
    }

    #[test]
    fn positive_order_vanishes_at_zero() {
        assert_eq!(scaled_i(2.0, 0.0), 0.0);
        assert_eq!(scaled_i(0.0, 0.0), 1.0);
    }

    #[test]
    fn rejects_negative_inputs() {
        assert!(BesselOrder::new(-0.1).is_err());
        assert!(bessel_i_scaled(BesselOrder::new(1.0).unwrap(), -1.0).is_err());
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-2.0).is_err());
    }

    #[test]
    fn log_gamma_values() {
        assert_abs_diff_eq!(log_gamma(1.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(log_gamma(0.5).unwrap(), 0.572_364_942_924_700_1, epsilon = 1e-13);
        assert_abs_diff_eq!(log_gamma(6.0).unwrap(), 120f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(log_gamma(2.0).unwrap(), 0.0, epsilon = 1e-14);
        // both sides of the Stirling switch
        let fact9: f64 = (1..=9).map(|k| k as f64).product();
        assert_abs_diff_eq!(log_gamma(10.0).unwrap(), fact9.ln(), epsilon = 1e-13);
        let fact10: f64 = (1..=10).map(|k| k as f64).product();
        assert_abs_diff_eq!(log_gamma(11.0).unwrap(), fact10.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(
            ln_gamma_unchecked(9.999_999_999),
            stirling(9.999_999_999),
            epsilon = 1e-13
        );
    }

    #[test]
    fn continuity_across_series_hankel_switch() {
        for &nu in &[0.0, 0.4, 1.0, 2.0 / 3.0, 5.5, 24.0, 40.0, 90.0, 150.0, 199.0] {
            let zs = series_switch(nu);
            let a = series(nu, zs);
            let b = hankel(nu, zs);
            assert!((a - b).abs() <= 1e-11, "nu={nu} z={zs}: series {a} hankel {b}");
        }
    }

    #[test]
    fn debye_agrees_with_series_at_large_order() {
        for &nu in &[200.0, 250.0, 400.0] {
            for &z in &[1.0, 50.0, 400.0, 2000.0] {
                let a = series(nu, z);
                let b = debye(nu, z);
                assert!(
                    (a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-300,
                    "nu={nu} z={z}: series {a} debye {b}"
                );
            }
        }
    }

    #[test]
    fn recurrence_in_scaled_form() {
        // I_{nu-1} - I_{nu+1} = (2 nu / z) I_nu, all scaled by the same e^{-z}
        for &nu in &[1.0, 1.7, 3.0, 10.5, 25.0, 50.0] {
            for &z in &[0.1, 1.0, 7.5, 29.0, 35.0, 100.0] {
                let lhs = scaled_i(nu - 1.0, z) - scaled_i(nu + 1.0, z);
                let rhs = 2.0 * nu / z * scaled_i(nu, z);
                if rhs > 1e-250 {
                    assert!(
                        ((lhs - rhs) / rhs).abs() <= 1e-10,
                        "nu={nu} z={z}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn tail_bound_for_large_order() {
        // e^{-z} I_nu(z) <= exp(nu - nu ln(2 nu / z)) whenever nu >= z
        for &z in &[0.1, 1.0, 5.0, 20.0, 60.0] {
            for k in 0..40 {
                let nu = z + k as f64 * 0.75 * (1.0 + z / 10.0);
                if nu <= 0.0 {
                    continue;
                }
                let bound = (nu - nu * (2.0 * nu / z).ln()).exp();
                assert!(scaled_i(nu, z) <= bound * (1.0 + 1e-12), "nu={nu} z={z}");
            }
        }
    }

    #[test]
    fn result_in_unit_interval() {
        for &nu in &[0.0, 0.3, 2.0, 77.0, 210.0] {
            for &z in &[1e-8, 0.2, 3.0, 44.0, 1e3, 1e5, 1e6] {
                let v = scaled_i(nu, z);
                assert!((0.0..=1.0).contains(&v), "nu={nu} z={z} v={v}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn monotone_decreasing_in_order(
            nu1 in 0.0f64..200.0,
            dnu in 0.0f64..20.0,
            z in 0.0f64..3000.0,
        ) {
            let nu2 = nu1 + dnu;
            let a = scaled_i(nu1, z);
            let b = scaled_i(nu2, z);
            proptest::prop_assert!(a >= b * (1.0 - 1e-11) - 1e-300, "nu1={} nu2={} z={} {} {}", nu1, nu2, z, a, b);
        }
    }
}
