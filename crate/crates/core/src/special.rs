//! Standard normal functions and Owen's T function.
//!
//! Owen's T follows the hybrid scheme of Patefield and Tandy (J. Stat. Soft.
//! 5(5), 2000): the (h, a) plane is split into 18 regions and each region is
//! served by one of six series or quadrature methods with a fixed order,
//! giving absolute accuracy near machine precision for double arithmetic.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const FRAC_1_2PI: f64 = 1.0 / (2.0 * PI);
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log_norm_cdf` and `norm_pdf_over_cdf` switch to the
/// asymptotic expansion of the lower tail.
const LOWER_TAIL_SWITCH: f64 = -30.0;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(x) - 1/2`, accurate near zero.
#[inline]
fn norm_cdf_centered(x: f64) -> f64 {
    0.5 * libm::erf(x * FRAC_1_SQRT_2)
}

/// Sum of the asymptotic series `1 - 1/x² + 3/x⁴ - ...` with `Φ(x) ≈ φ(x)/|x| · S`.
fn lower_tail_series(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=6 {
        term *= -((2 * k - 1) as f64) * r;
        sum += term;
    }
    sum
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < LOWER_TAIL_SWITCH {
        log_norm_cdf_asymptotic(x)
    } else if x > 0.0 {
        (-norm_sf(x)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

fn log_norm_cdf_asymptotic(x: f64) -> f64 {
    -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + lower_tail_series(x).ln()
}

/// `φ(x)/Φ(x)`, the derivative of `ln Φ(x)`.
pub fn norm_pdf_over_cdf(x: f64) -> f64 {
    if x < LOWER_TAIL_SWITCH {
        -x / lower_tail_series(x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// Owen's T function
///
/// `T(h, a) = 1/(2π) ∫₀^a exp(-h²(1+x²)/2) / (1+x²) dx`.
///
/// Even in `h`, odd in `a`. Non-finite input yields NaN.
pub fn owen_t(h: f64, a: f64) -> f64 {
    if !(h.is_finite() && a.is_finite()) {
        return f64::NAN;
    }
    let h = h.abs();
    let abs_a = a.abs();
    let ah = abs_a * h;

    let value = if abs_a <= 1.0 {
        owen_t_reduced(h, abs_a, ah)
    } else if h <= 0.67 {
        // T(h,a) = 1/4 - (Φ(h)-1/2)(Φ(ah)-1/2) - T(ah, 1/a)
        0.25 - norm_cdf_centered(h) * norm_cdf_centered(ah) - owen_t_reduced(ah, 1.0 / abs_a, h)
    } else {
        let qh = norm_sf(h);
        let qah = norm_sf(ah);
        0.5 * (qh + qah) - qh * qah - owen_t_reduced(ah, 1.0 / abs_a, h)
    };

    if a < 0.0 {
        -value
    } else {
        value
    }
}

/// Owen's T for `h ≥ 0`, `0 ≤ a ≤ 1`; `ah` is the product `a·h`.
fn owen_t_reduced(h: f64, a: f64, ah: f64) -> f64 {
    if h == 0.0 {
        return a.atan() * FRAC_1_2PI;
    }
    if a == 0.0 {
        return 0.0;
    }
    if a == 1.0 {
        return 0.5 * norm_sf(h) * norm_cdf(h);
    }

    match region_method(h, a) {
        Method::T1(order) => owen_t1(h, a, order),
        Method::T2(order) => owen_t2(h, a, ah, order),
        Method::T3 => owen_t3(h, a, ah),
        Method::T4(order) => owen_t4(h, a, order),
        Method::T5 => owen_t5(h, a),
        Method::T6 => owen_t6(h, a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    T1(u32),
    T2(u32),
    T3,
    T4(u32),
    T5,
    T6,
}

fn region_method(h: f64, a: f64) -> Method {
    const H_BREAKS: [f64; 14] = [
        0.02, 0.06, 0.09, 0.125, 0.26, 0.4, 0.6, 1.6, 1.7, 2.33, 2.4, 3.36, 3.4, 4.8,
    ];
    const A_BREAKS: [f64; 7] = [0.025, 0.09, 0.15, 0.36, 0.5, 0.9, 0.99999];
    // Region codes (1-based) indexed by [a band][h band].
    const SELECT: [[u8; 15]; 8] = [
        [1, 1, 2, 13, 13, 13, 13, 13, 13, 13, 13, 16, 16, 16, 9],
        [1, 2, 2, 3, 3, 5, 5, 14, 14, 15, 15, 16, 16, 16, 9],
        [2, 2, 3, 3, 3, 5, 5, 15, 15, 15, 15, 16, 16, 16, 10],
        [2, 2, 3, 5, 5, 5, 5, 7, 7, 16, 16, 16, 16, 16, 10],
        [2, 3, 3, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 11],
        [2, 3, 5, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 12],
        [2, 3, 4, 4, 6, 6, 8, 8, 17, 17, 17, 17, 17, 12, 12],
        [2, 3, 4, 4, 6, 6, 18, 18, 18, 18, 17, 17, 17, 12, 12],
    ];
    const METHOD: [u8; 18] = [1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 4, 4, 4, 4, 5, 6];
    const ORDER: [u32; 18] = [2, 3, 4, 5, 7, 10, 12, 18, 10, 20, 30, 20, 4, 7, 8, 20, 0, 0];

    let ih = H_BREAKS.iter().position(|&b| h <= b).unwrap_or(H_BREAKS.len());
    let ia = A_BREAKS.iter().position(|&b| a <= b).unwrap_or(A_BREAKS.len());
    let code = usize::from(SELECT[ia][ih]) - 1;
    let order = ORDER[code];
    match METHOD[code] {
        1 => Method::T1(order),
        2 => Method::T2(order),
        3 => Method::T3,
        4 => Method::T4(order),
        5 => Method::T5,
        _ => Method::T6,
    }
}

/// Power series in `a` with incomplete-exponential coefficients.
fn owen_t1(h: f64, a: f64, order: u32) -> f64 {
    let hs = -0.5 * h * h;
    let dhs = hs.exp();
    let a2 = a * a;

    let mut aj = a * FRAC_1_2PI;
    let mut dj = hs.exp_m1();
    let mut gj = hs * dhs;
    let mut value = a.atan() * FRAC_1_2PI;
    let mut jj = 1.0;
    let mut j = 1;
    loop {
        value += dj * aj / jj;
        if j >= order {
            return value;
        }
        j += 1;
        jj += 2.0;
        aj *= a2;
        dj = gj - dj;
        gj *= hs / f64::from(j);
    }
}

/// Series in powers of `1/h²`.
fn owen_t2(h: f64, a: f64, ah: f64, order: u32) -> f64 {
    let max_i = 2 * order + 1;
    let hs = h * h;
    let neg_a2 = -a * a;
    let y = 1.0 / hs;

    let mut vi = a * (-0.5 * ah * ah).exp() * FRAC_1_SQRT_2PI;
    let mut z = norm_cdf_centered(ah) / h;
    let mut value = 0.0;
    let mut i = 1;
    loop {
        value += z;
        if i >= max_i {
            return value * (-0.5 * hs).exp() * FRAC_1_SQRT_2PI;
        }
        z = y * (vi - f64::from(i) * z);
        vi *= neg_a2;
        i += 2;
    }
}

/// Chebyshev-economised variant of the T2 series (fixed order 20).
fn owen_t3(h: f64, a: f64, ah: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const C2: [f64; 21] = [
        0.999_999_999_999_999_875_10,
        -0.999_999_999_999_887_964_62,
        0.999_999_999_982_907_436_52,
        -0.999_999_998_962_825_001_34,
        0.999_999_966_604_593_629_18,
        -0.999_999_339_862_724_767_60,
        0.999_991_256_111_369_658_52,
        -0.999_917_776_244_633_876_86,
        0.999_428_355_558_701_325_69,
        -0.996_973_117_207_230_002_95,
        0.987_514_480_372_753_036_82,
        -0.959_158_579_805_728_828_13,
        0.892_463_055_110_067_085_55,
        -0.768_934_259_904_639_996_75,
        0.588_935_284_684_846_932_50,
        -0.383_803_451_604_402_566_52,
        0.203_176_017_010_452_996_53,
        -0.828_136_316_070_049_848_66e-1,
        0.241_679_847_357_595_765_23e-1,
        -0.446_765_666_639_718_252_42e-2,
        0.391_411_694_023_738_364_68e-3,
    ];

    let a2 = a * a;
    let hs = h * h;
    let y = 1.0 / hs;

    let mut ii = 1.0;
    let mut vi = a * (-0.5 * ah * ah).exp() * FRAC_1_SQRT_2PI;
    let mut zi = norm_cdf_centered(ah) / h;
    let mut value = 0.0;
    for (i, c) in C2.iter().enumerate() {
        value += zi * c;
        if i + 1 == C2.len() {
            break;
        }
        zi = y * (ii * zi - vi);
        vi *= a2;
        ii += 2.0;
    }
    value * (-0.5 * hs).exp() * FRAC_1_SQRT_2PI
}

/// Series in `a` with coefficients from the recursion in `h²`.
fn owen_t4(h: f64, a: f64, order: u32) -> f64 {
    let max_i = 2 * order + 1;
    let hs = h * h;
    let neg_a2 = -a * a;

    let mut ai = a * (-0.5 * hs * (1.0 - neg_a2)).exp() * FRAC_1_2PI;
    let mut yi = 1.0;
    let mut value = 0.0;
    let mut i = 1;
    loop {
        value += ai * yi;
        if i >= max_i {
            return value;
        }
        i += 2;
        yi = (1.0 - hs * yi) / f64::from(i);
        ai *= neg_a2;
    }
}

/// Gauss-Legendre rule (26 points, 13 by symmetry) applied to the defining integral.
fn owen_t5(h: f64, a: f64) -> f64 {
    let (nodes_sq, weights) = t5_rule();
    let a2 = a * a;
    let hs = -0.5 * h * h;
    let sum: f64 = nodes_sq
        .iter()
        .zip(weights.iter())
        .map(|(&x2, &w)| {
            let r = 1.0 + a2 * x2;
            w * (hs * r).exp() / r
        })
        .sum();
    sum * a
}

/// Near `a = 1`, where `T(h,1) = Φ(h)(1-Φ(h))/2` is the anchor.
fn owen_t6(h: f64, a: f64) -> f64 {
    let qh = norm_sf(h);
    let y = 1.0 - a;
    let r = y.atan2(1.0 + a);
    let mut value = 0.5 * qh * (1.0 - qh);
    if r != 0.0 {
        value -= r * (-0.5 * y * h * h / r).exp() * FRAC_1_2PI;
    }
    value
}

/// Squared positive nodes of the 26-point Gauss-Legendre rule and their
/// weights scaled by `1/(2π)`.
fn t5_rule() -> &'static ([f64; 13], [f64; 13]) {
    static RULE: OnceLock<([f64; 13], [f64; 13])> = OnceLock::new();
    RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(26);
        let mut x2 = [0.0; 13];
        let mut w = [0.0; 13];
        // Nodes come out in decreasing order; keep the positive half.
        for k in 0..13 {
            x2[k] = nodes[k] * nodes[k];
            w[k] = weights[k] * FRAC_1_2PI;
        }
        (x2, w)
    })
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1], by Newton
/// iteration on the three-term recurrence. Nodes are returned in decreasing order.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((norm_sf(-1.0) - norm_cdf(1.0)).abs() < 1e-16);
    }

    #[test]
    fn log_cdf_is_continuous_across_switch() {
        let x = LOWER_TAIL_SWITCH;
        let direct = norm_cdf(x).ln();
        let asymptotic = log_norm_cdf_asymptotic(x);
        assert!(((direct - asymptotic) / direct).abs() < 1e-13, "{direct} vs {asymptotic}");
        let ratio_direct = norm_pdf(x) / norm_cdf(x);
        let ratio_asymptotic = -x / lower_tail_series(x);
        assert!(((ratio_direct - ratio_asymptotic) / ratio_direct).abs() < 1e-12);
        assert!(log_norm_cdf(-1e5).is_finite());
        assert!(log_norm_cdf(40.0) == 0.0 || log_norm_cdf(40.0).abs() < 1e-300);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(26);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // ∫ x^50 over [-1,1] = 2/51, exact for a 26-point rule.
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(50)).sum();
        assert!((m - 2.0 / 51.0).abs() < 1e-14);
    }

    #[test]
    fn owen_t_identities() {
        assert!((owen_t(0.0, 1.0) - 0.125).abs() < 1e-15);
        for h in [0.0, 0.3, 1.7, 5.0, -2.2] {
            assert_eq!(owen_t(h, 0.0), 0.0);
        }
        for a in [0.2, 0.8, 1.0, 3.0, 25.0, -4.0] {
            assert!((owen_t(0.0, a) - a.atan() / (2.0 * PI)).abs() < 1e-15);
            for h in [0.1, 0.9, 2.5] {
                assert_eq!(owen_t(h, a), owen_t(-h, a));
                assert_eq!(owen_t(h, -a), -owen_t(h, a));
            }
        }
    }

    #[test]
    fn owen_t_at_unit_slope() {
        for h in [0.05, 0.5, 1.5, 3.0, 6.0] {
            let expected = 0.5 * norm_cdf(h) * norm_sf(h);
            assert!((owen_t(h, 1.0) - expected).abs() < 1e-16);
            // a just below 1 exercises T6
            assert!((owen_t(h, 0.999_999_9) - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn owen_t_large_slope_limit() {
        // T(h, ∞) = (1 - Φ(|h|)) / 2
        for h in [0.3, 1.0, 2.0] {
            let limit = 0.5 * norm_sf(h);
            assert!((owen_t(h, 1e8) - limit).abs() < 1e-9);
        }
    }

    #[test]
    fn every_method_is_reachable() {
        let mut seen = std::collections::BTreeSet::new();
        for &h in &[0.01, 0.5, 1.65, 2.0, 3.0, 4.0, 6.0] {
            for &a in &[0.01, 0.1, 0.4, 0.7, 0.95, 0.999_995] {
                let m = region_method(h, a);
                seen.insert(match m {
                    Method::T1(_) => 1,
                    Method::T2(_) => 2,
                    Method::T3 => 3,
                    Method::T4(_) => 4,
                    Method::T5 => 5,
                    Method::T6 => 6,
                });
            }
        }
        assert_eq!(seen.len(), 6, "{seen:?}");
    }
}
