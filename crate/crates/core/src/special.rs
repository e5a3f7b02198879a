//! Scalar special functions: log-gamma, regularized incomplete beta (the
//! blending weight), Beta density, and the standard normal CDF/quantile.
//!
//! Everything here is self-contained f64 code so the numerical behaviour of
//! the blending weight and the simulators is pinned by this crate alone.

/// Natural log of the gamma function (Lanczos approximation, g = 7).
///
/// Absolute error below 1e-13 over the positive reals, which is far inside
/// every tolerance used downstream.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// log B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b), i.e. the CDF of a
/// Beta(a, b) random variable at `x`.
///
/// Uses the continued fraction with the symmetry transformation so the
/// expansion always converges quickly; absolute error is below 1e-12.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta shapes must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Density of a Beta(a, b) random variable; zero outside (0, 1).
pub fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// d/dx of `beta_pdf`; zero outside (0, 1).
pub fn beta_pdf_deriv(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    beta_pdf(x, a, b) * ((a - 1.0) / x - (b - 1.0) / (1.0 - x))
}

/// Complementary error function, Cody's rational approximations
/// (three regions, double precision).
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let v = if ax <= 4.0 {
        erfc_mid(ax)
    } else {
        erfc_large(ax)
    };
    if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let num = x * (A[3] + z * (A[2] + z * (A[1] + z * (A[0] + z * A[4]))));
    let den = B[3] + z * (B[2] + z * (B[1] + z * (B[0] + z)));
    num / den
}

fn erfc_mid(x: f64) -> f64 {
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    let mut num = C[8] * x;
    let mut den = x;
    for i in 0..7 {
        num = (num + C[i]) * x;
        den = (den + D[i]) * x;
    }
    let ratio = (num + C[7]) / (den + D[7]);
    exp_nx2(x) * ratio
}

fn erfc_large(x: f64) -> f64 {
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    if x >= 26.6 {
        return 0.0;
    }
    let z = 1.0 / (x * x);
    let mut num = P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    let ratio = z * (num + P[4]) / (den + Q[4]);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    exp_nx2(x) * (inv_sqrt_pi - ratio) / x
}

/// exp(-x^2) computed as in Cody's CALERF to limit cancellation.
fn exp_nx2(x: f64) -> f64 {
    let xn = (x * 16.0).round() / 16.0;
    let del = (x - xn) * (x + xn);
    (-xn * xn).exp() * (-del).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile function.
///
/// Rational initial guess (Acklam) polished with two Halley steps against
/// [`norm_cdf`]; accurate to close to machine precision away from the
/// extreme denormal range. Refinement always happens in the lower tail
/// (1 - p is exact for p >= 0.5) where the CDF keeps relative precision.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0,1)");
    if p > 0.5 {
        -norm_quantile_lower(1.0 - p)
    } else {
        norm_quantile_lower(p)
    }
}

fn norm_quantile_lower(p: f64) -> f64 {
    let mut x = acklam(p);
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let d = norm_pdf(x);
        if d <= 0.0 {
            break;
        }
        let u = e / d;
        // Halley: accounts for the curvature phi'(x) = -x phi(x)
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol * want.abs().max(1.0),
            "got {got:e}, want {want:e}"
        );
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert_close(ln_gamma(7.3), 7.1478925230222490, 1e-13);
        assert_close(ln_gamma(0.5), 0.57236494292470009, 1e-13);
        assert_close(ln_gamma(31.0), 74.658236348830164, 1e-13);
        assert_close(ln_gamma(1.0), 0.0, 1e-13);
        assert_close(ln_gamma(2.0), 0.0, 1e-13);
    }

    #[test]
    fn norm_cdf_reference_values() {
        let cases = [
            (-8.0, 6.2209605742717841e-16),
            (-3.0, 1.3498980316300945e-3),
            (-1.0, 0.15865525393145705),
            (-0.5, 0.30853753872598690),
            (0.0, 0.5),
            (0.3, 0.61791142218895264),
            (1.0, 0.84134474606854295),
            (1.96, 0.97500210485177957),
            (4.0, 0.99996832875816688),
            (7.0, 0.99999999999872019),
        ];
        for (x, want) in cases {
            let got = norm_cdf(x);
            assert!(
                (got - want).abs() <= 1e-15 + 1e-14 * want.abs(),
                "ncdf({x}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn norm_quantile_reference_values() {
        let cases = [
            (1e-10, -6.3613409024040562),
            (0.001, -3.0902323061678135),
            (0.025, -1.9599639845400542),
            (0.3, -0.52440051270804078),
            (0.5, 0.0),
            (0.975, 1.9599639845400542),
            (0.999, 3.0902323061678135),
            (1e-12, -7.0344838253011319),
        ];
        for (p, want) in cases {
            let got = norm_quantile(p);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "nq({p}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn norm_round_trip() {
        // Above |x| ~ 5 the round trip is limited by the f64 spacing of the
        // CDF near 1, not by the algorithms, so bound the error by ulp/phi.
        for i in 1..200 {
            let x = -6.0 + 12.0 * i as f64 / 200.0;
            let p = norm_cdf(x);
            let back = norm_quantile(p);
            let representable = 1.2e-16 / norm_pdf(x);
            let tol = 1e-11_f64.max(representable);
            assert!((back - x).abs() < tol, "x={x}, back={back}");
        }
    }

    #[test]
    fn inc_beta_reference_values() {
        let cases = [
            (0.3, 5.0, 5.0, 0.09880866),
            (0.5, 25.0, 5.0, 5.1857903599739075e-5),
            (0.2, 3.5, 4.2, 0.064342082195748379),
            (0.9, 25.0, 5.0, 0.84155591607177420),
            (0.01, 5.0, 25.0, 9.7201710147852891e-6),
            (0.7, 100.0, 5.0, 1.3239918005013097e-11),
        ];
        for (x, a, b, want) in cases {
            let got = reg_inc_beta(x, a, b);
            assert!(
                (got - want).abs() <= 1e-12 + 1e-11 * want.abs(),
                "I_{x}({a},{b}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn inc_beta_endpoints_and_symmetry() {
        assert_eq!(reg_inc_beta(0.0, 5.0, 5.0), 0.0);
        assert_eq!(reg_inc_beta(1.0, 5.0, 5.0), 1.0);
        // symmetric shapes at the midpoint
        assert_close(reg_inc_beta(0.5, 7.0, 7.0), 0.5, 1e-13);
        // I_x(a,b) + I_{1-x}(b,a) = 1
        let x = 0.37;
        assert_close(
            reg_inc_beta(x, 6.0, 4.0) + reg_inc_beta(1.0 - x, 4.0, 6.0),
            1.0,
            1e-13,
        );
    }

    #[test]
    fn beta_pdf_reference_values() {
        assert_close(beta_pdf(0.3, 5.0, 5.0), 1.2252303, 1e-7);
        assert_close(beta_pdf(0.5, 25.0, 5.0), 2.2119842469692230e-3, 1e-12);
        assert_close(beta_pdf(0.8, 25.0, 5.0), 4.4864370533854777, 1e-12);
        assert_eq!(beta_pdf(0.0, 5.0, 5.0), 0.0);
        assert_eq!(beta_pdf(1.0, 5.0, 5.0), 0.0);
    }

    #[test]
    fn beta_pdf_deriv_matches_finite_difference() {
        let (a, b) = (25.0, 5.0);
        for &x in &[0.2, 0.5, 0.77, 0.9] {
            let h = 1e-6;
            let fd = (beta_pdf(x + h, a, b) - beta_pdf(x - h, a, b)) / (2.0 * h);
            let an = beta_pdf_deriv(x, a, b);
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                "x={x}: fd={fd}, analytic={an}"
            );
        }
    }

    #[test]
    fn inc_beta_is_integral_of_pdf() {
        // midpoint rule with many panels as an independent check
        let (a, b) = (25.0, 5.0);
        let x = 0.65;
        let n = 200_000;
        let h = x / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            s += beta_pdf((i as f64 + 0.5) * h, a, b);
        }
        assert_close(s * h, reg_inc_beta(x, a, b), 1e-8);
    }
}
