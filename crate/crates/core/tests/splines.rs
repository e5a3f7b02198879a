//! Quadrature and oracle checks for the spline bases.

mod common;

use common::{naive_mspline, simpson, TestRng};
use proptest::prelude::*;
use spqrx::splines::SplineBasis;

fn random_basis(k: usize, d: usize, seed: u64) -> SplineBasis {
    let mut rng = TestRng::new(seed);
    let sample: Vec<f64> = (0..500).map(|_| rng.next_f64()).collect();
    SplineBasis::build(k, d, &sample).unwrap()
}

#[test]
fn msplines_integrate_to_one_by_quadrature() {
    for (k, d, seed) in [(10, 3, 5), (15, 3, 7), (25, 3, 9), (8, 2, 11), (6, 4, 13)] {
        let basis = random_basis(k, d, seed);
        for idx in 0..k {
            let integral = simpson(|y| basis.mspline(idx, y).unwrap(), 0.0, 1.0, 4096);
            assert!(
                (integral - 1.0).abs() < 1e-8,
                "K={k} d={d} M_{idx}: integral {integral}"
            );
        }
    }
}

#[test]
fn ispline_matches_quadrature_of_mspline() {
    let basis = random_basis(10, 3, 17);
    for idx in 0..10 {
        for &y in &[0.1, 0.33, 0.5, 0.78, 0.95] {
            let numeric = simpson(|u| basis.mspline(idx, u).unwrap(), 0.0, y, 4096);
            let direct = basis.ispline(idx, y).unwrap();
            assert!(
                (numeric - direct).abs() < 1e-8,
                "I_{idx}({y}): quadrature {numeric} vs {direct}"
            );
        }
    }
}

#[test]
fn convex_mixtures_are_valid_densities() {
    let mut rng = TestRng::new(23);
    for trial in 0..5 {
        let basis = random_basis(12, 3, 29 + trial);
        let mut w: Vec<f64> = (0..12).map(|_| rng.next_f64() + 0.01).collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        let mix = |y: f64| -> f64 {
            (0..12)
                .map(|k| w[k] * basis.mspline(k, y).unwrap())
                .sum::<f64>()
        };
        for g in 0..=200 {
            assert!(mix(g as f64 / 200.0) >= 0.0);
        }
        let integral = simpson(mix, 0.0, 1.0, 4096);
        assert!(
            (integral - 1.0).abs() < 1e-8,
            "trial {trial}: integral {integral}"
        );
    }
}

#[test]
fn finite_difference_of_ispline_matches_mspline() {
    let basis = random_basis(9, 3, 41);
    let h = 1e-6;
    for idx in 0..9 {
        for g in 1..20 {
            let y = g as f64 / 20.0;
            let fd =
                (basis.ispline(idx, y + h).unwrap() - basis.ispline(idx, y - h).unwrap()) / (2.0 * h);
            let m = basis.mspline(idx, y).unwrap();
            if m > 1e-4 {
                assert!(
                    ((fd - m) / m).abs() < 1e-4,
                    "I'_{idx}({y}) = {fd} vs M = {m}"
                );
            } else {
                assert!((fd - m).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn small_bases_match_naive_recursion() {
    for (k, d) in [(3, 1), (4, 2), (5, 3), (5, 4)] {
        let basis = random_basis(k, d, 100 + (k * d) as u64);
        let t = basis.knots();
        for idx in 0..k {
            for g in 0..=100 {
                let y = g as f64 / 100.0;
                let direct = basis.mspline(idx, y).unwrap();
                let oracle = naive_mspline(t, idx, d, y);
                assert!(
                    (direct - oracle).abs() < 1e-10,
                    "K={k} d={d} M_{idx}({y}): {direct} vs oracle {oracle}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Mixture CDFs are monotone and hit 0/1 at the boundary for any
    /// weight vector and sample-derived knots.
    #[test]
    fn mixture_cdf_monotone(seed in 1u64..500, raw in proptest::collection::vec(0.01f64..10.0, 6)) {
        let basis = random_basis(6, 3, seed);
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let cdf = |y: f64| -> f64 {
            (0..6).map(|k| w[k] * basis.ispline(k, y).unwrap()).sum()
        };
        prop_assert!(cdf(0.0).abs() < 1e-12);
        prop_assert!((cdf(1.0) - 1.0).abs() < 1e-10);
        let mut prev = 0.0;
        for g in 0..=80 {
            let v = cdf(g as f64 / 80.0);
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    /// Quantile solves invert the mixture CDF for random weights.
    #[test]
    fn quantile_round_trip(seed in 1u64..500, tau in 0.001f64..0.999) {
        let basis = random_basis(8, 3, seed);
        let mut rng = TestRng::new(seed * 7 + 1);
        let mut w: Vec<f64> = (0..8).map(|_| rng.next_f64() + 0.05).collect();
        let total: f64 = w.iter().sum();
        for v in &mut w { *v /= total; }
        let mix = spqrx::splines::SplineMixture::new(&basis, &w);
        let y = mix.quantile_bisect(tau, 1e-10).unwrap();
        prop_assert!((mix.cdf(y) - tau).abs() < 1e-9);
    }
}
