//! Synthetic regression designs with exact conditional quantile functions,
//! used to benchmark tail extrapolation. Covariates are i.i.d. Unif(0,1);
//! responses are drawn by inverse-CDF sampling from a seeded ChaCha8
//! generator (stream-split: covariates on one stream, responses on
//! another), so the true quantile function is exactly the sampler's
//! inverse.

use crate::error::{Error, Result};
use crate::regression::Dataset;
use crate::special::{norm_cdf, norm_quantile};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which synthetic design to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimDesign {
    /// p = 3; log-normal response whose mean and spread move with
    /// `x1 * x2` only.
    LogNormal,
    /// p = 20; unit-Lomax response with covariate-driven tail index > 3.
    Lomax,
    /// p = 20; GP response with negative covariate-driven shape, so every
    /// conditional distribution is bounded above.
    BoundedGp,
}

impl SimDesign {
    pub fn covariate_dim(&self) -> usize {
        match self {
            SimDesign::LogNormal => 3,
            SimDesign::Lomax | SimDesign::BoundedGp => 20,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimDesign::LogNormal => "lognormal",
            SimDesign::Lomax => "lomax",
            SimDesign::BoundedGp => "bounded-gp",
        }
    }
}

impl std::str::FromStr for SimDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lognormal" | "log-normal" => Ok(SimDesign::LogNormal),
            "lomax" => Ok(SimDesign::Lomax),
            "bounded-gp" | "boundedgp" | "gp" => Ok(SimDesign::BoundedGp),
            other => Err(Error::invalid(format!("unknown design '{other}'"))),
        }
    }
}

/// A fully specified draw: design, sample size, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SimSpec {
    pub design: SimDesign,
    pub n: usize,
    pub seed: u64,
}

/// The data-generating law: exact conditional quantile and distribution
/// functions for scoring fitted models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TruthModel {
    pub design: SimDesign,
}

/// Log-normal design parameters `(mu(x), sigma(x))`; only `x1 x2` act.
pub fn lognormal_params(x: &[f64]) -> (f64, f64) {
    let logistic = 1.0 / (1.0 + (-(1.0 - 5.0 * x[0] * x[1])).exp());
    (5.0 * (1.0 - logistic), logistic)
}

/// The nonlinear index common to the two high-dimensional designs; only
/// the first ten coordinates enter.
pub fn beta0(x: &[f64]) -> f64 {
    assert!(x.len() >= 10);
    x[1] * x[0]
        + x[5] * (1.0 - (std::f64::consts::PI * x[2] * x[3]).cos())
        + 2.0 * x[4].sin() / ((x[6] - x[7]).abs() + 2.0)
        + 0.2 * (x[5] + x[7] * x[8] / 2.0).powi(2)
        - (x[8] * x[8] + x[9] * x[9] + 2.0).sqrt()
}

/// Lomax tail index `alpha_0(x) = 3 + exp(-1 + beta0(x)) > 3`.
pub fn lomax_alpha(x: &[f64]) -> f64 {
    3.0 + (-1.0 + beta0(x)).exp()
}

/// Bounded-GP shape `xi_0(x) = -1/(1 + exp(-beta0(x)))` in `(-1, 0)`.
pub fn bounded_gp_shape(x: &[f64]) -> f64 {
    -1.0 / (1.0 + (-beta0(x)).exp())
}

impl TruthModel {
    /// Exact conditional quantile.
    pub fn quantile(&self, tau: f64, x: &[f64]) -> f64 {
        debug_assert!((0.0..1.0).contains(&tau));
        match self.design {
            SimDesign::LogNormal => {
                let (mu, sigma) = lognormal_params(x);
                if tau == 0.0 {
                    return 0.0;
                }
                (mu + sigma * norm_quantile(tau)).exp()
            }
            SimDesign::Lomax => {
                let alpha = lomax_alpha(x);
                (1.0 - tau).powf(-1.0 / alpha) - 1.0
            }
            SimDesign::BoundedGp => {
                let xi = bounded_gp_shape(x);
                ((1.0 - tau).powf(-xi) - 1.0) / xi
            }
        }
    }

    /// Exact conditional distribution function.
    pub fn cdf(&self, y: f64, x: &[f64]) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self.design {
            SimDesign::LogNormal => {
                let (mu, sigma) = lognormal_params(x);
                norm_cdf((y.ln() - mu) / sigma)
            }
            SimDesign::Lomax => {
                let alpha = lomax_alpha(x);
                1.0 - (1.0 + y).powf(-alpha)
            }
            SimDesign::BoundedGp => {
                let xi = bounded_gp_shape(x);
                let arg = 1.0 + xi * y;
                if arg <= 0.0 {
                    return 1.0;
                }
                1.0 - arg.powf(-1.0 / xi)
            }
        }
    }
}

/// Draw a dataset plus its generating truth. Covariates use RNG stream 0,
/// responses stream 1.
pub fn generate(spec: &SimSpec) -> Result<(Dataset, TruthModel)> {
    if spec.n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let p = spec.design.covariate_dim();
    let truth = TruthModel {
        design: spec.design,
    };

    let mut x_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    x_rng.set_stream(0);
    let covariates = Array2::from_shape_fn((spec.n, p), |_| x_rng.random::<f64>());

    let mut y_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    y_rng.set_stream(1);
    let mut response = Array1::zeros(spec.n);
    for i in 0..spec.n {
        // keep u away from 0 so responses stay strictly positive
        let u = y_rng.random::<f64>().max(1e-15);
        let row = covariates.row(i);
        response[i] = truth.quantile(u, row.as_slice().unwrap());
    }
    let data = Dataset::new(covariates, response)?;
    Ok((data, truth))
}

/// Covariate draws alone (the metric test set): stream 2 of the seed.
pub fn covariate_sample(design: SimDesign, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    Array2::from_shape_fn((n, design.covariate_dim()), |_| rng.random::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lognormal_params_reference_point() {
        // x1*x2 = 0.2 makes the logistic argument zero
        let (mu, sigma) = lognormal_params(&[0.4, 0.5, 0.9]);
        assert!((mu - 2.5).abs() < 1e-12);
        assert!((sigma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lognormal_median_is_exp_mu() {
        let truth = TruthModel {
            design: SimDesign::LogNormal,
        };
        for x in [[0.1, 0.3, 0.5], [0.9, 0.8, 0.0], [0.5, 0.5, 1.0]] {
            let (mu, _) = lognormal_params(&x);
            assert!((truth.quantile(0.5, &x) - mu.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn lognormal_tail_quantile_against_monte_carlo() {
        let truth = TruthModel {
            design: SimDesign::LogNormal,
        };
        let x = [0.6, 0.4, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| truth.quantile(rng.random::<f64>(), &x))
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let emp = draws[(0.9 * n as f64) as usize];
        let q = truth.quantile(0.9, &x);
        assert!((emp - q).abs() / q < 0.005, "emp={emp}, q={q}");
    }

    #[test]
    fn beta0_reference_and_inactive_coordinates() {
        let zeros = [0.0; 20];
        assert!((beta0(&zeros) + std::f64::consts::SQRT_2).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            // coordinates 11..20 never enter
            let mut tail_changed = x.clone();
            for v in tail_changed.iter_mut().skip(10) {
                *v = rng.random::<f64>();
            }
            assert_eq!(beta0(&x), beta0(&tail_changed));
        }
    }

    #[test]
    fn beta0_symmetric_in_abs_difference_term() {
        // |x7 - x8| is the only place x7 enters; swapping the two operands
        // while keeping x8's other appearance fixed leaves beta0 unchanged
        let mut a = [0.3; 20];
        a[6] = 0.9;
        a[7] = 0.1;
        let mut b = a;
        b[6] = 0.1 + (0.9 - 0.1) - (0.9 - 0.1); // = 0.1
        b[6] = a[7] + (a[6] - a[7]); // same |difference|, x7 side
        assert_eq!(beta0(&a), beta0(&b));
        // direct check: replacing x7 so the absolute difference is equal
        let mut c = a;
        c[6] = a[7] - (a[6] - a[7]); // mirrored around x8
        assert!((beta0(&a) - beta0(&c)).abs() < 1e-12);
    }

    #[test]
    fn lomax_quantile_identities() {
        let truth = TruthModel {
            design: SimDesign::Lomax,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            assert_eq!(truth.quantile(0.0, &x), 0.0);
            let alpha = lomax_alpha(&x);
            assert!(alpha > 3.0);
            // tau chosen so the quantile is exactly 1 for any alpha
            let tau = 1.0 - 0.5_f64.powf(alpha);
            assert!((truth.quantile(tau, &x) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn lomax_survival_against_monte_carlo() {
        let truth = TruthModel {
            design: SimDesign::Lomax,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| truth.quantile(rng.random::<f64>(), &x))
            .collect();
        for &y in &[0.5, 2.0, 10.0] {
            let emp = draws.iter().filter(|&&v| v <= y).count() as f64 / n as f64;
            let cdf = truth.cdf(y, &x);
            assert!((emp - cdf).abs() < 0.003, "y={y}: emp={emp}, cdf={cdf}");
        }
    }

    #[test]
    fn bounded_gp_support_and_median() {
        let truth = TruthModel {
            design: SimDesign::BoundedGp,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let xi = bounded_gp_shape(&x);
            assert!(xi > -1.0 && xi < 0.0);
            let endpoint = -1.0 / xi;
            for _ in 0..20 {
                let y = truth.quantile(rng.random::<f64>(), &x);
                assert!(y <= endpoint);
            }
        }
        // closed form at xi = -1/2: ((0.5)^{0.5} - 1)/(-0.5)
        let q = ((0.5_f64).powf(0.5) - 1.0) / (-0.5);
        assert!((q - 0.58578643762690495).abs() < 1e-12);
    }

    #[test]
    fn quantile_cdf_round_trip_all_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for design in [SimDesign::LogNormal, SimDesign::Lomax, SimDesign::BoundedGp] {
            let truth = TruthModel { design };
            let p = design.covariate_dim();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
                let tau = rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6);
                let y = truth.quantile(tau, &x);
                let back = truth.cdf(y, &x);
                assert!(
                    (back - tau).abs() < 1e-10,
                    "{design:?}: tau={tau}, back={back}"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let spec = SimSpec {
            design: SimDesign::LogNormal,
            n: 200,
            seed: 99,
        };
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a.covariates(), b.covariates());
        assert_eq!(a.response(), b.response());
        assert_eq!(a.num_covariates(), 3);
        assert_eq!(a.len(), 200);

        let spec = SimSpec {
            design: SimDesign::Lomax,
            n: 50,
            seed: 99,
        };
        let (c, _) = generate(&spec).unwrap();
        assert_eq!(c.num_covariates(), 20);
    }

    #[test]
    fn inactive_covariates_do_not_move_the_response() {
        // correlation of log-response with active vs inactive columns
        let spec = SimSpec {
            design: SimDesign::LogNormal,
            n: 100_000,
            seed: 5,
        };
        let (data, _) = generate(&spec).unwrap();
        let logy: Vec<f64> = data.response().iter().map(|v| v.ln()).collect();
        let corr = |col: usize| -> f64 {
            let x = data.covariates().column(col);
            let mx = x.sum() / x.len() as f64;
            let my = logy.iter().sum::<f64>() / logy.len() as f64;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (xv, yv) in x.iter().zip(&logy) {
                num += (xv - mx) * (yv - my);
                dx += (xv - mx) * (xv - mx);
                dy += (yv - my) * (yv - my);
            }
            num / (dx * dy).sqrt()
        };
        let noise_bound = 4.0 / (spec.n as f64).sqrt();
        assert!(corr(2).abs() < noise_bound, "x3 is inactive");
        assert!(corr(0).abs() > 10.0 * noise_bound, "x1 is active");
    }
}
