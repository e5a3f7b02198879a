//! Accuracy metrics and diagnostics: integrated conditional Wasserstein
//! distances between quantile functions, probability integral transforms
//! with PP/QQ point sets, and bootstrap resampling of whole fits.

use crate::error::{Error, Result};
use crate::regression::{derive_seed, Dataset, FittedModel, Mode};
use crate::simulate::TruthModel;
use crate::util::quantile;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A computed metric with the sampling configuration that produced it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub tau_samples: usize,
    pub rows: usize,
}

/// Monte-Carlo estimate of the integrated conditional 1-Wasserstein
/// distance between two quantile functions over the covariate sample:
/// the mean of `|Q(tau|x) - Qhat(tau|x)|` with `tau` stratified-uniform on
/// `(tau_lo, tau_hi)`. Both quantile functions are row-batched: given a
/// covariate row and a tau slice they return the quantiles at every tau.
///
/// The restriction to `(0.999, 1)` gives the tail-calibrated variant.
pub fn iwd<FQ, GQ>(
    true_quantile: FQ,
    model_quantile: GQ,
    test_x: &Array2<f64>,
    tau_samples: usize,
    tau_lo: f64,
    tau_hi: f64,
    seed: u64,
) -> Result<MetricReport>
where
    FQ: Fn(&[f64], &[f64]) -> Vec<f64> + Sync,
    GQ: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    if !(0.0 <= tau_lo && tau_lo < tau_hi && tau_hi <= 1.0) {
        return Err(Error::invalid(format!(
            "tau range ({tau_lo}, {tau_hi}) is not an ordered subinterval of [0,1]"
        )));
    }
    if tau_samples == 0 || test_x.nrows() == 0 {
        return Err(Error::invalid("need at least one tau draw and one row"));
    }
    let n = test_x.nrows();
    let row_means: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
            rng.set_stream(i as u64);
            // stratified draws keep the tau marginal uniform on the range
            let taus: Vec<f64> = (0..tau_samples)
                .map(|j| {
                    tau_lo + (tau_hi - tau_lo) * ((j as f64 + rng.random::<f64>()) / tau_samples as f64)
                })
                .collect();
            let row = test_x.row(i);
            let x = row.as_slice().expect("row-major covariates");
            let q_true = true_quantile(x, &taus);
            let q_model = model_quantile(x, &taus)?;
            debug_assert_eq!(q_true.len(), taus.len());
            debug_assert_eq!(q_model.len(), taus.len());
            let mut acc = 0.0;
            for (j, (qt, qm)) in q_true.iter().zip(&q_model).enumerate() {
                if !qm.is_finite() || !qt.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite quantile at tau = {}, row {i}",
                        taus[j]
                    )));
                }
                acc += (qt - qm).abs();
            }
            Ok(acc / tau_samples as f64)
        })
        .collect();

    let mut total = 0.0;
    for r in row_means {
        total += r?;
    }
    Ok(MetricReport {
        name: if tau_lo >= 0.999 { "tiwd" } else { "iwd" }.to_string(),
        value: total / n as f64,
        tau_lo,
        tau_hi,
        tau_samples,
        rows: n,
    })
}

/// Row-batched quantile closure for a fitted model (response scale).
pub fn model_quantile_fn(model: &FittedModel) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + '_ {
    move |x, taus| {
        let cond = model.at(x)?;
        taus.iter().map(|&t| cond.quantile(t)).collect()
    }
}

/// Row-batched quantile closure for a simulation truth.
pub fn truth_quantile_fn(truth: &TruthModel) -> impl Fn(&[f64], &[f64]) -> Vec<f64> + '_ {
    move |x, taus| taus.iter().map(|&t| truth.quantile(t, x)).collect()
}

/// Probability integral transform of a test set under a fitted model.
#[derive(Debug, Clone)]
pub struct PitResult {
    /// `u_i = F(y_i | x_i)` per test row.
    pub values: Vec<f64>,
    /// Rows where a bulk-only model saturated at 1 because the scaled
    /// response exceeded the training range.
    pub degenerate: usize,
}

/// Evaluate the fitted conditional CDF at every observed test response.
pub fn pit(model: &FittedModel, test: &Dataset) -> Result<PitResult> {
    let n = test.len();
    let values: Vec<Result<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = test.covariates().row(i);
            let x = row.as_slice().expect("row-major covariates");
            let y = test.response()[i];
            let cond = model.at(x)?;
            let u = cond.cdf(y);
            let saturated =
                model.mode == Mode::Spqr && model.scaling.scale_response(y) > 1.0;
            Ok((u, saturated))
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut degenerate = 0;
    for v in values {
        let (u, saturated) = v?;
        if saturated {
            degenerate += 1;
        }
        out.push(u);
    }
    Ok(PitResult {
        values: out,
        degenerate,
    })
}

/// Kolmogorov-Smirnov distance of a sample from the uniform law.
pub fn ks_statistic(pit_values: &[f64]) -> f64 {
    let mut u = pit_values.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len() as f64;
    let mut d = 0.0_f64;
    for (i, &v) in u.iter().enumerate() {
        let hi = (i + 1) as f64 / n - v;
        let lo = v - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Matched empirical/theoretical coordinates for a diagnostic plot.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiagnosticPoints {
    pub theoretical: Vec<f64>,
    pub empirical: Vec<f64>,
    /// Degenerate transforms (u = 1) dropped from the point set.
    pub excluded: usize,
}

/// Pooled PP points on uniform margins: sorted PIT values against
/// `i/(n+1)` plotting positions.
pub fn pp_points(pit_values: &[f64]) -> DiagnosticPoints {
    let mut u: Vec<f64> = pit_values.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len();
    let theoretical = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    DiagnosticPoints {
        theoretical,
        empirical: u,
        excluded: 0,
    }
}

/// Pooled QQ points on exponential margins: order statistics of
/// `-ln(1 - u)` against exponential plotting positions. PIT values at
/// exactly 1 map to infinity and are excluded with a count.
pub fn qq_exponential(pit_values: &[f64]) -> DiagnosticPoints {
    let mut kept: Vec<f64> = pit_values.iter().cloned().filter(|u| *u < 1.0).collect();
    let excluded = pit_values.len() - kept.len();
    kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = kept.len();
    let empirical: Vec<f64> = kept.iter().map(|u| -(1.0 - u).ln()).collect();
    let theoretical: Vec<f64> = (1..=n)
        .map(|i| -(1.0 - i as f64 / (n + 1) as f64).ln())
        .collect();
    DiagnosticPoints {
        theoretical,
        empirical,
        excluded,
    }
}

/// Bootstrap refits over resampled training data.
#[derive(Debug)]
pub struct BootstrapResult {
    pub models: Vec<FittedModel>,
    /// Replicates whose fit failed; recorded, not fatal.
    pub failures: usize,
}

/// Resample the training rows with replacement `n_boot` times and refit
/// with `fit(data, replicate_seed)`. Replicates draw from per-index RNG
/// streams and distinct fit seeds, so the validation split changes with
/// every replicate and results do not depend on scheduling.
pub fn bootstrap<F>(train: &Dataset, fit: F, n_boot: usize, seed: u64) -> BootstrapResult
where
    F: Fn(&Dataset, u64) -> Result<FittedModel> + Sync,
{
    let outcomes: Vec<Option<FittedModel>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
            rng.set_stream(r as u64);
            let resampled = train.resample(&mut rng);
            match fit(&resampled, derive_seed(seed, 1000 + r as u64)) {
                Ok(model) => Some(model),
                Err(e) => {
                    log::warn!("bootstrap replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let mut models = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match o {
            Some(m) => models.push(m),
            None => failures += 1,
        }
    }
    BootstrapResult { models, failures }
}

impl BootstrapResult {
    /// Percentile interval (lo, median, hi) of a functional of the fitted
    /// model across replicates.
    pub fn functional_interval<G>(&self, level: f64, g: G) -> Result<(f64, f64, f64)>
    where
        G: Fn(&FittedModel) -> Result<f64>,
    {
        if self.models.is_empty() {
            return Err(Error::Numerical("no successful bootstrap replicates".into()));
        }
        let values: Vec<f64> = self
            .models
            .iter()
            .map(|m| g(m))
            .collect::<Result<Vec<f64>>>()?;
        Ok(percentile_interval(&values, level))
    }
}

/// Percentile interval (lo, median, hi) at confidence `level`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64, f64) {
    let alpha = (1.0 - level) / 2.0;
    (
        quantile(values, alpha),
        quantile(values, 0.5),
        quantile(values, 1.0 - alpha),
    )
}
