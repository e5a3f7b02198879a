//! Replicated simulation benchmarks: draw a design, fit the bulk-only and
//! tail-blended models, and score both with the integrated Wasserstein
//! metrics against the exact truth. Mirrors the summary shape of the
//! simulation-study tables: per-configuration medians with 50% intervals
//! across replicates.

use crate::dist::BlendSpec;
use crate::error::Result;
use crate::evaluate::{iwd, model_quantile_fn, percentile_interval, truth_quantile_fn};
use crate::regression::{
    derive_seed, fit_spqr, fit_spqrx, Architecture, FittedModel, TrainingConfig,
};
use crate::simulate::{covariate_sample, generate, SimDesign, SimSpec};
use rayon::prelude::*;

/// Monte-Carlo sizes for the metric integrals.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MetricSizes {
    /// Covariate vectors in the test set.
    pub test_points: usize,
    /// Tau draws per covariate for the full-range metric.
    pub iwd_taus: usize,
    /// Stratified tau draws in (0.999, 1) for the tail metric.
    pub tiwd_taus: usize,
}

impl Default for MetricSizes {
    fn default() -> Self {
        MetricSizes {
            test_points: 5000,
            iwd_taus: 2048,
            tiwd_taus: 64,
        }
    }
}

/// One benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub design: SimDesign,
    pub n: usize,
    pub replicates: usize,
    pub arch: Architecture,
    pub blend: BlendSpec,
    pub training: TrainingConfig,
    pub sizes: MetricSizes,
    pub seed: u64,
}

/// Metrics for one replicate.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ReplicateMetrics {
    pub replicate: usize,
    pub iwd_spqr: f64,
    pub iwd_spqrx: f64,
    pub tiwd_spqr: f64,
    pub tiwd_spqrx: f64,
}

/// One replicate's fits and scores.
pub struct ReplicateOutcome {
    pub metrics: ReplicateMetrics,
    pub spqr: FittedModel,
    pub spqrx: FittedModel,
}

/// Full benchmark result.
pub struct BenchOutcome {
    pub config_label: String,
    pub per_replicate: Vec<ReplicateMetrics>,
    /// Models from the first replicate, kept for downstream inspection
    /// (variable importance, diagnostics).
    pub first_replicate: Option<ReplicateOutcome>,
}

/// Median and 50% interval (quartiles) of a metric across replicates.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let (lo, med, hi) = percentile_interval(values, 0.5);
    (med, lo, hi)
}

/// Run one replicate: fresh data, fresh test covariates, both fits, four
/// metrics. Deterministic in `(config.seed, replicate)`.
pub fn run_replicate(config: &BenchConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let data_seed = derive_seed(config.seed, 10 + replicate as u64);
    let (train, truth) = generate(&SimSpec {
        design: config.design,
        n: config.n,
        seed: data_seed,
    })?;
    let test_x = covariate_sample(config.design, config.sizes.test_points, data_seed);

    let mut training = config.training.clone();
    training.seed = derive_seed(config.seed, 20 + replicate as u64);
    let spqr = fit_spqr(&train, &config.arch, &training)?;
    let spqrx = fit_spqrx(&train, &config.arch, config.blend, &training)?;

    let metric_seed = derive_seed(config.seed, 30 + replicate as u64);
    let truth_q = truth_quantile_fn(&truth);
    let iwd_spqr = iwd(
        &truth_q,
        model_quantile_fn(&spqr),
        &test_x,
        config.sizes.iwd_taus,
        0.0,
        1.0,
        metric_seed,
    )?
    .value;
    let iwd_spqrx = iwd(
        &truth_q,
        model_quantile_fn(&spqrx),
        &test_x,
        config.sizes.iwd_taus,
        0.0,
        1.0,
        metric_seed,
    )?
    .value;
    let tiwd_spqr = iwd(
        &truth_q,
        model_quantile_fn(&spqr),
        &test_x,
        config.sizes.tiwd_taus,
        0.999,
        1.0,
        metric_seed,
    )?
    .value;
    let tiwd_spqrx = iwd(
        &truth_q,
        model_quantile_fn(&spqrx),
        &test_x,
        config.sizes.tiwd_taus,
        0.999,
        1.0,
        metric_seed,
    )?
    .value;

    Ok(ReplicateOutcome {
        metrics: ReplicateMetrics {
            replicate,
            iwd_spqr,
            iwd_spqrx,
            tiwd_spqr,
            tiwd_spqrx,
        },
        spqr,
        spqrx,
    })
}

/// Run all replicates (in parallel) and keep the first one's models.
pub fn run(config: &BenchConfig) -> Result<BenchOutcome> {
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect();
    let mut per_replicate = Vec::with_capacity(config.replicates);
    let mut first = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        per_replicate.push(outcome.metrics);
        if r == 0 {
            first = Some(outcome);
        }
    }
    Ok(BenchOutcome {
        config_label: format!(
            "{}-n{}-K{}-h{}",
            config.design.name(),
            config.n,
            config.arch.num_basis,
            config.arch.hidden.first().copied().unwrap_or(0)
        ),
        per_replicate,
        first_replicate: first,
    })
}
