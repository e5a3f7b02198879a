//! Conditional model assembly and training.
//!
//! Two modes share one pipeline. The bulk-only model represents the
//! conditional density of the `[0,1]`-scaled response as a spline mixture
//! with network-driven weights. The tail-extended model blends that bulk
//! with a GP upper tail whose shape `xi(x)` comes from an extra network
//! output; its conditional geometry (blend interval, GP threshold and
//! scale) is recomputed from the current network at every evaluation.
//!
//! Training: min-max response scaling and covariate normalization from the
//! training rows, a seeded validation split, Adam on the (penalized)
//! negative log-likelihood with per-epoch checkpointing, early stopping on
//! the validation loss, and a learning-rate restart scheme that backtracks
//! to the last finite checkpoint when the loss turns non-finite. The
//! tail-extended fit warm-starts from a bulk-only fit, then extends the
//! output layer with a shape row initialized strictly positive.

mod loss;

use crate::dist::{Bgp, BlendGeometry, BlendSpec, BulkDist};
use crate::error::{Error, Result};
use crate::network::{
    Activation, AdamState, BatchOutput, Head, NetworkParams, OutputGrad, XiActivation,
};
use crate::splines::{dot, quantile_from_grid, SplineBasis, SplineMixture, QUANTILE_GRID};
use loss::LossContext;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Covariate matrix and positive response vector.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    response: Array1<f64>,
}

impl Dataset {
    pub fn new(covariates: Array2<f64>, response: Array1<f64>) -> Result<Self> {
        if covariates.nrows() != response.len() {
            return Err(Error::Data(format!(
                "covariate rows ({}) and response length ({}) differ",
                covariates.nrows(),
                response.len()
            )));
        }
        if covariates.nrows() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate value".into()));
        }
        if response.iter().any(|y| !(y.is_finite() && *y > 0.0)) {
            return Err(Error::Data("responses must be positive and finite".into()));
        }
        Ok(Dataset {
            covariates,
            response,
        })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn response(&self) -> &Array1<f64> {
        &self.response
    }

    /// Bootstrap resample of the rows, with replacement.
    pub fn resample(&self, rng: &mut impl Rng) -> Dataset {
        let n = self.len();
        let mut cov = Array2::zeros((n, self.num_covariates()));
        let mut resp = Array1::zeros(n);
        for i in 0..n {
            let j = rng.random_range(0..n);
            cov.row_mut(i).assign(&self.covariates.row(j));
            resp[i] = self.response[j];
        }
        Dataset {
            covariates: cov,
            response: resp,
        }
    }
}

/// Normalization statistics derived from training rows: per-column
/// covariate mean/sd and the response min-max.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaling {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

impl Scaling {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.len() as f64;
        let x = data.covariates();
        let mut x_mean = Vec::with_capacity(x.ncols());
        let mut x_sd = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 {
                log::warn!("constant covariate column: centering only");
            }
            x_mean.push(mean);
            x_sd.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let y_min = data.response().iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = data
            .response()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(y_max > y_min) {
            return Err(Error::Data("response is constant; cannot min-max scale".into()));
        }
        Ok(Scaling {
            x_mean,
            x_sd,
            y_min,
            y_max,
        })
    }

    /// Min-max transform using training constants; training responses land
    /// in `[0,1]`, test responses may fall outside.
    pub fn scale_response(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    /// Exact inverse of [`Scaling::scale_response`].
    pub fn unscale_response(&self, s: f64) -> f64 {
        self.y_min + s * (self.y_max - self.y_min)
    }

    pub fn response_span(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Column-wise `(x - mean)/sd` with training statistics; constant
    /// columns are centered and passed through.
    pub fn normalize_covariates(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.x_mean[j]) / self.x_sd[j]);
        }
        out
    }

    pub fn normalize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Whether a model is bulk-only or carries a blended GP tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Spqr,
    Spqrx,
}

/// Network and spline architecture of a fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    /// Number of spline basis functions K.
    pub num_basis: usize,
    /// Spline order (degree + 1).
    pub spline_order: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Activation bounding `xi(x)`; only used by tail-extended fits.
    pub xi_activation: XiActivation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            num_basis: 15,
            spline_order: 3,
            hidden: vec![16, 16],
            activation: Activation::Sigmoid,
            xi_activation: XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 },
        }
    }
}

/// Optimizer and regularization settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Early-stopping patience: epochs without validation improvement.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Coefficient of the invalid-density penalty.
    pub density_penalty: f64,
    /// Fixed grid cells for the penalty integral.
    pub penalty_grid: usize,
    /// L1 coefficient on the shape output row.
    pub l1_xi: f64,
    pub seed: u64,
    /// 0 = full batch.
    pub batch_size: usize,
    /// Learning-rate multiplier applied at each non-finite-loss restart.
    pub restart_decay: f64,
    pub max_restarts: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 25,
            validation_fraction: 0.2,
            density_penalty: 100.0,
            penalty_grid: crate::dist::PENALTY_GRID,
            l1_xi: 1e-4,
            seed: 0,
            batch_size: 0,
            restart_decay: 0.5,
            max_restarts: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0,1)"));
        }
        if self.density_penalty < 0.0 || self.l1_xi < 0.0 {
            return Err(Error::invalid("penalty coefficients must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.penalty_grid < 16 {
            return Err(Error::invalid("penalty grid must have at least 16 cells"));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub restarts: usize,
}

/// Summary of a finished fit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainInfo {
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub epochs_run: usize,
    pub restarts: usize,
    pub seed: u64,
    #[serde(skip)]
    pub log: Vec<EpochRecord>,
}

/// A trained conditional density model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub mode: Mode,
    pub basis: SplineBasis,
    pub network: NetworkParams,
    pub blend: Option<BlendSpec>,
    pub scaling: Scaling,
    /// Recorded preprocessing: responses were square-rooted before fitting
    /// and predictions must be squared back.
    pub sqrt_transform: bool,
    pub info: TrainInfo,
}

/// The conditional law at one covariate vector: network outputs plus the
/// cached CDF grid (and, in tail mode, the blend geometry).
pub struct Conditional<'m> {
    model: &'m FittedModel,
    weights: Vec<f64>,
    xi: Option<f64>,
    cdf_grid: Vec<f64>,
    geom: Option<BlendGeometry>,
}

/// Bulk handle combining a mixture with its cached quantile grid.
struct GriddedBulk<'a> {
    mix: SplineMixture<'a>,
    grid: &'a [f64],
}

impl BulkDist for GriddedBulk<'_> {
    fn cdf(&self, y: f64) -> f64 {
        self.mix.cdf(y)
    }
    fn pdf(&self, y: f64) -> f64 {
        self.mix.pdf(y)
    }
    fn quantile(&self, tau: f64) -> Result<f64> {
        quantile_from_grid(&self.mix, self.grid, tau)
    }
}

impl FittedModel {
    /// Evaluate the network at a raw covariate vector and cache the pieces
    /// needed for repeated conditional evaluations.
    pub fn at(&self, x_raw: &[f64]) -> Result<Conditional<'_>> {
        if x_raw.len() != self.scaling.x_mean.len() {
            return Err(Error::invalid(format!(
                "covariate vector has length {}, expected {}",
                x_raw.len(),
                self.scaling.x_mean.len()
            )));
        }
        let xn = self.scaling.normalize_row(x_raw);
        let (weights, xi) = self.network.forward(&xn)?;
        let mut cond = Conditional {
            model: self,
            weights,
            xi,
            cdf_grid: Vec::new(),
            geom: None,
        };
        cond.build_grid()?;
        Ok(cond)
    }

    /// Conditional quantile on the response scale the model was fit to.
    pub fn quantile(&self, x_raw: &[f64], tau: f64) -> Result<f64> {
        self.at(x_raw)?.quantile(tau)
    }

    /// Conditional CDF at a response-scale point.
    pub fn cdf(&self, x_raw: &[f64], y: f64) -> Result<f64> {
        Ok(self.at(x_raw)?.cdf(y))
    }

    /// Conditional density at a response-scale point.
    pub fn density(&self, x_raw: &[f64], y: f64) -> Result<f64> {
        Ok(self.at(x_raw)?.density(y))
    }

    /// Conditional GP shape; only defined for tail-extended fits.
    pub fn xi(&self, x_raw: &[f64]) -> Result<f64> {
        self.at(x_raw)?
            .xi()
            .ok_or_else(|| Error::invalid("bulk-only model has no shape output"))
    }

    /// Sum of the penalized negative log-likelihood over a dataset, on the
    /// model's own scaling: `-sum log density + lambda * sum penalty +
    /// l1`. Bulk-only models omit the penalty terms.
    pub fn nll(&self, data: &Dataset, lambda: f64, l1: f64, penalty_grid: usize) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..data.len() {
            let x = data.covariates().row(i);
            let cond = self.at(x.as_slice().unwrap())?;
            let y = self.scaling.scale_response(data.response()[i]);
            total -= cond.log_pdf_scaled(y);
            if lambda > 0.0 && self.mode == Mode::Spqrx {
                total += lambda * cond.validity_penalty(penalty_grid);
            }
        }
        Ok(total + self.network.l1_penalty(l1))
    }
}

impl Conditional<'_> {
    fn build_grid(&mut self) -> Result<()> {
        let mix = SplineMixture::new(&self.model.basis, &self.weights);
        let k = self.model.basis.num_basis();
        let mut m = vec![0.0; k];
        let mut i = vec![0.0; k];
        let mut grid = Vec::with_capacity(QUANTILE_GRID);
        for g in 0..QUANTILE_GRID {
            let y = g as f64 / (QUANTILE_GRID - 1) as f64;
            self.model.basis.eval_into(y, &mut m, &mut i)?;
            grid.push(dot(&self.weights, &i));
        }
        self.cdf_grid = grid;
        if self.model.mode == Mode::Spqrx {
            let spec = self
                .model
                .blend
                .ok_or_else(|| Error::invalid("tail model missing blend spec"))?;
            let bulk = GriddedBulk {
                mix,
                grid: &self.cdf_grid,
            };
            let bgp = Bgp::new(&bulk, self.xi.unwrap_or(0.0), spec)?;
            self.geom = Some(*bgp.geometry());
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn xi(&self) -> Option<f64> {
        self.xi
    }

    pub fn geometry(&self) -> Option<&BlendGeometry> {
        self.geom.as_ref()
    }

    fn with_bgp<R>(&self, f: impl FnOnce(&Bgp<'_, GriddedBulk<'_>>) -> R) -> Result<R> {
        let spec = self
            .model
            .blend
            .ok_or_else(|| Error::invalid("tail model missing blend spec"))?;
        let geom = self.geom.as_ref().expect("geometry built at construction");
        let bulk = GriddedBulk {
            mix: SplineMixture::new(&self.model.basis, &self.weights),
            grid: &self.cdf_grid,
        };
        let bgp = Bgp::with_interval(&bulk, self.xi.unwrap_or(0.0), spec, geom.a, geom.b)?;
        Ok(f(&bgp))
    }

    /// CDF of the scaled response. Bulk-only models saturate at 1 for
    /// scaled values above 1.
    pub fn cdf_scaled(&self, y: f64) -> f64 {
        match self.model.mode {
            Mode::Spqr => SplineMixture::new(&self.model.basis, &self.weights).cdf(y),
            Mode::Spqrx => self.with_bgp(|bgp| bgp.cdf(y)).expect("blend available"),
        }
    }

    /// Density of the scaled response.
    pub fn pdf_scaled(&self, y: f64) -> f64 {
        match self.model.mode {
            Mode::Spqr => SplineMixture::new(&self.model.basis, &self.weights).pdf(y),
            Mode::Spqrx => self.with_bgp(|bgp| bgp.pdf(y)).expect("blend available"),
        }
    }

    /// Log-density of the scaled response.
    pub fn log_pdf_scaled(&self, y: f64) -> f64 {
        match self.model.mode {
            Mode::Spqr => SplineMixture::new(&self.model.basis, &self.weights)
                .pdf(y)
                .ln(),
            Mode::Spqrx => self.with_bgp(|bgp| bgp.log_pdf(y)).expect("blend available"),
        }
    }

    /// Quantile of the scaled response.
    pub fn quantile_scaled(&self, tau: f64) -> Result<f64> {
        match self.model.mode {
            Mode::Spqr => {
                let mix = SplineMixture::new(&self.model.basis, &self.weights);
                quantile_from_grid(&mix, &self.cdf_grid, tau)
            }
            Mode::Spqrx => self.with_bgp(|bgp| bgp.quantile(tau))?,
        }
    }

    /// Integral of the negative part of the conditional density on the
    /// fixed penalty grid; zero for bulk-only models.
    pub fn validity_penalty(&self, grid_size: usize) -> f64 {
        match self.model.mode {
            Mode::Spqr => 0.0,
            Mode::Spqrx => self
                .with_bgp(|bgp| bgp.validity_penalty(grid_size))
                .expect("blend available"),
        }
    }

    /// CDF at a response-scale point.
    pub fn cdf(&self, y: f64) -> f64 {
        self.cdf_scaled(self.model.scaling.scale_response(y))
    }

    /// Density at a response-scale point (includes the scaling Jacobian).
    pub fn density(&self, y: f64) -> f64 {
        self.pdf_scaled(self.model.scaling.scale_response(y)) / self.model.scaling.response_span()
    }

    /// Quantile on the response scale.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        Ok(self
            .model
            .scaling
            .unscale_response(self.quantile_scaled(tau)?))
    }
}

/// The training objective and its exact parameter gradient for one batch:
/// `sum_i -ln density(y_i | x_i)` plus `lambda` times the validity penalty
/// (blended mode) plus the L1 term on the shape row. This is the function
/// minimized by [`fit_spqr`] / [`fit_spqrx`]; it is exposed so the
/// gradient can be checked end to end against finite differences.
pub fn penalized_nll_and_gradient(
    basis: &SplineBasis,
    net: &NetworkParams,
    x_norm: &Array2<f64>,
    ys_scaled: &[f64],
    blend: Option<BlendSpec>,
    lambda: f64,
    l1: f64,
    penalty_grid: usize,
) -> Result<(f64, crate::network::Gradients)> {
    if x_norm.nrows() != ys_scaled.len() {
        return Err(Error::invalid("batch shapes differ"));
    }
    let ctx = LossContext::new(basis, ys_scaled, blend, lambda, penalty_grid)?;
    let rows: Vec<usize> = (0..ys_scaled.len()).collect();
    let (mut loss, mut grads) =
        net.gradient(x_norm, |out| batch_loss(&ctx, basis, &rows, out))?;
    loss += net.l1_penalty(l1);
    net.add_l1_subgradient(l1, &mut grads);
    Ok((loss, grads))
}

/// Derive a stream-specific seed (splitmix64 step).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seeded validation split: shuffled indices, first `frac` share held out.
fn split_validation(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    idx.shuffle(&mut rng);
    let n_val = ((n as f64 * frac).ceil() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Fit the bulk-only model.
pub fn fit_spqr(
    train: &Dataset,
    arch: &Architecture,
    config: &TrainingConfig,
) -> Result<FittedModel> {
    config.validate()?;
    let scaling = Scaling::fit(train)?;
    let ys: Vec<f64> = train
        .response()
        .iter()
        .map(|&y| scaling.scale_response(y))
        .collect();
    let basis = SplineBasis::build(arch.num_basis, arch.spline_order, &ys)?;
    let net = NetworkParams::init(
        train.num_covariates(),
        &arch.hidden,
        arch.num_basis,
        arch.activation,
        Head::Softmax,
        derive_seed(config.seed, 1),
    )?;
    let ctx = LossContext::new(&basis, &ys, None, 0.0, config.penalty_grid)?;
    let x_norm = scaling.normalize_covariates(train.covariates());
    let (net, info) = train_loop(net, &basis, &ctx, &x_norm, config)?;
    Ok(FittedModel {
        mode: Mode::Spqr,
        basis,
        network: net,
        blend: None,
        scaling,
        sqrt_transform: false,
        info,
    })
}

/// Fit the tail-extended model: pre-train the bulk, extend the output
/// layer with a shape row (initially `xi = 0.2 > 0`), then train the
/// penalized blended likelihood with the restart scheme.
pub fn fit_spqrx(
    train: &Dataset,
    arch: &Architecture,
    blend: BlendSpec,
    config: &TrainingConfig,
) -> Result<FittedModel> {
    blend.validate()?;
    let pre = fit_spqr(train, arch, config)?;
    let net = pre.network.extend_with_xi(arch.xi_activation, 0.2)?;

    let ys: Vec<f64> = train
        .response()
        .iter()
        .map(|&y| pre.scaling.scale_response(y))
        .collect();
    let ctx = LossContext::new(
        &pre.basis,
        &ys,
        Some(blend),
        config.density_penalty,
        config.penalty_grid,
    )?;
    let x_norm = pre.scaling.normalize_covariates(train.covariates());
    let (net, info) = train_loop(net, &pre.basis, &ctx, &x_norm, config)?;
    Ok(FittedModel {
        mode: Mode::Spqrx,
        basis: pre.basis,
        network: net,
        blend: Some(blend),
        scaling: pre.scaling,
        sqrt_transform: false,
        info,
    })
}

/// Shared training loop: Adam, per-epoch validation checkpointing, early
/// stopping, and the non-finite-loss restart scheme.
fn train_loop(
    mut net: NetworkParams,
    basis: &SplineBasis,
    ctx: &LossContext,
    x_norm: &Array2<f64>,
    config: &TrainingConfig,
) -> Result<(NetworkParams, TrainInfo)> {
    let n = x_norm.nrows();
    let (train_rows, val_rows) = split_validation(n, config.validation_fraction, config.seed);
    let x_train = select_rows(x_norm, &train_rows);
    let x_val = select_rows(x_norm, &val_rows);

    let mut adam = AdamState::new(&net);
    let mut lr = config.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();
    let mut last_finite = net.clone();
    let mut since_best = 0usize;
    let mut restarts = 0usize;
    let mut final_train = f64::NAN;
    let mut log = Vec::new();
    let mut epochs_run = 0usize;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    'epochs: for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        let batches: Vec<Vec<usize>> = if config.batch_size == 0 {
            vec![(0..train_rows.len()).collect()]
        } else {
            let mut order: Vec<usize> = (0..train_rows.len()).collect();
            order.shuffle(&mut shuffle_rng);
            order
                .chunks(config.batch_size)
                .map(|c| c.to_vec())
                .collect()
        };

        let mut epoch_loss = 0.0;
        for batch in &batches {
            let rows: Vec<usize> = batch.iter().map(|&j| train_rows[j]).collect();
            let x_batch = if batch.len() == train_rows.len() {
                x_train.clone()
            } else {
                select_rows_of(&x_train, batch)
            };

            let result = net.gradient(&x_batch, |out| batch_loss(ctx, basis, &rows, out));
            let (mut loss, mut grads) = match result {
                Ok(v) => v,
                Err(_) => (f64::NAN, crate::network::Gradients::zeros_like(&net)),
            };
            loss += net.l1_penalty(config.l1_xi);
            net.add_l1_subgradient(config.l1_xi, &mut grads);

            if !loss.is_finite() || !grads.all_finite() {
                restarts += 1;
                if restarts > config.max_restarts {
                    return Err(Error::Numerical(format!(
                        "loss stayed non-finite after {} learning-rate restarts",
                        config.max_restarts
                    )));
                }
                net = last_finite.clone();
                adam = AdamState::new(&net);
                lr *= config.restart_decay;
                log::debug!("restart {restarts}: learning rate lowered to {lr:e}");
                continue 'epochs;
            }
            last_finite = net.clone();
            adam.step(&mut net, &grads, lr)?;
            epoch_loss = loss;
        }
        final_train = epoch_loss;

        // validation loss: plain NLL at the post-step parameters
        let val_loss = match net.forward_batch(&x_val) {
            Ok((out, _)) => ctx.nll_value(basis, &val_rows, &out),
            Err(_) => f64::NAN,
        };
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_loss,
            restarts,
        });
        if val_loss.is_finite() && val_loss < best_val {
            best_val = val_loss;
            best_net = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    Ok((
        best_net,
        TrainInfo {
            best_val_loss: best_val,
            final_train_loss: final_train,
            epochs_run,
            restarts,
            seed: config.seed,
            log,
        },
    ))
}

/// Batch loss closure body shared by both modes.
fn batch_loss(
    ctx: &LossContext,
    basis: &SplineBasis,
    rows: &[usize],
    out: &BatchOutput,
) -> (f64, OutputGrad) {
    match ctx.spec {
        None => {
            let (parts, d_w) = ctx.bulk_loss(rows, out);
            (
                parts.nll,
                OutputGrad {
                    d_weights: d_w,
                    d_xi: None,
                },
            )
        }
        Some(_) => {
            let (parts, d_w, d_xi) = ctx.blended_loss(basis, rows, out);
            (
                parts.nll + ctx.lambda * parts.penalty,
                OutputGrad {
                    d_weights: d_w,
                    d_xi: Some(d_xi),
                },
            )
        }
    }
}

fn select_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

fn select_rows_of(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    select_rows(x, rows)
}

/// Grid-search cell description and its outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GridRecord {
    pub num_basis: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub p_a: f64,
    pub p_b: f64,
    pub c1: f64,
    pub val_nll: f64,
    pub epochs: usize,
    pub failed: bool,
}

/// Hyper-parameter grid; empty axes fall back to the base configuration.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub num_basis: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub activation: Vec<Activation>,
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub c1: Vec<f64>,
}

/// Fit every grid cell and rank by validation NLL. Returns the winning
/// model and the full score table (one row per cell, in grid order).
pub fn grid_search(
    train: &Dataset,
    mode: Mode,
    base_arch: &Architecture,
    base_blend: Option<BlendSpec>,
    config: &TrainingConfig,
    grid: &GridSpec,
) -> Result<(FittedModel, Vec<GridRecord>)> {
    let ks = non_empty(&grid.num_basis, base_arch.num_basis);
    let widths = non_empty(
        &grid.hidden_width,
        *base_arch.hidden.first().unwrap_or(&16),
    );
    let acts = non_empty(&grid.activation, base_arch.activation);
    let blend0 = base_blend.unwrap_or(BlendSpec {
        p_a: 0.9,
        p_b: 0.99,
        c1: 25.0,
        c2: 5.0,
    });
    let (pas, pbs, c1s) = match mode {
        Mode::Spqr => (vec![blend0.p_a], vec![blend0.p_b], vec![blend0.c1]),
        Mode::Spqrx => (
            non_empty(&grid.p_a, blend0.p_a),
            non_empty(&grid.p_b, blend0.p_b),
            non_empty(&grid.c1, blend0.c1),
        ),
    };

    let mut cells = Vec::new();
    for &k in &ks {
        for &w in &widths {
            for &act in &acts {
                for &pa in &pas {
                    for &pb in &pbs {
                        for &c1 in &c1s {
                            cells.push((k, w, act, pa, pb, c1));
                        }
                    }
                }
            }
        }
    }

    let fits: Vec<(GridRecord, Option<FittedModel>)> = cells
        .par_iter()
        .map(|&(k, w, act, pa, pb, c1)| {
            let mut arch = base_arch.clone();
            arch.num_basis = k;
            arch.hidden = vec![w; base_arch.hidden.len().max(1)];
            arch.activation = act;
            let fit = match mode {
                Mode::Spqr => fit_spqr(train, &arch, config),
                Mode::Spqrx => {
                    match BlendSpec::new(pa, pb, c1, blend0.c2) {
                        Ok(spec) => fit_spqrx(train, &arch, spec, config),
                        Err(e) => Err(e),
                    }
                }
            };
            match fit {
                Ok(model) => {
                    let rec = GridRecord {
                        num_basis: k,
                        hidden_width: w,
                        activation: act,
                        p_a: pa,
                        p_b: pb,
                        c1,
                        val_nll: model.info.best_val_loss,
                        epochs: model.info.epochs_run,
                        failed: false,
                    };
                    (rec, Some(model))
                }
                Err(e) => {
                    log::warn!("grid cell (K={k}, n_h={w}) failed: {e}");
                    let rec = GridRecord {
                        num_basis: k,
                        hidden_width: w,
                        activation: act,
                        p_a: pa,
                        p_b: pb,
                        c1,
                        val_nll: f64::INFINITY,
                        epochs: 0,
                        failed: true,
                    };
                    (rec, None)
                }
            }
        })
        .collect();

    let mut best: Option<(f64, FittedModel)> = None;
    let mut records = Vec::with_capacity(fits.len());
    for (rec, model) in fits {
        if let Some(m) = model {
            let score = rec.val_nll;
            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                best = Some((score, m));
            }
        }
        records.push(rec);
    }
    let (_, model) = best.ok_or_else(|| Error::Numerical("every grid cell failed".into()))?;
    Ok((model, records))
}

fn non_empty<T: Clone>(v: &[T], fallback: T) -> Vec<T> {
    if v.is_empty() {
        vec![fallback]
    } else {
        v.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_problem(seed: u64) -> (Array2<f64>, Vec<f64>, SplineBasis) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let ys: Vec<f64> = (0..n).map(|_| 0.02 + 0.96 * rng.random::<f64>()).collect();
        let basis = SplineBasis::build(5, 3, &ys).unwrap();
        (x, ys, basis)
    }

    fn flatten(net: &NetworkParams) -> Vec<f64> {
        let mut v = Vec::new();
        for w in &net.weights {
            v.extend(w.iter());
        }
        for b in &net.biases {
            v.extend(b.iter());
        }
        v
    }

    fn with_flat(template: &NetworkParams, flat: &[f64]) -> NetworkParams {
        let mut out = template.clone();
        let mut idx = 0;
        for w in &mut out.weights {
            for v in w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        for b in &mut out.biases {
            for v in b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        out
    }

    /// End-to-end gradient of the penalized blended NLL versus central
    /// finite differences, through the softmax head, the implicit blend
    /// geometry, the GP terms, the penalty, and the L1 term.
    #[test]
    fn blended_gradient_matches_finite_differences() {
        let (x, ys, basis) = tiny_problem(7);
        let net = NetworkParams::init(
            2,
            &[3, 3],
            5,
            Activation::Sigmoid,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
            11,
        )
        .unwrap();
        let blend = BlendSpec::new(0.5, 0.9, 5.0, 5.0).unwrap();
        let (lambda, l1, grid) = (100.0, 1e-3, 64);

        let (_, grads) =
            penalized_nll_and_gradient(&basis, &net, &x, &ys, Some(blend), lambda, l1, grid)
                .unwrap();
        let mut flat_grad: Vec<f64> = Vec::new();
        for w in &grads.weights {
            flat_grad.extend(w.iter());
        }
        for b in &grads.biases {
            flat_grad.extend(b.iter());
        }

        let theta = flatten(&net);
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            let (lu, _) = penalized_nll_and_gradient(
                &basis,
                &with_flat(&net, &up),
                &x,
                &ys,
                Some(blend),
                lambda,
                l1,
                grid,
            )
            .unwrap();
            let (ld, _) = penalized_nll_and_gradient(
                &basis,
                &with_flat(&net, &dn),
                &x,
                &ys,
                Some(blend),
                lambda,
                l1,
                grid,
            )
            .unwrap();
            let fd = (lu - ld) / (2.0 * h);
            let rel = (fd - flat_grad[i]).abs() / fd.abs().max(flat_grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-3,
                "param {i}: fd={fd:e}, analytic={:e}, rel={rel:e}",
                flat_grad[i]
            );
        }
        // the tape should do far better than the acceptance threshold
        assert!(worst < 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn bulk_gradient_matches_finite_differences() {
        let (x, ys, basis) = tiny_problem(13);
        let net =
            NetworkParams::init(2, &[3], 5, Activation::Sigmoid, Head::Softmax, 29).unwrap();
        let (_, grads) =
            penalized_nll_and_gradient(&basis, &net, &x, &ys, None, 0.0, 0.0, 64).unwrap();
        let mut flat_grad: Vec<f64> = Vec::new();
        for w in &grads.weights {
            flat_grad.extend(w.iter());
        }
        for b in &grads.biases {
            flat_grad.extend(b.iter());
        }
        let theta = flatten(&net);
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            let (lu, _) = penalized_nll_and_gradient(
                &basis,
                &with_flat(&net, &up),
                &x,
                &ys,
                None,
                0.0,
                0.0,
                64,
            )
            .unwrap();
            let (ld, _) = penalized_nll_and_gradient(
                &basis,
                &with_flat(&net, &dn),
                &x,
                &ys,
                None,
                0.0,
                0.0,
                64,
            )
            .unwrap();
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                (fd - flat_grad[i]).abs() / fd.abs().max(flat_grad[i].abs()).max(1e-6) < 1e-4,
                "param {i}: fd={fd:e}, analytic={:e}",
                flat_grad[i]
            );
        }
    }

    /// The tape-evaluated objective must agree with the prediction-path
    /// density evaluation (the two routes share formulas but not code).
    #[test]
    fn training_loss_matches_prediction_path() {
        let (x, ys, basis) = tiny_problem(17);
        let net = NetworkParams::init(
            2,
            &[4],
            5,
            Activation::Sigmoid,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
            31,
        )
        .unwrap();
        let blend = BlendSpec::new(0.5, 0.9, 5.0, 5.0).unwrap();
        let (loss, _) =
            penalized_nll_and_gradient(&basis, &net, &x, &ys, Some(blend), 100.0, 0.0, 128)
                .unwrap();

        let raw_y: Vec<f64> = ys.iter().map(|&s| 1.0 + 9.0 * s).collect();
        let data = Dataset::new(
            x.clone(),
            Array1::from_vec(raw_y),
        )
        .unwrap();
        let model = FittedModel {
            mode: Mode::Spqrx,
            basis: basis.clone(),
            network: net,
            blend: Some(blend),
            scaling: Scaling {
                x_mean: vec![0.0, 0.0],
                x_sd: vec![1.0, 1.0],
                y_min: 1.0,
                y_max: 10.0,
            },
            sqrt_transform: false,
            info: TrainInfo {
                best_val_loss: f64::NAN,
                final_train_loss: f64::NAN,
                epochs_run: 0,
                restarts: 0,
                seed: 0,
                log: Vec::new(),
            },
        };
        // model.nll works on the model's own response scale: scaled y
        // reproduces ys, and the scaled-density log picks up no Jacobian
        let reference = model.nll(&data, 100.0, 0.0, 128).unwrap();
        assert!(
            (loss - reference).abs() < 1e-5 * reference.abs().max(1.0),
            "tape loss {loss} vs prediction-path {reference}"
        );
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a_train, a_val) = split_validation(100, 0.2, 42);
        let (b_train, b_val) = split_validation(100, 0.2, 42);
        assert_eq!(a_train, b_train);
        assert_eq!(a_val, b_val);
        assert_eq!(a_val.len(), 20);
        let mut all: Vec<usize> = a_train.iter().chain(&a_val).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (c_val_train, _) = split_validation(100, 0.2, 43);
        assert_ne!(a_train, c_val_train);
    }

    #[test]
    fn scaling_round_trip_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((50, 3), |_| rng.random::<f64>() * 10.0 - 5.0);
        let y = Array1::from_shape_fn(50, |_| 0.5 + rng.random::<f64>() * 4.0);
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let s = Scaling::fit(&data).unwrap();

        let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.scale_response(y_min), 0.0);
        assert_eq!(s.scale_response(y_max), 1.0);
        // above-max test values scale beyond 1 without error
        assert!(s.scale_response(y_max + 1.0) > 1.0);
        for &v in y.iter() {
            assert!((s.unscale_response(s.scale_response(v)) - v).abs() < 1e-12);
        }

        let xn = s.normalize_covariates(&x);
        for col in xn.axis_iter(Axis(1)) {
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_passes_through_centered() {
        let mut x = Array2::zeros((10, 2));
        for i in 0..10 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 3.5;
        }
        let y = Array1::from_shape_fn(10, |i| 1.0 + i as f64);
        let data = Dataset::new(x.clone(), y).unwrap();
        let s = Scaling::fit(&data).unwrap();
        let xn = s.normalize_covariates(&x);
        for i in 0..10 {
            assert_eq!(xn[(i, 1)], 0.0);
        }
    }

    #[test]
    fn dataset_validation() {
        let x = Array2::zeros((3, 2));
        assert!(Dataset::new(x.clone(), Array1::from_vec(vec![1.0, 2.0])).is_err());
        assert!(Dataset::new(x.clone(), Array1::from_vec(vec![1.0, 0.0, 2.0])).is_err());
        assert!(Dataset::new(x, Array1::from_vec(vec![1.0, 2.0, 3.0])).is_ok());
    }
}
