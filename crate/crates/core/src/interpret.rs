//! Accumulated local effects (ALE) and variable-importance scores.
//!
//! The ALE of covariate `j` on a function `g` accumulates, across bins of
//! the empirical distribution of `x_j`, the mean local change of `g` when
//! `x_j` moves across each bin while every other covariate stays at its
//! observed value. The variable-importance score is the standard
//! deviation of the (linearly interpolated) ALE over the observed sample
//! of `x_j`: flat effect curves score zero, steep ones score high.
//!
//! For quantile models `g` is a conditional quantile at fixed level; for
//! tail models `g` can also be the GP shape `xi(x)` itself, which scores
//! covariate influence on the tail separately from the bulk.

use crate::error::{Error, Result};
use crate::regression::{FittedModel, Mode};
use crate::util::quantile_sorted;
use ndarray::Array2;
use rayon::prelude::*;

/// An accumulated-local-effects curve for one covariate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AleProfile {
    /// Covariate index the profile describes.
    pub covariate: usize,
    /// Strictly increasing bin edges in covariate units.
    pub edges: Vec<f64>,
    /// Accumulated effect at each edge, starting at 0 (uncentered).
    pub accumulated: Vec<f64>,
    /// Sample mean of the interpolated accumulated effect; subtracting it
    /// centers the curve over the empirical distribution of the covariate.
    pub offset: f64,
}

impl AleProfile {
    /// Centered effect at a covariate value (linear interpolation between
    /// edges, clamped outside the observed range).
    pub fn value_at(&self, x: f64) -> f64 {
        interp(&self.edges, &self.accumulated, x) - self.offset
    }
}

fn interp(edges: &[f64], values: &[f64], x: f64) -> f64 {
    let n = edges.len();
    if x <= edges[0] {
        return values[0];
    }
    if x >= edges[n - 1] {
        return values[n - 1];
    }
    let idx = edges.partition_point(|e| *e <= x);
    let (lo, hi) = (idx - 1, idx);
    let t = (x - edges[lo]) / (edges[hi] - edges[lo]);
    values[lo] + t * (values[hi] - values[lo])
}

/// Binned ALE estimator with quantile bin edges. Bins left empty by ties
/// are merged into their neighbor. `g` receives full covariate rows.
pub fn ale<G>(g: G, data: &Array2<f64>, j: usize, bins: usize) -> Result<AleProfile>
where
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    if bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    if j >= data.ncols() {
        return Err(Error::invalid(format!("covariate index {j} out of range")));
    }
    let n = data.nrows();
    let mut col: Vec<f64> = data.column(j).to_vec();
    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if col[0] == col[n - 1] {
        return Err(Error::invalid(format!(
            "covariate {j} is constant; its local effects are undefined"
        )));
    }

    // quantile edges, deduplicated (ties collapse edges together)
    let mut edges: Vec<f64> = (0..=bins)
        .map(|b| quantile_sorted(&col, b as f64 / bins as f64))
        .collect();
    edges.dedup();

    // bin assignment: bin b covers (edges[b], edges[b+1]], first bin
    // closed on the left; merge any empty bin into its populated neighbor
    let mut assignments;
    loop {
        assignments = vec![Vec::new(); edges.len() - 1];
        for i in 0..n {
            let x = data[(i, j)];
            let mut b = edges.partition_point(|e| *e < x);
            b = b.saturating_sub(1).min(edges.len() - 2);
            // left-closed first bin, otherwise (lo, hi]
            if b > 0 && x <= edges[b] {
                b -= 1;
            }
            assignments[b].push(i);
        }
        if let Some(empty) = assignments.iter().position(|a| a.is_empty()) {
            if edges.len() <= 2 {
                return Err(Error::invalid("no populated bins"));
            }
            // drop the interior edge nearer to the populated side
            let drop_idx = if empty == 0 { 1 } else { empty };
            edges.remove(drop_idx);
            continue;
        }
        break;
    }

    // mean local effect per bin, rows evaluated at the bin's two edges
    let effects: Vec<Result<f64>> = (0..edges.len() - 1)
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let mut acc = 0.0;
            let mut row = vec![0.0; data.ncols()];
            for &i in &assignments[b] {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = data[(i, c)];
                }
                row[j] = hi;
                let up = g(&row)?;
                row[j] = lo;
                let dn = g(&row)?;
                acc += up - dn;
            }
            Ok(acc / assignments[b].len() as f64)
        })
        .collect();

    let mut accumulated = Vec::with_capacity(edges.len());
    accumulated.push(0.0);
    for e in effects {
        let delta = e?;
        accumulated.push(accumulated.last().unwrap() + delta);
    }

    // center over the empirical distribution of x_j
    let mut offset = 0.0;
    for i in 0..n {
        offset += interp(&edges, &accumulated, data[(i, j)]);
    }
    offset /= n as f64;

    Ok(AleProfile {
        covariate: j,
        edges,
        accumulated,
        offset,
    })
}

/// Standard deviation of the interpolated ALE over an observed sample of
/// the covariate; invariant to the centering offset.
pub fn vi_score(profile: &AleProfile, column: &[f64]) -> f64 {
    let n = column.len() as f64;
    let vals: Vec<f64> = column.iter().map(|&x| profile.value_at(x)).collect();
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Variable-importance scores per covariate, optionally per quantile level.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ViResult {
    /// Quantile levels the scores refer to; empty for shape importance.
    pub taus: Vec<f64>,
    /// `scores[t][j]` = importance of covariate `j` at `taus[t]` (a single
    /// row when `taus` is empty).
    pub scores: Vec<Vec<f64>>,
}

/// Importance of every covariate for the conditional `tau`-quantiles.
pub fn vi_quantile_profile(
    model: &FittedModel,
    data: &Array2<f64>,
    taus: &[f64],
    bins: usize,
) -> Result<ViResult> {
    if taus.is_empty() {
        return Err(Error::invalid("need at least one quantile level"));
    }
    let mut scores = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(0.0 < tau && tau < 1.0) {
            return Err(Error::invalid(format!("tau = {tau} outside (0,1)")));
        }
        let g = |x: &[f64]| model.at(x)?.quantile(tau);
        let mut row = Vec::with_capacity(data.ncols());
        for j in 0..data.ncols() {
            let profile = ale(g, data, j, bins)?;
            row.push(vi_score(&profile, &data.column(j).to_vec()));
        }
        scores.push(row);
    }
    Ok(ViResult {
        taus: taus.to_vec(),
        scores,
    })
}

/// Importance of every covariate for the GP shape `xi(x)`; tail models
/// only.
pub fn vi_xi(model: &FittedModel, data: &Array2<f64>, bins: usize) -> Result<ViResult> {
    if model.mode != Mode::Spqrx {
        return Err(Error::invalid(
            "shape importance requires a tail-extended model",
        ));
    }
    let g = |x: &[f64]| model.xi(x);
    let mut row = Vec::with_capacity(data.ncols());
    for j in 0..data.ncols() {
        let profile = ale(g, data, j, bins)?;
        row.push(vi_score(&profile, &data.column(j).to_vec()));
    }
    Ok(ViResult {
        taus: Vec::new(),
        scores: vec![row],
    })
}
