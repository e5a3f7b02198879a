//! Implementations of the CLI subcommands.

use anyhow::{bail, Context};
use ndarray::Array2;
use spqrx::bench::{run as bench_run, summarize, BenchConfig, MetricSizes};
use spqrx::evaluate::{bootstrap, ks_statistic, pit, pp_points, qq_exponential};
use spqrx::interpret::{ale, vi_quantile_profile, vi_xi};
use spqrx::persist;
use spqrx::regression::{
    fit_spqr, fit_spqrx, grid_search, EpochRecord, FittedModel, GridRecord, Mode,
};
use spqrx::simulate::{generate, SimDesign, SimSpec};
use std::path::Path;

use crate::config::RunConfig;
use crate::io::{covariate_rows, dataset_from_table, format_float, read_table, write_csv};

pub fn cmd_simulate(design: &str, n: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let design: SimDesign = design.parse()?;
    let spec = SimSpec { design, n, seed };
    let (data, _) = generate(&spec)?;

    let p = data.num_covariates();
    let mut headers: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    headers.push("y".into());
    let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let mut row: Vec<f64> = data.covariates().row(i).to_vec();
            row.push(data.response()[i]);
            row
        })
        .collect();
    write_csv(out, &header_refs, &rows)?;

    // sidecar truth descriptor so the draw can be scored later
    let sidecar = out.with_extension("truth.json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} rows to {} (truth descriptor: {})",
        data.len(),
        out.display(),
        sidecar.display()
    );
    Ok(())
}

pub fn cmd_fit(
    data_path: &Path,
    config_path: &Path,
    out: &Path,
    log_path: Option<&Path>,
) -> anyhow::Result<()> {
    let config_text = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))?;
    let config = RunConfig::parse(&config_text)?;
    let table = read_table(data_path)?;
    let data = dataset_from_table(&table, &config.preprocessing)?;

    let arch = config.architecture()?;
    let blend = config.blend_spec()?;
    let training = config.training_config();
    let mode = config.mode();

    let fingerprint = persist::config_fingerprint(&config_text);
    let (mut model, cell_records): (FittedModel, Option<Vec<GridRecord>>) =
        match config.grid_spec()? {
            Some(grid) => {
                let (model, records) =
                    grid_search(&data, mode, &arch, blend, &training, &grid)?;
                (model, Some(records))
            }
            None => {
                let model = match mode {
                    Mode::Spqr => fit_spqr(&data, &arch, &training)?,
                    Mode::Spqrx => {
                        let blend = blend.context("[blend] section required")?;
                        fit_spqrx(&data, &arch, blend, &training)?
                    }
                };
                (model, None)
            }
        };
    model.sqrt_transform = config.preprocessing.sqrt_transform;

    persist::save_model(&model, out, &fingerprint)?;
    if let Some(log_path) = log_path {
        match &cell_records {
            Some(records) => write_grid_log(log_path, records)?,
            None => write_epoch_log(log_path, &model.info.log)?,
        }
    }
    println!(
        "fit complete: epochs {}, best validation loss {:.6}, restarts {}; model -> {}",
        model.info.epochs_run,
        model.info.best_val_loss,
        model.info.restarts,
        out.display()
    );
    Ok(())
}

fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> anyhow::Result<()> {
    let rows: Vec<Vec<f64>> = log
        .iter()
        .map(|r| {
            vec![
                r.epoch as f64,
                r.train_loss,
                r.val_loss,
                r.restarts as f64,
            ]
        })
        .collect();
    write_csv(path, &["epoch", "train_loss", "val_loss", "restarts"], &rows)
}

fn write_grid_log(path: &Path, records: &[GridRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k", "n_h", "activation", "p_a", "p_b", "c1", "val_nll", "epochs", "failed",
    ])?;
    for r in records {
        w.write_record([
            r.num_basis.to_string(),
            r.hidden_width.to_string(),
            format!("{:?}", r.activation).to_lowercase(),
            format_float(r.p_a),
            format_float(r.p_b),
            format_float(r.c1),
            format_float(r.val_nll),
            r.epochs.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Original-scale prediction targets.
pub struct PredictTargets {
    pub quantiles: Vec<f64>,
    pub cdf_at: Option<f64>,
    pub density_at: Option<f64>,
}

pub fn cmd_predict(
    model_path: &Path,
    data_path: &Path,
    targets: &PredictTargets,
    out: &Path,
) -> anyhow::Result<()> {
    let model = persist::load_model(model_path)?;
    if model.mode == Mode::Spqr {
        if let Some(&tau) = targets
            .quantiles
            .iter()
            .find(|t| **t > 0.999)
        {
            bail!(
                "tau = {tau} requested from a bulk-only model: its fitted distribution has \
                 compact support, so quantiles beyond 0.999 saturate at the training maximum \
                 and carry no tail information; fit the tail-extended mode for extrapolation"
            );
        }
    }
    let table = read_table(data_path)?;
    let rows = covariate_rows(&table, model.scaling.x_mean.len())?;

    let mut headers: Vec<String> = vec!["row".into()];
    for tau in &targets.quantiles {
        headers.push(format!("q{tau}"));
    }
    if targets.cdf_at.is_some() {
        headers.push("cdf".into());
    }
    if targets.density_at.is_some() {
        headers.push("density".into());
    }
    let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();

    let mut out_rows = Vec::with_capacity(rows.len());
    for (i, x) in rows.iter().enumerate() {
        let cond = model.at(x)?;
        let mut row = vec![i as f64];
        for &tau in &targets.quantiles {
            let q = cond.quantile(tau)?;
            row.push(if model.sqrt_transform { q * q } else { q });
        }
        if let Some(y) = targets.cdf_at {
            let v = if model.sqrt_transform { y.sqrt() } else { y };
            row.push(cond.cdf(v));
        }
        if let Some(y) = targets.density_at {
            if model.sqrt_transform {
                // density of the squared response via the Jacobian
                let w = y.sqrt();
                row.push(cond.density(w) / (2.0 * w));
            } else {
                row.push(cond.density(y));
            }
        }
        out_rows.push(row);
    }
    write_csv(out, &header_refs, &out_rows)?;
    println!("wrote {} prediction rows to {}", out_rows.len(), out.display());
    Ok(())
}

pub fn cmd_ale(
    model_path: &Path,
    data_path: &Path,
    covariate: usize,
    tau: Option<f64>,
    use_xi: bool,
    bins: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let model = persist::load_model(model_path)?;
    let table = read_table(data_path)?;
    let rows = covariate_rows(&table, model.scaling.x_mean.len())?;
    let data = rows_to_matrix(&rows);

    let profile = if use_xi {
        if model.mode != Mode::Spqrx {
            bail!("--xi requires a tail-extended model");
        }
        ale(|x| model.xi(x), &data, covariate, bins)?
    } else {
        let tau = tau.unwrap_or(0.5);
        ale(|x| model.at(x)?.quantile(tau), &data, covariate, bins)?
    };
    let out_rows: Vec<Vec<f64>> = profile
        .edges
        .iter()
        .zip(&profile.accumulated)
        .map(|(e, a)| vec![*e, a - profile.offset])
        .collect();
    write_csv(out, &["edge", "effect"], &out_rows)?;
    println!(
        "wrote ALE profile for covariate {covariate} ({} edges) to {}",
        profile.edges.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_vi(
    model_path: &Path,
    data_path: &Path,
    taus: &[f64],
    use_xi: bool,
    bins: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let model = persist::load_model(model_path)?;
    let table = read_table(data_path)?;
    let rows = covariate_rows(&table, model.scaling.x_mean.len())?;
    let data = rows_to_matrix(&rows);
    let p = data.ncols();

    let mut w = csv::Writer::from_path(out)?;
    let mut headers = vec!["tau".to_string()];
    headers.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&headers)?;

    if use_xi {
        let result = vi_xi(&model, &data, bins)?;
        let mut record = vec!["xi".to_string()];
        record.extend(result.scores[0].iter().map(|v| format_float(*v)));
        w.write_record(&record)?;
    } else {
        let taus = if taus.is_empty() {
            (1..=19).map(|i| i as f64 * 0.05).collect()
        } else {
            taus.to_vec()
        };
        let result = vi_quantile_profile(&model, &data, &taus, bins)?;
        for (t, scores) in result.taus.iter().zip(&result.scores) {
            let mut record = vec![format_float(*t)];
            record.extend(scores.iter().map(|v| format_float(*v)));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    println!("wrote importance table to {}", out.display());
    Ok(())
}

pub fn cmd_diagnose(model_path: &Path, data_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let model = persist::load_model(model_path)?;
    let table = read_table(data_path)?;
    // diagnosis needs observed responses: reuse the training ingestion
    // without transforms beyond the recorded sqrt flag
    let pre = crate::config::Preprocessing {
        sqrt_transform: model.sqrt_transform,
        response_column: None,
        covariate_columns: Vec::new(),
    };
    let data = dataset_from_table(&table, &pre)?;
    if data.num_covariates() != model.scaling.x_mean.len() {
        bail!(
            "model expects {} covariates, test file provides {}",
            model.scaling.x_mean.len(),
            data.num_covariates()
        );
    }

    std::fs::create_dir_all(out_dir)?;
    let result = pit(&model, &data)?;
    let pit_rows: Vec<Vec<f64>> = result
        .values
        .iter()
        .enumerate()
        .map(|(i, u)| vec![i as f64, *u])
        .collect();
    write_csv(&out_dir.join("pit.csv"), &["row", "u"], &pit_rows)?;

    let pp = pp_points(&result.values);
    let pp_rows: Vec<Vec<f64>> = pp
        .theoretical
        .iter()
        .zip(&pp.empirical)
        .map(|(t, e)| vec![*t, *e])
        .collect();
    write_csv(&out_dir.join("pp.csv"), &["theoretical", "empirical"], &pp_rows)?;

    let qq = qq_exponential(&result.values);
    let qq_rows: Vec<Vec<f64>> = qq
        .theoretical
        .iter()
        .zip(&qq.empirical)
        .map(|(t, e)| vec![*t, *e])
        .collect();
    write_csv(&out_dir.join("qq.csv"), &["theoretical", "empirical"], &qq_rows)?;

    let ks = ks_statistic(&result.values);
    let n = result.values.len();
    let threshold = 1.36 / (n as f64).sqrt();
    write_csv(
        &out_dir.join("summary.csv"),
        &["n", "ks", "ks_95_threshold", "degenerate_pit"],
        &[vec![n as f64, ks, threshold, result.degenerate as f64]],
    )?;
    println!(
        "n = {n}, KS = {ks:.5} (95% threshold {threshold:.5}), degenerate transforms = {}",
        result.degenerate
    );
    Ok(())
}

pub fn cmd_bench(
    designs: &str,
    n: usize,
    replicates: usize,
    config_path: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let config_text = std::fs::read_to_string(config_path)?;
    let config = RunConfig::parse(&config_text)?;
    let arch = config.architecture()?;
    let blend = config
        .blend_spec()?
        .context("bench requires a [blend] section")?;
    let training = config.training_config();

    let mut w = csv::Writer::from_path(out)?;
    w.write_record([
        "design",
        "n",
        "replicates",
        "k",
        "n_h",
        "p_a",
        "p_b",
        "c1",
        "iwd_spqr_med",
        "iwd_spqr_q25",
        "iwd_spqr_q75",
        "iwd_spqrx_med",
        "iwd_spqrx_q25",
        "iwd_spqrx_q75",
        "tiwd_spqr_med",
        "tiwd_spqr_q25",
        "tiwd_spqr_q75",
        "tiwd_spqrx_med",
        "tiwd_spqrx_q25",
        "tiwd_spqrx_q75",
    ])?;

    for design_name in designs.split(',') {
        let design: SimDesign = design_name.trim().parse()?;
        let bench_config = BenchConfig {
            design,
            n,
            replicates,
            arch: arch.clone(),
            blend,
            training: training.clone(),
            sizes: MetricSizes::default(),
            seed: config.seed,
        };
        let outcome = bench_run(&bench_config)?;
        let collect = |f: fn(&spqrx::bench::ReplicateMetrics) -> f64| -> Vec<f64> {
            outcome.per_replicate.iter().map(f).collect()
        };
        let (i_s_med, i_s_lo, i_s_hi) = summarize(&collect(|m| m.iwd_spqr));
        let (i_x_med, i_x_lo, i_x_hi) = summarize(&collect(|m| m.iwd_spqrx));
        let (t_s_med, t_s_lo, t_s_hi) = summarize(&collect(|m| m.tiwd_spqr));
        let (t_x_med, t_x_lo, t_x_hi) = summarize(&collect(|m| m.tiwd_spqrx));
        let mut record = vec![
            design.name().to_string(),
            n.to_string(),
            replicates.to_string(),
            arch.num_basis.to_string(),
            arch.hidden.first().copied().unwrap_or(0).to_string(),
            format_float(blend.p_a),
            format_float(blend.p_b),
            format_float(blend.c1),
        ];
        for v in [
            i_s_med, i_s_lo, i_s_hi, i_x_med, i_x_lo, i_x_hi, t_s_med, t_s_lo, t_s_hi, t_x_med,
            t_x_lo, t_x_hi,
        ] {
            record.push(format_float(v));
        }
        w.write_record(&record)?;
        println!(
            "{}: tiwd medians bulk-only {:.3} vs tail-blended {:.3}",
            design.name(),
            t_s_med,
            t_x_med
        );
    }
    w.flush()?;
    println!("wrote benchmark table to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_bootstrap(
    data_path: &Path,
    config_path: &Path,
    n_boot: usize,
    eval_path: Option<&Path>,
    level: f64,
    out: &Path,
) -> anyhow::Result<()> {
    let config_text = std::fs::read_to_string(config_path)?;
    let config = RunConfig::parse(&config_text)?;
    let table = read_table(data_path)?;
    let data = dataset_from_table(&table, &config.preprocessing)?;
    let arch = config.architecture()?;
    let blend = config.blend_spec()?;
    let training = config.training_config();
    let mode = config.mode();

    let result = bootstrap(
        &data,
        |resampled, seed| {
            let mut cfg = training.clone();
            cfg.seed = seed;
            match mode {
                Mode::Spqr => fit_spqr(resampled, &arch, &cfg),
                Mode::Spqrx => fit_spqrx(
                    resampled,
                    &arch,
                    blend.expect("validated spqrx config has a blend"),
                    &cfg,
                ),
            }
        },
        n_boot,
        config.seed,
    );
    println!(
        "bootstrap: {} replicates fitted, {} failed",
        result.models.len(),
        result.failures
    );
    if result.models.is_empty() {
        bail!("all bootstrap replicates failed");
    }

    // evaluation rows: provided test set, else the training covariates
    let eval_rows: Vec<Vec<f64>> = match eval_path {
        Some(p) => {
            let t = read_table(p)?;
            covariate_rows(&t, data.num_covariates())?
        }
        None => (0..data.len().min(200))
            .map(|i| data.covariates().row(i).to_vec())
            .collect(),
    };

    let mut headers = vec!["row"];
    let has_xi = mode == Mode::Spqrx;
    if has_xi {
        headers.extend(["xi_lo", "xi_med", "xi_hi"]);
    }
    headers.extend(["q999_lo", "q999_med", "q999_hi"]);
    let mut rows_out = Vec::with_capacity(eval_rows.len());
    for (i, x) in eval_rows.iter().enumerate() {
        let mut row = vec![i as f64];
        if has_xi {
            let (lo, med, hi) = result.functional_interval(level, |m| m.xi(x))?;
            row.extend([lo, med, hi]);
        }
        let (lo, med, hi) = result.functional_interval(level, |m| {
            let q = m.quantile(x, 0.999)?;
            Ok(if m.sqrt_transform { q * q } else { q })
        })?;
        row.extend([lo, med, hi]);
        rows_out.push(row);
    }
    write_csv(out, &headers, &rows_out)?;
    println!("wrote bootstrap intervals to {}", out.display());
    Ok(())
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let p = rows[0].len();
    let mut data = Array2::zeros((rows.len(), p));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[(i, j)] = *v;
        }
    }
    data
}

/// Parse a comma-separated list of floats.
pub fn parse_float_list(s: &str) -> anyhow::Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{part}'"))
        })
        .collect()
}
