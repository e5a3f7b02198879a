// Development driver: fit both models on the log-normal design and print
// rough tail-error numbers. Not part of the test suite.

use spqrx::dist::BlendSpec;
use spqrx::network::{Activation, XiActivation};
use spqrx::regression::{fit_spqr, fit_spqrx, Architecture, TrainingConfig};
use spqrx::simulate::{covariate_sample, generate, SimDesign, SimSpec};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);

    let spec = SimSpec {
        design: SimDesign::LogNormal,
        n,
        seed,
    };
    let (data, truth) = generate(&spec).unwrap();
    println!(
        "n = {}, y range = [{:.3}, {:.3}]",
        n,
        data.response().iter().cloned().fold(f64::INFINITY, f64::min),
        data.response().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );

    let arch = Architecture {
        num_basis: 25,
        spline_order: 3,
        hidden: vec![32, 32],
        activation: Activation::Sigmoid,
        xi_activation: XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 },
    };
    let config = TrainingConfig {
        seed,
        ..TrainingConfig::default()
    };

    let t0 = Instant::now();
    let spqr = fit_spqr(&data, &arch, &config).unwrap();
    println!(
        "bulk fit: {:?}, epochs {}, best val {:.3}, final train {:.3}",
        t0.elapsed(),
        spqr.info.epochs_run,
        spqr.info.best_val_loss,
        spqr.info.final_train_loss
    );

    let blend = BlendSpec::new(0.9, 0.99, 25.0, 5.0).unwrap();
    let t1 = Instant::now();
    let spqrx = fit_spqrx(&data, &arch, blend, &config).unwrap();
    println!(
        "tail fit: {:?}, epochs {}, best val {:.3}, restarts {}",
        t1.elapsed(),
        spqrx.info.epochs_run,
        spqrx.info.best_val_loss,
        spqrx.info.restarts
    );

    // crude tail comparison on 200 fresh covariates
    let test_x = covariate_sample(SimDesign::LogNormal, 200, seed + 1000);
    let taus = [0.999, 0.9995, 0.9999];
    let mut err_spqr = 0.0;
    let mut err_spqrx = 0.0;
    let mut err_mid_spqr = 0.0;
    let mut err_mid_spqrx = 0.0;
    let mut xi_sum = 0.0;
    for row in test_x.rows() {
        let x = row.as_slice().unwrap();
        for &tau in &taus {
            let q_true = truth.quantile(tau, x);
            err_spqr += (spqr.quantile(x, tau).unwrap() - q_true).abs();
            err_spqrx += (spqrx.quantile(x, tau).unwrap() - q_true).abs();
        }
        for tau in [0.25, 0.5, 0.9] {
            let q_true = truth.quantile(tau, x);
            err_mid_spqr += (spqr.quantile(x, tau).unwrap() - q_true).abs();
            err_mid_spqrx += (spqrx.quantile(x, tau).unwrap() - q_true).abs();
        }
        xi_sum += spqrx.xi(x).unwrap();
    }
    let m = (test_x.nrows() * taus.len()) as f64;
    println!(
        "tail |dq| per point: bulk-only {:.3}, tail-blended {:.3}",
        err_spqr / m,
        err_spqrx / m
    );
    println!(
        "bulk |dq| per point: bulk-only {:.4}, tail-blended {:.4}",
        err_mid_spqr / m,
        err_mid_spqrx / m
    );
    println!("mean fitted xi = {:.4}", xi_sum / test_x.nrows() as f64);
}
