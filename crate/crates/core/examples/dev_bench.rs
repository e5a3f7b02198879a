// One benchmark replicate at the headline configuration; prints metrics
// and timing. Not part of the test suite.

use spqrx::bench::{run_replicate, BenchConfig, MetricSizes};
use spqrx::dist::BlendSpec;
use spqrx::network::{Activation, XiActivation};
use spqrx::regression::{Architecture, TrainingConfig};
use spqrx::simulate::SimDesign;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10000);
    let replicate: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let design: SimDesign = args
        .get(3)
        .map(|s| s.parse().unwrap())
        .unwrap_or(SimDesign::LogNormal);

    let config = BenchConfig {
        design,
        n,
        replicates: 1,
        arch: Architecture {
            num_basis: 25,
            spline_order: 3,
            hidden: vec![32, 32],
            activation: Activation::Sigmoid,
            xi_activation: XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 },
        },
        blend: {
            let pa: f64 = std::env::var("PA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.9);
            BlendSpec::new(pa, 0.99, 25.0, 5.0).unwrap()
        },
        training: TrainingConfig {
            batch_size: std::env::var("BS").ok().and_then(|v| v.parse().ok()).unwrap_or(0),
            max_epochs: std::env::var("ME").ok().and_then(|v| v.parse().ok()).unwrap_or(1000),
            learning_rate: std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3),
            ..TrainingConfig::default()
        },
        sizes: MetricSizes::default(),
        seed: 20240809,
    };
    let t = Instant::now();
    let outcome = run_replicate(&config, replicate).unwrap();
    let m = outcome.metrics;
    println!(
        "replicate {replicate} ({}): {:.1?}",
        config.design.name(),
        t.elapsed()
    );
    println!(
        "  iwd  bulk={:.3} tail-blended={:.3}",
        m.iwd_spqr, m.iwd_spqrx
    );
    println!(
        "  tiwd bulk={:.3} tail-blended={:.3}",
        m.tiwd_spqr, m.tiwd_spqrx
    );
    println!(
        "  epochs: bulk {}, blended {} (restarts {})",
        outcome.spqr.info.epochs_run,
        outcome.spqrx.info.epochs_run,
        outcome.spqrx.info.restarts
    );
}
