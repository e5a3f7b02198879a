// Micro-profile of the training-loop pieces. Not part of the test suite.

use ndarray::Array2;
use spqrx::dist::BlendSpec;
use spqrx::network::{Activation, Head, NetworkParams, XiActivation};
use spqrx::regression::penalized_nll_and_gradient;
use spqrx::simulate::{generate, SimDesign, SimSpec};
use spqrx::splines::{SplineBasis, SplineMixture};
use std::time::Instant;

fn main() {
    let n = 3200;
    let (data, _) = generate(&SimSpec {
        design: SimDesign::LogNormal,
        n,
        seed: 1,
    })
    .unwrap();
    let y_min = data.response().iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = data
        .response()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let ys: Vec<f64> = data
        .response()
        .iter()
        .map(|y| (y - y_min) / (y_max - y_min))
        .collect();
    let basis = SplineBasis::build(25, 3, &ys).unwrap();
    let x = data.covariates().clone();
    let net = NetworkParams::init(
        3,
        &[32, 32],
        25,
        Activation::Sigmoid,
        Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
        5,
    )
    .unwrap();
    let blend = BlendSpec::new(0.9, 0.99, 25.0, 5.0).unwrap();

    // full objective + gradient
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let _ = penalized_nll_and_gradient(&basis, &net, &x, &ys, Some(blend), 100.0, 1e-4, 128)
            .unwrap();
    }
    println!("objective+gradient: {:?} per call", t.elapsed() / reps);

    // bulk-only objective for comparison
    let net_b =
        NetworkParams::init(3, &[32, 32], 25, Activation::Sigmoid, Head::Softmax, 5).unwrap();
    let t = Instant::now();
    for _ in 0..reps {
        let _ = penalized_nll_and_gradient(&basis, &net_b, &x, &ys, None, 0.0, 0.0, 128).unwrap();
    }
    println!("bulk objective:     {:?} per call", t.elapsed() / reps);

    // quantile solves alone
    let w = vec![1.0 / 25.0; 25];
    let mix = SplineMixture::new(&basis, &w);
    let t = Instant::now();
    let solves = 2 * n;
    for i in 0..solves {
        let tau = if i % 2 == 0 { 0.9 } else { 0.99 };
        let _ = mix.quantile_bisect(tau, 1e-12).unwrap();
    }
    println!("{} quantile solves: {:?}", solves, t.elapsed());

    // forward/backward alone
    let t = Instant::now();
    for _ in 0..reps {
        let _ = net
            .gradient(&x, |out| {
                let d = Array2::zeros(out.weights.raw_dim());
                (
                    0.0,
                    spqrx::network::OutputGrad {
                        d_weights: d,
                        d_xi: out.xi.as_ref().map(|v| v.clone() * 0.0),
                    },
                )
            })
            .unwrap();
    }
    println!("forward+backward:   {:?} per call", t.elapsed() / reps);
}
