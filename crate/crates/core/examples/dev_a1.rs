// Search for a right-skewed weight construction where the blend with a
// light GP tail (xi = -0.2, p_a = 0.5, p_b = 0.99, c1 = c2 = 5) yields a
// negative density, while each of the three single-parameter fixes
// (xi -> 0.1, c1 -> 100, p_b -> 0.75) restores validity.

use spqrx::dist::{Bgp, BlendSpec};
use spqrx::splines::{SplineBasis, SplineMixture};

fn main() {
    let k = 25;
    let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
    let basis = SplineBasis::build(k, 3, &grid).unwrap();

    for rho in [0.40, 0.45, 0.50, 0.52, 0.55, 0.58, 0.62, 0.66] {
        for floor in [0.002, 0.003, 0.004, 0.005, 0.007, 0.01, 0.015, 0.02] {
            let mut w: Vec<f64> = (0..k).map(|i| rho_pow(rho, i) + floor).collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            let mix = SplineMixture::new(&basis, &w);

            let base = BlendSpec::new(0.5, 0.99, 5.0, 5.0).unwrap();
            let pen = |xi: f64, spec: BlendSpec| -> f64 {
                Bgp::new(&mix, xi, spec).unwrap().validity_penalty(128)
            };
            let p0 = pen(-0.2, base);
            let p_xi = pen(0.1, base);
            let p_c1 = pen(-0.2, BlendSpec::new(0.5, 0.99, 100.0, 5.0).unwrap());
            let p_pb = pen(-0.2, BlendSpec::new(0.5, 0.75, 5.0, 5.0).unwrap());
            let ok = p0 > 0.0 && p_xi == 0.0 && p_c1 == 0.0 && p_pb == 0.0;
            println!(
                "rho={rho:.2} floor={floor:.3}: base={p0:.3e} xi={p_xi:.1e} c1={p_c1:.1e} pb={p_pb:.1e} {}",
                if ok { "<== CANDIDATE" } else { "" }
            );
        }
    }
}

fn rho_pow(rho: f64, i: usize) -> f64 {
    rho.powi(i as i32)
}
