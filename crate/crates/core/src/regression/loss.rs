//! Penalized negative log-likelihood for spline-bulk models, with exact
//! gradients with respect to the network outputs `(w, xi)` per row.
//!
//! Everything that depends only on the data is precomputed once per fit:
//! basis values at every scaled response and at the fixed penalty grid.
//! Each row's loss is then recorded on a [`Tape`]; the blending interval
//! ends enter as implicit nodes whose weight-partials come from the
//! implicit function theorem, `da/dw_k = -I_k(a) / f(a)`.

use crate::dist::{BlendSpec, XI_EPS};
use crate::error::Result;
use crate::network::BatchOutput;
use crate::special::{beta_pdf, beta_pdf_deriv, reg_inc_beta};
use crate::splines::{dot, SplineBasis, SplineMixture};
use crate::tape::{Tape, Var};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// Probability tolerance for the quantile solves that locate the blending
/// interval during training. Tight so that the solve's discretization is
/// far below finite-difference resolution.
const SOLVE_TOL: f64 = 1e-12;

/// Per-fit loss context: spline values at the data and penalty grid.
pub(crate) struct LossContext {
    /// `(n, K)` M-spline values at each scaled response.
    m_y: Array2<f64>,
    /// `(n, K)` I-spline values at each scaled response.
    i_y: Array2<f64>,
    ys: Vec<f64>,
    /// Fixed penalty grid: cell midpoints of an even partition of [0, 1].
    grid_ys: Vec<f64>,
    m_g: Array2<f64>,
    i_g: Array2<f64>,
    pub spec: Option<BlendSpec>,
    pub lambda: f64,
}

/// Value pieces of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LossParts {
    /// Sum of per-row negative log densities.
    pub nll: f64,
    /// Sum of per-row validity penalties (unweighted).
    pub penalty: f64,
}

impl LossContext {
    pub fn new(
        basis: &SplineBasis,
        ys: &[f64],
        spec: Option<BlendSpec>,
        lambda: f64,
        penalty_grid: usize,
    ) -> Result<Self> {
        let grid_ys: Vec<f64> = (0..penalty_grid)
            .map(|j| (j as f64 + 0.5) / penalty_grid as f64)
            .collect();
        let (m_y, i_y) = row_major_basis(basis, ys)?;
        let (m_g, i_g) = row_major_basis(basis, &grid_ys)?;
        Ok(LossContext {
            m_y,
            i_y,
            ys: ys.to_vec(),
            grid_ys,
            m_g,
            i_g,
            spec,
            lambda,
        })
    }

    pub fn response(&self, row: usize) -> f64 {
        self.ys[row]
    }

    /// Loss and output-gradient for the bulk-only model over `rows`:
    /// `sum_i -ln sum_k w_k M_k(y_i)`.
    pub fn bulk_loss(&self, rows: &[usize], out: &BatchOutput) -> (LossParts, Array2<f64>) {
        let k = out.weights.ncols();
        let mut d_w = Array2::zeros((rows.len(), k));
        let mut nll = 0.0;
        for (j, &row) in rows.iter().enumerate() {
            let m_row = self.m_y.row(row);
            let m_row = m_row.as_slice().unwrap();
            let w = out.weights.row(j);
            let w = w.as_slice().unwrap();
            let f = dot(w, m_row);
            nll -= f.ln();
            for (g, &m) in d_w.row_mut(j).iter_mut().zip(m_row) {
                *g = -m / f;
            }
        }
        (
            LossParts { nll, penalty: 0.0 },
            d_w,
        )
    }

    /// Blended loss over `rows`: per-row `-ln h(y_i)` plus `lambda` times
    /// the validity penalty, with gradients through the full composition.
    /// Rows are independent and processed in parallel; every row writes
    /// only its own slots, so results do not depend on scheduling.
    pub fn blended_loss(
        &self,
        basis: &SplineBasis,
        rows: &[usize],
        out: &BatchOutput,
    ) -> (LossParts, Array2<f64>, Array1<f64>) {
        let spec = self.spec.expect("blended loss requires a blend spec");
        let k = out.weights.ncols();
        let n = rows.len();
        let xi_all = out.xi.as_ref().expect("blended loss requires shape outputs");

        let mut losses = vec![0.0_f64; n];
        let mut pens = vec![0.0_f64; n];
        let mut d_w = vec![0.0_f64; n * k];
        let mut d_xi = vec![0.0_f64; n];

        losses
            .par_iter_mut()
            .zip(pens.par_iter_mut())
            .zip(d_w.par_chunks_mut(k))
            .zip(d_xi.par_iter_mut())
            .enumerate()
            .for_each_init(
                || RowScratch::new(k),
                |scratch, (j, (((loss, pen), gw), gxi))| {
                    let row = rows[j];
                    let w_row = out.weights.row(j);
                    let w_row = w_row.as_slice().unwrap();
                    let xi = xi_all[j];
                    let (l, p, g) = self.row_loss(basis, &spec, scratch, w_row, xi, row, gw);
                    *loss = l;
                    *pen = p;
                    *gxi = g;
                },
            );

        let nll: f64 = losses.iter().sum();
        let penalty: f64 = pens.iter().sum();
        let d_w = Array2::from_shape_vec((n, k), d_w).expect("shape");
        (
            LossParts { nll, penalty },
            d_w,
            Array1::from_vec(d_xi),
        )
    }

    /// One row: returns (nll_i, penalty_i, grad_xi) and fills `grad_w`.
    fn row_loss(
        &self,
        basis: &SplineBasis,
        spec: &BlendSpec,
        scratch: &mut RowScratch,
        w: &[f64],
        xi_val: f64,
        row: usize,
        grad_w: &mut [f64],
    ) -> (f64, f64, f64) {
        let mix = SplineMixture::new(basis, w);
        let a_val = match mix.quantile_bisect(spec.p_a, SOLVE_TOL) {
            Ok(v) => v,
            Err(_) => {
                grad_w.fill(0.0);
                return (f64::NAN, 0.0, 0.0);
            }
        };
        let b_val = match mix.quantile_bisect(spec.p_b, SOLVE_TOL) {
            Ok(v) => v,
            Err(_) => {
                grad_w.fill(0.0);
                return (f64::NAN, 0.0, 0.0);
            }
        };
        if b_val - a_val < 1e-12 {
            // collapsed interval: signal a non-finite loss so training
            // backtracks instead of dividing by a zero-width blend
            grad_w.fill(0.0);
            return (f64::NAN, 0.0, 0.0);
        }

        let tape = &mut scratch.tape;
        let xi_node;
        {
            tape.reset(w, xi_val);
            xi_node = tape.xi();
        }

        // implicit quantile nodes: da/dw_k = -I_k(a)/f(a)
        let a_node = Self::quantile_node(basis, scratch, w, a_val);
        let tape = &mut scratch.tape;
        let a_node = tape.lin_w_with(a_val, &a_node);
        let b_node = Self::quantile_node(basis, scratch, w, b_val);
        let tape = &mut scratch.tape;
        let b_node = tape.lin_w_with(b_val, &b_node);

        let exponential = xi_val.abs() < XI_EPS;
        let (u_node, sigma_node) = gp_match_nodes(tape, spec, xi_node, a_node, b_node, exponential);
        let inv_xi = if exponential {
            None
        } else {
            Some(recip(tape, xi_node))
        };
        let tail = TailNodes {
            u: u_node,
            sigma: sigma_node,
            xi: xi_node,
            inv_xi,
        };

        let y = self.ys[row];
        let m_row = self.m_y.row(row);
        let m_row = m_row.as_slice().unwrap();
        let i_row = self.i_y.row(row);
        let i_row = i_row.as_slice().unwrap();

        let nll_node = if y <= a_val {
            let f = tape.lin_w(m_row);
            let lf = tape.ln(f);
            tape.neg(lf)
        } else if y >= b_val {
            let logf = gp_log_pdf_node(tape, y, &tail);
            tape.neg(logf)
        } else {
            let (ln_h, bracket) = blend_parts_nodes(
                tape,
                spec,
                y,
                m_row,
                i_row,
                (a_node, b_node),
                &tail,
            );
            let lb = tape.ln(bracket);
            let s = tape.add(ln_h, lb);
            tape.neg(s)
        };

        // validity penalty over fixed grid midpoints inside (a, b); the
        // blended density is non-negative outside the interval by
        // construction, so those cells contribute exactly zero
        let mut pen_node: Option<Var> = None;
        if self.lambda > 0.0 {
            let dy = 1.0 / self.grid_ys.len() as f64;
            for (g, &yg) in self.grid_ys.iter().enumerate() {
                if yg <= a_val || yg >= b_val {
                    continue;
                }
                let mg = self.m_g.row(g);
                let ig = self.i_g.row(g);
                let (ln_h, bracket) = blend_parts_nodes(
                    tape,
                    spec,
                    yg,
                    mg.as_slice().unwrap(),
                    ig.as_slice().unwrap(),
                    (a_node, b_node),
                    &tail,
                );
                let h = tape.exp(ln_h);
                let hv = tape.mul(h, bracket);
                let neg = tape.neg(hv);
                let r = tape.relu(neg);
                let contrib = tape.mul_c(r, dy);
                pen_node = Some(match pen_node {
                    None => contrib,
                    Some(acc) => tape.add(acc, contrib),
                });
            }
        }

        let pen_val = pen_node.map(|p| tape.val(p)).unwrap_or(0.0);
        let root = match pen_node {
            Some(p) => {
                let weighted = tape.mul_c(p, self.lambda);
                tape.add(nll_node, weighted)
            }
            None => nll_node,
        };
        let nll_val = tape.val(nll_node);
        let grad_xi = tape.backward(root, grad_w);
        (nll_val, pen_val, grad_xi)
    }

    /// Implicit-function coefficients for a solved quantile `q`:
    /// `dq/dw_k = -I_k(q) / f(q)`.
    fn quantile_node(
        basis: &SplineBasis,
        scratch: &mut RowScratch,
        w: &[f64],
        q: f64,
    ) -> Vec<f64> {
        basis
            .eval_into(q, &mut scratch.m_buf, &mut scratch.i_buf)
            .expect("solved quantile lies in [0,1]");
        let f = dot(w, &scratch.m_buf);
        let mut coeffs = vec![0.0; w.len()];
        if f > 1e-300 {
            for (c, &iv) in coeffs.iter_mut().zip(&scratch.i_buf) {
                *c = -iv / f;
            }
        }
        coeffs
    }

    /// Plain-value (no gradient) negative log-likelihood over `rows`;
    /// used for validation-loss tracking.
    pub fn nll_value(&self, basis: &SplineBasis, rows: &[usize], out: &BatchOutput) -> f64 {
        match self.spec {
            None => {
                let mut total = 0.0;
                for (j, &row) in rows.iter().enumerate() {
                    let m_row = self.m_y.row(row);
                    let w = out.weights.row(j);
                    let f = dot(w.as_slice().unwrap(), m_row.as_slice().unwrap());
                    total -= f.ln();
                }
                total
            }
            Some(spec) => {
                let xi_all = out.xi.as_ref().expect("shape outputs required");
                let values: Vec<f64> = rows
                    .par_iter()
                    .enumerate()
                    .map(|(j, &row)| {
                        let w_row = out.weights.row(j);
                        let w = w_row.as_slice().unwrap();
                        let mix = SplineMixture::new(basis, w);
                        let a = match mix.quantile_bisect(spec.p_a, SOLVE_TOL) {
                            Ok(v) => v,
                            Err(_) => return f64::NAN,
                        };
                        let b = match mix.quantile_bisect(spec.p_b, SOLVE_TOL) {
                            Ok(v) => v,
                            Err(_) => return f64::NAN,
                        };
                        if b - a < 1e-12 {
                            return f64::NAN;
                        }
                        let bgp = match crate::dist::Bgp::with_interval(&mix, xi_all[j], spec, a, b)
                        {
                            Ok(bg) => bg,
                            Err(_) => return f64::NAN,
                        };
                        -bgp.log_pdf(self.ys[row])
                    })
                    .collect();
                values.iter().sum()
            }
        }
    }
}

/// Reusable per-thread scratch for row evaluation.
struct RowScratch {
    tape: Tape,
    m_buf: Vec<f64>,
    i_buf: Vec<f64>,
}

impl RowScratch {
    fn new(k: usize) -> Self {
        RowScratch {
            tape: Tape::new(k),
            m_buf: vec![0.0; k],
            i_buf: vec![0.0; k],
        }
    }
}

/// Continuity match on the tape: given `a`, `b`, `xi` nodes, produce
/// `(u_tilde, sigma_tilde)` nodes.
fn gp_match_nodes(
    tape: &mut Tape,
    spec: &BlendSpec,
    xi: Var,
    a: Var,
    b: Var,
    exponential: bool,
) -> (Var, Var) {
    let la = (1.0 - spec.p_a).ln();
    let lb = (1.0 - spec.p_b).ln();
    let amb = tape.sub(a, b);
    if exponential {
        let denom = lb - la;
        let sigma = tape.mul_c(amb, 1.0 / denom);
        let shift = tape.mul_c(amb, -la / denom);
        let u = tape.sub(a, shift);
        (u, sigma)
    } else {
        let ea = tape.mul_c(xi, -la);
        let pow_a = tape.exp(ea); // (1 - p_a)^{-xi}
        let eb = tape.mul_c(xi, -lb);
        let pow_b = tape.exp(eb);
        let d = tape.sub(pow_a, pow_b);
        let xi_amb = tape.mul(xi, amb);
        let sigma = tape.div(xi_amb, d);
        let am1 = tape.add_c(pow_a, -1.0);
        let num = tape.mul(amb, am1);
        let frac = tape.div(num, d);
        let u = tape.sub(a, frac);
        (u, sigma)
    }
}

/// Per-row GP tail nodes: threshold, scale, shape, and the hoisted
/// reciprocal shape (absent on the exponential branch).
struct TailNodes {
    u: Var,
    sigma: Var,
    xi: Var,
    inv_xi: Option<Var>,
}

/// `ln f_GP(y)` at a constant `y`.
fn gp_log_pdf_node(tape: &mut Tape, y: f64, tail: &TailNodes) -> Var {
    let ymu = tape.rsub_c(y, tail.u); // y - u
    let z = tape.div(ymu, tail.sigma);
    let ls = tape.ln(tail.sigma);
    match tail.inv_xi {
        None => {
            let zn = tape.neg(z);
            tape.sub(zn, ls)
        }
        Some(inv_xi) => {
            let xz = tape.mul(tail.xi, z);
            let arg = tape.add_c(xz, 1.0);
            let ln_arg = tape.ln(arg);
            let coef = tape.add_c(inv_xi, 1.0);
            let t = tape.mul(coef, ln_arg);
            let tn = tape.neg(t);
            tape.sub(tn, ls)
        }
    }
}

/// `(F_GP(y), f_GP(y))` nodes at constant `y`.
fn gp_cdf_pdf_nodes(tape: &mut Tape, y: f64, tail: &TailNodes) -> (Var, Var) {
    let ymu = tape.rsub_c(y, tail.u);
    let z = tape.div(ymu, tail.sigma);
    match tail.inv_xi {
        None => {
            let zn = tape.neg(z);
            let e = tape.exp(zn);
            let cdf = tape.rsub_c(1.0, e);
            let pdf = tape.div(e, tail.sigma);
            (cdf, pdf)
        }
        Some(inv_xi) => {
            let xz = tape.mul(tail.xi, z);
            let arg = tape.add_c(xz, 1.0);
            let ln_arg = tape.ln(arg);
            let q = tape.mul(inv_xi, ln_arg);
            let qn = tape.neg(q);
            let pow = tape.exp(qn); // arg^{-1/xi}
            let cdf = tape.rsub_c(1.0, pow);
            let coef = tape.add_c(inv_xi, 1.0);
            let t = tape.mul(coef, ln_arg);
            let tn = tape.neg(t);
            let e = tape.exp(tn); // arg^{-(1 + 1/xi)}
            let pdf = tape.div(e, tail.sigma);
            (cdf, pdf)
        }
    }
}

/// `(ln H(y), bracket(y))` nodes inside the blending interval.
fn blend_parts_nodes(
    tape: &mut Tape,
    spec: &BlendSpec,
    y: f64,
    m_row: &[f64],
    i_row: &[f64],
    (a, b): (Var, Var),
    tail: &TailNodes,
) -> (Var, Var) {
    let f = tape.lin_w(i_row);
    let fd = tape.lin_w(m_row);
    let (fgp, fgpd) = gp_cdf_pdf_nodes(tape, y, tail);

    // Beta weight of z = (y - a)/(b - a) via custom nodes
    let ya = tape.rsub_c(y, a);
    let ba = tape.sub(b, a);
    let z = tape.div(ya, ba);
    let zv = tape.val(z);
    let p = tape.unary(z, reg_inc_beta(zv, spec.c1, spec.c2), beta_pdf(zv, spec.c1, spec.c2));
    let pdens = tape.unary(
        z,
        beta_pdf(zv, spec.c1, spec.c2),
        beta_pdf_deriv(zv, spec.c1, spec.c2),
    );
    let pd = tape.div(pdens, ba);

    let ln_f = tape.ln(f);
    let ln_fgp = tape.ln(fgp);
    let one_minus_p = tape.rsub_c(1.0, p);
    let t1 = tape.mul(one_minus_p, ln_f);
    let t2 = tape.mul(p, ln_fgp);
    let ln_h = tape.add(t1, t2);

    let diff = tape.sub(ln_fgp, ln_f);
    let b1 = tape.mul(pd, diff);
    let hazard_gp = tape.div(fgpd, fgp);
    let b2 = tape.mul(p, hazard_gp);
    let hazard_f = tape.div(fd, f);
    let b3 = tape.mul(one_minus_p, hazard_f);
    let b12 = tape.add(b1, b2);
    let bracket = tape.add(b12, b3);
    (ln_h, bracket)
}

fn recip(tape: &mut Tape, a: Var) -> Var {
    let v = tape.val(a);
    tape.unary(a, 1.0 / v, -1.0 / (v * v))
}

/// Basis values at each point as `(n, K)` matrices with contiguous rows.
fn row_major_basis(basis: &SplineBasis, ys: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = basis.num_basis();
    let mut m = Array2::zeros((ys.len(), k));
    let mut i = Array2::zeros((ys.len(), k));
    let mut mbuf = vec![0.0; k];
    let mut ibuf = vec![0.0; k];
    for (r, &y) in ys.iter().enumerate() {
        basis.eval_into(y, &mut mbuf, &mut ibuf)?;
        m.row_mut(r).assign(&ndarray::ArrayView1::from(&mbuf[..]));
        i.row_mut(r).assign(&ndarray::ArrayView1::from(&ibuf[..]));
    }
    Ok((m, i))
}
