//! M-spline and I-spline bases on the unit interval.
//!
//! An order-`d` basis with `K` functions is defined over `K + d` knots
//! `t_1 <= ... <= t_{K+d}`. We place `d` copies of the boundary knots at 0
//! and 1 and `K - d` interior knots, so exactly `K` basis functions span
//! `[0, 1]`. Each `M_k` is a piecewise polynomial of degree `d - 1`,
//! positive on `(t_k, t_{k+d})` and integrating to one; `I_k` is its
//! running integral and therefore a distribution function on `[0, 1]`.
//!
//! Evaluation is right-continuous at interior knots and left-continuous at
//! `y = 1`, which makes each `M_k` a well-defined density representative.

use crate::dist::BulkDist;
use crate::error::{Error, Result};
use crate::util::quantile_sorted;
use ndarray::Array2;

/// Largest supported spline order. The recursion uses fixed-size scratch
/// buffers of this length.
pub const MAX_ORDER: usize = 15;

/// Grid resolution used by [`MixtureQuantiler`] for bracketing quantiles
/// before bisection refinement.
pub const QUANTILE_GRID: usize = 512;

// 8-point Gauss-Legendre rule on [-1, 1]; exact for polynomials up to
// degree 15, i.e. for every basis order supported here.
const GL_NODES: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.5255324099163290,
    -0.1834346424956498,
    0.1834346424956498,
    0.5255324099163290,
    0.7966664774136267,
    0.9602898564975363,
];
const GL_WEIGHTS: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.3626837833783620,
    0.3626837833783620,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

/// An M-/I-spline basis on `[0, 1]`. Immutable after construction; all
/// evaluation methods are pure and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    num_basis: usize,
    /// Full knot vector of length `num_basis + order`, boundary knots
    /// repeated `order` times.
    knots: Vec<f64>,
    /// `cum_int[k][j]` = integral of `M_k` from 0 to `knots[k + j]`,
    /// `j = 0..=order`.
    cum_int: Vec<Vec<f64>>,
}

impl SplineBasis {
    /// Build a basis with interior knots at the empirical quantiles of
    /// `response_sample` taken at equally spaced levels strictly inside
    /// `(0, 1)`; boundary knots sit at 0 and 1.
    pub fn build(num_basis: usize, order: usize, response_sample: &[f64]) -> Result<Self> {
        if response_sample.is_empty() {
            return Err(Error::invalid("response sample is empty"));
        }
        if response_sample.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::invalid("response sample values must lie in [0,1]"));
        }
        if num_basis < order {
            return Err(Error::invalid(format!(
                "num_basis ({num_basis}) must be at least the order ({order})"
            )));
        }
        let mut sorted = response_sample.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_interior = num_basis - order;
        let interior: Vec<f64> = (1..=n_interior)
            .map(|i| quantile_sorted(&sorted, i as f64 / (n_interior + 1) as f64))
            .collect();
        Self::with_interior_knots(num_basis, order, &interior)
    }

    /// Build a basis from explicitly chosen interior knots (must have
    /// length `num_basis - order`). Coincident or boundary-touching knots
    /// are perturbed by the smallest spacing restoring strict monotonicity.
    pub fn with_interior_knots(num_basis: usize, order: usize, interior: &[f64]) -> Result<Self> {
        if order < 1 || order > MAX_ORDER {
            return Err(Error::invalid(format!(
                "order must lie in 1..={MAX_ORDER}, got {order}"
            )));
        }
        if num_basis < order {
            return Err(Error::invalid(format!(
                "num_basis ({num_basis}) must be at least the order ({order})"
            )));
        }
        if interior.len() != num_basis - order {
            return Err(Error::invalid(format!(
                "expected {} interior knots, got {}",
                num_basis - order,
                interior.len()
            )));
        }
        if interior.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("interior knots must lie in [0,1]"));
        }

        let mut interior = interior.to_vec();
        interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut perturbed = false;
        let n_int = interior.len();
        let mut prev = 0.0;
        for (i, t) in interior.iter_mut().enumerate() {
            // keep strictly inside (prev, 1) leaving room for the rest
            let remaining = (n_int - i) as f64;
            let eps = (1e-9_f64).min((1.0 - prev) / (remaining + 1.0) * 0.5);
            let lo = prev + eps;
            if *t < lo {
                *t = lo;
                perturbed = true;
            }
            prev = *t;
        }
        if perturbed {
            log::warn!("coincident interior knots perturbed to restore strict monotonicity");
        }

        let mut knots = Vec::with_capacity(num_basis + order);
        knots.extend(std::iter::repeat(0.0).take(order));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat(1.0).take(order));

        let mut basis = SplineBasis {
            order,
            num_basis,
            knots,
            cum_int: Vec::new(),
        };
        basis.cum_int = basis.compute_cum_int();
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    /// Full knot vector, boundary multiplicities included.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index of the knot span containing `y`: largest `s` in
    /// `[order-1, num_basis-1]` with `knots[s] <= y`, taking the left
    /// limit at `y = 1`.
    fn span_of(&self, y: f64) -> usize {
        let d = self.order;
        let k = self.num_basis;
        if y >= 1.0 {
            return k - 1;
        }
        let mut lo = d - 1;
        let mut hi = k - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= y {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Values of all order-`m` basis functions that are non-zero on span
    /// `s`, built up to the full order so that on exit
    /// `work[i] = M_{s-order+1+i}(y | order)`.
    fn order_row(&self, y: f64, s: usize, work: &mut [f64; MAX_ORDER]) {
        let d = self.order;
        let t = &self.knots;
        let width = t[s + 1] - t[s];
        work[0] = if width > 0.0 { 1.0 / width } else { 0.0 };
        let mut next = [0.0_f64; MAX_ORDER];
        for m in 2..=d {
            for (i, slot) in next.iter_mut().enumerate().take(m) {
                let k = s + 1 + i - m;
                let denom = t[k + m] - t[k];
                if denom <= 0.0 {
                    *slot = 0.0;
                    continue;
                }
                let left = if i >= 1 { work[i - 1] } else { 0.0 };
                let right = if i + 2 <= m { work[i] } else { 0.0 };
                *slot = (m as f64) * ((y - t[k]) * left + (t[k + m] - y) * right)
                    / ((m - 1) as f64 * denom);
            }
            work[..m].copy_from_slice(&next[..m]);
        }
    }

    /// Evaluate all M- and I-basis functions at `y`, filling `m_out` and
    /// `i_out` (each of length `num_basis`).
    pub fn eval_into(&self, y: f64, m_out: &mut [f64], i_out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::invalid(format!("y = {y} outside [0,1]")));
        }
        assert_eq!(m_out.len(), self.num_basis);
        assert_eq!(i_out.len(), self.num_basis);
        let d = self.order;
        let s = self.span_of(y);

        m_out.fill(0.0);
        let mut row = [0.0_f64; MAX_ORDER];
        self.order_row(y, s, &mut row);
        for (i, &v) in row.iter().enumerate().take(d) {
            let k = s + 1 + i - d;
            m_out[k] = v;
        }

        // I values: saturated below the active window, zero above it,
        // cumulative-plus-partial inside.
        for (k, slot) in i_out.iter_mut().enumerate() {
            *slot = if k + d <= s { 1.0 } else { 0.0 };
        }
        let a = self.knots[s];
        let half = 0.5 * (y - a);
        let mid = 0.5 * (y + a);
        let mut partial = [0.0_f64; MAX_ORDER];
        if half > 0.0 {
            for (g, &node) in GL_NODES.iter().enumerate() {
                let u = mid + half * node;
                let mut node_row = [0.0_f64; MAX_ORDER];
                self.order_row(u, s, &mut node_row);
                for i in 0..d {
                    partial[i] += GL_WEIGHTS[g] * node_row[i];
                }
            }
            for p in partial.iter_mut().take(d) {
                *p *= half;
            }
        }
        for i in 0..d {
            let k = s + 1 + i - d;
            let before = self.cum_int[k][s - k];
            i_out[k] = before + partial[i];
        }
        Ok(())
    }

    /// `M_k(y)` for a single 0-based basis index.
    pub fn mspline(&self, k: usize, y: f64) -> Result<f64> {
        self.check_index(k)?;
        let mut m = vec![0.0; self.num_basis];
        let mut i = vec![0.0; self.num_basis];
        self.eval_into(y, &mut m, &mut i)?;
        Ok(m[k])
    }

    /// `I_k(y)`, the integral of `M_k` from 0 to `y`, for a single index.
    pub fn ispline(&self, k: usize, y: f64) -> Result<f64> {
        self.check_index(k)?;
        let mut m = vec![0.0; self.num_basis];
        let mut i = vec![0.0; self.num_basis];
        self.eval_into(y, &mut m, &mut i)?;
        Ok(i[k])
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.num_basis {
            return Err(Error::invalid(format!(
                "basis index {k} out of range (num_basis = {})",
                self.num_basis
            )));
        }
        Ok(())
    }

    /// Batch evaluation: the pair of `K x n` matrices of M- and I-values,
    /// column `j` holding the values at `ys[j]`.
    pub fn basis_matrices(&self, ys: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        let k = self.num_basis;
        let n = ys.len();
        let mut m = Array2::zeros((k, n));
        let mut i = Array2::zeros((k, n));
        let mut mbuf = vec![0.0; k];
        let mut ibuf = vec![0.0; k];
        for (j, &y) in ys.iter().enumerate() {
            self.eval_into(y, &mut mbuf, &mut ibuf)?;
            for r in 0..k {
                m[(r, j)] = mbuf[r];
                i[(r, j)] = ibuf[r];
            }
        }
        Ok((m, i))
    }

    fn compute_cum_int(&self) -> Vec<Vec<f64>> {
        let d = self.order;
        (0..self.num_basis)
            .map(|k| {
                let mut cum = vec![0.0; d + 1];
                for j in 1..=d {
                    let lo = self.knots[k + j - 1];
                    let hi = self.knots[k + j];
                    let mut acc = 0.0;
                    if hi > lo {
                        let half = 0.5 * (hi - lo);
                        let mid = 0.5 * (hi + lo);
                        let s = k + j - 1;
                        for (g, &node) in GL_NODES.iter().enumerate() {
                            let u = mid + half * node;
                            let mut row = [0.0_f64; MAX_ORDER];
                            self.order_row(u, s, &mut row);
                            // M_k at full order sits at slot k - (s + 1 - d)
                            let idx = k + d - 1 - s;
                            acc += GL_WEIGHTS[g] * row[idx];
                        }
                        acc *= half;
                    }
                    cum[j] = cum[j - 1] + acc;
                }
                cum
            })
            .collect()
    }
}

/// A convex combination of basis functions: the spline representation of a
/// density/distribution pair on `[0, 1]` for one weight vector.
#[derive(Debug, Clone, Copy)]
pub struct SplineMixture<'a> {
    pub basis: &'a SplineBasis,
    pub weights: &'a [f64],
}

// Stack scratch for basis evaluation in hot paths; bases wider than this
// fall back to heap buffers.
const STACK_BASIS: usize = 64;

fn with_basis_values<R>(
    basis: &SplineBasis,
    y: f64,
    f: impl FnOnce(&[f64], &[f64]) -> R,
) -> R {
    let k = basis.num_basis();
    if k <= STACK_BASIS {
        let mut m = [0.0_f64; STACK_BASIS];
        let mut i = [0.0_f64; STACK_BASIS];
        basis
            .eval_into(y, &mut m[..k], &mut i[..k])
            .expect("y in range");
        f(&m[..k], &i[..k])
    } else {
        let mut m = vec![0.0; k];
        let mut i = vec![0.0; k];
        basis.eval_into(y, &mut m, &mut i).expect("y in range");
        f(&m, &i)
    }
}

impl<'a> SplineMixture<'a> {
    pub fn new(basis: &'a SplineBasis, weights: &'a [f64]) -> Self {
        debug_assert_eq!(weights.len(), basis.num_basis());
        SplineMixture { basis, weights }
    }

    /// Mixture density; zero outside `[0, 1]`.
    pub fn pdf(&self, y: f64) -> f64 {
        if !(0.0..=1.0).contains(&y) {
            return 0.0;
        }
        with_basis_values(self.basis, y, |m, _| dot(self.weights, m))
    }

    /// Mixture distribution function; clamped to 0 below 0 and 1 above 1.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        with_basis_values(self.basis, y, |_, i| dot(self.weights, i))
    }

    /// Quantile solve on the exact CDF to `|F(y) - tau| <= tol`: coarse
    /// bisection to bracket, then safeguarded Newton steps (the mixture
    /// density is the CDF derivative and comes from the same basis
    /// evaluation).
    ///
    /// Used where a single tight solve is needed (training geometry); for
    /// repeated queries at one weight vector use [`MixtureQuantiler`].
    pub fn quantile_bisect(&self, tau: f64, tol: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau = {tau} outside [0,1]")));
        }
        if tau == 0.0 {
            return Ok(0.0);
        }
        if tau == 1.0 {
            return Ok(1.0);
        }
        let eval = |y: f64| -> (f64, f64) {
            with_basis_values(self.basis, y, |m, i| {
                (dot(self.weights, i), dot(self.weights, m))
            })
        };
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        let mut y = 0.5;
        let (mut f, mut fd) = eval(y);
        for _ in 0..10 {
            if (f - tau).abs() <= tol {
                return Ok(y);
            }
            if f < tau {
                lo = y;
            } else {
                hi = y;
            }
            y = 0.5 * (lo + hi);
            let e = eval(y);
            f = e.0;
            fd = e.1;
        }
        // Newton with bracket safeguarding doubles the digits per step
        for _ in 0..40 {
            if (f - tau).abs() <= tol || hi - lo < 1e-16 {
                return Ok(y);
            }
            if f < tau {
                lo = y;
            } else {
                hi = y;
            }
            let mut next = if fd > 0.0 { y - (f - tau) / fd } else { y };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            y = next;
            let e = eval(y);
            f = e.0;
            fd = e.1;
        }
        Ok(y)
    }

    /// Precompute the CDF on a fixed grid for fast repeated quantile
    /// queries at this weight vector.
    pub fn quantiler(&self) -> MixtureQuantiler<'a> {
        let mut cdf_grid = Vec::with_capacity(QUANTILE_GRID);
        for g in 0..QUANTILE_GRID {
            let y = g as f64 / (QUANTILE_GRID - 1) as f64;
            cdf_grid.push(with_basis_values(self.basis, y, |_, i| dot(self.weights, i)));
        }
        MixtureQuantiler {
            mixture: *self,
            cdf_grid,
        }
    }
}

impl BulkDist for SplineMixture<'_> {
    fn cdf(&self, y: f64) -> f64 {
        SplineMixture::cdf(self, y)
    }
    fn pdf(&self, y: f64) -> f64 {
        SplineMixture::pdf(self, y)
    }
    fn quantile(&self, tau: f64) -> Result<f64> {
        self.quantiler().quantile(tau)
    }
}

/// Grid-bracketed quantile evaluator for one [`SplineMixture`]: the CDF is
/// tabulated on an even grid and each query is refined by bisection on the
/// exact CDF until `|F(y) - tau| < 1e-8`.
#[derive(Debug, Clone)]
pub struct MixtureQuantiler<'a> {
    mixture: SplineMixture<'a>,
    cdf_grid: Vec<f64>,
}

impl MixtureQuantiler<'_> {
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        quantile_from_grid(&self.mixture, &self.cdf_grid, tau)
    }
}

/// Invert a mixture CDF: bracket `tau` on a tabulated even grid, then
/// bisect the exact CDF inside the bracketing cell to `|F - tau| < 1e-8`.
pub(crate) fn quantile_from_grid(mix: &SplineMixture, cdf_grid: &[f64], tau: f64) -> Result<f64> {
    const TOL: f64 = 1e-8;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau = {tau} outside [0,1]")));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    if tau == 1.0 {
        return Ok(1.0);
    }
    let n = cdf_grid.len();
    let idx = cdf_grid.partition_point(|&f| f < tau);
    if idx < n && cdf_grid[idx] == tau {
        return Ok(idx as f64 / (n - 1) as f64);
    }
    let (mut lo, mut hi) = if idx == 0 {
        (0.0, 0.0)
    } else if idx >= n {
        ((n - 2) as f64 / (n - 1) as f64, 1.0)
    } else {
        (
            (idx - 1) as f64 / (n - 1) as f64,
            idx as f64 / (n - 1) as f64,
        )
    };
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let f = mix.cdf(mid);
        if (f - tau).abs() <= TOL {
            return Ok(mid);
        }
        if f < tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
