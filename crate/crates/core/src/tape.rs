//! Minimal reverse-mode tape over scalars.
//!
//! The training loss composes spline mixtures, implicit quantile solves,
//! the continuity match, Beta weights, and GP terms, all as functions of
//! one row's spline weights `w` and shape `xi`. Rather than deriving that
//! chain by hand, each row records its computation on a small tape whose
//! leaves are `w_0..w_{K-1}` and `xi`; a reverse sweep then yields the
//! exact gradient. Local partials are computed during the forward pass, so
//! nodes only store `(parent, partial)` pairs. Linear-in-`w` nodes (dot
//! products against basis columns, and quantile nodes whose implicit
//! partials are `-I_k(q)/f(q)`) store a coefficient row in a shared arena.
//!
//! Tapes are reused across rows via [`Tape::reset`] to avoid allocation in
//! the training loop.

#[derive(Clone, Copy, Debug)]
pub(crate) struct Var(u32);

#[derive(Clone, Copy)]
enum Op {
    Leaf,
    Const,
    Unary { p: u32, d: f64 },
    Binary { p0: u32, d0: f64, p1: u32, d1: f64 },
    /// Value is linear in the weight leaves with coefficients
    /// `coeffs[start..start + n_w]`.
    LinW { start: u32 },
}

struct Node {
    val: f64,
    op: Op,
}

pub(crate) struct Tape {
    n_w: usize,
    nodes: Vec<Node>,
    coeffs: Vec<f64>,
    adjoint: Vec<f64>,
}

impl Tape {
    pub fn new(n_w: usize) -> Self {
        Tape {
            n_w,
            nodes: Vec::with_capacity(256),
            coeffs: Vec::with_capacity(4 * n_w),
            adjoint: Vec::new(),
        }
    }

    /// Clear the tape and install fresh leaf values.
    pub fn reset(&mut self, w: &[f64], xi: f64) {
        debug_assert_eq!(w.len(), self.n_w);
        self.nodes.clear();
        self.coeffs.clear();
        for &v in w {
            self.nodes.push(Node { val: v, op: Op::Leaf });
        }
        self.nodes.push(Node {
            val: xi,
            op: Op::Leaf,
        });
    }

    pub fn xi(&self) -> Var {
        Var(self.n_w as u32)
    }

    #[inline]
    pub fn val(&self, v: Var) -> f64 {
        self.nodes[v.0 as usize].val
    }

    #[inline]
    fn push(&mut self, val: f64, op: Op) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { val, op });
        Var(id)
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(v, Op::Const)
    }

    /// Custom unary node with caller-supplied local partial.
    pub fn unary(&mut self, p: Var, val: f64, d: f64) -> Var {
        self.push(val, Op::Unary { p: p.0, d })
    }

    /// Custom binary node with caller-supplied local partials.
    pub fn binary(&mut self, p0: Var, p1: Var, val: f64, d0: f64, d1: f64) -> Var {
        self.push(
            val,
            Op::Binary {
                p0: p0.0,
                d0,
                p1: p1.0,
                d1,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let val = self.val(a) + self.val(b);
        self.binary(a, b, val, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let val = self.val(a) - self.val(b);
        self.binary(a, b, val, 1.0, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.binary(a, b, va * vb, vb, va)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.binary(a, b, va / vb, 1.0 / vb, -va / (vb * vb))
    }

    pub fn add_c(&mut self, a: Var, c: f64) -> Var {
        let val = self.val(a) + c;
        self.unary(a, val, 1.0)
    }

    pub fn mul_c(&mut self, a: Var, c: f64) -> Var {
        let val = self.val(a) * c;
        self.unary(a, val, c)
    }

    /// `c - a`.
    pub fn rsub_c(&mut self, c: f64, a: Var) -> Var {
        let val = c - self.val(a);
        self.unary(a, val, -1.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_c(a, -1.0)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.val(a);
        self.unary(a, v.ln(), 1.0 / v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.val(a).exp();
        self.unary(a, v, v)
    }

    /// max(0, a) with derivative 0 at exactly 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.val(a);
        if v > 0.0 {
            self.unary(a, v, 1.0)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    /// Dot product of the weight leaves with a coefficient row.
    pub fn lin_w(&mut self, coeffs: &[f64]) -> Var {
        debug_assert_eq!(coeffs.len(), self.n_w);
        let val = coeffs
            .iter()
            .zip(&self.nodes[..self.n_w])
            .map(|(c, n)| c * n.val)
            .sum();
        self.lin_w_with(val, coeffs)
    }

    /// Node with an externally computed value whose gradient with respect
    /// to the weight leaves is `coeffs` (implicit-function nodes).
    pub fn lin_w_with(&mut self, val: f64, coeffs: &[f64]) -> Var {
        debug_assert_eq!(coeffs.len(), self.n_w);
        let start = self.coeffs.len() as u32;
        self.coeffs.extend_from_slice(coeffs);
        self.push(val, Op::LinW { start })
    }

    /// Reverse sweep from `root`; writes the weight gradient into `grad_w`
    /// and returns the `xi` gradient.
    pub fn backward(&mut self, root: Var, grad_w: &mut [f64]) -> f64 {
        debug_assert_eq!(grad_w.len(), self.n_w);
        self.adjoint.clear();
        self.adjoint.resize(self.nodes.len(), 0.0);
        self.adjoint[root.0 as usize] = 1.0;
        for idx in (0..self.nodes.len()).rev() {
            let g = self.adjoint[idx];
            if g == 0.0 {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf | Op::Const => {}
                Op::Unary { p, d } => {
                    self.adjoint[p as usize] += d * g;
                }
                Op::Binary { p0, d0, p1, d1 } => {
                    self.adjoint[p0 as usize] += d0 * g;
                    self.adjoint[p1 as usize] += d1 * g;
                }
                Op::LinW { start } => {
                    let s = start as usize;
                    for i in 0..self.n_w {
                        self.adjoint[i] += self.coeffs[s + i] * g;
                    }
                }
            }
        }
        grad_w.copy_from_slice(&self.adjoint[..self.n_w]);
        self.adjoint[self.n_w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A nonlinear expression exercising every op; returns the root.
    fn expression(t: &mut Tape, coeffs: &[f64]) -> Var {
        let xi = t.xi();
        let s = t.lin_w(coeffs);
        let ls = t.ln(s);
        let e = t.exp(xi);
        let prod = t.mul(ls, e);
        let shifted = t.add_c(s, 0.3);
        let ratio = t.div(prod, shifted);
        let flipped = t.rsub_c(2.0, ratio);
        let scaled = t.mul_c(flipped, 1.7);
        let diff = t.sub(scaled, s);
        let sum = t.add(diff, xi);
        t.relu(sum)
    }

    fn eval(w: &[f64], xi: f64, coeffs: &[f64]) -> f64 {
        let mut t = Tape::new(w.len());
        t.reset(w, xi);
        let root = expression(&mut t, coeffs);
        t.val(root)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let coeffs = [0.4, 1.2, 0.9];
        let w = [0.5, 0.2, 0.3];
        let xi = 0.25;

        let mut t = Tape::new(3);
        t.reset(&w, xi);
        let root = expression(&mut t, &coeffs);
        let mut grad_w = [0.0; 3];
        let grad_xi = t.backward(root, &mut grad_w);

        let h = 1e-7;
        for i in 0..3 {
            let mut up = w;
            up[i] += h;
            let mut dn = w;
            dn[i] -= h;
            let fd = (eval(&up, xi, &coeffs) - eval(&dn, xi, &coeffs)) / (2.0 * h);
            assert!(
                (fd - grad_w[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "w[{i}]: fd={fd}, tape={}",
                grad_w[i]
            );
        }
        let fd = (eval(&w, xi + h, &coeffs) - eval(&w, xi - h, &coeffs)) / (2.0 * h);
        assert!((fd - grad_xi).abs() < 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn implicit_node_propagates_custom_coefficients() {
        // value v(w) with dv/dw from an implicit relation, then y = v^2
        let mut t = Tape::new(2);
        t.reset(&[0.3, 0.7], 0.0);
        let custom = t.lin_w_with(1.5, &[2.0, -1.0]);
        let y = t.mul(custom, custom);
        let mut g = [0.0; 2];
        t.backward(y, &mut g);
        assert_eq!(g[0], 2.0 * 1.5 * 2.0);
        assert_eq!(g[1], 2.0 * 1.5 * -1.0);
    }

    #[test]
    fn relu_clamps_gradient() {
        let mut t = Tape::new(1);
        t.reset(&[0.4], 0.0);
        let x = t.lin_w(&[1.0]);
        let y = t.rsub_c(0.1, x); // 0.1 - 0.4 < 0
        let r = t.relu(y);
        let mut g = [0.0; 1];
        t.backward(r, &mut g);
        assert_eq!(t.val(r), 0.0);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn reuse_after_reset() {
        let mut t = Tape::new(2);
        for trial in 0..3 {
            let w = [0.1 + trial as f64, 0.2];
            t.reset(&w, 1.0);
            let s = t.lin_w(&[1.0, 1.0]);
            let sq = t.mul(s, s);
            let mut g = [0.0; 2];
            let gxi = t.backward(sq, &mut g);
            let total = w[0] + w[1];
            assert!((g[0] - 2.0 * total).abs() < 1e-14);
            assert_eq!(gxi, 0.0);
        }
    }
}
