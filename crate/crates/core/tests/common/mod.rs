//! Shared test oracles, independent of the library's evaluation paths:
//! composite Simpson quadrature, a naive recursive spline evaluator taken
//! straight from the defining recursion, and simple RNG helpers.

#![allow(dead_code)]

/// Composite Simpson rule with `panels` subintervals (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels.max(2) + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Direct recursive M-spline evaluation: the defining recursion with no
/// tabulation, shared knots with the production basis. Left-continuity at
/// the top boundary is handled by nudging the query just inside.
pub fn naive_mspline(knots: &[f64], k: usize, order: usize, y: f64) -> f64 {
    let y = if y >= 1.0 { 1.0 - 1e-13 } else { y };
    rec(knots, k, order, y)
}

fn rec(t: &[f64], k: usize, m: usize, y: f64) -> f64 {
    if m == 1 {
        if t[k] <= y && y < t[k + 1] {
            return 1.0 / (t[k + 1] - t[k]);
        }
        return 0.0;
    }
    let denom = t[k + m] - t[k];
    if denom <= 0.0 {
        return 0.0;
    }
    let left = (y - t[k]) * rec(t, k, m - 1, y);
    let right = (t[k + m] - y) * rec(t, k + 1, m - 1, y);
    m as f64 * (left + right) / ((m - 1) as f64 * denom)
}

/// xorshift-based uniform stream for test fixtures.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
