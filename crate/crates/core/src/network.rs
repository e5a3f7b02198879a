//! Multi-layer perceptron with a softmax head over spline weights and an
//! optional extra output for the GP shape, plus reverse-mode gradients and
//! the Adam optimizer. No external autodiff: the layer structure is fixed,
//! so backpropagation is written out directly.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output (both supported
    /// activations allow this; ReLU uses derivative 0 at exactly 0).
    #[inline]
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Activation applied to the shape output. The choice fixes the range of
/// `xi(x)`: scaled tanh for a bounded two-sided range, logistic for
/// `(0, 1)`, exponential for `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum XiActivation {
    ScaledTanh { lo: f64, hi: f64 },
    Logistic,
    Exponential,
}

impl XiActivation {
    pub fn validate(&self) -> Result<()> {
        if let XiActivation::ScaledTanh { lo, hi } = self {
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "scaled-tanh range requires lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            XiActivation::ScaledTanh { lo, hi } => lo + (hi - lo) * 0.5 * (z.tanh() + 1.0),
            XiActivation::Logistic => 1.0 / (1.0 + (-z).exp()),
            XiActivation::Exponential => z.exp(),
        }
    }

    /// Derivative dxi/dz expressed through the activation value.
    #[inline]
    pub fn deriv_from_value(&self, xi: f64) -> f64 {
        match *self {
            XiActivation::ScaledTanh { lo, hi } => {
                let t = 2.0 * (xi - lo) / (hi - lo) - 1.0;
                (hi - lo) * 0.5 * (1.0 - t * t)
            }
            XiActivation::Logistic => xi * (1.0 - xi),
            XiActivation::Exponential => xi,
        }
    }

    /// Pre-activation that produces `target`, used to initialize the shape
    /// bias; falls back toward mid-range when `target` is unreachable.
    pub fn bias_for(&self, target: f64) -> f64 {
        match *self {
            XiActivation::ScaledTanh { lo, hi } => {
                let margin = 0.05 * (hi - lo);
                let t = target.clamp(lo + margin, hi - margin);
                let u = 2.0 * (t - lo) / (hi - lo) - 1.0;
                0.5 * ((1.0 + u) / (1.0 - u)).ln()
            }
            XiActivation::Logistic => {
                let t = target.clamp(0.05, 0.95);
                (t / (1.0 - t)).ln()
            }
            XiActivation::Exponential => target.max(1e-6).ln(),
        }
    }

    /// Open range of attainable values.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            XiActivation::ScaledTanh { lo, hi } => (lo, hi),
            XiActivation::Logistic => (0.0, 1.0),
            XiActivation::Exponential => (0.0, f64::INFINITY),
        }
    }
}

/// Output head: plain softmax over the spline weights, or softmax over the
/// weights plus a leading shape output with its own activation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Head {
    Softmax,
    SoftmaxXi(XiActivation),
}

impl Head {
    pub fn has_xi(&self) -> bool {
        matches!(self, Head::SoftmaxXi(_))
    }

    pub fn xi_activation(&self) -> Option<XiActivation> {
        match self {
            Head::Softmax => None,
            Head::SoftmaxXi(act) => Some(*act),
        }
    }
}

/// All estimable parameters of the perceptron, together with the
/// activation choices that fix its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `weights[h]` has shape `(n_h, n_{h-1})`, mapping layer `h-1` output
    /// to layer `h` pre-activations; the last entry is the output layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
    pub head: Head,
}

/// Network outputs for one covariate batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// `n x K` softmax weights, rows summing to one.
    pub weights: Array2<f64>,
    /// Shape values per row, present iff the head has a shape output.
    pub xi: Option<Array1<f64>>,
}

/// Gradient of a scalar loss with respect to [`BatchOutput`].
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub d_weights: Array2<f64>,
    pub d_xi: Option<Array1<f64>>,
}

/// Per-parameter gradients, shaped like [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            weights: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[h]` the output of
    /// hidden layer `h`.
    activations: Vec<Array2<f64>>,
}

impl NetworkParams {
    /// Glorot-uniform initialization with a seeded generator. `hidden`
    /// gives the width of each hidden layer; `num_weights` is the number
    /// of spline weights K. The output layer gains one extra row when the
    /// head carries a shape output, initialized so `xi(x)` starts at 0.2.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        num_weights: usize,
        activation: Activation,
        head: Head,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || num_weights == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if let Head::SoftmaxXi(act) = head {
            act.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_dim = num_weights + usize::from(head.has_xi());
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);

        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for h in 1..dims.len() {
            let (n_in, n_out) = (dims[h - 1], dims[h]);
            let scale = (6.0 / (n_in + n_out) as f64).sqrt();
            let w =
                Array2::from_shape_fn((n_out, n_in), |_| (rng.random::<f64>() * 2.0 - 1.0) * scale);
            weights.push(w);
            biases.push(Array1::zeros(n_out));
        }
        let mut params = NetworkParams {
            weights,
            biases,
            activation,
            head,
        };
        if let Head::SoftmaxXi(act) = head {
            // shape output starts constant, strictly positive, so the
            // initial loss is finite before any tail has been learned
            let last = params.weights.len() - 1;
            params.weights[last].row_mut(0).fill(0.0);
            params.biases[last][0] = act.bias_for(0.2);
        }
        Ok(params)
    }

    /// Number of spline weights produced by the head.
    pub fn num_weights(&self) -> usize {
        let out = self.weights.last().expect("at least one layer").nrows();
        out - usize::from(self.head.has_xi())
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1]
            .iter()
            .map(|w| w.nrows())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.biases.len() || self.weights.is_empty() {
            return Err(Error::invalid("weights/biases layer count mismatch"));
        }
        for h in 0..self.weights.len() {
            if self.weights[h].nrows() != self.biases[h].len() {
                return Err(Error::invalid(format!(
                    "layer {h} weight/bias shape mismatch"
                )));
            }
            if h > 0 && self.weights[h].ncols() != self.weights[h - 1].nrows() {
                return Err(Error::invalid(format!("layer {h} does not chain")));
            }
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        if let Head::SoftmaxXi(act) = self.head {
            act.validate()?;
        }
        Ok(())
    }

    /// Extend a softmax-only network with a shape output row (zero
    /// weights, bias chosen so `xi(x) = target_xi` initially). Used to
    /// warm-start tail training from a bulk-only fit.
    pub fn extend_with_xi(&self, act: XiActivation, target_xi: f64) -> Result<NetworkParams> {
        if self.head.has_xi() {
            return Err(Error::invalid("network already has a shape output"));
        }
        act.validate()?;
        let mut out = self.clone();
        let last = out.weights.len() - 1;
        let old_w = &self.weights[last];
        let mut w = Array2::zeros((old_w.nrows() + 1, old_w.ncols()));
        w.slice_mut(ndarray::s![1.., ..]).assign(old_w);
        let mut b = Array1::zeros(old_w.nrows() + 1);
        b.slice_mut(ndarray::s![1..]).assign(&self.biases[last]);
        b[0] = act.bias_for(target_xi);
        out.weights[last] = w;
        out.biases[last] = b;
        out.head = Head::SoftmaxXi(act);
        Ok(out)
    }

    /// Forward pass for a batch (rows are observations).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<(BatchOutput, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariate input"));
        }
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers);
        activations.push(x.clone());
        let mut cur = x.clone();
        for h in 0..layers - 1 {
            let mut z = cur.dot(&self.weights[h].t());
            z += &self.biases[h];
            z.mapv_inplace(|v| self.activation.apply(v));
            activations.push(z.clone());
            cur = z;
        }
        let mut logits = cur.dot(&self.weights[layers - 1].t());
        logits += &self.biases[layers - 1];

        let k = self.num_weights();
        let n = x.nrows();
        let offset = usize::from(self.head.has_xi());
        let mut weights = Array2::zeros((n, k));
        for i in 0..n {
            // softmax with max subtraction
            let row = logits.row(i);
            let mut top = f64::NEG_INFINITY;
            for j in 0..k {
                top = top.max(row[offset + j]);
            }
            let mut total = 0.0;
            for j in 0..k {
                let e = (row[offset + j] - top).exp();
                weights[(i, j)] = e;
                total += e;
            }
            for j in 0..k {
                weights[(i, j)] /= total;
            }
        }
        let xi = self
            .head
            .xi_activation()
            .map(|act| Array1::from_shape_fn(n, |i| act.value(logits[(i, 0)])));
        Ok((BatchOutput { weights, xi }, ForwardCache { activations }))
    }

    /// Forward pass for one covariate vector: spline weights and, for a
    /// shape head, the shape value.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Option<f64>)> {
        let arr = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (out, _) = self.forward_batch(&arr)?;
        let w = out.weights.row(0).to_vec();
        let xi = out.xi.map(|v| v[0]);
        Ok((w, xi))
    }

    /// Backward pass: map a gradient with respect to the head outputs to
    /// per-parameter gradients, using the cache from `forward_batch`.
    pub fn backward(
        &self,
        out: &BatchOutput,
        cache: &ForwardCache,
        d_out: &OutputGrad,
    ) -> Gradients {
        let layers = self.weights.len();
        let n = out.weights.nrows();
        let k = self.num_weights();
        let offset = usize::from(self.head.has_xi());
        let out_dim = k + offset;

        // head Jacobian: softmax rows and the shape activation
        let mut d_logits = Array2::zeros((n, out_dim));
        for i in 0..n {
            let mut inner = 0.0;
            for j in 0..k {
                inner += d_out.d_weights[(i, j)] * out.weights[(i, j)];
            }
            for j in 0..k {
                d_logits[(i, offset + j)] = out.weights[(i, j)] * (d_out.d_weights[(i, j)] - inner);
            }
        }
        if let (Some(act), Some(d_xi), Some(xi)) = (
            self.head.xi_activation(),
            d_out.d_xi.as_ref(),
            out.xi.as_ref(),
        ) {
            for i in 0..n {
                d_logits[(i, 0)] = d_xi[i] * act.deriv_from_value(xi[i]);
            }
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_logits; // gradient wrt current layer pre-activation
        for h in (0..layers).rev() {
            // matmul output layout depends on operand strides; the
            // optimizer consumes flat slices, so force standard layout
            grads.weights[h] = to_standard(delta.t().dot(&cache.activations[h]));
            grads.biases[h] = delta.sum_axis(Axis(0));
            if h > 0 {
                let mut d_prev = delta.dot(&self.weights[h]);
                let act_vals = &cache.activations[h];
                for i in 0..n {
                    for j in 0..d_prev.ncols() {
                        d_prev[(i, j)] *= self.activation.deriv_from_output(act_vals[(i, j)]);
                    }
                }
                delta = d_prev;
            }
        }
        grads
    }

    /// Evaluate `loss_fn` on the forward outputs and accumulate its
    /// gradient with respect to every network parameter. The loss value is
    /// returned unchecked so callers can inspect non-finite losses.
    pub fn gradient<F>(&self, x: &Array2<f64>, loss_fn: F) -> Result<(f64, Gradients)>
    where
        F: FnOnce(&BatchOutput) -> (f64, OutputGrad),
    {
        let (out, cache) = self.forward_batch(x)?;
        let (loss, d_out) = loss_fn(&out);
        let grads = self.backward(&out, &cache, &d_out);
        Ok((loss, grads))
    }

    /// L1 penalty on the shape head: `coeff` times the absolute sum of the
    /// final-layer row feeding the shape output, bias included. Zero for
    /// softmax-only networks.
    pub fn l1_penalty(&self, coeff: f64) -> f64 {
        if coeff == 0.0 || !self.head.has_xi() {
            return 0.0;
        }
        let last = self.weights.len() - 1;
        let row_sum: f64 = self.weights[last].row(0).iter().map(|v| v.abs()).sum();
        coeff * (row_sum + self.biases[last][0].abs())
    }

    /// Add the L1 subgradient (sign convention: 0 at 0) for the shape row.
    pub fn add_l1_subgradient(&self, coeff: f64, grads: &mut Gradients) {
        if coeff == 0.0 || !self.head.has_xi() {
            return;
        }
        let last = self.weights.len() - 1;
        for (g, w) in grads.weights[last]
            .row_mut(0)
            .iter_mut()
            .zip(self.weights[last].row(0))
        {
            if *w != 0.0 {
                *g += coeff * w.signum();
            }
        }
        let b = self.biases[last][0];
        if b != 0.0 {
            grads.biases[last][0] += coeff * b.signum();
        }
    }
}

/// Adam optimizer state (bias-corrected first and second moments).
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m_w: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            v_w: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            m_b: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            v_b: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Zero the moments; used when training restarts at a lower rate.
    pub fn reset(&mut self) {
        for m in &mut self.m_w {
            m.fill(0.0);
        }
        for v in &mut self.v_w {
            v.fill(0.0);
        }
        for m in &mut self.m_b {
            m.fill(0.0);
        }
        for v in &mut self.v_b {
            v.fill(0.0);
        }
        self.t = 0;
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for h in 0..params.weights.len() {
            update(
                params.weights[h].as_slice_mut().unwrap(),
                grads.weights[h].as_slice().unwrap(),
                self.m_w[h].as_slice_mut().unwrap(),
                self.v_w[h].as_slice_mut().unwrap(),
                (self.beta1, self.beta2, self.eps),
                lr,
                c1,
                c2,
            );
            update(
                params.biases[h].as_slice_mut().unwrap(),
                grads.biases[h].as_slice().unwrap(),
                self.m_b[h].as_slice_mut().unwrap(),
                self.v_b[h].as_slice_mut().unwrap(),
                (self.beta1, self.beta2, self.eps),
                lr,
                c1,
                c2,
            );
        }
        Ok(())
    }
}

fn to_standard(a: Array2<f64>) -> Array2<f64> {
    if a.as_slice().is_some() {
        a
    } else {
        let dim = a.raw_dim();
        let flat: Vec<f64> = a.iter().cloned().collect();
        Array2::from_shape_vec(dim, flat).expect("shape preserved")
    }
}

fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    (beta1, beta2, eps): (f64, f64, f64),
    lr: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64, head: Head) -> NetworkParams {
        NetworkParams::init(3, &[4, 4], 5, Activation::Sigmoid, head, seed).unwrap()
    }

    #[test]
    fn softmax_of_zero_params_is_uniform() {
        let mut net = small_net(1, Head::Softmax);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        let (w, xi) = net.forward(&[0.3, -0.2, 1.0]).unwrap();
        assert!(xi.is_none());
        for v in &w {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn zeroed_scaled_tanh_gives_midpoint() {
        let mut net = small_net(
            1,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
        );
        for w in &mut net.weights {
            w.fill(0.0);
        }
        for b in &mut net.biases {
            b.fill(0.0);
        }
        let (_, xi) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!((xi.unwrap() - 0.1).abs() < 1e-15); // midpoint of (-0.5, 0.7)
    }

    #[test]
    fn initial_xi_is_point_two() {
        let net = small_net(
            7,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
        );
        for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 2.0], [0.1, 0.9, 0.4]] {
            let (_, xi) = net.forward(&x).unwrap();
            assert!((xi.unwrap() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_and_xi_in_range() {
        let act = XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 };
        for seed in 0..20 {
            let net = NetworkParams::init(4, &[8], 7, Activation::Relu, Head::SoftmaxXi(act), seed)
                .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for _ in 0..50 {
                let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let (w, xi) = net.forward(&x).unwrap();
                let total: f64 = w.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
                let xi = xi.unwrap();
                assert!(xi > -0.5 && xi < 0.7);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = small_net(3, Head::Softmax);
        assert!(net.forward(&[0.0, 1.0]).is_err());
        assert!(net.forward(&[0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn softmax_is_permutation_equivariant() {
        let net = small_net(11, Head::Softmax);
        let x = [0.4, -1.2, 0.8];
        let (w, _) = net.forward(&x).unwrap();
        let mut permuted = net.clone();
        let last = permuted.weights.len() - 1;
        let r1 = permuted.weights[last].row(1).to_owned();
        let r3 = permuted.weights[last].row(3).to_owned();
        permuted.weights[last].row_mut(1).assign(&r3);
        permuted.weights[last].row_mut(3).assign(&r1);
        permuted.biases[last].swap(1, 3);
        let (wp, _) = permuted.forward(&x).unwrap();
        assert!((w[1] - wp[3]).abs() < 1e-15);
        assert!((w[3] - wp[1]).abs() < 1e-15);
        assert!((w[0] - wp[0]).abs() < 1e-15);
    }

    /// Quadratic test loss over outputs with analytic gradient.
    fn quadratic_loss(out: &BatchOutput) -> (f64, OutputGrad) {
        let mut loss = 0.0;
        let mut d_w = Array2::zeros(out.weights.raw_dim());
        for i in 0..out.weights.nrows() {
            for j in 0..out.weights.ncols() {
                let target = ((i + j) % 3) as f64 * 0.3;
                let diff = out.weights[(i, j)] - target;
                loss += diff * diff;
                d_w[(i, j)] = 2.0 * diff;
            }
        }
        let d_xi = out.xi.as_ref().map(|xi| {
            let mut d = Array1::zeros(xi.len());
            for i in 0..xi.len() {
                let diff = xi[i] - 0.05;
                loss += diff * diff;
                d[i] = 2.0 * diff;
            }
            d
        });
        (
            loss,
            OutputGrad {
                d_weights: d_w,
                d_xi,
            },
        )
    }

    fn flatten(params: &NetworkParams) -> Vec<f64> {
        let mut v = Vec::new();
        for w in &params.weights {
            v.extend(w.iter());
        }
        for b in &params.biases {
            v.extend(b.iter());
        }
        v
    }

    fn unflatten(template: &NetworkParams, flat: &[f64]) -> NetworkParams {
        let mut out = template.clone();
        let mut idx = 0;
        for w in &mut out.weights {
            for v in w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        for b in &mut out.biases {
            for v in b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for head in [
            Head::Softmax,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
        ] {
            let net = small_net(17, head);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
            let (_, grads) = net.gradient(&x, quadratic_loss).unwrap();
            let mut flat_grad: Vec<f64> = Vec::new();
            for w in &grads.weights {
                flat_grad.extend(w.iter());
            }
            for b in &grads.biases {
                flat_grad.extend(b.iter());
            }

            let theta = flatten(&net);
            let h = 1e-6;
            for (i, &g) in flat_grad.iter().enumerate() {
                let mut up = theta.clone();
                up[i] += h;
                let mut dn = theta.clone();
                dn[i] -= h;
                let (lu, _) = unflatten(&net, &up).gradient(&x, quadratic_loss).unwrap();
                let (ld, _) = unflatten(&net, &dn).gradient(&x, quadratic_loss).unwrap();
                let fd = (lu - ld) / (2.0 * h);
                assert!(
                    (fd - g).abs() <= 1e-4 * g.abs().max(1e-3),
                    "param {i}: fd={fd:e}, analytic={g:e}"
                );
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let net = small_net(5, Head::Softmax);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let (_, grads) = net
            .gradient(&x, |out| {
                (
                    7.0,
                    OutputGrad {
                        d_weights: Array2::zeros(out.weights.raw_dim()),
                        d_xi: None,
                    },
                )
            })
            .unwrap();
        for w in &grads.weights {
            assert!(w.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn l1_penalty_and_subgradient() {
        let mut net = small_net(
            23,
            Head::SoftmaxXi(XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 }),
        );
        assert_eq!(net.l1_penalty(0.0), 0.0);
        let last = net.weights.len() - 1;
        net.weights[last].row_mut(0).fill(0.0);
        net.biases[last][0] = 0.0;
        assert_eq!(net.l1_penalty(0.1), 0.0);

        // row {1, -2, 0, 0}, bias 0.5, coefficient 0.1 -> 0.35
        net.weights[last][(0, 0)] = 1.0;
        net.weights[last][(0, 1)] = -2.0;
        net.biases[last][0] = 0.5;
        assert!((net.l1_penalty(0.1) - 0.35).abs() < 1e-15);

        let mut grads = Gradients::zeros_like(&net);
        net.add_l1_subgradient(0.1, &mut grads);
        assert_eq!(grads.weights[last][(0, 0)], 0.1);
        assert_eq!(grads.weights[last][(0, 1)], -0.1);
        assert_eq!(grads.weights[last][(0, 2)], 0.0); // zero entry: subgradient 0
        assert_eq!(grads.biases[last][0], 0.1);
        let plain = small_net(2, Head::Softmax);
        assert_eq!(plain.l1_penalty(0.5), 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = small_net(31, Head::Softmax);
        let before = net.clone();
        let mut adam = AdamState::new(&net);
        let grads = Gradients::zeros_like(&net);
        adam.step(&mut net, &grads, 1e-3).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut net = small_net(37, Head::Softmax);
        let before = net.clone();
        let mut adam = AdamState::new(&net);
        let mut grads = Gradients::zeros_like(&net);
        for w in &mut grads.weights {
            w.fill(3.7);
        }
        for b in &mut grads.biases {
            b.fill(-0.2);
        }
        adam.step(&mut net, &grads, 1e-3).unwrap();
        for h in 0..net.weights.len() {
            for (after, b4) in net.weights[h].iter().zip(before.weights[h].iter()) {
                // first Adam step moves each coordinate by ~lr * sign(g)
                assert!(((after - b4) + 1e-3).abs() < 1e-6);
            }
            for (after, b4) in net.biases[h].iter().zip(before.biases[h].iter()) {
                assert!(((after - b4) - 1e-3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = small_net(41, Head::Softmax);
        let mut adam = AdamState::new(&net);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][(0, 0)] = f64::NAN;
        assert!(adam.step(&mut net, &grads, 1e-3).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut net = small_net(43, Head::Softmax);
        let target = 0.37_f64;
        let mut adam = AdamState::new(&net);
        for _ in 0..2000 {
            let mut grads = Gradients::zeros_like(&net);
            for h in 0..net.weights.len() {
                for (g, p) in grads.weights[h].iter_mut().zip(net.weights[h].iter()) {
                    *g = 2.0 * (p - target);
                }
                for (g, p) in grads.biases[h].iter_mut().zip(net.biases[h].iter()) {
                    *g = 2.0 * (p - target);
                }
            }
            adam.step(&mut net, &grads, 0.01).unwrap();
        }
        for w in &net.weights {
            for v in w {
                assert!((v - target).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn extend_with_xi_preserves_bulk_weights() {
        let net = small_net(47, Head::Softmax);
        let act = XiActivation::Logistic;
        let extended = net.extend_with_xi(act, 0.2).unwrap();
        let x = [0.3, 0.1, -0.4];
        let (w0, _) = net.forward(&x).unwrap();
        let (w1, xi) = extended.forward(&x).unwrap();
        for (a, b) in w0.iter().zip(&w1) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((xi.unwrap() - 0.2).abs() < 1e-12);
        assert!(extended.extend_with_xi(act, 0.2).is_err());
    }

    #[test]
    fn scaled_tanh_strictly_increasing_onto_range() {
        let act = XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 };
        let mut prev = f64::NEG_INFINITY;
        for i in -50..=50 {
            let z = i as f64 / 5.0;
            let v = act.value(z);
            assert!(v > prev);
            assert!(v > -0.5 && v < 0.7);
            prev = v;
        }
        assert!((act.value(-30.0) - -0.5).abs() < 1e-9);
        assert!((act.value(30.0) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn deterministic_init() {
        let a = small_net(123, Head::Softmax);
        let b = small_net(123, Head::Softmax);
        assert_eq!(a, b);
    }
}
