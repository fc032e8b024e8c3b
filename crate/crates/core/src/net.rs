//! The multiplexer network: a small MLP from binary codes to the simplex.
//!
//! Input is a binary code z ∈ {0,1}^K; output is a mixing vector on the
//! M-simplex produced by a softmax layer. Hidden layers use a configurable
//! activation (tanh by default). Backpropagation is written out by hand —
//! including the softmax Jacobian — because the training objective's
//! gradient enters at the *output* of the net, not through a scalar loss
//! layer, and because keeping the arithmetic explicit keeps it auditable
//! against finite differences.

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::math::{softmax, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected tanh, relu, or sigmoid)"
            ))),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Feed-forward net with layer widths `dims[0] → dims[1] → … → dims.last()`.
/// `dims[0]` is the code length K, the final width is the dictionary size M.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexerNet {
    dims: Vec<usize>,
    /// weights[l] has shape dims[l+1] × dims[l]
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Cached activations from one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardPass {
    /// The simplex output ξ̄.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("forward pass always has at least one layer")
    }
}

/// Parameter gradients, shaped exactly like the network's parameters.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl MultiplexerNet {
    /// Random initialization: weights ~ N(0, 1/fan_in), biases zero.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        Self::validate_dims(dims)?;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let sd = (1.0 / fan_in as f64).sqrt();
            weights.push(Mat::from_fn(fan_out, fan_in, |_, _| rng.normal() * sd));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MultiplexerNet { dims: dims.to_vec(), weights, biases, activation })
    }

    /// All-zero parameters (useful as a fixture: output is exactly uniform).
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_dims(dims)?;
        let weights = (0..dims.len() - 1).map(|l| Mat::zeros(dims[l + 1], dims[l])).collect();
        let biases = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1]]).collect();
        Ok(MultiplexerNet { dims: dims.to_vec(), weights, biases, activation })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::Shape(format!(
                "network needs at least input and output layers, got dims {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-width layer in dims {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, l: usize) -> &Mat {
        &self.weights[l]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Run the net on a binary code. Pure: repeated calls give bit-identical
    /// results. The returned pass caches every layer for `backward`.
    pub fn forward(&self, z: &[bool]) -> Result<ForwardPass> {
        if z.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "code length {} does not match network input {}",
                z.len(),
                self.input_dim()
            )));
        }
        let input: Vec<f64> = z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let n = self.weights.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut a: &[f64] = &input;
        for l in 0..n {
            let mut p = self.weights[l].matvec(a);
            for (pi, bi) in p.iter_mut().zip(&self.biases[l]) {
                *pi += bi;
            }
            let out = if l + 1 == n {
                softmax(&p)?
            } else {
                p.iter().map(|&x| self.activation.apply(x)).collect()
            };
            pre.push(p);
            post.push(out);
            a = post.last().unwrap();
        }
        Ok(ForwardPass { input, pre, post })
    }

    /// Backpropagate `grad_out` = ∂L/∂ξ̄ through the cached pass.
    ///
    /// The softmax head contributes δ_j = ξ̄_j (g_j − gᵀξ̄); hidden layers
    /// use the activation derivative on their cached pre-activations.
    pub fn backward(&self, pass: &ForwardPass, grad_out: &[f64]) -> Result<NetGrads> {
        self.check_pass(pass)?;
        if grad_out.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "grad_out length {} does not match network output {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let n = self.weights.len();
        let xi = pass.output();
        let inner: f64 = grad_out.iter().zip(xi).map(|(g, x)| g * x).sum();
        // delta at the output pre-activation (softmax Jacobian applied)
        let mut delta: Vec<f64> = xi.iter().zip(grad_out).map(|(&x, &g)| x * (g - inner)).collect();

        let mut gw: Vec<Mat> = Vec::with_capacity(n);
        let mut gb: Vec<Vec<f64>> = Vec::with_capacity(n);
        for l in (0..n).rev() {
            let below: &[f64] = if l == 0 { &pass.input } else { &pass.post[l - 1] };
            let mut w = Mat::zeros(self.weights[l].rows(), self.weights[l].cols());
            w.add_scaled_outer(&delta, below, 1.0);
            gw.push(w);
            gb.push(delta.clone());
            if l > 0 {
                let back = self.weights[l].tr_matvec(&delta);
                delta = back
                    .iter()
                    .zip(&pass.pre[l - 1])
                    .map(|(&d, &p)| d * self.activation.grad(p))
                    .collect();
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(NetGrads { weights: gw, biases: gb })
    }

    fn check_pass(&self, pass: &ForwardPass) -> Result<()> {
        let ok = pass.input.len() == self.input_dim()
            && pass.pre.len() == self.n_layers()
            && pass.post.len() == self.n_layers()
            && pass
                .pre
                .iter()
                .zip(self.dims.iter().skip(1))
                .all(|(p, &d)| p.len() == d)
            && pass
                .post
                .iter()
                .zip(self.dims.iter().skip(1))
                .all(|(p, &d)| p.len() == d);
        if ok {
            Ok(())
        } else {
            Err(Error::State(
                "forward cache does not match this network's shape; \
                 rerun forward on the same net before backward"
                    .into(),
            ))
        }
    }

    /// Append all parameters (per layer: weights column-major, then bias)
    /// to `out`. The order is the flat parameter layout used by the
    /// optimizer and the checkpoint format.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].data());
            out.extend_from_slice(&self.biases[l]);
        }
    }

    /// Inverse of `write_params`; returns how many values were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if src.len() < need {
            return Err(Error::Shape(format!(
                "parameter buffer has {} values, network needs {need}",
                src.len()
            )));
        }
        let mut off = 0;
        for l in 0..self.weights.len() {
            let wlen = self.weights[l].rows() * self.weights[l].cols();
            self.weights[l].data_mut().copy_from_slice(&src[off..off + wlen]);
            off += wlen;
            let blen = self.biases[l].len();
            self.biases[l].copy_from_slice(&src[off..off + blen]);
            off += blen;
        }
        Ok(off)
    }

    /// Direct mutable access for checkpoint loading and tests.
    pub fn weight_mut(&mut self, l: usize) -> &mut Mat {
        &mut self.weights[l]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut Vec<f64> {
        &mut self.biases[l]
    }
}

/// ADAM optimizer state over a flat parameter vector.
///
/// Plain descent form: `step` *subtracts* the update, so callers maximizing
/// an objective pass the negated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, rho: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            rho,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub(crate) fn restore(m: Vec<f64>, v: Vec<f64>, t: u64, rho: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { m, v, t, rho, beta1, beta2, eps }
    }

    pub(crate) fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// One ADAM update of `params` in the descent direction of `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam_step: params {}, grads {}, moments {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient entry {bad} in adam_step")));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= state.rho * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}
