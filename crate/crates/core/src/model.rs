//! Generative model state and ancestral sampling.
//!
//! A datum is generated as
//!
//! ```text
//!   pi_k    ~ Beta(alpha*gamma/K, alpha*(1 - gamma/K))   k = 1..K
//!   z_nk    ~ Bernoulli(pi_k)
//!   xi_n    =  net(z_n)                     (mean of the Dirichlet head)
//!   lambda_n ~ N(0, c_sample)
//!   x_n     ~ N(lambda_n * Phi * xi_n, sigma2 * I)
//! ```
//!
//! so the decoder f(z) = Phi · net(z) picks a point in the column span of
//! the dictionary, and the per-datum scale lambda handles amplitude.

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::math::Mat;
use crate::net::{Activation, MultiplexerNet};

/// Fixed model hyperparameters. `c` is the prior scale variance; it can be
/// enormous (1e15 for an effectively flat prior), so all downstream
/// formulas go through `c_inv()` rather than dividing by expressions that
/// contain `c` multiplicatively.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Beta-process mass parameter.
    pub alpha: f64,
    /// Expected number of active factors per datum a priori.
    pub gamma: f64,
    /// Observation noise variance sigma².
    pub sigma2: f64,
    /// Prior variance of the per-datum scale lambda.
    pub c: f64,
    /// Number of binary factors.
    pub k: usize,
    /// Dictionary size (columns of Phi).
    pub m: usize,
    /// Observation dimension (rows of Phi).
    pub d: usize,
    /// Cap on code cardinality during sparse coding.
    pub l_max: usize,
    /// Factors with E[pi_k] below this are deactivated permanently.
    pub prune_threshold: f64,
    /// Clamp the dictionary to non-negative entries after each update.
    pub nonneg_dict: bool,
}

impl HyperParams {
    /// Defaults used by the reference experiments, parameterized by shape.
    pub fn defaults(k: usize, m: usize, d: usize) -> Self {
        HyperParams {
            alpha: 1.0,
            gamma: 1.0,
            sigma2: 100.0,
            c: 1e15,
            k,
            m,
            d,
            l_max: k,
            prune_threshold: 1e-3,
            nonneg_dict: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("sigma2", self.sigma2),
            ("c", self.c),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.k == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::Shape(format!(
                "k, m, d must all be nonzero (got k={}, m={}, d={})",
                self.k, self.m, self.d
            )));
        }
        if self.gamma >= self.k as f64 {
            return Err(Error::InvalidPrior(format!(
                "gamma = {} must be below K = {} for the Beta prior to be proper",
                self.gamma, self.k
            )));
        }
        if self.l_max == 0 || self.l_max > self.k {
            return Err(Error::Domain(format!(
                "l_max must be in 1..=K, got {} with K = {}",
                self.l_max, self.k
            )));
        }
        if !(self.prune_threshold >= 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::Domain(format!(
                "prune_threshold must lie in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        Ok(())
    }

    /// Beta prior parameters (a0, b0) = (alpha*gamma/K, alpha*(1 - gamma/K)).
    pub fn beta_prior(&self) -> (f64, f64) {
        let a0 = self.alpha * self.gamma / self.k as f64;
        let b0 = self.alpha * (1.0 - self.gamma / self.k as f64);
        (a0, b0)
    }

    #[inline]
    pub fn c_inv(&self) -> f64 {
        1.0 / self.c
    }
}

/// Learned parameters: the dictionary and the multiplexer network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Factor-loading dictionary, D × M, atoms in columns.
    pub phi: Mat,
    pub net: MultiplexerNet,
    pub hyper: HyperParams,
}

impl ModelState {
    /// Random initialization. `hidden` lists the hidden layer widths; the
    /// full net shape is [K, hidden..., M]. Dictionary entries are drawn
    /// N(0, 1/D) so atoms start near unit norm.
    pub fn init(
        hyper: HyperParams,
        hidden: &[usize],
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(hyper.k);
        dims.extend_from_slice(hidden);
        dims.push(hyper.m);
        let net = MultiplexerNet::new(&dims, activation, rng)?;
        let sd = (1.0 / hyper.d as f64).sqrt();
        let phi = Mat::from_fn(hyper.d, hyper.m, |_, _| rng.normal() * sd);
        let mut model = ModelState { phi, net, hyper };
        model.project_nonneg();
        Ok(model)
    }

    /// Assemble from parts, checking that shapes agree.
    pub fn assemble(phi: Mat, net: MultiplexerNet, hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        if phi.rows() != hyper.d || phi.cols() != hyper.m {
            return Err(Error::Shape(format!(
                "dictionary is {}x{}, hyperparameters say {}x{}",
                phi.rows(),
                phi.cols(),
                hyper.d,
                hyper.m
            )));
        }
        if net.input_dim() != hyper.k || net.output_dim() != hyper.m {
            return Err(Error::Shape(format!(
                "network maps {} -> {}, hyperparameters say {} -> {}",
                net.input_dim(),
                net.output_dim(),
                hyper.k,
                hyper.m
            )));
        }
        Ok(ModelState { phi, net, hyper })
    }

    /// Decode a binary code to its mean observation direction f = Phi·net(z).
    pub fn decode(&self, z: &[bool]) -> Result<Vec<f64>> {
        if z.len() != self.hyper.k {
            return Err(Error::Shape(format!(
                "code has {} bits, model has K = {}",
                z.len(),
                self.hyper.k
            )));
        }
        let pass = self.net.forward(z)?;
        Ok(self.phi.matvec(pass.output()))
    }

    /// Decode from an already-computed mixing vector.
    pub fn decode_from_mix(&self, xi: &[f64]) -> Vec<f64> {
        self.phi.matvec(xi)
    }

    /// Clamp dictionary entries to be non-negative. No-op unless the
    /// `nonneg_dict` variant is enabled.
    pub fn project_nonneg(&mut self) {
        if !self.hyper.nonneg_dict {
            return;
        }
        for v in self.phi.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Total number of learnable parameters (dictionary + network).
    pub fn param_count(&self) -> usize {
        self.phi.rows() * self.phi.cols() + self.net.param_count()
    }

    /// Flat parameter vector: dictionary (column-major), then the network
    /// layers as in `MultiplexerNet::write_params`.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.phi.data());
        self.net.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let plen = self.phi.rows() * self.phi.cols();
        self.phi.data_mut().copy_from_slice(&flat[..plen]);
        self.net.read_params(&flat[plen..])?;
        Ok(())
    }
}

/// A sparse binary code with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub z: Vec<bool>,
    /// Indices of set bits, ascending.
    pub active_set: Vec<usize>,
    /// Coding objective (marginal log-likelihood + expected log prior).
    pub score: f64,
}

impl SparseCode {
    pub fn from_z(z: Vec<bool>, score: f64) -> Self {
        let active_set = z
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| if b { Some(i) } else { None })
            .collect();
        SparseCode { z, active_set, score }
    }

    pub fn cardinality(&self) -> usize {
        self.active_set.len()
    }
}

/// How the mixing vector is realized during sampling.
#[derive(Debug, Clone)]
pub enum MixRealization {
    /// Use the network output directly (the Dirichlet mean). Default.
    Mean,
    /// Draw xi ~ Dirichlet(s · net(z)) for stress tests.
    Dirichlet { concentration: f64 },
}

/// Options for `sample_dataset`.
#[derive(Debug, Clone)]
pub struct SampleOptions {
    /// Variance of the sampled scales. This is deliberately separate from
    /// the inference-side prior variance `c`, which can be a flat 1e15.
    pub c_sample: f64,
    pub mix: MixRealization,
    /// Use these Bernoulli rates instead of drawing pi from the Beta prior
    /// (length K). Lets experiments fix which factors are frequent.
    pub pi_override: Option<Vec<f64>>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { c_sample: 1.0, mix: MixRealization::Mean, pi_override: None }
    }
}

/// A sampled synthetic dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SampledData {
    /// Observations, D × n, one datum per column.
    pub x: Mat,
    pub z: Vec<Vec<bool>>,
    pub lambda: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Ancestral sampling of `n` data from the generative model.
pub fn sample_dataset(
    model: &ModelState,
    n: usize,
    opts: &SampleOptions,
    rng: &mut Rng,
) -> Result<SampledData> {
    model.hyper.validate()?;
    if !(opts.c_sample.is_finite() && opts.c_sample > 0.0) {
        return Err(Error::Domain(format!(
            "c_sample must be positive and finite, got {}",
            opts.c_sample
        )));
    }
    let k = model.hyper.k;
    let pi = match &opts.pi_override {
        Some(p) => {
            if p.len() != k {
                return Err(Error::Shape(format!(
                    "pi_override has {} entries, model has K = {k}",
                    p.len()
                )));
            }
            if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain("pi_override entries must lie in [0, 1]".into()));
            }
            p.clone()
        }
        None => {
            let (a0, b0) = model.hyper.beta_prior();
            (0..k).map(|_| rng.beta(a0, b0)).collect()
        }
    };

    let noise_sd = model.hyper.sigma2.sqrt();
    let scale_sd = opts.c_sample.sqrt();
    let mut x = Mat::zeros(model.hyper.d, n);
    let mut codes = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<bool> = pi.iter().map(|&p| rng.bernoulli(p)).collect();
        let pass = model.net.forward(&z)?;
        let xi: Vec<f64> = match opts.mix {
            MixRealization::Mean => pass.output().to_vec(),
            MixRealization::Dirichlet { concentration } => {
                if !(concentration.is_finite() && concentration > 0.0) {
                    return Err(Error::Domain(format!(
                        "Dirichlet concentration must be positive, got {concentration}"
                    )));
                }
                let conc: Vec<f64> =
                    pass.output().iter().map(|&v| (concentration * v).max(1e-12)).collect();
                rng.dirichlet(&conc)
            }
        };
        let f = model.decode_from_mix(&xi);
        let lambda = scale_sd * rng.normal();
        let col = x.col_mut(i);
        for (d, &fd) in col.iter_mut().zip(&f) {
            *d = lambda * fd + noise_sd * rng.normal();
        }
        codes.push(z);
        lambdas.push(lambda);
    }
    Ok(SampledData { x, z: codes, lambda: lambdas, pi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(k: usize, m: usize, d: usize, seed: u64) -> ModelState {
        let mut hyper = HyperParams::defaults(k, m, d);
        hyper.sigma2 = 1.0;
        let mut rng = Rng::new(seed);
        ModelState::init(hyper, &[6], Activation::Tanh, &mut rng).unwrap()
    }

    #[test]
    fn decode_zero_dictionary() {
        let mut model = tiny_model(3, 4, 5, 1);
        model.phi = Mat::zeros(5, 4);
        let f = model.decode(&[true, false, true]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_identity_dictionary_zero_net() {
        // Phi = I and a zero net: f is the uniform mixing vector itself
        let mut hyper = HyperParams::defaults(3, 4, 4);
        hyper.sigma2 = 1.0;
        let net = MultiplexerNet::zeros(&[3, 4], Activation::Tanh).unwrap();
        let phi = Mat::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        let model = ModelState::assemble(phi, net, hyper).unwrap();
        let f = model.decode(&[false, true, false]).unwrap();
        for &v in &f {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_matches_triple_loop() {
        let model = tiny_model(4, 5, 6, 11);
        let z = [true, false, true, true];
        let got = model.decode(&z).unwrap();
        let xi = model.net.forward(&z).unwrap().output().to_vec();
        for r in 0..6 {
            let mut s = 0.0;
            for c in 0..5 {
                s += model.phi.get(r, c) * xi[c];
            }
            assert!((got[r] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn decode_is_linear_in_the_dictionary() {
        let a = tiny_model(3, 4, 5, 21);
        let mut b = a.clone();
        let mut rng = Rng::new(22);
        b.phi = Mat::from_fn(5, 4, |_, _| rng.normal());
        let mut sum = a.clone();
        sum.phi = Mat::from_fn(5, 4, |r, c| a.phi.get(r, c) + b.phi.get(r, c));
        let z = [true, true, false];
        let fa = a.decode(&z).unwrap();
        let fb = b.decode(&z).unwrap();
        let fs = sum.decode(&z).unwrap();
        for i in 0..5 {
            assert!((fs[i] - fa[i] - fb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_shape_error() {
        let model = tiny_model(3, 4, 5, 2);
        assert!(matches!(model.decode(&[true; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn sampling_is_noise_free_in_the_small_variance_limit() {
        let mut model = tiny_model(4, 4, 6, 3);
        model.hyper.sigma2 = 1e-30;
        let mut rng = Rng::new(4);
        let data = sample_dataset(&model, 40, &SampleOptions::default(), &mut rng).unwrap();
        for i in 0..40 {
            let f = model.decode(&data.z[i]).unwrap();
            for (xd, fd) in data.x.col(i).iter().zip(&f) {
                assert!((xd - data.lambda[i] * fd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_active_bits_matches_prior_mass() {
        // fresh pi each draw: mean bit count over many single-datum draws
        // concentrates on gamma = sum E[pi_k] = 1
        let mut hyper = HyperParams::defaults(100, 4, 3);
        hyper.sigma2 = 1.0;
        let mut rng = Rng::new(5);
        let model = ModelState::init(hyper, &[8], Activation::Tanh, &mut rng).unwrap();
        let reps = 10_000;
        let mut total = 0usize;
        for r in 0..reps {
            let mut rng = Rng::from_stream(500, 3, r as u64);
            let data = sample_dataset(&model, 1, &SampleOptions::default(), &mut rng).unwrap();
            total += data.z[0].iter().filter(|&&b| b).count();
        }
        let mean = total as f64 / reps as f64;
        // Var(count) = K p (1-p) with p = gamma/K = 0.01
        let se = (100.0 * 0.01 * 0.99 / reps as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * se,
            "mean active bits {mean}, want 1 ± {}",
            3.0 * se
        );
    }

    #[test]
    fn empirical_bit_rates_track_sampled_pi() {
        let mut hyper = HyperParams::defaults(10, 4, 3);
        hyper.sigma2 = 1.0;
        hyper.gamma = 5.0;
        hyper.alpha = 2.0;
        let mut rng = Rng::new(6);
        let model = ModelState::init(hyper, &[8], Activation::Tanh, &mut rng).unwrap();
        let n = 4000;
        let data = sample_dataset(&model, n, &SampleOptions::default(), &mut rng).unwrap();
        for k in 0..10 {
            let freq =
                data.z.iter().filter(|z| z[k]).count() as f64 / n as f64;
            assert!(
                (freq - data.pi[k]).abs() < 4.0 / (n as f64).sqrt(),
                "factor {k}: frequency {freq} vs pi {}",
                data.pi[k]
            );
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let model = tiny_model(5, 4, 6, 7);
        let mut r1 = Rng::new(88);
        let mut r2 = Rng::new(88);
        let a = sample_dataset(&model, 25, &SampleOptions::default(), &mut r1).unwrap();
        let b = sample_dataset(&model, 25, &SampleOptions::default(), &mut r2).unwrap();
        assert_eq!(a.z, b.z);
        for (x, y) in a.x.data().iter().zip(b.x.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn pi_override_and_dirichlet_mix() {
        let model = tiny_model(4, 4, 5, 8);
        let mut rng = Rng::new(9);
        let opts = SampleOptions {
            pi_override: Some(vec![1.0, 0.0, 1.0, 0.0]),
            ..SampleOptions::default()
        };
        let data = sample_dataset(&model, 10, &opts, &mut rng).unwrap();
        for z in &data.z {
            assert_eq!(z, &vec![true, false, true, false]);
        }
        let opts = SampleOptions {
            mix: MixRealization::Dirichlet { concentration: 50.0 },
            ..SampleOptions::default()
        };
        assert!(sample_dataset(&model, 5, &opts, &mut rng).is_ok());
        // bad override length
        let opts = SampleOptions { pi_override: Some(vec![0.5; 3]), ..SampleOptions::default() };
        assert!(sample_dataset(&model, 1, &opts, &mut rng).is_err());
    }

    #[test]
    fn invalid_prior_rejected() {
        let mut hyper = HyperParams::defaults(4, 4, 5);
        hyper.gamma = 4.0; // gamma >= K makes the Beta prior improper
        assert!(matches!(hyper.validate(), Err(Error::InvalidPrior(_))));
        hyper.gamma = 1.0;
        hyper.l_max = 9;
        assert!(hyper.validate().is_err());
    }

    #[test]
    fn nonneg_projection() {
        let mut hyper = HyperParams::defaults(2, 2, 2);
        hyper.sigma2 = 1.0;
        hyper.nonneg_dict = true;
        let net = MultiplexerNet::zeros(&[2, 2], Activation::Tanh).unwrap();
        let phi = Mat::from_fn(2, 2, |r, c| match (r, c) {
            (0, 0) => -1.0,
            (0, 1) => 2.0,
            (1, 0) => 0.0,
            (1, 1) => -3.0,
            _ => unreachable!(),
        });
        let mut model = ModelState::assemble(phi, net, hyper).unwrap();
        model.project_nonneg();
        assert_eq!(model.phi.get(0, 0), 0.0);
        assert_eq!(model.phi.get(0, 1), 2.0);
        assert_eq!(model.phi.get(1, 0), 0.0);
        assert_eq!(model.phi.get(1, 1), 0.0);
        // idempotent
        let snapshot = model.phi.clone();
        model.project_nonneg();
        assert_eq!(model.phi, snapshot);
    }

    #[test]
    fn flat_param_roundtrip() {
        let model = tiny_model(3, 4, 5, 10);
        let flat = model.flatten_params();
        assert_eq!(flat.len(), model.param_count());
        let mut other = tiny_model(3, 4, 5, 999);
        other.set_params(&flat).unwrap();
        assert_eq!(model.phi, other.phi);
        assert_eq!(model.net, other.net);
    }
}
