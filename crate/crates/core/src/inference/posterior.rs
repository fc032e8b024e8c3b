//! Conjugate posterior updates for the factor probabilities and the
//! per-datum scales.
//!
//! Both E-steps are closed form. q(pi_k) = Beta(a_k, b_k) follows a
//! stochastic natural-gradient recursion: the minibatch sufficient
//! statistics are rescaled by N/|S| as if the whole dataset behaved like
//! the batch, and the parameters move a step eta toward that one-batch
//! estimate. q(lambda_n) = N(mean, var) is the exact Gaussian posterior
//! given the decoded direction f.

use crate::error::{Error, Result};
use crate::model::{HyperParams, SparseCode};

/// Beta posterior parameters for all K factor probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPosteriorBank {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BetaPosteriorBank {
    /// Bank at the prior: a_k = alpha*gamma/K, b_k = alpha*(1 - gamma/K).
    pub fn from_prior(hyper: &HyperParams) -> Result<Self> {
        hyper.validate()?;
        let (a0, b0) = hyper.beta_prior();
        Ok(BetaPosteriorBank { a: vec![a0; hyper.k], b: vec![b0; hyper.k] })
    }

    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "parameter vectors disagree: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.iter().chain(&b).any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Domain("Beta parameters must be positive and finite".into()));
        }
        Ok(BetaPosteriorBank { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn expected_pi_k(&self, k: usize) -> f64 {
        self.a[k] / (self.a[k] + self.b[k])
    }

    pub fn expected_pi(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.expected_pi_k(k)).collect()
    }
}

/// Gaussian posterior over one datum's scale lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePosterior {
    pub mean: f64,
    pub var: f64,
}

/// Exact conjugate posterior of lambda given x and the decoded f:
///
/// ```text
///   var  = 1 / (1/c + fᵀf / sigma2)
///   mean = var · fᵀx / sigma2
/// ```
///
/// Written through 1/c so a flat prior (c = 1e15) stays well-conditioned.
pub fn update_q_lambda(x: &[f64], f: &[f64], hyper: &HyperParams) -> Result<ScalePosterior> {
    if x.len() != f.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, f has {}",
            x.len(),
            f.len()
        )));
    }
    if x.iter().chain(f).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to update_q_lambda".into()));
    }
    let ftf: f64 = f.iter().map(|v| v * v).sum();
    let ftx: f64 = f.iter().zip(x).map(|(a, b)| a * b).sum();
    let var = 1.0 / (hyper.c_inv() + ftf / hyper.sigma2);
    let mean = var * ftx / hyper.sigma2;
    Ok(ScalePosterior { mean, var })
}

/// One stochastic natural-gradient step of q(pi).
///
/// For each factor the one-batch target is
///   a'_k = a0 + (N/|S|) Σ_n z_nk,   b'_k = b0 + (N/|S|) Σ_n (1 − z_nk)
/// and the bank moves as a ← (1 − eta)·a + eta·a'. With eta = 1 and the
/// batch equal to the full dataset this lands exactly on the conjugate
/// batch posterior.
pub fn update_q_pi(
    bank: &BetaPosteriorBank,
    codes: &[SparseCode],
    n_total: usize,
    eta: f64,
    hyper: &HyperParams,
) -> Result<BetaPosteriorBank> {
    if bank.len() != hyper.k {
        return Err(Error::Shape(format!(
            "bank has {} factors, hyperparameters say {}",
            bank.len(),
            hyper.k
        )));
    }
    if codes.is_empty() {
        return Err(Error::Shape("update_q_pi needs at least one code".into()));
    }
    if let Some(bad) = codes.iter().find(|c| c.z.len() != hyper.k) {
        return Err(Error::Shape(format!(
            "code has {} bits, model has K = {}",
            bad.z.len(),
            hyper.k
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0, 1], got {eta}")));
    }
    if n_total < codes.len() {
        return Err(Error::Domain(format!(
            "dataset size {} is smaller than the batch {}",
            n_total,
            codes.len()
        )));
    }
    let (a0, b0) = hyper.beta_prior();
    let scale = n_total as f64 / codes.len() as f64;
    let mut a = Vec::with_capacity(hyper.k);
    let mut b = Vec::with_capacity(hyper.k);
    for k in 0..hyper.k {
        let on = codes.iter().filter(|c| c.z[k]).count() as f64;
        let off = codes.len() as f64 - on;
        let a_target = a0 + scale * on;
        let b_target = b0 + scale * off;
        a.push((1.0 - eta) * bank.a[k] + eta * a_target);
        b.push((1.0 - eta) * bank.b[k] + eta * b_target);
    }
    Ok(BetaPosteriorBank { a, b })
}

/// Which factors are still in play. Pruning is monotone: a factor that
/// leaves never comes back within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveMask {
    active: Vec<bool>,
}

impl ActiveMask {
    pub fn all_active(k: usize) -> Self {
        ActiveMask { active: vec![true; k] }
    }

    pub fn from_flags(active: Vec<bool>) -> Self {
        ActiveMask { active }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.active[k]
    }

    pub fn count_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| if a { Some(i) } else { None })
            .collect()
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }
}

/// Deactivate every still-active factor whose posterior mean E[pi_k] has
/// fallen below `threshold`. Already-inactive factors stay inactive.
pub fn prune_factors(
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
    threshold: f64,
) -> Result<ActiveMask> {
    if bank.len() != mask.len() {
        return Err(Error::Shape(format!(
            "bank has {} factors, mask has {}",
            bank.len(),
            mask.len()
        )));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Domain(format!("prune threshold must lie in [0, 1), got {threshold}")));
    }
    let active = (0..bank.len())
        .map(|k| mask.is_active(k) && bank.expected_pi_k(k) >= threshold)
        .collect();
    Ok(ActiveMask { active })
}
