//! The three scoring terms of the coding objective.
//!
//! `marginal_loglik` integrates the scale out analytically. For
//! Σ = sigma2·I + c·ffᵀ the matrix identities collapse to scalars:
//!
//! ```text
//!   ln N(x; 0, Σ) = −½ [ D ln(2π sigma2)
//!                        + ln(1 + c·fᵀf/sigma2)
//!                        + ‖x‖²/sigma2
//!                        − (fᵀx)² / (sigma2·(sigma2/c + fᵀf)) ]
//! ```
//!
//! The last denominator is grouped as `sigma2/c + fᵀf` — dividing by c
//! instead of multiplying — so a flat prior (c = 1e15) cannot overflow.
//!
//! `expected_loglik` is the M-step objective: the expectation of the
//! Gaussian log-likelihood under q(lambda), which splits into the
//! log-density at the posterior mean minus a variance penalty.
//!
//! `expected_log_prior` is the Beta-Bernoulli term in digamma form; pruned
//! factors contribute nothing.

use crate::error::{Error, Result};
use crate::inference::posterior::{ActiveMask, BetaPosteriorBank, ScalePosterior};
use crate::math::special::{digamma_raw, log_gaussian_diag};
use crate::model::HyperParams;

/// ln p(x | z, θ) with lambda integrated out against N(0, c).
pub fn marginal_loglik(x: &[f64], f: &[f64], hyper: &HyperParams) -> Result<f64> {
    if x.len() != f.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, f has {}",
            x.len(),
            f.len()
        )));
    }
    let xtx: f64 = x.iter().map(|v| v * v).sum();
    let ftx: f64 = f.iter().zip(x).map(|(a, b)| a * b).sum();
    let ftf: f64 = f.iter().map(|v| v * v).sum();
    Ok(marginal_loglik_parts(xtx, ftx, ftf, x.len(), hyper))
}

/// Scalar form of the marginal, shared by the public entry point and the
/// sparse-coding hot path (which gets fᵀf and fᵀx from precomputed Gram
/// products instead of materializing f).
pub(crate) fn marginal_loglik_parts(
    xtx: f64,
    ftx: f64,
    ftf: f64,
    d: usize,
    hyper: &HyperParams,
) -> f64 {
    let s2 = hyper.sigma2;
    let d = d as f64;
    let logdet_ratio = (hyper.c * ftf / s2).ln_1p();
    let quad = xtx / s2 - ftx * ftx / (s2 * (hyper.c_inv() * s2 + ftf));
    -0.5 * (d * (2.0 * std::f64::consts::PI * s2).ln() + logdet_ratio + quad)
}

/// E_{q(lambda)}[ ln N(x; lambda f, sigma2 I) ]. Splits exactly into the
/// log-density at the posterior mean minus the variance penalty
/// q.var·fᵀf/(2 sigma2).
pub fn expected_loglik(
    x: &[f64],
    f: &[f64],
    q: &ScalePosterior,
    hyper: &HyperParams,
) -> Result<f64> {
    if x.len() != f.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, f has {}",
            x.len(),
            f.len()
        )));
    }
    let mean: Vec<f64> = f.iter().map(|v| q.mean * v).collect();
    let at_mean = log_gaussian_diag(x, &mean, hyper.sigma2)?;
    let ftf: f64 = f.iter().map(|v| v * v).sum();
    Ok(at_mean - 0.5 * q.var * ftf / hyper.sigma2)
}

/// E_{q(pi)}[ ln p(z | pi) ] over the still-active factors:
/// Σ_k z_k (ψ(a_k) − ψ(a_k+b_k)) + (1−z_k)(ψ(b_k) − ψ(a_k+b_k)).
pub fn expected_log_prior(
    z: &[bool],
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
) -> Result<f64> {
    if z.len() != bank.len() || mask.len() != bank.len() {
        return Err(Error::Shape(format!(
            "code {} / bank {} / mask {} lengths disagree",
            z.len(),
            bank.len(),
            mask.len()
        )));
    }
    let mut acc = 0.0;
    for k in 0..bank.len() {
        if !mask.is_active(k) {
            continue;
        }
        let (a, b) = (bank.a()[k], bank.b()[k]);
        let psi_sum = digamma_raw(a + b);
        acc += if z[k] { digamma_raw(a) - psi_sum } else { digamma_raw(b) - psi_sum };
    }
    Ok(acc)
}

/// Precomputed digamma terms for a fixed bank and mask, used when many
/// codes are scored against the same posterior (one value per factor for
/// z_k = 1 and z_k = 0, plus the all-zeros baseline).
#[derive(Debug, Clone)]
pub(crate) struct PriorWeights {
    /// ψ(a_k) − ψ(b_k): the score change when bit k turns on.
    pub delta_on: Vec<f64>,
    /// Σ over active k of ψ(b_k) − ψ(a_k + b_k): the all-zeros code score.
    pub base: f64,
}

impl PriorWeights {
    pub fn new(bank: &BetaPosteriorBank, mask: &ActiveMask) -> Result<Self> {
        if bank.len() != mask.len() {
            return Err(Error::Shape(format!(
                "bank has {} factors, mask has {}",
                bank.len(),
                mask.len()
            )));
        }
        let mut delta_on = vec![0.0; bank.len()];
        let mut base = 0.0;
        for k in 0..bank.len() {
            if !mask.is_active(k) {
                continue;
            }
            let (a, b) = (bank.a()[k], bank.b()[k]);
            delta_on[k] = digamma_raw(a) - digamma_raw(b);
            base += digamma_raw(b) - digamma_raw(a + b);
        }
        Ok(PriorWeights { delta_on, base })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng::Rng;
    use crate::model::HyperParams;

    fn hyper(sigma2: f64, c: f64) -> HyperParams {
        let mut h = HyperParams::defaults(4, 4, 4);
        h.sigma2 = sigma2;
        h.c = c;
        h
    }

    #[test]
    fn marginal_zero_direction_is_pure_noise_density() {
        let h = hyper(2.0, 5.0);
        let x = [0.3, -1.2, 0.7];
        let got = marginal_loglik(&x, &[0.0; 3], &h).unwrap();
        let want = log_gaussian_diag(&x, &[0.0; 3], 2.0).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn marginal_matches_dense_covariance_small_case() {
        // D = 3, moderate c: build Σ = sigma2 I + c ffᵀ and evaluate the
        // Gaussian log-density by explicit determinant and inverse
        let h = hyper(2.0, 5.0);
        let f = [0.5, -0.25, 1.5];
        let x = [0.9, 0.1, -0.4];
        let mut cov = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = h.c * f[i] * f[j] + if i == j { h.sigma2 } else { 0.0 };
            }
        }
        let det = cov[0][0] * (cov[1][1] * cov[2][2] - cov[1][2] * cov[2][1])
            - cov[0][1] * (cov[1][0] * cov[2][2] - cov[1][2] * cov[2][0])
            + cov[0][2] * (cov[1][0] * cov[2][1] - cov[1][1] * cov[2][0]);
        let mut inv = [[0.0f64; 3]; 3];
        inv[0][0] = (cov[1][1] * cov[2][2] - cov[1][2] * cov[2][1]) / det;
        inv[0][1] = (cov[0][2] * cov[2][1] - cov[0][1] * cov[2][2]) / det;
        inv[0][2] = (cov[0][1] * cov[1][2] - cov[0][2] * cov[1][1]) / det;
        inv[1][0] = (cov[1][2] * cov[2][0] - cov[1][0] * cov[2][2]) / det;
        inv[1][1] = (cov[0][0] * cov[2][2] - cov[0][2] * cov[2][0]) / det;
        inv[1][2] = (cov[0][2] * cov[1][0] - cov[0][0] * cov[1][2]) / det;
        inv[2][0] = (cov[1][0] * cov[2][1] - cov[1][1] * cov[2][0]) / det;
        inv[2][1] = (cov[0][1] * cov[2][0] - cov[0][0] * cov[2][1]) / det;
        inv[2][2] = (cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0]) / det;
        let mut quad = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                quad += x[i] * inv[i][j] * x[j];
            }
        }
        let want = -0.5
            * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
        let got = marginal_loglik(&x, &f, &h).unwrap();
        assert!(
            (got - want).abs() < 1e-10 * want.abs(),
            "got {got}, dense oracle {want}"
        );
    }

    #[test]
    fn marginal_scaling_symmetry() {
        // (f, c) and (s·f, c/s²) describe the same covariance
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let d = 2 + (rng.uniform() * 6.0) as usize;
            let f: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.normal() * 2.0).collect();
            let s = 0.25 + rng.uniform() * 8.0;
            let h1 = hyper(1.3, 4.0);
            let h2 = hyper(1.3, 4.0 / (s * s));
            let f2: Vec<f64> = f.iter().map(|v| v * s).collect();
            let l1 = marginal_loglik(&x, &f, &h1).unwrap();
            let l2 = marginal_loglik(&x, &f2, &h2).unwrap();
            assert!((l1 - l2).abs() < 1e-10 * l1.abs().max(1.0));
        }
    }

    #[test]
    fn marginal_survives_flat_prior() {
        let h = hyper(1.0, 1e15);
        let f = [0.8, -0.6];
        let x = [1.6, -1.2]; // exactly 2f: strong alignment
        let v = marginal_loglik(&x, &f, &h).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn expected_loglik_point_mass_collapses() {
        // q.var = 0 reduces to the plain log-density at lambda = q.mean
        let h = hyper(0.8, 10.0);
        let f = [0.2, -0.7, 1.1];
        let x = [0.4, -1.0, 2.0];
        let q = ScalePosterior { mean: 1.7, var: 0.0 };
        let got = expected_loglik(&x, &f, &q, &h).unwrap();
        let mean: Vec<f64> = f.iter().map(|v| 1.7 * v).collect();
        let want = log_gaussian_diag(&x, &mean, 0.8).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn expected_loglik_zero_direction_ignores_q() {
        let h = hyper(1.5, 10.0);
        let x = [0.3, 0.9];
        let a = expected_loglik(&x, &[0.0; 2], &ScalePosterior { mean: 5.0, var: 2.0 }, &h)
            .unwrap();
        let b = expected_loglik(&x, &[0.0; 2], &ScalePosterior { mean: -3.0, var: 0.1 }, &h)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expected_loglik_formula_spotcheck() {
        // direct evaluation of −(‖x−mf‖² + v·fᵀf)/(2σ²) − (D/2)ln(2πσ²)
        let h = hyper(0.5, 10.0);
        let f = [1.0, 2.0];
        let x = [0.5, -0.5];
        let q = ScalePosterior { mean: 0.25, var: 0.125 };
        let resid: f64 = (0.5f64 - 0.25).powi(2) + (-0.5f64 - 0.5).powi(2);
        let want = -(resid + 0.125 * 5.0) / 1.0
            - 1.0 * (2.0 * std::f64::consts::PI * 0.5).ln();
        let got = expected_loglik(&x, &f, &q, &h).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn prior_uniform_bank_worked_example() {
        // a = b = 1: each factor contributes ψ(1) − ψ(2) = −1 whatever z is
        let bank = BetaPosteriorBank::new(vec![1.0; 5], vec![1.0; 5]).unwrap();
        let mask = ActiveMask::all_active(5);
        for z in [[false; 5], [true; 5]] {
            let v = expected_log_prior(&z, &bank, &mask).unwrap();
            assert!((v + 5.0).abs() < 1e-10, "got {v}");
        }
    }

    #[test]
    fn prior_single_factor_example() {
        // a = 3, b = 1, z = 1: ψ(3) − ψ(4) = −1/3
        let bank = BetaPosteriorBank::new(vec![3.0], vec![1.0]).unwrap();
        let mask = ActiveMask::all_active(1);
        let v = expected_log_prior(&[true], &bank, &mask).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn prior_skips_pruned_factors() {
        let bank = BetaPosteriorBank::new(vec![3.0, 1.0], vec![1.0, 9.0]).unwrap();
        let full = ActiveMask::all_active(2);
        let masked = ActiveMask::from_flags(vec![true, false]);
        let with_both = expected_log_prior(&[true, true], &bank, &full).unwrap();
        let with_one = expected_log_prior(&[true, true], &bank, &masked).unwrap();
        assert!((with_one - (-1.0 / 3.0)).abs() < 1e-10);
        assert!(with_both < with_one, "second factor should contribute a penalty");
        // all-pruned bank scores zero
        let none = ActiveMask::from_flags(vec![false, false]);
        assert_eq!(expected_log_prior(&[true, true], &bank, &none).unwrap(), 0.0);
    }

    #[test]
    fn prior_weights_agree_with_direct_evaluation() {
        let mut rng = Rng::new(18);
        for _ in 0..50 {
            let k = 1 + (rng.uniform() * 8.0) as usize;
            let a: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform() * 5.0).collect();
            let b: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform() * 5.0).collect();
            let bank = BetaPosteriorBank::new(a, b).unwrap();
            let mask = ActiveMask::from_flags((0..k).map(|_| rng.bernoulli(0.8)).collect());
            let w = PriorWeights::new(&bank, &mask).unwrap();
            let z: Vec<bool> = (0..k).map(|_| rng.bernoulli(0.5)).collect();
            let fast = w.base
                + z.iter()
                    .enumerate()
                    .filter(|&(k, &on)| on && mask.is_active(k))
                    .map(|(k, _)| w.delta_on[k])
                    .sum::<f64>();
            let slow = expected_log_prior(&z, &bank, &mask).unwrap();
            assert!((fast - slow).abs() < 1e-10, "fast {fast} vs direct {slow}");
        }
    }
}
