//! Independent numerical oracles.
//!
//! Everything here recomputes quantities the library derives in closed
//! form, using a different algorithmic route: adaptive quadrature instead
//! of conjugate algebra, dense matrix factorization instead of rank-one
//! identities, finite differences instead of backpropagation, and brute
//! enumeration instead of greedy search. Tests and the CLI's `gradcheck` /
//! `oracle` commands compare the two routes; agreement is the evidence
//! that the closed forms are right.

use crate::error::{Error, Result};
use crate::inference::posterior::{ActiveMask, BetaPosteriorBank};
use crate::inference::{expected_log_prior, marginal_loglik};
use crate::math::{dot, Mat, Rng};
use crate::model::{HyperParams, ModelState};

/// Relative error with a small absolute floor so near-zero references
/// do not blow the ratio up.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

/// Largest elementwise relative error between two equally long slices.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "rel-err length mismatch");
    got.iter()
        .zip(want)
        .map(|(&g, &w)| rel_err(g, w))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------
// quadrature

/// Adaptive Simpson integration of `f` over [a, b] to absolute tolerance
/// `tol`, by recursive interval halving with the standard Richardson
/// acceptance test.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Maximize a unimodal function on [lo, hi] by ternary search.
fn ternary_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..400 {
        let third = (hi - lo) / 3.0;
        let a = lo + third;
        let b = hi - third;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
        if hi - lo < 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Log of the joint density of (x, λ) as a function of λ — the integrand
/// behind both the λ-posterior and the marginal likelihood, written
/// directly from the model definition (spherical Gaussian noise around
/// λ·f, zero-mean Gaussian prior with variance c).
fn log_joint(x: &[f64], f: &[f64], lambda: f64, hyper: &HyperParams) -> f64 {
    let d = x.len() as f64;
    let mut ss = 0.0;
    for (&xv, &fv) in x.iter().zip(f) {
        let r = xv - lambda * fv;
        ss += r * r;
    }
    let ll = -0.5 * d * (2.0 * std::f64::consts::PI * hyper.sigma2).ln() - 0.5 * ss / hyper.sigma2;
    let lp = -0.5 * (2.0 * std::f64::consts::PI * hyper.c).ln()
        - 0.5 * lambda * lambda / hyper.c;
    ll + lp
}

/// Peak location and a curvature-based width estimate for the λ-integrand,
/// used to size the quadrature domain. The width comes from a central
/// second difference at the peak.
fn integrand_peak(x: &[f64], f: &[f64], hyper: &HyperParams) -> (f64, f64) {
    let fnorm = dot(f, f).sqrt();
    let xnorm = dot(x, x).sqrt();
    let reach = 4.0 + 8.0 * xnorm / fnorm.max(1e-9) + 4.0 * hyper.sigma2.sqrt() / fnorm.max(1e-9);
    let g = |l: f64| log_joint(x, f, l, hyper);
    let peak = ternary_max(&g, -reach, reach);
    let h = 1e-3_f64.max(0.05 * (1.0 + peak.abs()));
    let curv = (g(peak + h) - 2.0 * g(peak) + g(peak - h)) / (h * h);
    let sd = if curv < 0.0 { (-1.0 / curv).sqrt() } else { reach };
    (peak, sd.min(reach))
}

/// Posterior mean and variance of λ given x, by adaptive quadrature of
/// the exact (unnormalized) posterior density. No conjugacy identities:
/// the density is integrated as written.
pub fn lambda_posterior_moments_quadrature(
    x: &[f64],
    f: &[f64],
    hyper: &HyperParams,
) -> Result<(f64, f64)> {
    if x.len() != f.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, f has {}",
            x.len(),
            f.len()
        )));
    }
    if dot(f, f) == 0.0 {
        return Err(Error::Domain(
            "quadrature oracle needs a nonzero feature vector (the posterior \
             otherwise equals the prior over an enormous domain)"
                .into(),
        ));
    }
    let (peak, sd) = integrand_peak(x, f, hyper);
    let (lo, hi) = (peak - 12.0 * sd, peak + 12.0 * sd);
    let gmax = log_joint(x, f, peak, hyper);
    let w = |l: f64| (log_joint(x, f, l, hyper) - gmax).exp();
    let tol = 1e-12 * sd;
    let z = adaptive_simpson(&w, lo, hi, tol);
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Numeric(format!("quadrature normalizer {z} is unusable")));
    }
    let first = adaptive_simpson(&|l: f64| l * w(l), lo, hi, tol * (1.0 + peak.abs()));
    let mean = first / z;
    let second = adaptive_simpson(&|l: f64| (l - mean) * (l - mean) * w(l), lo, hi, tol * sd);
    Ok((mean, second / z))
}

/// log ∫ N(x; λf, σ²I) N(λ; 0, c) dλ by adaptive quadrature — the
/// marginal likelihood computed without the rank-one identity.
pub fn log_marginal_quadrature(x: &[f64], f: &[f64], hyper: &HyperParams) -> Result<f64> {
    if x.len() != f.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, f has {}",
            x.len(),
            f.len()
        )));
    }
    if dot(f, f) == 0.0 {
        // the integrand no longer depends on λ through the likelihood;
        // the marginal is the pure noise density times ∫N(λ;0,c) = 1
        let d = x.len() as f64;
        let ss = dot(x, x);
        return Ok(-0.5 * d * (2.0 * std::f64::consts::PI * hyper.sigma2).ln()
            - 0.5 * ss / hyper.sigma2);
    }
    let (peak, sd) = integrand_peak(x, f, hyper);
    let (lo, hi) = (peak - 12.0 * sd, peak + 12.0 * sd);
    let gmax = log_joint(x, f, peak, hyper);
    let w = |l: f64| (log_joint(x, f, l, hyper) - gmax).exp();
    let z = adaptive_simpson(&w, lo, hi, 1e-12 * sd);
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Numeric(format!("quadrature normalizer {z} is unusable")));
    }
    Ok(gmax + z.ln())
}

// ---------------------------------------------------------------------
// dense Gaussian densities

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix. Fails on non-positive pivots.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("cholesky needs square input, got {}x{}", n, a.cols())));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "matrix is not positive definite (pivot {s} at {j})"
                    )));
                }
                l.set(j, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// The covariance σ²I + c·ffᵀ materialized densely.
pub fn rank_one_covariance(f: &[f64], sigma2: f64, c: f64) -> Mat {
    let d = f.len();
    let mut cov = Mat::from_fn(d, d, |i, j| c * f[i] * f[j]);
    for i in 0..d {
        cov.set(i, i, cov.get(i, i) + sigma2);
    }
    cov
}

/// Zero-mean Gaussian log-density with an explicit covariance matrix,
/// evaluated through a dense Cholesky factorization (log-determinant from
/// the pivots, quadratic form by forward substitution).
pub fn dense_gaussian_logpdf(x: &[f64], cov: &Mat) -> Result<f64> {
    let d = x.len();
    if cov.rows() != d || cov.cols() != d {
        return Err(Error::Shape(format!(
            "covariance is {}x{}, x has {} entries",
            cov.rows(),
            cov.cols(),
            d
        )));
    }
    let l = cholesky(cov)?;
    let mut logdet = 0.0;
    for i in 0..d {
        logdet += l.get(i, i).ln();
    }
    logdet *= 2.0;
    // solve L y = x
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = x[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let quad = dot(&y, &y);
    Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
}

/// Zero-mean Gaussian log-density for the covariance σ²I + c·ffᵀ using
/// its exact eigenstructure: variance σ² + c·fᵀf along f, σ² in the
/// orthogonal complement. Unlike the dense route this stays accurate
/// when c is so large that forming σ²I + c·ffᵀ would round σ² away.
pub fn rank_one_gaussian_logpdf(x: &[f64], f: &[f64], sigma2: f64, c: f64) -> Result<f64> {
    let d = x.len();
    if f.len() != d {
        return Err(Error::Shape(format!("x has {} entries, f has {}", d, f.len())));
    }
    let ftf = dot(f, f);
    if ftf == 0.0 {
        let ss = dot(x, x);
        return Ok(-0.5
            * (d as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + ss / sigma2));
    }
    let t = dot(f, x) / ftf.sqrt(); // component of x along the unit vector f/‖f‖
    let ss_perp = (dot(x, x) - t * t).max(0.0);
    let spike = sigma2 + c * ftf;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(-0.5
        * ((d as f64 - 1.0) * (two_pi * sigma2).ln()
            + ss_perp / sigma2
            + (two_pi * spike).ln()
            + t * t / spike))
}

// ---------------------------------------------------------------------
// finite differences

/// Central finite-difference gradient of a scalar function of a flat
/// parameter vector.
pub fn fd_gradient<F>(objective: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let hi = objective(&work)?;
        work[i] = orig - h;
        let lo = objective(&work)?;
        work[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    Ok(grad)
}

// ---------------------------------------------------------------------
// enumeration

/// Exact argmax of the coding objective by looping over every binary code
/// (subsets of active factors, cardinality ≤ L_max), scoring each through
/// the public decode-then-evaluate route. Independent of the incremental
/// Gram-based machinery inside the production coder. Ties resolve to the
/// lexicographically smallest code.
pub fn best_code_by_enumeration(
    x: &[f64],
    model: &ModelState,
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
) -> Result<(Vec<bool>, f64)> {
    let k = model.hyper.k;
    if k > 20 {
        return Err(Error::Domain(format!(
            "refusing to enumerate 2^{k} codes; use K ≤ 20"
        )));
    }
    let mut best: Option<(f64, Vec<bool>)> = None;
    'patterns: for pattern in 0u64..(1u64 << k) {
        if (pattern.count_ones() as usize) > model.hyper.l_max {
            continue;
        }
        let z: Vec<bool> = (0..k).map(|i| pattern >> i & 1 == 1).collect();
        for (i, &on) in z.iter().enumerate() {
            if on && !mask.is_active(i) {
                continue 'patterns;
            }
        }
        let f = model.decode(&z)?;
        let s = marginal_loglik(x, &f, &model.hyper)?
            + expected_log_prior(&z, bank, mask)?;
        let better = match &best {
            None => true,
            Some((bs, bz)) => s > *bs || (s == *bs && z < *bz),
        };
        if better {
            best = Some((s, z));
        }
    }
    let (score, z) = best.expect("the empty code is always enumerated");
    Ok((z, score))
}

/// Convenience for oracle suites: a reproducible bag of random model
/// instances at small dimensions.
pub fn random_small_model(
    k: usize,
    m: usize,
    d: usize,
    sigma2: f64,
    c: f64,
    rng: &mut Rng,
) -> Result<ModelState> {
    let mut hyper = HyperParams::defaults(k, m, d);
    hyper.sigma2 = sigma2;
    hyper.c = c;
    ModelState::init(hyper, &[6], crate::net::Activation::Tanh, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_gaussian_diag;

    #[test]
    fn simpson_integrates_polynomials_and_sine() {
        let cube = |x: f64| x * x * x;
        let got = adaptive_simpson(&cube, 0.0, 2.0, 1e-12);
        assert!((got - 4.0).abs() < 1e-10, "got {got}");
        let got = adaptive_simpson(&f64::sin, 0.0, std::f64::consts::PI, 1e-12);
        assert!((got - 2.0).abs() < 1e-10, "got {got}");
        let gauss = |x: f64| (-0.5 * x * x).exp();
        let got = adaptive_simpson(&gauss, -40.0, 40.0, 1e-13);
        let want = (2.0 * std::f64::consts::PI).sqrt();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn posterior_moments_on_an_obvious_instance() {
        // D=1, f=1, sigma2=1, nearly flat prior: the posterior over the
        // scale is N(x, 1) to within 1e-15 effects
        let mut hyper = HyperParams::defaults(1, 1, 1);
        hyper.sigma2 = 1.0;
        hyper.c = 1e15;
        let (mean, var) =
            lambda_posterior_moments_quadrature(&[3.0], &[1.0], &hyper).unwrap();
        assert!((mean - 3.0).abs() < 1e-8, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-8, "var {var}");
    }

    #[test]
    fn posterior_moments_with_a_tight_prior() {
        // c = 0.25 shrinks the posterior toward zero: mean must sit
        // strictly between 0 and the least-squares value
        let mut hyper = HyperParams::defaults(1, 1, 2);
        hyper.sigma2 = 0.5;
        hyper.c = 0.25;
        let x = [2.0, -1.0];
        let f = [1.0, 0.5];
        let (mean, var) = lambda_posterior_moments_quadrature(&x, &f, &hyper).unwrap();
        let ls = dot(&f, &x) / dot(&f, &f);
        assert!(mean > 0.0 && mean < ls, "mean {mean} vs least-squares {ls}");
        assert!(var > 0.0 && var < 0.25, "posterior variance must shrink below the prior");
    }

    #[test]
    fn quadrature_oracle_rejects_zero_feature() {
        let hyper = HyperParams::defaults(1, 1, 2);
        assert!(matches!(
            lambda_posterior_moments_quadrature(&[1.0, 2.0], &[0.0, 0.0], &hyper),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cholesky_matches_a_hand_factorization() {
        // A = [[4, 2], [2, 3]] has L = [[2, 0], [1, sqrt(2)]]
        let a = Mat::from_col_major(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let l = cholesky(&a).unwrap();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        assert!(l.get(0, 1).abs() < 1e-15);
        assert!((l.get(1, 1) - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite_input() {
        let a = Mat::from_col_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn dense_logpdf_matches_diagonal_gaussian() {
        let x = [0.3, -1.2, 0.7];
        let cov = rank_one_covariance(&[0.0, 0.0, 0.0], 2.5, 1.0);
        let got = dense_gaussian_logpdf(&x, &cov).unwrap();
        let want = log_gaussian_diag(&x, &[0.0, 0.0, 0.0], 2.5).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn dense_and_eigen_routes_agree_at_moderate_c() {
        let mut rng = Rng::new(60);
        for _ in 0..30 {
            let d = 2 + (rng.next_u64() % 5) as usize;
            let f: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.normal() * 2.0).collect();
            let sigma2 = 0.5 + rng.uniform() * 2.0;
            let c = 0.5 + rng.uniform() * 5.0;
            let dense = dense_gaussian_logpdf(&x, &rank_one_covariance(&f, sigma2, c)).unwrap();
            let eigen = rank_one_gaussian_logpdf(&x, &f, sigma2, c).unwrap();
            assert!(
                rel_err(eigen, dense) < 1e-9,
                "routes disagree: dense {dense}, eigen {eigen}"
            );
        }
    }

    #[test]
    fn marginal_quadrature_agrees_with_the_dense_density() {
        // two oracle routes for the same quantity: ∫ N(x; λf, σ²I)N(λ;0,c) dλ
        // equals N(x; 0, σ²I + c ffᵀ)
        let mut rng = Rng::new(61);
        for _ in 0..10 {
            let mut hyper = HyperParams::defaults(1, 1, 3);
            hyper.sigma2 = 0.4 + rng.uniform();
            hyper.c = 0.5 + rng.uniform() * 3.0;
            let f: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let quad = log_marginal_quadrature(&x, &f, &hyper).unwrap();
            let dense =
                dense_gaussian_logpdf(&x, &rank_one_covariance(&f, hyper.sigma2, hyper.c))
                    .unwrap();
            assert!(
                rel_err(quad, dense) < 1e-8,
                "quadrature {quad} vs dense {dense}"
            );
        }
    }

    #[test]
    fn fd_gradient_of_a_cubic() {
        let f = |p: &[f64]| -> crate::error::Result<f64> { Ok(p.iter().map(|v| v * v * v).sum()) };
        let p = [1.0, -2.0, 0.5];
        let g = fd_gradient(f, &p, 1e-5).unwrap();
        for (gi, pi) in g.iter().zip(&p) {
            let want = 3.0 * pi * pi;
            assert!((gi - want).abs() < 1e-7, "{gi} vs {want}");
        }
    }

    #[test]
    fn enumeration_respects_mask_and_cardinality() {
        let mut rng = Rng::new(62);
        let mut model = random_small_model(4, 3, 5, 0.2, 1.0, &mut rng).unwrap();
        model.hyper.l_max = 1;
        let bank = BetaPosteriorBank::from_prior(&model.hyper).unwrap();
        let mask = ActiveMask::from_flags(vec![true, false, true, false]);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (z, _) = best_code_by_enumeration(&x, &model, &bank, &mask).unwrap();
        assert!(z.iter().filter(|&&b| b).count() <= 1);
        assert!(!z[1] && !z[3], "masked factors must stay off");
    }

    #[test]
    fn enumeration_refuses_oversized_models() {
        let mut rng = Rng::new(63);
        let model = random_small_model(21, 3, 5, 0.2, 1.0, &mut rng).unwrap();
        let bank = BetaPosteriorBank::from_prior(&model.hyper).unwrap();
        let mask = ActiveMask::all_active(21);
        let x = vec![0.0; 5];
        assert!(matches!(
            best_code_by_enumeration(&x, &model, &bank, &mask),
            Err(Error::Domain(_))
        ));
    }
}
