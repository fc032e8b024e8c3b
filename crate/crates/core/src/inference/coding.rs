//! Binary sparse coding against the current posterior.
//!
//! The objective for a code z is
//!
//! ```text
//!   L(z) = marginal_loglik(x, f(z)) + expected_log_prior(z)
//! ```
//!
//! `greedy_sparse_code` grows the code one bit at a time, matching-pursuit
//! style: at each step it scores every still-inactive candidate bit and
//! accepts the best one only if it strictly beats the current code. The
//! baseline is the *scored empty code*, not zero — an all-noise datum must
//! be able to keep an empty code, and that only works if the baseline is
//! its actual objective value.
//!
//! The hot path never materializes f = Phi·net(z): with G = PhiᵀPhi and
//! h = Phiᵀx precomputed, fᵀf = ξᵀGξ and fᵀx = ξᵀh, which turns a D·M
//! multiply per candidate into an M² one.

use crate::error::{Error, Result};
use crate::inference::objective::{marginal_loglik_parts, PriorWeights};
use crate::inference::posterior::{ActiveMask, BetaPosteriorBank};
use crate::math::{dot, quad_form, Mat};
use crate::model::{ModelState, SparseCode};

/// Shared per-iteration scoring state: the Gram matrix of the dictionary
/// and the digamma terms of the current bank. Build once per (model, bank)
/// pair and reuse across the whole minibatch.
pub struct CodingContext<'a> {
    pub(crate) model: &'a ModelState,
    pub(crate) mask: &'a ActiveMask,
    gram: Mat,
    prior: PriorWeights,
}

impl<'a> CodingContext<'a> {
    pub fn new(
        model: &'a ModelState,
        bank: &BetaPosteriorBank,
        mask: &'a ActiveMask,
    ) -> Result<Self> {
        if bank.len() != model.hyper.k || mask.len() != model.hyper.k {
            return Err(Error::Shape(format!(
                "bank {} / mask {} / K {} disagree",
                bank.len(),
                mask.len(),
                model.hyper.k
            )));
        }
        Ok(CodingContext {
            model,
            mask,
            gram: model.phi.gram(),
            prior: PriorWeights::new(bank, mask)?,
        })
    }

    /// Score one code, returning its objective and the mixing vector.
    /// The prior term is summed from scratch in ascending factor order,
    /// so any two callers scoring the same code get bit-identical values
    /// — the property that makes "greedy ≤ exhaustive" hold exactly.
    fn score(&self, z: &[bool], xtx: f64, h: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pass = self.model.net.forward(z)?;
        let xi = pass.output();
        let ftf = quad_form(&self.gram, xi);
        let ftx = dot(xi, h);
        let marginal = marginal_loglik_parts(xtx, ftx, ftf, self.model.hyper.d, &self.model.hyper);
        let mut prior = self.prior.base;
        for (k, &on) in z.iter().enumerate() {
            if on {
                prior += self.prior.delta_on[k];
            }
        }
        Ok((marginal + prior, pass.output().to_vec()))
    }
}

/// Result of coding one datum, including internals the trainer reuses.
pub(crate) struct CodedDatum {
    pub code: SparseCode,
    /// Mixing vector at the final code (saves a forward pass downstream).
    pub xi: Vec<f64>,
    /// Objective after each acceptance, starting with the empty code.
    pub trace: Vec<f64>,
}

pub(crate) fn greedy_code_with_ctx(
    x: &[f64],
    ctx: &CodingContext<'_>,
) -> Result<CodedDatum> {
    let hyper = &ctx.model.hyper;
    if x.len() != hyper.d {
        return Err(Error::Shape(format!(
            "datum has {} entries, model has D = {}",
            x.len(),
            hyper.d
        )));
    }
    let xtx: f64 = x.iter().map(|v| v * v).sum();
    let h = ctx.model.phi.tr_matvec(x);

    let mut z = vec![false; hyper.k];
    let (mut best_score, mut best_xi) = ctx.score(&z, xtx, &h)?;
    let mut trace = vec![best_score];

    while z.iter().filter(|&&b| b).count() < hyper.l_max {
        let mut cand: Option<(f64, usize, Vec<f64>)> = None;
        for j in 0..hyper.k {
            if z[j] || !ctx.mask.is_active(j) {
                continue;
            }
            z[j] = true;
            let (s, xi) = ctx.score(&z, xtx, &h)?;
            z[j] = false;
            // strict comparison keeps the smallest index on ties
            if cand.as_ref().map_or(true, |(cs, _, _)| s > *cs) {
                cand = Some((s, j, xi));
            }
        }
        match cand {
            Some((s, j, xi)) if s > best_score => {
                z[j] = true;
                best_score = s;
                best_xi = xi;
                trace.push(s);
            }
            _ => break,
        }
    }
    Ok(CodedDatum { code: SparseCode::from_z(z, best_score), xi: best_xi, trace })
}

/// Greedy sparse coding of one datum against the current model and bank.
pub fn greedy_sparse_code(
    x: &[f64],
    model: &ModelState,
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
) -> Result<SparseCode> {
    let ctx = CodingContext::new(model, bank, mask)?;
    Ok(greedy_code_with_ctx(x, &ctx)?.code)
}

/// Like `greedy_sparse_code`, additionally returning the objective after
/// each accepted bit (index 0 is the empty-code baseline). The sequence is
/// strictly increasing by construction.
pub fn greedy_sparse_code_traced(
    x: &[f64],
    model: &ModelState,
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
) -> Result<(SparseCode, Vec<f64>)> {
    let ctx = CodingContext::new(model, bank, mask)?;
    let coded = greedy_code_with_ctx(x, &ctx)?;
    Ok((coded.code, coded.trace))
}

/// Exact maximization of the coding objective by enumeration over all
/// codes on the active factors with cardinality ≤ l_max. Exponential in
/// the active count, so it refuses more than `k_limit` (≤ 20) factors.
/// Ties resolve to the lexicographically smallest code.
pub fn exhaustive_sparse_code(
    x: &[f64],
    model: &ModelState,
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
    k_limit: usize,
) -> Result<SparseCode> {
    const HARD_CAP: usize = 20;
    let active = mask.active_indices();
    if k_limit > HARD_CAP {
        return Err(Error::Domain(format!(
            "k_limit {k_limit} exceeds the enumeration cap {HARD_CAP}"
        )));
    }
    if active.len() > k_limit {
        return Err(Error::Domain(format!(
            "refusing to enumerate 2^{} codes over {} active factors (limit {k_limit})",
            active.len(),
            active.len()
        )));
    }
    let ctx = CodingContext::new(model, bank, mask)?;
    let hyper = &model.hyper;
    if x.len() != hyper.d {
        return Err(Error::Shape(format!(
            "datum has {} entries, model has D = {}",
            x.len(),
            hyper.d
        )));
    }
    let xtx: f64 = x.iter().map(|v| v * v).sum();
    let h = model.phi.tr_matvec(x);

    let mut best: Option<(f64, Vec<bool>)> = None;
    for pattern in 0u64..(1u64 << active.len()) {
        if (pattern.count_ones() as usize) > hyper.l_max {
            continue;
        }
        let mut z = vec![false; hyper.k];
        for (i, &k) in active.iter().enumerate() {
            if pattern >> i & 1 == 1 {
                z[k] = true;
            }
        }
        let (s, _) = ctx.score(&z, xtx, &h)?;
        let better = match &best {
            None => true,
            Some((bs, bz)) => s > *bs || (s == *bs && z < *bz),
        };
        if better {
            best = Some((s, z));
        }
    }
    let (score, z) = best.expect("enumeration always visits the empty code");
    Ok(SparseCode::from_z(z, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::objective::{expected_log_prior, marginal_loglik};
    use crate::math::rng::Rng;
    use crate::model::HyperParams;
    use crate::net::Activation;

    fn setup(k: usize, seed: u64, sigma2: f64) -> (ModelState, BetaPosteriorBank, ActiveMask) {
        let mut hyper = HyperParams::defaults(k, 6, 8);
        hyper.sigma2 = sigma2;
        hyper.c = 1.0;
        let mut rng = Rng::new(seed);
        let model = ModelState::init(hyper, &[10], Activation::Tanh, &mut rng).unwrap();
        let bank = BetaPosteriorBank::from_prior(&model.hyper).unwrap();
        let mask = ActiveMask::all_active(k);
        (model, bank, mask)
    }

    /// Objective evaluated the straightforward way: decode, then the two
    /// public scoring terms. Used to pin the fast Gram-based path.
    fn direct_score(
        z: &[bool],
        x: &[f64],
        model: &ModelState,
        bank: &BetaPosteriorBank,
        mask: &ActiveMask,
    ) -> f64 {
        let f = model.decode(z).unwrap();
        marginal_loglik(x, &f, &model.hyper).unwrap()
            + expected_log_prior(z, bank, mask).unwrap()
    }

    #[test]
    fn weak_data_keeps_the_empty_code() {
        // a tiny prior activation probability and weak data: the penalty
        // for any bit exceeds what the likelihood can repay
        let (model, bank, mask) = setup(8, 19, 50.0);
        let x = vec![0.01; 8];
        let code = greedy_sparse_code(&x, &model, &bank, &mask).unwrap();
        assert_eq!(code.cardinality(), 0, "expected the empty code");
        // and the exhaustive search agrees it is optimal
        let exact = exhaustive_sparse_code(&x, &model, &bank, &mask, 8).unwrap();
        assert_eq!(exact.cardinality(), 0);
    }

    #[test]
    fn planted_bit_is_recovered_first() {
        // x is exactly a large multiple of decode(e_j): with a near-flat
        // bank the likelihood dominates and step one must pick bit j
        let (model, _, mask) = setup(6, 20, 0.05);
        let bank =
            BetaPosteriorBank::new(vec![1.0; 6], vec![1.0; 6]).unwrap(); // flat-ish prior
        let mut z = vec![false; 6];
        z[3] = true;
        let f = model.decode(&z).unwrap();
        let x: Vec<f64> = f.iter().map(|v| 9.0 * v).collect();
        let mut capped = model.clone();
        capped.hyper.l_max = 1;
        let code = greedy_sparse_code(&x, &capped, &bank, &mask).unwrap();
        assert_eq!(code.active_set, vec![3], "first accepted bit should be the planted one");
    }

    #[test]
    fn greedy_scores_strictly_increase_and_respect_l_max() {
        let mut rng = Rng::new(21);
        for trial in 0..40 {
            let (mut model, _, mask) = setup(7, 100 + trial, 0.2);
            model.hyper.l_max = 4;
            let bank = BetaPosteriorBank::new(
                (0..7).map(|_| 0.3 + rng.uniform() * 3.0).collect(),
                (0..7).map(|_| 0.3 + rng.uniform() * 3.0).collect(),
            )
            .unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.normal() * 2.0).collect();
            let (code, trace) =
                greedy_sparse_code_traced(&x, &model, &bank, &mask).unwrap();
            assert!(code.cardinality() <= 4);
            assert_eq!(trace.len(), code.cardinality() + 1);
            for w in trace.windows(2) {
                assert!(w[1] > w[0], "accepted step must strictly improve: {trace:?}");
            }
            assert_eq!(code.score, *trace.last().unwrap());
        }
    }

    #[test]
    fn greedy_score_matches_direct_evaluation() {
        // the Gram-based fast path and the decode-then-score route agree
        let mut rng = Rng::new(22);
        for trial in 0..30 {
            let (model, bank, mask) = setup(6, 200 + trial, 0.3);
            let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let code = greedy_sparse_code(&x, &model, &bank, &mask).unwrap();
            let direct = direct_score(&code.z, &x, &model, &bank, &mask);
            assert!(
                (code.score - direct).abs() < 1e-9 * direct.abs().max(1.0),
                "fast path {} vs direct {direct}",
                code.score
            );
        }
    }

    #[test]
    fn greedy_never_uses_pruned_factors() {
        let (model, bank, _) = setup(8, 23, 0.05);
        let mask = ActiveMask::from_flags(vec![true, false, true, false, true, false, true, false]);
        let mut rng = Rng::new(24);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.normal() * 3.0).collect();
            let code = greedy_sparse_code(&x, &model, &bank, &mask).unwrap();
            for &k in &code.active_set {
                assert!(mask.is_active(k), "factor {k} is pruned but appears in a code");
            }
        }
    }

    #[test]
    fn exhaustive_single_factor_direct_check() {
        // K = 1 needs gamma < 1 for the prior to be proper
        let mut hyper = HyperParams::defaults(1, 6, 8);
        hyper.sigma2 = 0.2;
        hyper.c = 1.0;
        hyper.gamma = 0.5;
        let mut rng = Rng::new(25);
        let model = ModelState::init(hyper, &[10], Activation::Tanh, &mut rng).unwrap();
        let bank = BetaPosteriorBank::from_prior(&model.hyper).unwrap();
        let mask = ActiveMask::all_active(1);
        let mut rng = Rng::new(26);
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let s_off = direct_score(&[false], &x, &model, &bank, &mask);
        let s_on = direct_score(&[true], &x, &model, &bank, &mask);
        let code = exhaustive_sparse_code(&x, &model, &bank, &mask, 1).unwrap();
        if s_on > s_off {
            assert_eq!(code.active_set, vec![0]);
        } else {
            assert!(code.active_set.is_empty());
        }
        assert!((code.score - s_on.max(s_off)).abs() < 1e-9);
    }

    #[test]
    fn exhaustive_matches_independent_enumeration() {
        // brute force over all 2^K codes via the decode-then-score route
        let mut rng = Rng::new(27);
        for trial in 0..50 {
            let (mut model, _, mask) = setup(6, 300 + trial, 0.15);
            model.hyper.l_max = 6;
            let bank = BetaPosteriorBank::new(
                (0..6).map(|_| 0.2 + rng.uniform() * 2.0).collect(),
                (0..6).map(|_| 0.2 + rng.uniform() * 2.0).collect(),
            )
            .unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.normal() * 1.5).collect();
            let mut best_score = f64::NEG_INFINITY;
            let mut best_z = vec![false; 6];
            for pattern in 0u32..64 {
                let z: Vec<bool> = (0..6).map(|i| pattern >> i & 1 == 1).collect();
                let s = direct_score(&z, &x, &model, &bank, &mask);
                if s > best_score {
                    best_score = s;
                    best_z = z;
                }
            }
            let got = exhaustive_sparse_code(&x, &model, &bank, &mask, 6).unwrap();
            assert_eq!(got.z, best_z, "trial {trial}");
            assert!((got.score - best_score).abs() < 1e-9 * best_score.abs().max(1.0));
        }
    }

    #[test]
    fn exhaustive_dominates_greedy() {
        let mut rng = Rng::new(28);
        for trial in 0..50 {
            let (mut model, _, mask) = setup(7, 400 + trial, 0.1);
            model.hyper.l_max = 5;
            let bank = BetaPosteriorBank::new(
                (0..7).map(|_| 0.2 + rng.uniform() * 2.0).collect(),
                (0..7).map(|_| 0.2 + rng.uniform() * 2.0).collect(),
            )
            .unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.normal() * 1.2).collect();
            let g = greedy_sparse_code(&x, &model, &bank, &mask).unwrap();
            let e = exhaustive_sparse_code(&x, &model, &bank, &mask, 7).unwrap();
            assert!(
                g.score <= e.score,
                "greedy {} beat exhaustive {} on trial {trial}",
                g.score,
                e.score
            );
        }
    }

    #[test]
    fn exhaustive_refuses_large_banks() {
        let (model, bank, mask) = setup(8, 29, 0.2);
        let x = vec![0.0; 8];
        assert!(matches!(
            exhaustive_sparse_code(&x, &model, &bank, &mask, 4),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            exhaustive_sparse_code(&x, &model, &bank, &mask, 21),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn exhaustive_respects_mask_and_l_max() {
        let (mut model, bank, _) = setup(6, 30, 0.05);
        model.hyper.l_max = 2;
        let mask = ActiveMask::from_flags(vec![true, true, false, true, false, true]);
        let mut rng = Rng::new(31);
        let x: Vec<f64> = (0..8).map(|_| rng.normal() * 2.0).collect();
        let code = exhaustive_sparse_code(&x, &model, &bank, &mask, 6).unwrap();
        assert!(code.cardinality() <= 2);
        for &k in &code.active_set {
            assert!(mask.is_active(k));
        }
    }
}
