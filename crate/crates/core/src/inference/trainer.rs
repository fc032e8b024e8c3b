//! The stochastic MAP-EM training loop.
//!
//! One iteration, in order:
//!
//! 1. draw a minibatch (uniform, without replacement, seeded by iteration)
//! 2. per datum: greedy sparse code, then the scale posterior q(λ) at the
//!    resulting feature vector — independent across data, parallelizable
//! 3. natural-gradient interpolation of the beta posterior bank with step
//!    η_t = (τ₀ + t)^(−κ)
//! 4. one joint ADAM ascent step on (dictionary, network)
//! 5. factor pruning
//!
//! Every random decision derives from `(seed, iteration)` alone, so a run
//! resumed from a checkpoint at iteration t replays iterations t+1… of the
//! uninterrupted run exactly, and thread count cannot change results.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::inference::coding::{greedy_code_with_ctx, CodingContext};
use crate::inference::posterior::{
    prune_factors, update_q_lambda, update_q_pi, ActiveMask, BetaPosteriorBank, ScalePosterior,
};
use crate::math::{Mat, Rng};
use crate::model::{ModelState, SparseCode};
use crate::net::{adam_step, AdamState};

/// Stream tag for minibatch selection (see `Rng::from_stream`).
const STREAM_BATCH: u64 = 1;

/// Knobs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Minibatch size |S|.
    pub batch_size: usize,
    /// Total iterations for `fit`.
    pub n_iters: u64,
    /// Learning-rate schedule offset τ₀ ≥ 0.
    pub tau0: f64,
    /// Learning-rate schedule exponent κ ∈ (0.5, 1]; this range makes
    /// Σ η_t diverge while Σ η_t² converges.
    pub kappa: f64,
    /// ADAM step size ρ.
    pub adam_stepsize: f64,
    /// Master seed; all per-iteration randomness derives from it.
    pub seed: u64,
    /// Emit a metrics row every this many iterations.
    pub log_every: u64,
    /// Worker threads for the per-datum stage. Purely a speed knob:
    /// results are identical for any value.
    pub threads: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.tau0.is_finite() && self.tau0 >= 0.0) {
            return Err(Error::Config(format!("tau0 must be finite and ≥ 0, got {}", self.tau0)));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::Config(format!(
                "kappa must lie in (0.5, 1], got {}",
                self.kappa
            )));
        }
        if !(self.adam_stepsize.is_finite() && self.adam_stepsize > 0.0) {
            return Err(Error::Config(format!(
                "adam_stepsize must be positive, got {}",
                self.adam_stepsize
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at (1-based) iteration t: η = (τ₀ + t)^(−κ).
    /// Always in (0, 1] since τ₀ ≥ 0 and t ≥ 1.
    pub fn eta_at(&self, t: u64) -> f64 {
        (self.tau0 + t as f64).powf(-self.kappa)
    }
}

/// One metrics-log row. All statistics describe the minibatch of the
/// iteration that emitted the row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub eta: f64,
    /// Mean over the batch of ‖x − μ·f‖²/D with μ the posterior-mean
    /// scale — squared reconstruction error per dimension, so a perfect
    /// model floors at the noise level σ².
    pub mse: f64,
    /// Mean code cardinality |Ω|.
    pub mean_card: f64,
    /// Count of factors with E[π_k] > 0.01.
    pub active_factors: usize,
    /// Mean per-datum coding objective (marginal log-likelihood of the
    /// accepted code plus its expected log prior).
    pub objective: f64,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "iter,eta,mse,mean_card,active_factors,objective"
    }

    /// One CSV row. f64 fields print with Rust's shortest round-trip
    /// formatting, so equal runs yield byte-equal logs.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.eta, self.mse, self.mean_card, self.active_factors, self.objective
        )
    }
}

/// Per-iteration diagnostics beyond the metrics rows, kept by the trainer
/// for behavioral checks (pruning soundness, coding-cost trends).
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    /// E[π] snapshot at every log point, keyed by iteration.
    pub expected_pi: Vec<(u64, Vec<f64>)>,
    /// Wall-clock seconds spent in the coding + q(λ) stage, one entry
    /// per iteration of the segment.
    pub coding_secs: Vec<f64>,
    /// Number of unpruned factors when the iteration's coding ran.
    pub active_counts: Vec<usize>,
    /// Distinct factors appearing in any of the iteration's codes.
    pub used_factors: Vec<Vec<usize>>,
    /// (iteration, factor) pairs recorded when pruning deactivates a factor.
    pub prune_events: Vec<(u64, usize)>,
}

/// Everything a finished (segment of a) run reports back.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub metrics: Vec<MetricsRow>,
    pub trace: TrainTrace,
}

impl RunLog {
    /// The full metrics CSV, header included, trailing newline included.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(MetricsRow::csv_header());
        out.push('\n');
        for row in &self.metrics {
            out.push_str(&row.to_csv());
            out.push('\n');
        }
        out
    }
}

/// Log-likelihood part of the M-step objective: Σ_n E_{q_n}[ln p(x_n | …)]
/// over the batch, as a function of the current parameters.
pub fn batch_expected_loglik(
    x_batch: &[&[f64]],
    codes: &[SparseCode],
    q_lambdas: &[ScalePosterior],
    model: &ModelState,
) -> Result<f64> {
    check_batch(x_batch, codes, q_lambdas)?;
    let mut total = 0.0;
    for ((x, code), q) in x_batch.iter().zip(codes).zip(q_lambdas) {
        let f = model.decode(&code.z)?;
        total += crate::inference::objective::expected_loglik(x, &f, q, &model.hyper)?;
    }
    Ok(total)
}

/// Ascent gradient of `batch_expected_loglik` with respect to every
/// learnable parameter, in the flat layout of `ModelState::flatten_params`
/// (dictionary column-major, then network layers). Exposed so gradient
/// verification can compare it against finite differences.
pub fn theta_gradient(
    x_batch: &[&[f64]],
    codes: &[SparseCode],
    q_lambdas: &[ScalePosterior],
    model: &ModelState,
) -> Result<Vec<f64>> {
    check_batch(x_batch, codes, q_lambdas)?;
    let d = model.hyper.d;
    let sigma2 = model.hyper.sigma2;
    let mut grad_phi = Mat::zeros(d, model.hyper.m);
    let mut grad_net: Option<crate::net::NetGrads> = None;

    for (n, ((x, code), q)) in x_batch.iter().zip(codes).zip(q_lambdas).enumerate() {
        let pass = model.net.forward(&code.z)?;
        let xi = pass.output().to_vec();
        let f = model.phi.matvec(&xi);
        // d expected_loglik / d f = [μ(x − μf) − var·f] / σ²
        let mut g_f = vec![0.0; d];
        for i in 0..d {
            g_f[i] = (q.mean * (x[i] - q.mean * f[i]) - q.var * f[i]) / sigma2;
        }
        if g_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite feature gradient for batch datum {n}"
            )));
        }
        grad_phi.add_scaled_outer(&g_f, &xi, 1.0);
        let g_xi = model.phi.tr_matvec(&g_f);
        let ng = model.net.backward(&pass, &g_xi)?;
        match &mut grad_net {
            None => grad_net = Some(ng),
            Some(acc) => {
                for (a, g) in acc.weights.iter_mut().zip(&ng.weights) {
                    for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
                for (a, g) in acc.biases.iter_mut().zip(&ng.biases) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
            }
        }
    }

    let grad_net = grad_net.expect("batch checked non-empty");
    let mut flat = Vec::with_capacity(model.param_count());
    flat.extend_from_slice(grad_phi.data());
    for (w, b) in grad_net.weights.iter().zip(&grad_net.biases) {
        flat.extend_from_slice(w.data());
        flat.extend_from_slice(b);
    }
    Ok(flat)
}

/// One joint ADAM ascent step on (dictionary, network) along the batch
/// gradient of the expected log-likelihood, followed by the non-negativity
/// projection when the model is configured for it.
pub fn m_step_theta(
    x_batch: &[&[f64]],
    codes: &[SparseCode],
    q_lambdas: &[ScalePosterior],
    model: &mut ModelState,
    adam: &mut AdamState,
) -> Result<()> {
    let grad = theta_gradient(x_batch, codes, q_lambdas, model)?;
    let mut params = model.flatten_params();
    // adam_step descends; negate the ascent gradient
    let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
    adam_step(&mut params, &descent, adam)?;
    model.set_params(&params)?;
    model.project_nonneg();
    Ok(())
}

fn check_batch(
    x_batch: &[&[f64]],
    codes: &[SparseCode],
    q_lambdas: &[ScalePosterior],
) -> Result<()> {
    if x_batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if x_batch.len() != codes.len() || x_batch.len() != q_lambdas.len() {
        return Err(Error::Shape(format!(
            "batch pieces disagree: {} data, {} codes, {} scale posteriors",
            x_batch.len(),
            codes.len(),
            q_lambdas.len()
        )));
    }
    Ok(())
}

/// Per-datum output of the parallel coding + q(λ) stage.
struct DatumResult {
    code: SparseCode,
    q: ScalePosterior,
    /// ‖x − μ·f‖² at the posterior-mean scale.
    sqerr: f64,
}

fn process_datum(x: &[f64], ctx: &CodingContext<'_>) -> Result<DatumResult> {
    let coded = greedy_code_with_ctx(x, ctx)?;
    let f = ctx.model.decode_from_mix(&coded.xi);
    let q = update_q_lambda(x, &f, &ctx.model.hyper)?;
    let sqerr = x
        .iter()
        .zip(&f)
        .map(|(&xv, &fv)| {
            let r = xv - q.mean * fv;
            r * r
        })
        .sum();
    Ok(DatumResult { code: coded.code, q, sqerr })
}

/// Coding + q(λ) for a whole minibatch, optionally across threads.
/// Results come back in batch order whatever the thread count.
fn process_batch(
    x: &Mat,
    batch: &[usize],
    ctx: &CodingContext<'_>,
    threads: usize,
) -> Result<Vec<DatumResult>> {
    let workers = threads.min(batch.len()).max(1);
    if workers == 1 {
        return batch.iter().map(|&i| process_datum(x.col(i), ctx)).collect();
    }
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> Result<Vec<DatumResult>> {
                    part.iter().map(|&i| process_datum(x.col(i), ctx)).collect()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            let part = h
                .join()
                .map_err(|_| Error::State("a coding worker thread panicked".into()))?;
            out.extend(part?);
        }
        Ok(out)
    })
}

/// Mutable training state: the model together with the posterior bank,
/// pruning mask, optimizer moments, and the iteration counter. A trainer
/// is exactly what a checkpoint captures.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelState,
    pub bank: BetaPosteriorBank,
    pub mask: ActiveMask,
    pub(crate) adam: AdamState,
    pub(crate) iter: u64,
    pub(crate) seed: u64,
}

impl Trainer {
    /// Fresh trainer: bank at the prior, all factors active, zero ADAM
    /// moments, iteration 0.
    pub fn new(model: ModelState, cfg: &TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        model.hyper.validate()?;
        let bank = BetaPosteriorBank::from_prior(&model.hyper)?;
        let mask = ActiveMask::all_active(model.hyper.k);
        let adam = AdamState::new(model.param_count(), cfg.adam_stepsize);
        Ok(Trainer { model, bank, mask, adam, iter: 0, seed: cfg.seed })
    }

    /// Reassemble a trainer from checkpointed pieces.
    pub(crate) fn from_parts(
        model: ModelState,
        bank: BetaPosteriorBank,
        mask: ActiveMask,
        adam: AdamState,
        iter: u64,
        seed: u64,
    ) -> Result<Trainer> {
        if bank.len() != model.hyper.k || mask.len() != model.hyper.k {
            return Err(Error::Shape(format!(
                "bank {} / mask {} / K {} disagree",
                bank.len(),
                mask.len(),
                model.hyper.k
            )));
        }
        if adam.len() != model.param_count() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, model has {}",
                adam.len(),
                model.param_count()
            )));
        }
        Ok(Trainer { model, bank, mask, adam, iter, seed })
    }

    /// Completed iterations so far.
    pub fn iteration(&self) -> u64 {
        self.iter
    }

    /// Master seed the run was started with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Run `n_iters` further iterations. Calling this twice with n and m
    /// produces the same state and concatenated logs as one call with
    /// n + m — the property behind checkpoint resume.
    pub fn run(&mut self, x: &Mat, cfg: &TrainConfig, n_iters: u64) -> Result<RunLog> {
        cfg.validate()?;
        if x.rows() != self.model.hyper.d {
            return Err(Error::Shape(format!(
                "data has {} rows, model expects D = {}",
                x.rows(),
                self.model.hyper.d
            )));
        }
        let n_total = x.cols();
        if cfg.batch_size > n_total {
            return Err(Error::Config(format!(
                "batch_size {} exceeds dataset size {}",
                cfg.batch_size, n_total
            )));
        }

        let mut log = RunLog::default();
        for _ in 0..n_iters {
            let t = self.iter + 1;
            self.step(x, cfg, t, &mut log).map_err(|e| e.at_iteration(t))?;
            self.iter = t;
        }
        Ok(log)
    }

    fn step(&mut self, x: &Mat, cfg: &TrainConfig, t: u64, log: &mut RunLog) -> Result<()> {
        let eta = cfg.eta_at(t);
        let mut rng = Rng::from_stream(self.seed, STREAM_BATCH, t);
        let batch = rng.sample_without_replacement(x.cols(), cfg.batch_size);

        let coding_started = Instant::now();
        let active_now = self.mask.count_active();
        let results = {
            let ctx = CodingContext::new(&self.model, &self.bank, &self.mask)?;
            process_batch(x, &batch, &ctx, cfg.threads)?
        };
        let coding_secs = coding_started.elapsed().as_secs_f64();

        let codes: Vec<SparseCode> = results.iter().map(|r| r.code.clone()).collect();
        let qs: Vec<ScalePosterior> = results.iter().map(|r| r.q).collect();
        let x_batch: Vec<&[f64]> = batch.iter().map(|&i| x.col(i)).collect();

        self.bank = update_q_pi(&self.bank, &codes, x.cols(), eta, &self.model.hyper)?;
        m_step_theta(&x_batch, &codes, &qs, &mut self.model, &mut self.adam)?;

        let pruned = prune_factors(&self.bank, &self.mask, self.model.hyper.prune_threshold)?;
        for k in 0..pruned.len() {
            if self.mask.is_active(k) && !pruned.is_active(k) {
                log.trace.prune_events.push((t, k));
            }
        }
        self.mask = pruned;

        let mut used: Vec<usize> = codes.iter().flat_map(|c| c.active_set.clone()).collect();
        used.sort_unstable();
        used.dedup();
        log.trace.coding_secs.push(coding_secs);
        log.trace.active_counts.push(active_now);
        log.trace.used_factors.push(used);

        if t % cfg.log_every == 0 {
            let b = results.len() as f64;
            let d = self.model.hyper.d as f64;
            let expected_pi = self.bank.expected_pi();
            log.metrics.push(MetricsRow {
                iter: t,
                eta,
                mse: results.iter().map(|r| r.sqerr).sum::<f64>() / (b * d),
                mean_card: codes.iter().map(|c| c.cardinality() as f64).sum::<f64>() / b,
                active_factors: expected_pi.iter().filter(|&&p| p > 0.01).count(),
                objective: codes.iter().map(|c| c.score).sum::<f64>() / b,
            });
            log.trace.expected_pi.push((t, expected_pi));
        }
        Ok(())
    }
}

/// Train a fresh model on the columns of `x` for `cfg.n_iters` iterations.
pub fn fit(x: &Mat, model: ModelState, cfg: &TrainConfig) -> Result<(Trainer, RunLog)> {
    let mut trainer = Trainer::new(model, cfg)?;
    let log = trainer.run(x, cfg, cfg.n_iters)?;
    Ok((trainer, log))
}
