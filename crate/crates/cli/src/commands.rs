//! The subcommands behind the binary: train, encode, reconstruct,
//! sample, inspect, gradcheck, and oracle.

use std::path::Path;

use bpdc_core::inference::{
    batch_expected_loglik, exhaustive_sparse_code, greedy_sparse_code, theta_gradient,
    update_q_lambda, update_q_pi, ActiveMask, BetaPosteriorBank, RunLog, TrainConfig, Trainer,
};
use bpdc_core::io::checkpoint::{load_checkpoint, save_checkpoint};
use bpdc_core::io::figures::{export_figures, top_bits_csv};
use bpdc_core::io::idx::{
    load_csv_labels, load_csv_matrix, load_idx, load_idx_labels, write_csv_matrix, Dataset,
};
use bpdc_core::io::metrics::{write_metrics_csv, write_pi_trace_csv};
use bpdc_core::math::{Mat, Rng};
use bpdc_core::model::{
    sample_dataset, HyperParams, MixRealization, ModelState, SampleOptions, SparseCode,
};
use bpdc_core::verify;

use crate::config::RunConfig;
use crate::CliError;

// Distinct RNG stream tags so initialization, training batches (stream 1,
// owned by the trainer), sampling, and check instances never share draws.
const STREAM_MODEL_INIT: u64 = 2;
const STREAM_SAMPLING: u64 = 3;
const STREAM_CHECKS: u64 = 4;

// ---------------------------------------------------------------------
// shared plumbing

fn looks_like_idx(path: &Path) -> bool {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    name.ends_with(".idx") || name.contains("ubyte")
}

/// Load the dataset named by the config. IDX containers are recognized
/// by filename (`.idx` suffix or the conventional `ubyte` infix);
/// everything else is read as headerless CSV with one datum per line.
fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("this command needs --data".into()));
    }
    let labels = (!cfg.labels.as_os_str().is_empty()).then_some(cfg.labels.as_path());
    let ds = if looks_like_idx(&cfg.data) {
        load_idx(&cfg.data, labels, cfg.scaling)?
    } else {
        let mut ds = Dataset::from_matrix(load_csv_matrix(&cfg.data)?);
        if let Some(lp) = labels {
            let lab = if looks_like_idx(lp) {
                load_idx_labels(lp)?
            } else {
                load_csv_labels(lp)?
            };
            if lab.len() != ds.len() {
                return Err(CliError::Failure(format!(
                    "{} labels for {} data",
                    lab.len(),
                    ds.len()
                )));
            }
            ds.labels = Some(lab);
        }
        ds
    };
    if ds.is_empty() {
        return Err(CliError::Failure(format!(
            "{}: dataset is empty",
            cfg.data.display()
        )));
    }
    Ok(ds)
}

fn hyper_from(cfg: &RunConfig, d: usize) -> HyperParams {
    HyperParams {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        sigma2: cfg.sigma2,
        c: cfg.c,
        k: cfg.k,
        m: cfg.m,
        d,
        l_max: if cfg.l_max == 0 { cfg.k } else { cfg.l_max },
        prune_threshold: cfg.prune_threshold,
        nonneg_dict: cfg.nonneg_dict,
    }
}

fn fresh_model(cfg: &RunConfig, d: usize) -> Result<ModelState, CliError> {
    let mut rng = Rng::from_stream(cfg.seed, STREAM_MODEL_INIT, 0);
    Ok(ModelState::init(hyper_from(cfg, d), &cfg.hidden, cfg.activation, &mut rng)?)
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.batch_size,
        n_iters: cfg.n_iters,
        tau0: cfg.tau0,
        kappa: cfg.kappa,
        adam_stepsize: cfg.adam_stepsize,
        seed: cfg.seed,
        log_every: cfg.log_every,
        threads: cfg.effective_threads(),
    }
}

fn load_trainer(cfg: &RunConfig) -> Result<Trainer, CliError> {
    if cfg.checkpoint.as_os_str().is_empty() {
        return Err(CliError::Usage("this command needs --checkpoint".into()));
    }
    Ok(load_checkpoint(&cfg.checkpoint)?)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        CliError::Failure(format!("cannot create {}: {e}", cfg.out_dir.display()))
    })
}

fn check_dims(ds: &Dataset, model: &ModelState) -> Result<(), CliError> {
    if ds.dim() != model.hyper.d {
        return Err(CliError::Failure(format!(
            "data has dimension {}, the model expects {}",
            ds.dim(),
            model.hyper.d
        )));
    }
    Ok(())
}

/// Greedy-code every column of `x`, splitting the work over `threads`
/// scoped workers. Chunks are contiguous and results keep dataset order,
/// so the thread count cannot change the output.
fn encode_all(
    x: &Mat,
    model: &ModelState,
    bank: &BetaPosteriorBank,
    mask: &ActiveMask,
    threads: usize,
) -> Result<Vec<SparseCode>, CliError> {
    let n = x.cols();
    let workers = threads.clamp(1, n.max(1));
    let code_range = |lo: usize, hi: usize| -> Result<Vec<SparseCode>, bpdc_core::Error> {
        let mut part = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            part.push(greedy_sparse_code(x.col(i), model, bank, mask)?);
        }
        Ok(part)
    };
    if workers <= 1 {
        return Ok(code_range(0, n)?);
    }
    let chunk = n.div_ceil(workers);
    let parts = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let (lo, hi) = (w * chunk, ((w + 1) * chunk).min(n));
            if lo >= hi {
                break;
            }
            handles.push(scope.spawn(move || code_range(lo, hi)));
        }
        let mut parts = Vec::with_capacity(handles.len());
        for h in handles {
            match h.join() {
                Ok(r) => parts.push(r),
                Err(_) => parts.push(Err(bpdc_core::Error::State(
                    "a coding worker panicked".into(),
                ))),
            }
        }
        parts
    });
    let mut codes = Vec::with_capacity(n);
    for part in parts {
        codes.extend(part?);
    }
    Ok(codes)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn codes_csv(codes: &[SparseCode], with_score: bool) -> String {
    let mut text = String::from(if with_score {
        "index,cardinality,score,active_indices\n"
    } else {
        "index,cardinality,active_indices\n"
    });
    for (i, code) in codes.iter().enumerate() {
        let idx: Vec<String> = code.active_set.iter().map(|k| k.to_string()).collect();
        if with_score {
            text.push_str(&format!(
                "{i},{},{},{}\n",
                code.active_set.len(),
                code.score,
                idx.join(" ")
            ));
        } else {
            text.push_str(&format!("{i},{},{}\n", code.active_set.len(), idx.join(" ")));
        }
    }
    text
}

fn mean_cardinality(codes: &[SparseCode]) -> f64 {
    if codes.is_empty() {
        return 0.0;
    }
    codes.iter().map(|c| c.active_set.len() as f64).sum::<f64>() / codes.len() as f64
}

// ---------------------------------------------------------------------
// train

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    if cfg.d != 0 && cfg.d != ds.dim() {
        return Err(CliError::Usage(format!(
            "d = {} was requested but the data has dimension {}",
            cfg.d,
            ds.dim()
        )));
    }
    let tc = train_config(cfg);
    tc.validate()?;

    let mut trainer = if cfg.resume {
        let t = load_checkpoint(&cfg.checkpoint_path())?;
        check_dims(&ds, &t.model)?;
        t
    } else {
        Trainer::new(fresh_model(cfg, ds.dim())?, &tc)?
    };
    let start = trainer.iteration();

    ensure_out_dir(cfg)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Failure(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }

    let total = cfg.n_iters;
    let segment = if cfg.checkpoint_every == 0 {
        total.max(1)
    } else {
        cfg.checkpoint_every
    };
    let mut log = RunLog::default();
    let mut done = 0;
    while done < total {
        let step = segment.min(total - done);
        let part = trainer.run(&ds.x, &tc, step)?;
        merge_log(&mut log, part);
        done += step;
        save_checkpoint(&ckpt, &trainer)?;
    }
    if total == 0 {
        // nothing to train; still leave a loadable snapshot of the
        // prior-state (or resumed) trainer behind
        save_checkpoint(&ckpt, &trainer)?;
    }

    let metrics_path = cfg.out_dir.join("metrics.csv");
    if cfg.resume && metrics_path.exists() {
        let mut text = std::fs::read_to_string(&metrics_path)
            .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", metrics_path.display())))?;
        for row in &log.metrics {
            text.push_str(&row.to_csv());
            text.push('\n');
        }
        write_text(&metrics_path, &text)?;
    } else {
        write_metrics_csv(&metrics_path, &log)?;
    }
    write_pi_trace_csv(&cfg.out_dir.join("pi_trace.csv"), &log.trace)?;

    if cfg.export_figures && total > 0 {
        let codes = encode_all(&ds.x, &trainer.model, &trainer.bank, &trainer.mask, tc.threads)?;
        let report = export_figures(&trainer.model, &trainer.bank, &ds, &codes, &cfg.out_dir)?;
        for note in &report.notes {
            println!("note: {note}");
        }
    }

    println!(
        "trained {done} iterations ({} -> {})",
        start,
        trainer.iteration()
    );
    if let Some(last) = log.metrics.last() {
        println!(
            "final batch: mse {:.6}, mean cardinality {:.3}, active factors {}",
            last.mse, last.mean_card, last.active_factors
        );
    }
    println!("checkpoint: {}", ckpt.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

fn merge_log(into: &mut RunLog, part: RunLog) {
    into.metrics.extend(part.metrics);
    into.trace.expected_pi.extend(part.trace.expected_pi);
    into.trace.coding_secs.extend(part.trace.coding_secs);
    into.trace.active_counts.extend(part.trace.active_counts);
    into.trace.used_factors.extend(part.trace.used_factors);
    into.trace.prune_events.extend(part.trace.prune_events);
}

// ---------------------------------------------------------------------
// encode / reconstruct

pub fn cmd_encode(cfg: &RunConfig) -> Result<(), CliError> {
    let trainer = load_trainer(cfg)?;
    let ds = load_dataset(cfg)?;
    check_dims(&ds, &trainer.model)?;
    let codes = encode_all(
        &ds.x,
        &trainer.model,
        &trainer.bank,
        &trainer.mask,
        cfg.effective_threads(),
    )?;
    ensure_out_dir(cfg)?;
    let path = cfg.out_dir.join("codes.csv");
    write_text(&path, &codes_csv(&codes, true))?;
    let mean_score = codes.iter().map(|c| c.score).sum::<f64>() / codes.len() as f64;
    println!(
        "encoded {} data: mean cardinality {:.3}, mean score {:.3}",
        codes.len(),
        mean_cardinality(&codes),
        mean_score
    );
    println!("codes: {}", path.display());
    Ok(())
}

pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<(), CliError> {
    let trainer = load_trainer(cfg)?;
    let ds = load_dataset(cfg)?;
    check_dims(&ds, &trainer.model)?;
    let codes = encode_all(
        &ds.x,
        &trainer.model,
        &trainer.bank,
        &trainer.mask,
        cfg.effective_threads(),
    )?;
    ensure_out_dir(cfg)?;

    let d = ds.dim();
    let mut recon = Mat::zeros(d, ds.len());
    let mut sqerr = 0.0;
    for i in 0..ds.len() {
        let x = ds.x.col(i);
        let f = trainer.model.decode(&codes[i].z)?;
        let q = update_q_lambda(x, &f, &trainer.model.hyper)?;
        let out = recon.col_mut(i);
        for (r, &fv) in f.iter().enumerate() {
            out[r] = q.mean * fv;
            let e = x[r] - out[r];
            sqerr += e * e;
        }
    }
    let recon_path = cfg.out_dir.join("reconstructions.csv");
    write_csv_matrix(&recon_path, &recon)?;

    let report = export_figures(&trainer.model, &trainer.bank, &ds, &codes, &cfg.out_dir)?;
    for note in &report.notes {
        println!("note: {note}");
    }
    println!(
        "reconstructed {} data: mse {:.6} per dimension",
        ds.len(),
        sqerr / (d * ds.len()) as f64
    );
    println!("reconstructions: {}", recon_path.display());
    for p in &report.written {
        println!("figure: {}", p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------
// sample

pub fn cmd_sample(cfg: &RunConfig) -> Result<(), CliError> {
    let model = if cfg.checkpoint.as_os_str().is_empty() {
        if cfg.d == 0 {
            return Err(CliError::Usage(
                "sample needs --checkpoint, or --d to size a fresh model".into(),
            ));
        }
        fresh_model(cfg, cfg.d)?
    } else {
        load_checkpoint(&cfg.checkpoint)?.model
    };
    if cfg.n_samples == 0 {
        return Err(CliError::Usage("n_samples must be at least 1".into()));
    }
    let opts = SampleOptions {
        c_sample: cfg.c_sample,
        mix: MixRealization::Mean,
        pi_override: None,
    };
    let mut rng = Rng::from_stream(cfg.seed, STREAM_SAMPLING, 0);
    let sampled = sample_dataset(&model, cfg.n_samples, &opts, &mut rng)?;
    ensure_out_dir(cfg)?;

    let data_path = cfg.out_dir.join("samples.csv");
    write_csv_matrix(&data_path, &sampled.x)?;
    let codes: Vec<SparseCode> = sampled
        .z
        .iter()
        .map(|z| SparseCode::from_z(z.clone(), 0.0))
        .collect();
    write_text(&cfg.out_dir.join("sample_codes.csv"), &codes_csv(&codes, false))?;
    let scales: Vec<String> = sampled.lambda.iter().map(|v| v.to_string()).collect();
    write_text(
        &cfg.out_dir.join("sample_scales.csv"),
        &(scales.join("\n") + "\n"),
    )?;
    let pis: Vec<String> = sampled.pi.iter().map(|v| v.to_string()).collect();
    write_text(&cfg.out_dir.join("sample_pi.csv"), &(pis.join("\n") + "\n"))?;

    println!(
        "sampled {} data of dimension {}: mean cardinality {:.3}",
        sampled.x.cols(),
        sampled.x.rows(),
        mean_cardinality(&codes)
    );
    println!("samples: {}", data_path.display());
    Ok(())
}

// ---------------------------------------------------------------------
// inspect

pub fn cmd_inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let trainer = load_trainer(cfg)?;
    let bank = &trainer.bank;
    let mask = &trainer.mask;
    let pi = bank.expected_pi();

    println!(
        "model: K = {}, M = {}, D = {}, iteration {}",
        trainer.model.hyper.k,
        trainer.model.hyper.m,
        trainer.model.hyper.d,
        trainer.iteration()
    );
    println!("{:>6} {:>12} {:>12} {:>10} {:>7}", "factor", "a", "b", "E[pi]", "active");
    let mut table = String::from("factor,a,b,expected_pi,active\n");
    for k in 0..bank.len() {
        let active = if mask.is_active(k) { "yes" } else { "no" };
        println!(
            "{k:>6} {:>12.5} {:>12.5} {:>10.6} {active:>7}",
            bank.a()[k],
            bank.b()[k],
            pi[k]
        );
        table.push_str(&format!(
            "{k},{},{},{},{}\n",
            bank.a()[k],
            bank.b()[k],
            pi[k],
            mask.is_active(k) as u8
        ));
    }
    println!(
        "{} of {} factors active, {} with E[pi] > 0.01",
        mask.count_active(),
        bank.len(),
        pi.iter().filter(|&&p| p > 0.01).count()
    );

    ensure_out_dir(cfg)?;
    let table_path = cfg.out_dir.join("pi_table.csv");
    write_text(&table_path, &table)?;
    let bits_path = cfg.out_dir.join("top_bits.csv");
    write_text(&bits_path, &top_bits_csv(&trainer.model, bank, 5, 4)?)?;
    println!("factor table: {}", table_path.display());
    println!("top-bit table: {}", bits_path.display());

    if !cfg.data.as_os_str().is_empty() {
        let ds = load_dataset(cfg)?;
        check_dims(&ds, &trainer.model)?;
        let codes = encode_all(&ds.x, &trainer.model, bank, mask, cfg.effective_threads())?;
        let report = export_figures(&trainer.model, bank, &ds, &codes, &cfg.out_dir)?;
        for note in &report.notes {
            println!("note: {note}");
        }
        for p in &report.written {
            println!("figure: {}", p.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// gradcheck

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rng = Rng::from_stream(cfg.seed, STREAM_CHECKS, 0);
    println!("gradient check: backpropagated vs central finite differences (h = 1e-6)");
    let mut worst = 0.0f64;
    for inst in 0..5 {
        let sigma2 = 0.2 + 0.6 * rng.uniform();
        let model = verify::random_small_model(3, 4, 5, sigma2, 3.0, &mut rng)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        let x: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..5).map(|_| 2.0 * rng.normal()).collect())
            .collect();
        let x_refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let mut codes = Vec::new();
        let mut qs = Vec::new();
        for xi in &x {
            let z: Vec<bool> = (0..3).map(|_| rng.bernoulli(0.5)).collect();
            let f = trainer_decode(&model, &z)?;
            qs.push(update_q_lambda(xi, &f, &model.hyper)?);
            codes.push(SparseCode::from_z(z, 0.0));
        }

        let analytic = theta_gradient(&x_refs, &codes, &qs, &model)?;
        let params = model.flatten_params();
        let fd = verify::fd_gradient(
            |p| {
                let mut m = model.clone();
                m.set_params(p)?;
                batch_expected_loglik(&x_refs, &codes, &qs, &m)
            },
            &params,
            1e-6,
        )?;
        let mut rel = 0.0f64;
        for (a, f) in analytic.iter().zip(&fd) {
            rel = rel.max((a - f).abs() / f.abs().max(1e-6));
        }
        println!(
            "  instance {inst}: {} parameters, max relative error {rel:.3e}",
            params.len()
        );
        worst = worst.max(rel);
    }
    if worst > 1e-4 {
        return Err(CliError::Failure(format!(
            "gradient check FAILED: worst relative error {worst:.3e} exceeds 1e-4"
        )));
    }
    println!("PASS: worst relative error {worst:.3e} within 1e-4");
    Ok(())
}

fn trainer_decode(model: &ModelState, z: &[bool]) -> Result<Vec<f64>, CliError> {
    Ok(model.decode(z)?)
}

// ---------------------------------------------------------------------
// oracle

struct SuiteOutcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<(), CliError> {
    println!("oracle suites (seed {}):", cfg.seed);
    let outcomes = vec![
        suite_scale_posterior(cfg.seed)?,
        suite_marginal(cfg.seed)?,
        suite_greedy_vs_exhaustive(cfg.seed)?,
        suite_factor_conjugacy(cfg.seed)?,
    ];
    let mut failures = 0;
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("  {verdict}  {:<38} {}", o.name, o.detail);
        if !o.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Failure(format!(
            "{failures} of {} oracle suites failed",
            outcomes.len()
        )));
    }
    println!("all {} suites passed", outcomes.len());
    Ok(())
}

/// Conjugate q(λ) moments vs direct quadrature of the posterior density.
fn suite_scale_posterior(seed: u64) -> Result<SuiteOutcome, CliError> {
    let mut rng = Rng::from_stream(seed, STREAM_CHECKS, 10);
    let mut max_err = 0.0f64;
    for t in 0..20 {
        let d = 1 + (t % 8);
        let mut hyper = HyperParams::defaults(2, 3, d);
        hyper.sigma2 = 0.3 + 1.7 * rng.uniform();
        hyper.c = if t % 5 == 4 { 1e15 } else { 0.5 + 40.0 * rng.uniform() };
        let f: Vec<f64> = (0..d).map(|_| rng.normal() + 0.3).collect();
        let x: Vec<f64> = f.iter().map(|&v| 1.5 * v + 0.4 * rng.normal()).collect();
        let got = update_q_lambda(&x, &f, &hyper)?;
        let (mean, var) = verify::lambda_posterior_moments_quadrature(&x, &f, &hyper)?;
        max_err = max_err
            .max(verify::rel_err(got.mean, mean))
            .max(verify::rel_err(got.var, var));
    }
    Ok(SuiteOutcome {
        name: "scale posterior vs quadrature",
        passed: max_err <= 1e-6,
        detail: format!("max rel err {max_err:.2e} over 20 instances (tol 1e-6)"),
    })
}

/// Closed-form marginal likelihood vs dense-covariance Gaussian density.
fn suite_marginal(seed: u64) -> Result<SuiteOutcome, CliError> {
    let mut rng = Rng::from_stream(seed, STREAM_CHECKS, 20);
    let mut max_err = 0.0f64;
    for t in 0..20 {
        let d = 2 + (t % 15);
        let mut hyper = HyperParams::defaults(2, 3, d);
        hyper.sigma2 = 0.4 + 1.2 * rng.uniform();
        hyper.c = if t % 4 == 3 { 1e15 } else { 0.5 + 20.0 * rng.uniform() };
        let f: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
        let got = bpdc_core::inference::marginal_loglik(&x, &f, &hyper)?;
        let want = if hyper.c > 1e6 {
            verify::rank_one_gaussian_logpdf(&x, &f, hyper.sigma2, hyper.c)?
        } else {
            verify::dense_gaussian_logpdf(
                &x,
                &verify::rank_one_covariance(&f, hyper.sigma2, hyper.c),
            )?
        };
        max_err = max_err.max(verify::rel_err(got, want));
    }
    Ok(SuiteOutcome {
        name: "marginal likelihood vs dense density",
        passed: max_err <= 1e-10,
        detail: format!("max rel err {max_err:.2e} over 20 instances (tol 1e-10)"),
    })
}

/// Greedy search never beats exhaustive enumeration, and usually matches it.
fn suite_greedy_vs_exhaustive(seed: u64) -> Result<SuiteOutcome, CliError> {
    let mut rng = Rng::from_stream(seed, STREAM_CHECKS, 30);
    let n_trials = 30;
    let mut violations = 0;
    let mut attained = 0;
    for _ in 0..n_trials {
        let model = verify::random_small_model(8, 5, 6, 0.05 + 0.2 * rng.uniform(), 4.0, &mut rng)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        let bank = BetaPosteriorBank::from_prior(&model.hyper)?;
        let mask = ActiveMask::all_active(8);
        let z: Vec<bool> = (0..8).map(|_| rng.bernoulli(0.4)).collect();
        let f = model.decode(&z)?;
        let x: Vec<f64> = f
            .iter()
            .map(|&v| 3.0 * v + model.hyper.sigma2.sqrt() * rng.normal())
            .collect();
        let greedy = greedy_sparse_code(&x, &model, &bank, &mask)?;
        let best = exhaustive_sparse_code(&x, &model, &bank, &mask, 8)?;
        if greedy.score > best.score {
            violations += 1;
        }
        if greedy.score == best.score {
            attained += 1;
        }
    }
    Ok(SuiteOutcome {
        name: "greedy vs exhaustive coding",
        passed: violations == 0,
        detail: format!("{violations} violations, optimum attained {attained}/{n_trials}"),
    })
}

/// One full-batch natural-gradient step at η = 1 lands exactly on the
/// conjugate Beta posterior computed from bit counts.
fn suite_factor_conjugacy(seed: u64) -> Result<SuiteOutcome, CliError> {
    let mut rng = Rng::from_stream(seed, STREAM_CHECKS, 40);
    let mut max_err = 0.0f64;
    for _ in 0..10 {
        let k = 6;
        let n = 40;
        let mut hyper = HyperParams::defaults(k, 3, 4);
        hyper.gamma = 1.0 + 2.0 * rng.uniform();
        let bank = BetaPosteriorBank::from_prior(&hyper)?;
        let codes: Vec<SparseCode> = (0..n)
            .map(|_| {
                let z: Vec<bool> = (0..k).map(|_| rng.bernoulli(0.3)).collect();
                SparseCode::from_z(z, 0.0)
            })
            .collect();
        let updated = update_q_pi(&bank, &codes, n, 1.0, &hyper)?;
        let (a0, b0) = hyper.beta_prior();
        for kk in 0..k {
            let count = codes.iter().filter(|c| c.z[kk]).count() as f64;
            let want_a = a0 + count;
            let want_b = b0 + (n as f64 - count);
            max_err = max_err
                .max((updated.a()[kk] - want_a).abs())
                .max((updated.b()[kk] - want_b).abs());
        }
    }
    Ok(SuiteOutcome {
        name: "factor posterior conjugacy",
        passed: max_err <= 1e-12,
        detail: format!("max abs err {max_err:.2e} over 10 trials (tol 1e-12)"),
    })
}
