//! Binary checkpoints capturing a full training state.
//!
//! Layout (all multi-byte values little-endian unless noted):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "BPDCCKPT"
//! 8       4     format version (u32)
//!               hyperparameters: alpha, gamma, sigma2, c (f64);
//!                 k, m, d, l_max (u64); prune_threshold (f64);
//!                 nonneg_dict (u8)
//!               dictionary: rows, cols (u64), rows·cols f64 column-major
//!               network: dim count (u64), dims (u64 each),
//!                 activation tag (u8), then per layer:
//!                 weight length (u64) + f64s, bias length (u64) + f64s
//!               bank: length-prefixed a, then length-prefixed b
//!               mask: length (u64), one byte per factor
//!               optimizer: step count (u64), rho, beta1, beta2, eps
//!                 (f64), length-prefixed first moments, length-prefixed
//!                 second moments
//!               iteration (u64), master seed (u64)
//! ```
//!
//! Every f64 is stored by bit pattern, so a load reproduces the saved
//! state exactly. Writes go through a temp file + rename.

use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::posterior::{ActiveMask, BetaPosteriorBank};
use crate::inference::Trainer;
use crate::io::{write_atomic, ByteReader};
use crate::math::Mat;
use crate::model::{HyperParams, ModelState};
use crate::net::{Activation, AdamState, MultiplexerNet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BPDCCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound accepted for any stored array length; a corrupt length
/// prefix beyond this fails parsing instead of attempting the allocation.
const LEN_CAP: u64 = 1 << 33;

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a trainer to bytes in the documented layout.
pub fn checkpoint_bytes(trainer: &Trainer) -> Vec<u8> {
    let model = &trainer.model;
    let h = &model.hyper;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    for v in [h.alpha, h.gamma, h.sigma2, h.c] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [h.k, h.m, h.d, h.l_max] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&h.prune_threshold.to_le_bytes());
    out.push(h.nonneg_dict as u8);

    out.extend_from_slice(&(model.phi.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(model.phi.cols() as u64).to_le_bytes());
    for v in model.phi.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let dims = model.net.dims();
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(model.net.activation().tag());
    for l in 0..model.net.n_layers() {
        push_f64s(&mut out, model.net.weight(l).data());
        push_f64s(&mut out, model.net.bias(l));
    }

    push_f64s(&mut out, trainer.bank.a());
    push_f64s(&mut out, trainer.bank.b());

    let flags = trainer.mask.flags();
    out.extend_from_slice(&(flags.len() as u64).to_le_bytes());
    for &f in flags {
        out.push(f as u8);
    }

    let adam = trainer.adam();
    out.extend_from_slice(&adam.step_count().to_le_bytes());
    for v in [adam.rho, adam.beta1, adam.beta2, adam.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let (m, v) = adam.moments();
    push_f64s(&mut out, m);
    push_f64s(&mut out, v);

    out.extend_from_slice(&trainer.iteration().to_le_bytes());
    out.extend_from_slice(&trainer.seed().to_le_bytes());
    out
}

/// Save a training state, atomically.
pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(trainer))
}

fn read_f64s(r: &mut ByteReader<'_>) -> Result<Vec<f64>> {
    let n = r.len_le(LEN_CAP)?;
    r.f64_vec(n)
}

/// Parse checkpoint bytes back into a trainer.
pub fn checkpoint_from_bytes(bytes: &[u8], what: &str) -> Result<Trainer> {
    let mut r = ByteReader::new(bytes, what);
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{what}: not a checkpoint (magic {:02x?} at offset 0)",
            magic
        )));
    }
    let version = r.u32_le()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }

    let alpha = r.f64_le()?;
    let gamma = r.f64_le()?;
    let sigma2 = r.f64_le()?;
    let c = r.f64_le()?;
    let k = r.len_le(LEN_CAP)?;
    let m = r.len_le(LEN_CAP)?;
    let d = r.len_le(LEN_CAP)?;
    let l_max = r.len_le(LEN_CAP)?;
    let prune_threshold = r.f64_le()?;
    let nonneg_dict = r.u8()? != 0;
    let hyper = HyperParams {
        alpha,
        gamma,
        sigma2,
        c,
        k,
        m,
        d,
        l_max,
        prune_threshold,
        nonneg_dict,
    };
    hyper.validate()?;

    let rows = r.len_le(LEN_CAP)?;
    let cols = r.len_le(LEN_CAP)?;
    let phi_data = r.f64_vec(rows.checked_mul(cols).ok_or_else(|| {
        Error::Format(format!("{what}: dictionary shape {rows}x{cols} overflows"))
    })?)?;
    let phi = Mat::from_col_major(rows, cols, phi_data);

    let n_dims = r.len_le(1 << 16)?;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.len_le(LEN_CAP)?);
    }
    let activation = Activation::from_tag(r.u8()?)?;
    let mut net = MultiplexerNet::zeros(&dims, activation)?;
    for l in 0..net.n_layers() {
        let w = read_f64s(&mut r)?;
        let expect = net.weight(l).rows() * net.weight(l).cols();
        if w.len() != expect {
            return Err(Error::Format(format!(
                "{what}: layer {l} weight block has {} values, dims say {expect}",
                w.len()
            )));
        }
        net.weight_mut(l).data_mut().copy_from_slice(&w);
        let b = read_f64s(&mut r)?;
        if b.len() != net.bias(l).len() {
            return Err(Error::Format(format!(
                "{what}: layer {l} bias block has {} values, dims say {}",
                b.len(),
                net.bias(l).len()
            )));
        }
        net.bias_mut(l).copy_from_slice(&b);
    }
    let model = ModelState::assemble(phi, net, hyper)?;

    let a = read_f64s(&mut r)?;
    let b = read_f64s(&mut r)?;
    let bank = BetaPosteriorBank::new(a, b)?;

    let n_flags = r.len_le(LEN_CAP)?;
    let mut flags = Vec::with_capacity(n_flags);
    for _ in 0..n_flags {
        flags.push(r.u8()? != 0);
    }
    let mask = ActiveMask::from_flags(flags);

    let step_count = r.u64_le()?;
    let rho = r.f64_le()?;
    let beta1 = r.f64_le()?;
    let beta2 = r.f64_le()?;
    let eps = r.f64_le()?;
    let mom_m = read_f64s(&mut r)?;
    let mom_v = read_f64s(&mut r)?;
    if mom_m.len() != mom_v.len() {
        return Err(Error::Format(format!(
            "{what}: optimizer moment arrays disagree ({} vs {})",
            mom_m.len(),
            mom_v.len()
        )));
    }
    let adam = AdamState::restore(mom_m, mom_v, step_count, rho, beta1, beta2, eps);

    let iter = r.u64_le()?;
    let seed = r.u64_le()?;
    r.expect_end()?;

    Trainer::from_parts(model, bank, mask, adam, iter, seed)
}

/// Load a training state saved by `save_checkpoint`.
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = super::read_file(path)?;
    checkpoint_from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::TrainConfig;
    use crate::math::Rng;
    use crate::model::{sample_dataset, SampleOptions};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("bpdc-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn trained_trainer(seed: u64, iters: u64) -> (Mat, Trainer, TrainConfig) {
        let mut hyper = HyperParams::defaults(4, 5, 6);
        hyper.sigma2 = 0.1;
        hyper.c = 1.0;
        let mut rng = Rng::new(seed);
        let gen = ModelState::init(hyper.clone(), &[7], Activation::Tanh, &mut rng).unwrap();
        let data = sample_dataset(&gen, 30, &SampleOptions::default(), &mut rng).unwrap();
        let model = ModelState::init(hyper, &[7], Activation::Tanh, &mut rng).unwrap();
        let cfg = TrainConfig {
            batch_size: 6,
            n_iters: iters,
            tau0: 5.0,
            kappa: 0.8,
            adam_stepsize: 0.02,
            seed: seed ^ 0xabcd,
            log_every: 3,
            threads: 1,
        };
        let mut trainer = Trainer::new(model, &cfg).unwrap();
        trainer.run(&data.x, &cfg, iters).unwrap();
        (data.x, trainer, cfg)
    }

    fn assert_trainers_equal(a: &Trainer, b: &Trainer) {
        assert_eq!(a.model.flatten_params(), b.model.flatten_params());
        assert_eq!(a.model.hyper, b.model.hyper);
        assert_eq!(a.model.net.dims(), b.model.net.dims());
        assert_eq!(a.bank.a(), b.bank.a());
        assert_eq!(a.bank.b(), b.bank.b());
        assert_eq!(a.mask.flags(), b.mask.flags());
        assert_eq!(a.iteration(), b.iteration());
        assert_eq!(a.seed(), b.seed());
        assert_eq!(a.adam().step_count(), b.adam().step_count());
        assert_eq!(a.adam().moments(), b.adam().moments());
        assert_eq!(a.adam().rho, b.adam().rho);
    }

    #[test]
    fn roundtrip_is_bit_exact_across_random_states() {
        for seed in 0..20 {
            let (_, trainer, _) = trained_trainer(100 + seed, 4);
            let path = tmp(&format!("rt-{seed}.ckpt"));
            save_checkpoint(&path, &trainer).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_trainers_equal(&trainer, &back);
            // a second save of the loaded state is byte-identical
            assert_eq!(checkpoint_bytes(&trainer), checkpoint_bytes(&back));
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (x, mut full, cfg) = trained_trainer(7, 10);
        let log_rest_full = full.run(&x, &cfg, 10).unwrap();

        let (x2, interrupted, _) = trained_trainer(7, 10);
        assert_eq!(x.data(), x2.data());
        let path = tmp("resume.ckpt");
        save_checkpoint(&path, &interrupted).unwrap();
        let mut resumed = load_checkpoint(&path).unwrap();
        let log_rest_resumed = resumed.run(&x, &cfg, 10).unwrap();

        assert_eq!(log_rest_full.metrics_csv(), log_rest_resumed.metrics_csv());
        assert_trainers_equal(&full, &resumed);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let (_, trainer, _) = trained_trainer(8, 2);
        let mut bytes = checkpoint_bytes(&trainer);
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes, "test"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn future_version_is_an_explicit_incompatibility() {
        let (_, trainer, _) = trained_trainer(9, 2);
        let mut bytes = checkpoint_bytes(&trainer);
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        match checkpoint_from_bytes(&bytes, "test") {
            Err(Error::Version { found: 99, expected: 1 }) => {}
            other => panic!("expected a version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_anywhere_fails_without_partial_state() {
        let (_, trainer, _) = trained_trainer(10, 3);
        let bytes = checkpoint_bytes(&trainer);
        // chop at a spread of offsets, including inside float arrays
        for cut in [5, 11, 19, 64, bytes.len() / 2, bytes.len() - 3] {
            let err = checkpoint_from_bytes(&bytes[..cut], "test").unwrap_err();
            assert!(
                matches!(err, Error::Format(_) | Error::Version { .. }),
                "cut at {cut}: unexpected {err:?}"
            );
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let (_, trainer, _) = trained_trainer(11, 2);
        let mut bytes = checkpoint_bytes(&trainer);
        bytes.extend_from_slice(&[0, 1, 2]);
        let err = checkpoint_from_bytes(&bytes, "test").unwrap_err();
        assert!(err.to_string().contains("trailing"), "got: {err}");
    }

    #[test]
    fn corrupt_length_prefix_fails_cleanly() {
        let (_, trainer, _) = trained_trainer(12, 2);
        let mut bytes = checkpoint_bytes(&trainer);
        // the dictionary row count sits right after hyperparameters:
        // 8 magic + 4 version + 4*8 f64 + 4*8 u64 + 8 f64 + 1 byte
        let off = 8 + 4 + 32 + 32 + 8 + 1;
        bytes[off..off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        let err = checkpoint_from_bytes(&bytes, "test").unwrap_err();
        assert!(
            err.to_string().contains("implausible length"),
            "got: {err}"
        );
    }
}
