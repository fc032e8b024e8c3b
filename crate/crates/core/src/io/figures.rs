//! Figure-data exports: everything a plotting tool needs, no plotting.
//!
//! Four artifacts describe a trained model:
//! 1. a reconstruction grid — paired original/model images (PGM) plus the
//!    same numbers as CSV,
//! 2. a factor-sharing matrix over label classes,
//! 3. the combinatorial response table of the top activation bits,
//! 4. the E[π] training trace (written by [`crate::io::metrics`], since
//!    it comes from the run log rather than the final state).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::posterior::{update_q_lambda, BetaPosteriorBank};
use crate::io::idx::Dataset;
use crate::io::write_atomic;
use crate::model::{ModelState, SparseCode};

/// What an export produced: file paths written and human-readable notes
/// about anything skipped.
#[derive(Debug, Default)]
pub struct FigureReport {
    pub written: Vec<PathBuf>,
    pub notes: Vec<String>,
}

/// Write one grayscale image as binary PGM (P5, maxval 255). Values are
/// clamped to [0, 1] and scaled.
pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} values for a {rows}x{cols} image",
            values.len()
        )));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for &v in values {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    write_atomic(path, &out)
}

/// Map arbitrary pixel values into [0, 1] for display by an affine
/// min-max rescale; constant images map to all-zero.
fn display_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Empirical per-class activation frequencies u[class][factor].
fn activation_frequencies(
    codes: &[SparseCode],
    labels: &[u8],
    k: usize,
) -> (Vec<u8>, Vec<Vec<f64>>) {
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut freq = vec![vec![0.0; k]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (code, &lbl) in codes.iter().zip(labels) {
        let ci = classes.binary_search(&lbl).unwrap();
        counts[ci] += 1;
        for &f in &code.active_set {
            freq[ci][f] += 1.0;
        }
    }
    for (row, &n) in freq.iter_mut().zip(&counts) {
        if n > 0 {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    (classes, freq)
}

/// Expected number of shared active factors between two independently
/// drawn codes of each class pair: S(c₁,c₂) = Σ_k u[c₁][k]·u[c₂][k],
/// normalized so the largest entry is exactly 1 (when nonzero).
pub fn factor_sharing_matrix(
    codes: &[SparseCode],
    labels: &[u8],
    k: usize,
) -> (Vec<u8>, Vec<Vec<f64>>) {
    let (classes, freq) = activation_frequencies(codes, labels, k);
    let n = classes.len();
    let mut s = vec![vec![0.0; n]; n];
    let mut max = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..k).map(|f| freq[i][f] * freq[j][f]).sum();
            s[i][j] = v;
            if v > max {
                max = v;
            }
        }
    }
    if max > 0.0 {
        for row in &mut s {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
    }
    (classes, s)
}

/// The combinatorial response table: the `n_bits` factors with the
/// highest E[π] are toggled through all 2^n_bits patterns (all other
/// bits 0) and for each pattern the top `n_top` mixing-weight indices
/// and values are recorded. Returns (chosen factor indices, rows), each
/// row being (pattern bits, ranked index/value pairs).
#[allow(clippy::type_complexity)]
pub fn top_bit_table(
    model: &ModelState,
    bank: &BetaPosteriorBank,
    n_bits: usize,
    n_top: usize,
) -> Result<(Vec<usize>, Vec<(Vec<bool>, Vec<(usize, f64)>)>)> {
    let k = model.hyper.k;
    let n_bits = n_bits.min(k);
    let n_top = n_top.min(model.hyper.m);
    // rank factors by posterior activation probability, ties to the
    // smaller index for determinism
    let mut order: Vec<usize> = (0..k).collect();
    let pi = bank.expected_pi();
    order.sort_by(|&a, &b| pi[b].partial_cmp(&pi[a]).unwrap().then(a.cmp(&b)));
    let chosen: Vec<usize> = {
        let mut c = order[..n_bits].to_vec();
        c.sort_unstable();
        c
    };

    let mut rows = Vec::with_capacity(1 << n_bits);
    for pattern in 0u32..(1u32 << n_bits) {
        let bits: Vec<bool> = (0..n_bits).map(|i| pattern >> i & 1 == 1).collect();
        let mut z = vec![false; k];
        for (i, &on) in bits.iter().enumerate() {
            z[chosen[i]] = on;
        }
        let pass = model.net.forward(&z)?;
        let xi = pass.output();
        let mut ranked: Vec<(usize, f64)> = xi.iter().cloned().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(n_top);
        rows.push((bits, ranked));
    }
    Ok((chosen, rows))
}

fn csv_join(fields: &[String]) -> String {
    fields.join(",")
}

/// Write the reconstruction grid, factor-sharing matrix, and top-bit
/// table for a coded dataset. Labels are optional; without them the
/// factor-sharing export is skipped with a note in the report.
pub fn export_figures(
    model: &ModelState,
    bank: &BetaPosteriorBank,
    dataset: &Dataset,
    codes: &[SparseCode],
    out_dir: &Path,
) -> Result<FigureReport> {
    if codes.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "{} codes for {} data",
            codes.len(),
            dataset.len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut report = FigureReport::default();

    // --- (1) reconstruction grid ---
    let d = dataset.dim();
    let (img_rows, img_cols) = dataset.image_shape.unwrap_or((1, d));
    let n_show = dataset.len().min(16);
    let mut grid_csv = String::from("index,kind");
    for i in 0..d {
        grid_csv.push_str(&format!(",p{i}"));
    }
    grid_csv.push('\n');
    for i in 0..n_show {
        let x = dataset.x.col(i);
        let f = model.decode(&codes[i].z)?;
        let q = update_q_lambda(x, &f, &model.hyper)?;
        let recon: Vec<f64> = f.iter().map(|&v| q.mean * v).collect();

        let orig_path = out_dir.join(format!("grid_{i:02}_original.pgm"));
        write_pgm(&orig_path, &display_normalize(x), img_rows, img_cols)?;
        let recon_path = out_dir.join(format!("grid_{i:02}_reconstruction.pgm"));
        write_pgm(&recon_path, &display_normalize(&recon), img_rows, img_cols)?;
        report.written.push(orig_path);
        report.written.push(recon_path);

        let mut orig_fields = vec![i.to_string(), "original".into()];
        orig_fields.extend(x.iter().map(|v| v.to_string()));
        grid_csv.push_str(&csv_join(&orig_fields));
        grid_csv.push('\n');
        let mut rec_fields = vec![i.to_string(), "reconstruction".into()];
        rec_fields.extend(recon.iter().map(|v| v.to_string()));
        grid_csv.push_str(&csv_join(&rec_fields));
        grid_csv.push('\n');
    }
    let grid_path = out_dir.join("reconstruction_grid.csv");
    write_atomic(&grid_path, grid_csv.as_bytes())?;
    report.written.push(grid_path);

    // --- (2) factor sharing ---
    match &dataset.labels {
        None => report
            .notes
            .push("factor-sharing export skipped: dataset has no labels".into()),
        Some(labels) => {
            let (classes, s) = factor_sharing_matrix(codes, labels, model.hyper.k);
            let mut csv = String::from("label");
            for c in &classes {
                csv.push_str(&format!(",{c}"));
            }
            csv.push('\n');
            for (ci, row) in s.iter().enumerate() {
                let mut fields = vec![classes[ci].to_string()];
                fields.extend(row.iter().map(|v| v.to_string()));
                csv.push_str(&csv_join(&fields));
                csv.push('\n');
            }
            let path = out_dir.join("factor_sharing.csv");
            write_atomic(&path, csv.as_bytes())?;
            report.written.push(path);
        }
    }

    // --- (3) top-bit combinatorial table ---
    let csv = top_bits_csv(model, bank, 5, 4)?;
    let path = out_dir.join("top_bits.csv");
    write_atomic(&path, csv.as_bytes())?;
    report.written.push(path);

    Ok(report)
}

/// The top-bit table rendered as CSV, header included: one row per
/// on/off pattern of the `n_bits` most probable factors, with the
/// `n_top` largest mixture outputs for each.
pub fn top_bits_csv(
    model: &ModelState,
    bank: &BetaPosteriorBank,
    n_bits: usize,
    n_top: usize,
) -> Result<String> {
    let (chosen, rows) = top_bit_table(model, bank, n_bits, n_top)?;
    let mut csv = String::from("pattern");
    for k in &chosen {
        csv.push_str(&format!(",bit_{k}"));
    }
    for j in 1..=rows.first().map_or(0, |(_, r)| r.len()) {
        csv.push_str(&format!(",top{j}_idx,top{j}_val"));
    }
    csv.push('\n');
    for (pi, (bits, ranked)) in rows.iter().enumerate() {
        let mut fields = vec![pi.to_string()];
        fields.extend(bits.iter().map(|&b| (b as u8).to_string()));
        for (idx, val) in ranked {
            fields.push(idx.to_string());
            fields.push(val.to_string());
        }
        csv.push_str(&csv_join(&fields));
        csv.push('\n');
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::idx::Scaling;
    use crate::math::{Mat, Rng};
    use crate::model::HyperParams;
    use crate::net::Activation;

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("bpdc-fig-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn code_with(bits: &[usize], k: usize) -> SparseCode {
        let mut z = vec![false; k];
        for &b in bits {
            z[b] = true;
        }
        SparseCode::from_z(z, 0.0)
    }

    #[test]
    fn pgm_bytes_are_exactly_the_p5_layout() {
        let dir = tmp_dir("pgm");
        let path = dir.join("img.pgm");
        write_pgm(&path, &[0.0, 1.0, 0.5, 2.0], 2, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut want = b"P5\n2 2\n255\n".to_vec();
        want.extend_from_slice(&[0, 255, 128, 255]); // 2.0 clamps to 1
        assert_eq!(bytes, want);
    }

    #[test]
    fn identical_codes_produce_an_all_ones_sharing_matrix() {
        let codes: Vec<SparseCode> = (0..8).map(|_| code_with(&[0, 2], 4)).collect();
        let labels = [0u8, 0, 1, 1, 2, 2, 3, 3];
        let (classes, s) = factor_sharing_matrix(&codes, &labels, 4);
        assert_eq!(classes, vec![0, 1, 2, 3]);
        for row in &s {
            for &v in row {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn single_class_sharing_matrix_is_one_by_one_unit() {
        let codes = vec![code_with(&[1], 3), code_with(&[1, 2], 3)];
        let (classes, s) = factor_sharing_matrix(&codes, &[5, 5], 3);
        assert_eq!(classes, vec![5]);
        assert_eq!(s, vec![vec![1.0]]);
    }

    #[test]
    fn sharing_matrix_is_symmetric_with_max_exactly_one() {
        let mut rng = Rng::new(80);
        let k = 6;
        let codes: Vec<SparseCode> = (0..40)
            .map(|_| {
                let bits: Vec<usize> = (0..k).filter(|_| rng.bernoulli(0.4)).collect();
                code_with(&bits, k)
            })
            .collect();
        let labels: Vec<u8> = (0..40).map(|_| (rng.next_u64() % 3) as u8).collect();
        let (_, s) = factor_sharing_matrix(&codes, &labels, k);
        let n = s.len();
        let mut max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                assert!((s[i][j] - s[j][i]).abs() < 1e-15, "not symmetric at {i},{j}");
                max = max.max(s[i][j]);
            }
        }
        assert_eq!(max, 1.0);
    }

    #[test]
    fn top_bit_table_has_the_full_pattern_enumeration() {
        let mut hyper = HyperParams::defaults(8, 6, 5);
        hyper.sigma2 = 1.0;
        let mut rng = Rng::new(81);
        let model = ModelState::init(hyper, &[7], Activation::Tanh, &mut rng).unwrap();
        // bank with a clear top-5: factors 1,3,4,6,7
        let mut a = vec![1.0; 8];
        for k in [1, 3, 4, 6, 7] {
            a[k] = 50.0;
        }
        let bank = BetaPosteriorBank::new(a, vec![5.0; 8]).unwrap();
        let (chosen, rows) = top_bit_table(&model, &bank, 5, 4).unwrap();
        assert_eq!(chosen, vec![1, 3, 4, 6, 7]);
        assert_eq!(rows.len(), 32);
        for (bits, ranked) in &rows {
            assert_eq!(bits.len(), 5);
            assert_eq!(ranked.len(), 4);
            for w in ranked.windows(2) {
                assert!(w[0].1 >= w[1].1, "ranked values must descend");
            }
            for &(idx, val) in ranked {
                assert!(idx < 6);
                assert!((0.0..=1.0).contains(&val));
            }
        }
    }

    #[test]
    fn export_writes_all_files_and_notes_missing_labels() {
        let mut hyper = HyperParams::defaults(4, 3, 6);
        hyper.sigma2 = 0.5;
        hyper.c = 1.0;
        let mut rng = Rng::new(82);
        let model = ModelState::init(hyper.clone(), &[5], Activation::Tanh, &mut rng).unwrap();
        let bank = BetaPosteriorBank::from_prior(&hyper).unwrap();
        let x = Mat::from_fn(6, 5, |_, _| rng.uniform());
        let codes: Vec<SparseCode> = (0..5).map(|i| code_with(&[i % 4], 4)).collect();

        // with labels: sharing matrix included
        let dir = tmp_dir("with-labels");
        let ds = Dataset {
            x: x.clone(),
            labels: Some(vec![0, 1, 0, 1, 0]),
            image_shape: Some((2, 3)),
            scaling: Scaling::UnitInterval,
        };
        let report = export_figures(&model, &bank, &ds, &codes, &dir).unwrap();
        assert!(report.notes.is_empty());
        for name in ["reconstruction_grid.csv", "factor_sharing.csv", "top_bits.csv"] {
            assert!(dir.join(name).exists(), "{name} missing");
        }
        assert!(dir.join("grid_00_original.pgm").exists());
        assert!(dir.join("grid_04_reconstruction.pgm").exists());

        // grid csv has a header plus two rows per shown datum
        let grid = std::fs::read_to_string(dir.join("reconstruction_grid.csv")).unwrap();
        assert_eq!(grid.lines().count(), 1 + 2 * 5);
        assert!(grid.starts_with("index,kind,p0,p1,p2,p3,p4,p5\n"));

        // without labels: a note, no sharing file
        let dir2 = tmp_dir("no-labels");
        let ds2 = Dataset { labels: None, ..ds };
        let report = export_figures(&model, &bank, &ds2, &codes, &dir2).unwrap();
        assert_eq!(report.notes.len(), 1);
        assert!(report.notes[0].contains("labels"));
        assert!(!dir2.join("factor_sharing.csv").exists());
    }

    #[test]
    fn code_count_mismatch_is_rejected() {
        let hyper = HyperParams::defaults(2, 2, 3);
        let mut rng = Rng::new(83);
        let model = ModelState::init(hyper.clone(), &[4], Activation::Tanh, &mut rng).unwrap();
        let bank = BetaPosteriorBank::from_prior(&hyper).unwrap();
        let ds = Dataset::from_matrix(Mat::zeros(3, 4));
        let codes = vec![code_with(&[], 2); 3];
        assert!(matches!(
            export_figures(&model, &bank, &ds, &codes, &tmp_dir("mismatch")),
            Err(Error::Shape(_))
        ));
    }
}
