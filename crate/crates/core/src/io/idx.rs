//! IDX image/label containers (the MNIST file format) and CSV matrices.
//!
//! IDX is big-endian: a 4-byte magic encoding element type and rank,
//! rank × u32 dimension sizes, then the raw elements. Only the two
//! shapes MNIST uses are supported: unsigned-byte rank-3 images
//! (magic 0x00000803) and unsigned-byte rank-1 labels (0x00000801).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::math::Mat;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// How raw pixel bytes become model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Bytes as-is (0…255).
    Raw,
    /// Divide by 255 into [0, 1].
    UnitInterval,
    /// Divide by 255, then subtract each feature's (row's) mean across
    /// the dataset.
    ZeroMean,
}

impl Scaling {
    pub fn name(&self) -> &'static str {
        match self {
            Scaling::Raw => "raw",
            Scaling::UnitInterval => "unit_interval",
            Scaling::ZeroMean => "zero_mean",
        }
    }

    pub fn from_name(s: &str) -> Result<Scaling> {
        match s {
            "raw" => Ok(Scaling::Raw),
            "unit_interval" => Ok(Scaling::UnitInterval),
            "zero_mean" => Ok(Scaling::ZeroMean),
            other => Err(Error::Config(format!(
                "unknown scaling '{other}' (expected raw, unit_interval, or zero_mean)"
            ))),
        }
    }
}

/// A loaded dataset: observations as the columns of `x`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Mat,
    pub labels: Option<Vec<u8>>,
    /// (rows, cols) when the data came from an image container.
    pub image_shape: Option<(usize, usize)>,
    pub scaling: Scaling,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn from_matrix(x: Mat) -> Dataset {
        Dataset { x, labels: None, image_shape: None, scaling: Scaling::Raw }
    }
}

fn apply_scaling(x: &mut Mat, scaling: Scaling) {
    match scaling {
        Scaling::Raw => {}
        Scaling::UnitInterval => {
            for v in x.data_mut() {
                *v /= 255.0;
            }
        }
        Scaling::ZeroMean => {
            for v in x.data_mut() {
                *v /= 255.0;
            }
            let (d, n) = (x.rows(), x.cols());
            let mut means = vec![0.0; d];
            for c in 0..n {
                for (m, &v) in means.iter_mut().zip(x.col(c)) {
                    *m += v;
                }
            }
            for m in &mut means {
                *m /= n as f64;
            }
            for c in 0..n {
                for (v, m) in x.col_mut(c).iter_mut().zip(&means) {
                    *v -= m;
                }
            }
        }
    }
}

/// Load an IDX image file, optionally paired with an IDX label file, and
/// apply the requested scaling. Each image contributes one column
/// (pixels in row-major order, D = rows·cols).
pub fn load_idx(
    images_path: &Path,
    labels_path: Option<&Path>,
    scaling: Scaling,
) -> Result<Dataset> {
    let bytes = super::read_file(images_path)?;
    let name = images_path.display().to_string();
    let mut r = ByteReader::new(&bytes, &name);
    let magic = r.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{name}: bad magic {magic:#010x} at offset 0 (images need {IDX_IMAGES_MAGIC:#010x})"
        )));
    }
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let d = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("{name}: image shape {rows}x{cols} overflows")))?;
    if d == 0 || n == 0 {
        return Err(Error::Format(format!(
            "{name}: degenerate dimensions ({n} images of {rows}x{cols})"
        )));
    }
    let pixels = r.take(n * d).map_err(|_| {
        Error::Format(format!(
            "{name}: truncated at byte {} ({} images of {} pixels need {} data bytes)",
            r.position(),
            n,
            d,
            n * d
        ))
    })?;
    let mut x = Mat::zeros(d, n);
    for i in 0..n {
        let col = x.col_mut(i);
        for (o, &p) in col.iter_mut().zip(&pixels[i * d..(i + 1) * d]) {
            *o = p as f64;
        }
    }
    apply_scaling(&mut x, scaling);

    let labels = match labels_path {
        None => None,
        Some(lp) => {
            let lbl = load_idx_labels(lp)?;
            if lbl.len() != n {
                return Err(Error::Format(format!(
                    "{}: {} labels for {} images in {}",
                    lp.display(),
                    lbl.len(),
                    n,
                    name
                )));
            }
            Some(lbl)
        }
    };

    Ok(Dataset { x, labels, image_shape: Some((rows, cols)), scaling })
}

/// Load an IDX label file (one byte per datum).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = super::read_file(path)?;
    let name = path.display().to_string();
    let mut r = ByteReader::new(&bytes, &name);
    let magic = r.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{name}: bad magic {magic:#010x} at offset 0 (labels need {IDX_LABELS_MAGIC:#010x})"
        )));
    }
    let n = r.u32_be()? as usize;
    let data = r.take(n).map_err(|_| {
        Error::Format(format!(
            "{name}: truncated at byte {} ({} labels declared)",
            r.position(),
            n
        ))
    })?;
    Ok(data.to_vec())
}

/// Write a matrix as an IDX image file. Entries must already be byte
/// values (0…255); they are rounded to the nearest integer. Column i of
/// the matrix becomes image i, its entries read in row-major image order.
pub fn write_idx_images(path: &Path, x: &Mat, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != x.rows() {
        return Err(Error::Shape(format!(
            "matrix rows {} do not match image shape {}x{}",
            x.rows(),
            rows,
            cols
        )));
    }
    let mut out = Vec::with_capacity(16 + x.rows() * x.cols());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(x.cols() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for c in 0..x.cols() {
        for &v in x.col(c) {
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "pixel value {v} outside the byte range in column {c}"
                )));
            }
            out.push(v.round() as u8);
        }
    }
    write_atomic(path, &out)
}

/// Write labels as an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_atomic(path, &out)
}

/// Write a matrix as CSV, one datum (column) per line, full f64
/// round-trip precision.
pub fn write_csv_matrix(path: &Path, x: &Mat) -> Result<()> {
    let mut out = String::new();
    for c in 0..x.cols() {
        let line: Vec<String> = x.col(c).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Load a headerless CSV matrix written by `write_csv_matrix`: each line
/// is one datum and becomes one column.
pub fn load_csv_matrix(path: &Path) -> Result<Mat> {
    let text = super::read_text(path)?;
    let name = path.display();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "{name}: line {}: '{tok}' is not a number",
                        lineno + 1
                    ))
                })
            })
            .collect();
        let vals = vals?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(Error::Format(format!(
                    "{name}: line {} has {} values, earlier lines have {}",
                    lineno + 1,
                    vals.len(),
                    d
                )));
            }
            _ => {}
        }
        columns.push(vals);
    }
    let d = dim.ok_or_else(|| Error::Format(format!("{name}: no data lines")))?;
    if d == 0 {
        return Err(Error::Format(format!("{name}: empty data lines")));
    }
    let mut x = Mat::zeros(d, columns.len());
    for (i, col) in columns.iter().enumerate() {
        x.col_mut(i).copy_from_slice(col);
    }
    Ok(x)
}

/// Load labels from a text file with one small integer per line.
pub fn load_csv_labels(path: &Path) -> Result<Vec<u8>> {
    let text = super::read_text(path)?;
    let name = path.display();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: u8 = t.parse().map_err(|_| {
            Error::Format(format!("{name}: line {}: '{t}' is not a byte label", lineno + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}
