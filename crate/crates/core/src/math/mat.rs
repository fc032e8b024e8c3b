//! Minimal column-major dense matrix.
//!
//! Problems here are desk scale (hundreds of rows, tens of columns), so
//! plain loops are fast enough and keep the arithmetic order fixed, which
//! the determinism guarantees elsewhere rely on. Columns are contiguous:
//! a data point of a D×N design matrix and an atom of a D×M dictionary can
//! both be borrowed as slices.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>, // column-major: data[c * rows + r]
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.data[c * rows + r] = f(r, c);
            }
        }
        m
    }

    /// Wrap an existing column-major buffer. Panics if the length is wrong.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major buffer length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// self · v. Accumulates column by column so the summation order is fixed.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (c, &vc) in v.iter().enumerate() {
            if vc == 0.0 {
                continue;
            }
            let col = self.col(c);
            for (o, &x) in out.iter_mut().zip(col) {
                *o += vc * x;
            }
        }
        out
    }

    /// selfᵀ · v (one dot product per column).
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_matvec dimension mismatch");
        (0..self.cols).map(|c| dot(self.col(c), v)).collect()
    }

    /// Gram matrix selfᵀ·self (cols × cols).
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.cols, self.cols);
        for i in 0..self.cols {
            for j in i..self.cols {
                let d = dot(self.col(i), self.col(j));
                g.set(i, j, d);
                g.set(j, i, d);
            }
        }
        g
    }

    /// self += s · u vᵀ.
    pub fn add_scaled_outer(&mut self, u: &[f64], v: &[f64], s: f64) {
        assert_eq!(u.len(), self.rows, "outer product row mismatch");
        assert_eq!(v.len(), self.cols, "outer product col mismatch");
        for (c, &vc) in v.iter().enumerate() {
            let f = s * vc;
            if f == 0.0 {
                continue;
            }
            let col = self.col_mut(c);
            for (o, &x) in col.iter_mut().zip(u) {
                *o += f * x;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quadratic form vᵀ·G·v for a symmetric G.
pub fn quad_form(g: &Mat, v: &[f64]) -> f64 {
    assert_eq!(v.len(), g.cols(), "quad_form dimension mismatch");
    let mut acc = 0.0;
    for (c, &vc) in v.iter().enumerate() {
        if vc != 0.0 {
            acc += vc * dot(g.col(c), v);
        }
    }
    acc
}
