use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty iterator yields a
    /// `0 x cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!("matrix row {n}"), cols, r.len()));
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Ok(Self { rows: n, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim("matvec input", self.cols, x.len()));
        }
        Ok(self
            .iter_rows()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

// Kernels over raw row-major slices. Weight blocks are stored `in x out`
// so the forward pass is a sequence of contiguous axpy updates.

/// `out[b, :] = x[b, :] W + bias` for `x: rows x n_in`, `W: n_in x n_out`.
pub(crate) fn affine(x: &[f64], n_in: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_out = bias.len();
    debug_assert_eq!(w.len(), n_in * n_out);
    for (xr, or) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        or.copy_from_slice(bias);
        for (xi, wr) in xr.iter().zip(w.chunks_exact(n_out)) {
            if *xi != 0.0 {
                for (o, wv) in or.iter_mut().zip(wr) {
                    *o += xi * wv;
                }
            }
        }
    }
}

/// `out[b, :] += x[b, :] W` (no bias).
pub(crate) fn affine_acc(x: &[f64], n_in: usize, w: &[f64], n_out: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        for (xi, wr) in xr.iter().zip(w.chunks_exact(n_out)) {
            if *xi != 0.0 {
                for (o, wv) in or.iter_mut().zip(wr) {
                    *o += xi * wv;
                }
            }
        }
    }
}

/// `acc += x^T y` for `x: rows x n_in`, `y: rows x n_out`, `acc: n_in x n_out`.
pub(crate) fn add_xt_y(x: &[f64], n_in: usize, y: &[f64], n_out: usize, acc: &mut [f64]) {
    for (xr, yr) in x.chunks_exact(n_in).zip(y.chunks_exact(n_out)) {
        for (xi, ar) in xr.iter().zip(acc.chunks_exact_mut(n_out)) {
            if *xi != 0.0 {
                for (a, yv) in ar.iter_mut().zip(yr) {
                    *a += xi * yv;
                }
            }
        }
    }
}

/// `out = y W^T` for `y: rows x n_out`, `W: n_in x n_out`, `out: rows x n_in`.
pub(crate) fn mul_wt(y: &[f64], n_out: usize, w: &[f64], n_in: usize, out: &mut [f64]) {
    for (yr, or) in y.chunks_exact(n_out).zip(out.chunks_exact_mut(n_in)) {
        for (o, wr) in or.iter_mut().zip(w.chunks_exact(n_out)) {
            *o = wr.iter().zip(yr).map(|(a, b)| a * b).sum();
        }
    }
}

/// `out += y W^T`.
pub(crate) fn mul_wt_acc(y: &[f64], n_out: usize, w: &[f64], n_in: usize, out: &mut [f64]) {
    for (yr, or) in y.chunks_exact(n_out).zip(out.chunks_exact_mut(n_in)) {
        for (o, wr) in or.iter_mut().zip(w.chunks_exact(n_out)) {
            *o += wr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// `acc[j] += sum_b y[b, j]`.
pub(crate) fn add_colsum(y: &[f64], n: usize, acc: &mut [f64]) {
    for yr in y.chunks_exact(n) {
        for (a, v) in acc.iter_mut().zip(yr) {
            *a += v;
        }
    }
}
