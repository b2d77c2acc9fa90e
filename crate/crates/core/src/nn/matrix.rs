use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
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
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `out = x · wᵀ + b` where `w` is `(out_dim, in_dim)`.
pub(crate) fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    debug_assert_eq!(x.cols, w.cols);
    debug_assert_eq!(w.rows, b.len());
    let mut out = Matrix::zeros(x.rows, w.rows);
    for r in 0..x.rows {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for (o, (wr, bias)) in or.iter_mut().zip(w.iter_rows().zip(b)) {
            let mut acc = *bias;
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *o = acc;
        }
    }
    out
}

/// `out = δ · w` where `δ` is `(batch, out_dim)` and `w` is `(out_dim, in_dim)`.
pub(crate) fn backprop_input(delta: &Matrix, w: &Matrix) -> Matrix {
    debug_assert_eq!(delta.cols, w.rows);
    let mut out = Matrix::zeros(delta.rows, w.cols);
    for r in 0..delta.rows {
        let dr = delta.row(r);
        let or = out.row_mut(r);
        for (d, wr) in dr.iter().zip(w.iter_rows()) {
            if *d == 0.0 {
                continue;
            }
            for (o, c) in or.iter_mut().zip(wr) {
                *o += d * c;
            }
        }
    }
    out
}

/// Accumulates `δᵀ · x` into `grad_w` and column sums of `δ` into `grad_b`.
pub(crate) fn accumulate_weight_grad(delta: &Matrix, x: &Matrix, grad_w: &mut Matrix, grad_b: &mut [f64]) {
    debug_assert_eq!(delta.rows, x.rows);
    for r in 0..delta.rows {
        let dr = delta.row(r);
        let xr = x.row(r);
        for (o, d) in dr.iter().enumerate() {
            grad_b[o] += d;
            if *d == 0.0 {
                continue;
            }
            for (g, xv) in grad_w.row_mut(o).iter_mut().zip(xr) {
                *g += d * xv;
            }
        }
    }
}
