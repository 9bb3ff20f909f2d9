//! Dense row-major matrices and attention masks.
//!
//! Shapes are validated on construction and on every binary op. Reductions
//! accumulate left to right in index order so results are reproducible
//! bit for bit across runs.

use crate::{KernelError, Scalar};

/// Dense rank-2 tensor with positive dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor2<S> {
    /// Builds a tensor from row-major data, rejecting empty dims, length
    /// mismatches, and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, KernelError> {
        if rows == 0 || cols == 0 {
            return Err(KernelError::EmptyDim { what: "Tensor2" });
        }
        if data.len() != rows * cols {
            return Err(KernelError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(KernelError::NonFinite {
                    what: "Tensor2",
                    row: i / cols,
                    col: i % cols,
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, KernelError> {
        Self::new(rows, cols, vec![S::zero(); rows.max(1) * cols.max(1)])
    }

    /// Fills each cell from `f(row, col)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> S,
    ) -> Result<Self, KernelError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, KernelError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(KernelError::EmptyDim { what: "Tensor2" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(KernelError::DataLength {
                    rows: rows.len(),
                    cols,
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// `self @ rhs`, accumulating each cell over `k` in ascending order.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, KernelError> {
        if self.cols != rhs.rows {
            return Err(self.shape_err("matmul", rhs));
        }
        let mut data = Vec::with_capacity(self.rows * rhs.cols);
        for r in 0..self.rows {
            for c in 0..rhs.cols {
                let mut acc = S::zero();
                for k in 0..self.cols {
                    acc = acc + self.get(r, k) * rhs.get(k, c);
                }
                data.push(acc);
            }
        }
        Self::new(self.rows, rhs.cols, data)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, KernelError> {
        self.zip_with("add", rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, KernelError> {
        self.zip_with("sub", rhs, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Result<Self, KernelError> {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Result<Self, KernelError> {
        Self::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Stacks `self` on top of `bottom`; widths must agree.
    pub fn concat_rows(&self, bottom: &Self) -> Result<Self, KernelError> {
        if self.cols != bottom.cols {
            return Err(self.shape_err("concat_rows", bottom));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&bottom.data);
        Self::new(self.rows + bottom.rows, self.cols, data)
    }

    fn zip_with(
        &self,
        op: &'static str,
        rhs: &Self,
        f: impl Fn(S, S) -> S,
    ) -> Result<Self, KernelError> {
        if self.shape() != rhs.shape() {
            return Err(self.shape_err(op, rhs));
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    fn shape_err(&self, op: &'static str, rhs: &Self) -> KernelError {
        KernelError::ShapeMismatch {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: rhs.rows,
            right_cols: rhs.cols,
        }
    }
}

/// Boolean visibility mask for attention: `allowed(q, k)` says whether query
/// row `q` may attend to key row `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                allowed.push(f(r, c));
            }
        }
        Self { rows, cols, allowed }
    }

    pub fn all_allowed(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    /// Square causal mask: position `i` sees positions `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |q, k| k <= q)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.cols + k]
    }

    pub fn row_has_any(&self, q: usize) -> bool {
        (0..self.cols).any(|k| self.allowed(q, k))
    }
}
