//! Row-major dense tensors of `f64`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `[rows.len(), width]` matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {width}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), width],
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the trailing dimension.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.last_dim();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.last_dim();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{what} (element {i})"))),
        }
    }

    /// Concatenates two matrices with the same row count along columns.
    pub fn hcat(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let rows = self.rows();
        if rows != other.rows() {
            return Err(Error::shape(format!(
                "hcat row mismatch: {} vs {}",
                rows,
                other.rows()
            )));
        }
        let (a, b) = (self.last_dim(), other.last_dim());
        let mut data = Vec::with_capacity(rows * (a + b));
        for i in 0..rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(DenseTensor {
            shape: vec![rows, a + b],
            data,
        })
    }

    /// Splits columns `[0, at)` and `[at, width)` into two matrices.
    pub fn split_cols(&self, at: usize) -> (DenseTensor, DenseTensor) {
        let rows = self.rows();
        let w = self.last_dim();
        let mut left = Vec::with_capacity(rows * at);
        let mut right = Vec::with_capacity(rows * (w - at));
        for i in 0..rows {
            let r = self.row(i);
            left.extend_from_slice(&r[..at]);
            right.extend_from_slice(&r[at..]);
        }
        (
            DenseTensor {
                shape: vec![rows, at],
                data: left,
            },
            DenseTensor {
                shape: vec![rows, w - at],
                data: right,
            },
        )
    }
}

/// `c = a · b` (+ `c` when `accumulate`), with `a: [m,k]`, `b: [k,n]`, all row-major.
///
/// `a_t`/`b_t` read the operand transposed from its stored layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // Stored layouts: a is [m,k] (or [k,m] when a_t), b is [k,n] (or [n,k] when b_t).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above; strides describe in-bounds layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
