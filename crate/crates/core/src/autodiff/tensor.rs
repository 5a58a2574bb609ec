use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Most of the crate works with rank-2 tensors (`[rows, cols]`); a scalar is
/// a `[1, 1]` tensor. Biases are rank-1.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Rank-2 tensor; panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "matrix({rows}, {cols}) given {} elements",
            data.len()
        );
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Stacks equally long rows into a `[rows.len(), width]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::ShapeMismatch {
                    op: "Tensor::from_rows",
                    expected: format!("row width {width}"),
                    got: format!("row {i} of width {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self::matrix(rows.len(), width, data))
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Leading dimension of a rank-2 tensor (1 for rank-1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => panic!("rows() on tensor of rank {}", self.shape.len()),
        }
    }

    /// Trailing dimension of a rank-2 tensor (the length for rank-1).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on tensor of rank {}", self.shape.len()),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("shape {shape:?}"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: format!("rhs with {k} rows"),
                got: format!("{:?} x {:?}", self.shape, rhs.shape),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &rhs.data,
            (n as isize, 1),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                expected: format!("bias of length {c}"),
                got: format!("{:?}", bias.shape),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        assert!(start + len <= c, "slice_cols {start}+{len} > {c}");
        let mut data = Vec::with_capacity(r * len);
        for row in self.data.chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::matrix(r, len, data)
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, rhs: &Tensor) -> Tensor {
        let r = self.rows();
        assert_eq!(r, rhs.rows(), "concat_cols row mismatch");
        let (ca, cb) = (self.cols(), rhs.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&self.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&rhs.data[i * cb..(i + 1) * cb]);
        }
        Tensor::matrix(r, ca + cb, data)
    }

    /// Selects rows by index, repeating as needed.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), c, data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// `c = a * b + beta * c` with explicit (row, col) strides for `a` and `b`,
/// so transposed operands cost nothing.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: strides describe the row-major buffers passed in, whose lengths
    // cover every addressed element (m*k for a, k*n for b, m*n for c).
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
