//! Dense row-major `f64` tensors.
//!
//! Every arithmetic operation requires exact shape equality; there is no
//! implicit broadcasting. Matrix products go through [`gemm`], which wraps a
//! packed SIMD kernel.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Binary elementwise operators. `Max0` ignores its second operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Max0,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Max,
    Min,
    Mean,
}

/// Right-hand operand of [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ElementCount {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// In-place access; reserved for optimizers and layer kernels.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at a multi-dimensional index (row-major).
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn elementwise(&self, op: Elementwise, rhs: Operand<'_>) -> Result<Tensor> {
        let data = match (op, rhs) {
            (Elementwise::Max0, _) => self.data.iter().map(|&v| v.max(0.0)).collect(),
            (Elementwise::Scale, Operand::Scalar(s)) => self.data.iter().map(|&v| v * s).collect(),
            (Elementwise::Scale, Operand::Tensor(_)) => {
                return Err(Error::InvalidArgument("scale takes a scalar operand".into()))
            }
            (op, Operand::Tensor(other)) => {
                self.check_same_shape(other)?;
                let f: fn(f64, f64) -> f64 = match op {
                    Elementwise::Add => |a, b| a + b,
                    Elementwise::Sub => |a, b| a - b,
                    Elementwise::Mul => |a, b| a * b,
                    _ => unreachable!(),
                };
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect()
            }
            (op, Operand::Scalar(s)) => {
                let f: fn(f64, f64) -> f64 = match op {
                    Elementwise::Add => |a, b| a + b,
                    Elementwise::Sub => |a, b| a - b,
                    Elementwise::Mul => |a, b| a * b,
                    _ => unreachable!(),
                };
                self.data.iter().map(|&a| f(a, s)).collect()
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Sequential row-major reduction; the order is fixed so results are
    /// bit-reproducible.
    pub fn reduce(&self, op: Reduction) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Empty("reduction"));
        }
        let d = &self.data;
        Ok(match op {
            Reduction::Sum => d.iter().fold(0.0, |acc, &v| acc + v),
            Reduction::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Reduction::Min => d.iter().copied().fold(f64::INFINITY, f64::min),
            Reduction::Mean => d.iter().fold(0.0, |acc, &v| acc + v) / d.len() as f64,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v * v)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(new_shape)
    }

    pub fn into_shape(self, new_shape: &[usize]) -> Result<Tensor> {
        let n: usize = new_shape.iter().product();
        if n != self.data.len() || new_shape.iter().any(|&d| d == 0) {
            return Err(Error::ElementCount {
                shape: new_shape.to_vec(),
                len: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    /// Rotates a 2-D tensor by `k` quarter turns counter-clockwise.
    pub fn rotate90k(&self, k: i64) -> Result<Tensor> {
        let [rows, cols] = self.shape[..] else {
            return Err(Error::InvalidArgument(format!(
                "rotate90k needs a 2-D tensor, got shape {:?}",
                self.shape
            )));
        };
        let k = k.rem_euclid(4);
        let (out_rows, out_cols) = if k % 2 == 0 { (rows, cols) } else { (cols, rows) };
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..out_rows {
            for j in 0..out_cols {
                let (si, sj) = match k {
                    0 => (i, j),
                    1 => (j, cols - 1 - i),
                    2 => (rows - 1 - i, cols - 1 - j),
                    _ => (rows - 1 - j, i),
                };
                out.push(self.data[si * cols + sj]);
            }
        }
        Ok(Tensor {
            shape: vec![out_rows, out_cols],
            data: out,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. When `trans_a` is set, `a` is
/// stored as `k x m`; likewise `b` as `n x k` when `trans_b` is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths were checked against the dimensions above and
    // the strides describe dense row-major (or transposed) storage inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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
