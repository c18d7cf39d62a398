//! Dense row-major matrices. `Matrix` is the f32 storage type used for
//! parameters, embeddings and serialization; `Matrix64` is the f64 working
//! type the tape computes with.

use rand::Rng;
use rand_distr::StandardNormal;

use super::NumericsError;

/// Row-major dense matrix of 32-bit floats. Immutable in spirit: built once,
/// then read; training replaces whole matrices via the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f32, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f32 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn from_row(row: &[f32]) -> Self {
        Matrix {
            rows: 1,
            cols: row.len(),
            data: row.to_vec(),
        }
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

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        debug_assert!(v.is_finite());
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to64(&self) -> Matrix64 {
        Matrix64 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// f64 working matrix used inside the tape and for gradients/optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix64 {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to32(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }
}

pub(crate) fn check_matmul(
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize), NumericsError> {
    if a.1 != b.0 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a,
            rhs: b,
        });
    }
    Ok((a.0, b.1))
}

/// a (r×k) · b (k×c), f64 accumulation.
pub(crate) fn matmul64(a: &Matrix64, b: &Matrix64) -> Matrix64 {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Matrix64::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a (r×k) · bᵀ where b is (s×k); result r×s.
pub(crate) fn matmul_t64(a: &Matrix64, b: &Matrix64) -> Matrix64 {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Matrix64::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

pub(crate) fn add64(a: &Matrix64, b: &Matrix64) -> Matrix64 {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Matrix64 {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

/// Broadcast a 1×c bias over every row of a.
pub(crate) fn add_bias64(a: &Matrix64, bias: &Matrix64) -> Matrix64 {
    debug_assert_eq!(bias.rows, 1);
    debug_assert_eq!(bias.cols, a.cols);
    let mut out = a.clone();
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[r * a.cols + c] += bias.data[c];
        }
    }
    out
}

/// Numerically stable softmax per row (max-shift).
pub(crate) fn row_softmax64(m: &Matrix64) -> Matrix64 {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub(crate) fn mse64(pred: &Matrix64, target: &Matrix64) -> f64 {
    debug_assert_eq!(pred.shape(), target.shape());
    let n = pred.data.len() as f64;
    let mut acc = 0.0;
    for (p, t) in pred.data.iter().zip(&target.data) {
        let d = p - t;
        acc += d * d;
    }
    acc / n
}
