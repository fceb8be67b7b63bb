//! Row-major `f64` matrices and the GEMM entry points used by every layer.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Arithmetic used inside matrix products.
///
/// Operands are always stored as `f64`. `F32` rounds them to single
/// precision for the product itself, roughly doubling throughput; everything
/// outside the products (activations, loss, optimizer) stays in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

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
            return Err(GeoError::InvalidInput(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(GeoError::InvalidInput(format!(
                    "row {i} has length {}, expected {cols}",
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(GeoError::InvalidInput(format!(
                "cannot stack {} and {} columns",
                self.cols, other.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Splits off rows `at..` into a second matrix.
    pub fn split_rows(mut self, at: usize) -> (Matrix, Matrix) {
        let tail = self.data.split_off(at * self.cols);
        let bottom = Matrix {
            rows: self.rows - at,
            cols: self.cols,
            data: tail,
        };
        self.rows = at;
        (self, bottom)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Shape of one GEMM operand: the logical matrix plus its row/column strides.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a Matrix) -> Self {
        Self {
            data: &m.data,
            row_stride: m.cols as isize,
            col_stride: 1,
        }
    }

    fn transposed(m: &'a Matrix) -> Self {
        Self {
            data: &m.data,
            row_stride: 1,
            col_stride: m.cols as isize,
        }
    }
}

/// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_>,
    b: Operand<'_>,
    b_f32: Option<&[f32]>,
    beta: f64,
    c: &mut [f64],
    precision: Precision,
) {
    debug_assert!(b_f32.map_or(true, |pre| pre.len() == b.data.len()));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    match precision {
        Precision::F64 => unsafe {
            // SAFETY: operand slices cover every strided index in bounds; the
            // callers check shapes before dispatch.
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.row_stride,
                a.col_stride,
                b.data.as_ptr(),
                b.row_stride,
                b.col_stride,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        },
        Precision::F32 => SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            let Scratch { a32, b32, c32 } = &mut *scratch;
            fill_f32(a32, a.data);
            let b_ptr = match b_f32 {
                Some(pre) => pre.as_ptr(),
                None => {
                    fill_f32(b32, b.data);
                    b32.as_ptr()
                }
            };
            c32.clear();
            c32.resize(m * n, 0.0);
            unsafe {
                // SAFETY: same layout as the f64 branch; the f32 copies mirror
                // the operand slices element for element.
                matrixmultiply::sgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a32.as_ptr(),
                    a.row_stride,
                    a.col_stride,
                    b_ptr,
                    b.row_stride,
                    b.col_stride,
                    0.0,
                    c32.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            if beta == 0.0 {
                for (dst, &src) in c.iter_mut().zip(c32.iter()) {
                    *dst = src as f64;
                }
            } else {
                for (dst, &src) in c.iter_mut().zip(c32.iter()) {
                    *dst = beta * *dst + src as f64;
                }
            }
        }),
    }
}

/// `c = a * bᵀ` in single precision, `a: m x k`, `b: n x k`, row-major.
pub(crate) fn sgemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n, "sgemm_nt shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        // SAFETY: lengths checked above; b is read through transposed strides.
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reused f32 operand buffers, so repeated products do not reallocate.
#[derive(Default)]
struct Scratch {
    a32: Vec<f32>,
    b32: Vec<f32>,
    c32: Vec<f32>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

fn fill_f32(dst: &mut Vec<f32>, src: &[f64]) {
    dst.clear();
    dst.extend(src.iter().map(|&v| v as f32));
}

fn shape_err(op: &str, a: &Matrix, b: &Matrix) -> GeoError {
    GeoError::InvalidInput(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

/// `a * bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix, precision: Precision) -> Result<Matrix> {
    matmul_nt_with(a, b, None, precision)
}

/// [`matmul_nt`] with an optional ready-made `f32` copy of `b`, used instead
/// of converting `b` when the precision is `F32`.
pub(crate) fn matmul_nt_with(a: &Matrix, b: &Matrix, b_f32: Option<&[f32]>, precision: Precision) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err("matmul_nt", a, b));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows,
        a.cols,
        b.rows,
        Operand::plain(a),
        Operand::transposed(b),
        b_f32,
        0.0,
        &mut c.data,
        precision,
    );
    Ok(c)
}

/// `a * b`.
pub fn matmul_nn(a: &Matrix, b: &Matrix, precision: Precision) -> Result<Matrix> {
    matmul_nn_with(a, b, None, precision)
}

pub(crate) fn matmul_nn_with(a: &Matrix, b: &Matrix, b_f32: Option<&[f32]>, precision: Precision) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err("matmul_nn", a, b));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        Operand::plain(a),
        Operand::plain(b),
        b_f32,
        0.0,
        &mut c.data,
        precision,
    );
    Ok(c)
}

/// `acc += aᵀ * b`.
pub fn matmul_tn_acc(acc: &mut Matrix, a: &Matrix, b: &Matrix, precision: Precision) -> Result<()> {
    matmul_tn_into(acc, a, b, 1.0, precision)
}

/// `out = aᵀ * b + beta * out`; `beta = 0` ignores the previous contents.
pub fn matmul_tn_into(out: &mut Matrix, a: &Matrix, b: &Matrix, beta: f64, precision: Precision) -> Result<()> {
    if a.rows != b.rows || out.rows != a.cols || out.cols != b.cols {
        return Err(shape_err("matmul_tn", a, b));
    }
    gemm(
        a.cols,
        a.rows,
        b.cols,
        Operand::transposed(a),
        Operand::plain(b),
        None,
        beta,
        &mut out.data,
        precision,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn transpose(m: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(m.cols(), m.rows());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                t.set(j, i, m.get(i, j));
            }
        }
        t
    }

    fn sample(rows: usize, cols: usize, salt: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + salt) * 0.7).sin())
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn products_match_naive() {
        let a = sample(5, 7, 0.0);
        let b = sample(7, 3, 1.0);
        let expected = naive(&a, &b);
        assert_close(&matmul_nn(&a, &b, Precision::F64).unwrap(), &expected, 1e-12);
        assert_close(&matmul_nt(&a, &transpose(&b), Precision::F64).unwrap(), &expected, 1e-12);
        assert_close(&matmul_nn(&a, &b, Precision::F32).unwrap(), &expected, 1e-5);

        let mut acc = Matrix::zeros(5, 3);
        matmul_tn_acc(&mut acc, &transpose(&a), &b, Precision::F64).unwrap();
        matmul_tn_acc(&mut acc, &transpose(&a), &b, Precision::F64).unwrap();
        let doubled = Matrix::from_vec(5, 3, expected.as_slice().iter().map(|v| 2.0 * v).collect()).unwrap();
        assert_close(&acc, &doubled, 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = sample(2, 3, 0.0);
        assert!(matmul_nn(&a, &a, Precision::F64).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn stacking_and_splitting() {
        let a = sample(2, 3, 0.0);
        let b = sample(4, 3, 5.0);
        let s = a.vstack(&b).unwrap();
        assert_eq!(s.rows(), 6);
        let (top, bottom) = s.split_rows(2);
        assert_eq!(top, a);
        assert_eq!(bottom, b);
        assert_eq!(a.select_rows(&[1, 1]).row(0), a.row(1));
    }
}
