//! Dense kernels over row-major `Matrix` storage.

use crate::matrix::Matrix;

/// Strided read-only view of a matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub fn of(m: &'a Matrix) -> Self {
        Self {
            data: m.as_slice(),
            rows: m.rows(),
            cols: m.cols(),
            rs: m.cols(),
            cs: 1,
        }
    }

    /// Row-major `rows × cols` view of a flat slice.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start + len`.
    pub fn cols(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        Self {
            data: &self.data[start * self.cs..],
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// `c[.., c_start..c_start+n] = alpha * a b + beta * c[..]` where `c` is row-major
/// with `c_cols` columns.
pub(crate) fn gemm_into(
    alpha: f64,
    a: View,
    b: View,
    beta: f64,
    c: &mut Matrix,
    c_start: usize,
) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!(a.rows, c.rows(), "output rows");
    assert!(c_start + b.cols <= c.cols(), "output columns");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let ldc = c.cols();
    let out = &mut c.as_mut_slice()[c_start..];
    if k == 0 {
        for i in 0..m {
            for v in &mut out[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked above and `out` holds m rows of
    // stride ldc with n ≤ ldc - c_start valid columns.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: View, b: View) -> Matrix {
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_into(1.0, a, b, 0.0, &mut c, 0);
    c
}

/// `a b`
pub fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    matmul(View::of(a), View::of(b))
}

/// `aᵀ b`
pub fn mm_tn(a: &Matrix, b: &Matrix) -> Matrix {
    matmul(View::of(a).t(), View::of(b))
}

/// `a bᵀ`
pub fn mm_nt(a: &Matrix, b: &Matrix) -> Matrix {
    matmul(View::of(a), View::of(b).t())
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Adds a bias row to every row.
pub fn add_row(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        add_assign(m.row_mut(i), bias);
    }
}

/// Column sums, accumulated into `out`.
pub fn col_sums_into(m: &Matrix, out: &mut [f64]) {
    for i in 0..m.rows() {
        add_assign(out, m.row(i));
    }
}

/// In-place row softmax.
pub fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        softmax(m.row_mut(i));
    }
}

pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
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
                c.row_mut(i)[j] = s;
            }
        }
        c
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.row_mut(j)[i] = a.get(i, j);
            }
        }
        t
    }

    fn seq(r: usize, c: usize, k: f64) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|i| ((i as f64) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn products_match_naive() {
        let a = seq(5, 3, 0.7);
        let b = seq(3, 4, 1.3);
        let close = |x: &Matrix, y: &Matrix| {
            x.as_slice().iter().zip(y.as_slice()).all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&mm(&a, &b), &naive(&a, &b)));
        assert!(close(&mm_tn(&transpose(&a), &b), &naive(&a, &b)));
        assert!(close(&mm_nt(&a, &transpose(&b)), &naive(&a, &b)));
    }

    #[test]
    fn column_block_product() {
        let a = seq(4, 6, 0.3);
        let b = seq(4, 6, 0.9);
        let p = matmul(View::of(&a).cols(2, 2), View::of(&b).cols(4, 2).t());
        for i in 0..4 {
            for j in 0..4 {
                let want = a.get(i, 2) * b.get(j, 4) + a.get(i, 3) * b.get(j, 5);
                assert!((p.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }
}
