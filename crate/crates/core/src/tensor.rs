//! Dense row-major matrices and the handful of GEMM kernels the models need.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length does not match shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn scalar(v: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_nn(&self.data, &other.data, &mut out.data, self.rows, self.cols, other.cols);
        out
    }
}

/// `out[r×c] += a[r×k] · b[k×c]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    debug_assert_eq!(a.len(), r * k);
    debug_assert_eq!(b.len(), k * c);
    debug_assert_eq!(out.len(), r * c);
    if c == 0 {
        return;
    }
    for (arow, orow) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(c)).take(r) {
        if k == 0 {
            break;
        }
        for (&av, brow) in arow.iter().zip(b.chunks_exact(c)) {
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×c] += aᵀ · b` where `a` is `r×k` and `b` is `r×c`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    debug_assert_eq!(a.len(), r * k);
    debug_assert_eq!(b.len(), r * c);
    debug_assert_eq!(out.len(), k * c);
    if c == 0 || k == 0 {
        return;
    }
    for (arow, brow) in a.chunks_exact(k).zip(b.chunks_exact(c)).take(r) {
        for (&av, orow) in arow.iter().zip(out.chunks_exact_mut(c)) {
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[r×m] += a[r×k] · bᵀ` where `b` is `m×k`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, m: usize) {
    debug_assert_eq!(b.len(), m * k);
    let bt = Matrix::from_vec(m, k, b.to_vec()).transpose();
    gemm_nn(a, bt.data(), out, r, k, m);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.row_mut(i)[j] = s;
            }
        }
        out
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|i| ((i as f64 + seed) * 0.37).sin()).collect())
    }

    #[test]
    fn kernels_agree_with_naive_products() {
        let a = sample(3, 4, 0.1);
        let b = sample(4, 5, 1.3);
        assert_eq!(a.matmul(&b), naive(&a, &b));

        let mut tn = Matrix::zeros(4, 5);
        let c = sample(3, 5, 2.0);
        gemm_tn(a.data(), c.data(), tn.data_mut(), 3, 4, 5);
        let expect = naive(&a.transpose(), &c);
        for (x, y) in tn.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut nt = Matrix::zeros(3, 5);
        let d = sample(5, 4, 0.7);
        gemm_nt(a.data(), d.data(), nt.data_mut(), 3, 4, 5);
        let expect = naive(&a, &d.transpose());
        for (x, y) in nt.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_shapes_are_harmless() {
        let a: Matrix<f32> = Matrix::zeros(2, 0);
        let b: Matrix<f32> = Matrix::zeros(0, 3);
        assert_eq!(a.matmul(&b), Matrix::zeros(2, 3));
    }
}
