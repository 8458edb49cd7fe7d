//! Dense row-major matrices and a strided GEMM wrapper.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match {rows}x{cols}");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor { rows: rows.len(), cols, data }
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
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = S::zero());
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: S) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn transpose(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<S> {
        Tensor::from_vec(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| T::lit(x.to_f64_lossy())).collect() }
    }
}

/// Strided view of a matrix inside a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S: Scalar> MatRef<'a, S> {
    pub fn of(t: &'a Tensor<S>) -> Self {
        MatRef { data: &t.data, rows: t.rows, cols: t.cols, rs: t.cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        MatRef { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Column block `c0..c0+w` of rows `r0..r0+h` of a row-major matrix with row stride `ld`.
    pub fn block(data: &'a [S], ld: usize, r0: usize, h: usize, c0: usize, w: usize) -> Self {
        let start = if h == 0 || w == 0 { data.len() } else { r0 * ld + c0 };
        MatRef { data: &data[start..], rows: h, cols: w, rs: ld, cs: 1 }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

pub struct MatMut<'a, S> {
    pub data: &'a mut [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S: Scalar> MatMut<'a, S> {
    pub fn of(t: &'a mut Tensor<S>) -> Self {
        let (rows, cols) = t.shape();
        MatMut { data: &mut t.data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn block(data: &'a mut [S], ld: usize, r0: usize, h: usize, c0: usize, w: usize) -> Self {
        let start = if h == 0 || w == 0 { data.len() } else { r0 * ld + c0 };
        MatMut { data: &mut data[start..], rows: h, cols: w, rs: ld, cs: 1 }
    }
}

/// `C = alpha * A B + beta * C`.
pub fn gemm<S: Scalar>(alpha: S, a: MatRef<S>, b: MatRef<S>, beta: S, c: MatMut<S>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check();
    b.check();
    let last = (m - 1) * c.rs + (n - 1) * c.cs;
    assert!(last < c.data.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c.data[i * c.rs + j * c.cs];
                *x = if beta == S::zero() { S::zero() } else { *x * beta };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above.
    unsafe {
        S::gemm_raw(
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
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// `A B` for plain tensors, optionally transposing either operand.
pub fn matmul<S: Scalar>(a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool) -> Tensor<S> {
    let av = if ta { MatRef::of(a).t() } else { MatRef::of(a) };
    let bv = if tb { MatRef::of(b).t() } else { MatRef::of(b) };
    let mut c = Tensor::zeros(av.rows, bv.cols);
    gemm(S::one(), av, bv, S::zero(), MatMut::of(&mut c));
    c
}

/// `C += op(A) op(B)`.
pub fn matmul_acc<S: Scalar>(c: &mut Tensor<S>, a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool) {
    let av = if ta { MatRef::of(a).t() } else { MatRef::of(a) };
    let bv = if tb { MatRef::of(b).t() } else { MatRef::of(b) };
    gemm(S::one(), av, bv, S::one(), MatMut::of(c));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut c = Tensor::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for k in 0..a.cols {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.data[i * b.cols + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        assert_eq!(matmul(&a, false, &b, false), naive(&a, &b));
        assert_eq!(matmul(&a.transpose(), true, &b, false), naive(&a, &b));
        assert_eq!(matmul(&a, false, &b.transpose(), true), naive(&a, &b));
        let mut c = naive(&a, &b);
        matmul_acc(&mut c, &a, false, &b, false);
        let mut twice = naive(&a, &b);
        twice.scale(2.0);
        assert_eq!(c, twice);
    }

    #[test]
    fn block_views() {
        // 2x4 matrix, take the right 2x2 block times identity.
        let data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let eye = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let mut out = Tensor::zeros(2, 2);
        gemm(1.0, MatRef::block(&data, 4, 0, 2, 2, 2), MatRef::of(&eye), 0.0, MatMut::of(&mut out));
        assert_eq!(out.data, vec![3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn empty_inner_dimension_zeroes() {
        let a = Tensor::<f32>::zeros(2, 0);
        let b = Tensor::<f32>::zeros(0, 3);
        let c = matmul(&a, false, &b, false);
        assert_eq!(c.shape(), (2, 3));
        assert!(c.data.iter().all(|&x| x == 0.0));
    }
}
