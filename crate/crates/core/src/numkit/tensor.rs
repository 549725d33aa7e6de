use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major tensor with an explicit shape.
///
/// Rank 1 is a vector, rank 2 a `rows × cols` matrix and rank 3 a stack of
/// `slices × rows × cols` matrices (used for bilinear tensor slices).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor, rejecting inconsistent lengths and non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor construction", shape, &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {pos} of tensor {shape:?}")));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", &[cols], &[bad.len()]));
        }
        Self::from_vec(&[rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix (or slice count of a rank-3 stack).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Length of one row: the product of all trailing extents.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    /// The `s`-th matrix of a rank-3 stack.
    pub fn slice(&self, s: usize) -> &[T] {
        self.row(s)
    }

    pub fn slice_mut(&mut self, s: usize) -> &mut [T] {
        self.row_mut(s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Elementwise `self += other`. Panics on shape mismatch (internal use).
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Standard matrix product of `a[m×n]` and `b[n×p]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (m, n, p) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[m, p]);
    for i in 0..m {
        let orow = &mut out.data[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a.data[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(&b.data[k * p..(k + 1) * p]) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `xᵀ M[s] y` for every slice `s` of `m` (shape `[k, d, d]`).
pub fn bilinear<T: Scalar>(x: &[T], m: &Tensor<T>, y: &[T]) -> Result<Tensor<T>> {
    if m.rank() != 3 || m.shape[1] != x.len() || m.shape[2] != y.len() {
        return Err(Error::shape("bilinear", m.shape(), &[x.len(), y.len()]));
    }
    let k = m.shape[0];
    let out = (0..k)
        .map(|s| {
            let mut acc = T::zero();
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * dot(&m.slice(s)[i * y.len()..(i + 1) * y.len()], y);
            }
            acc
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`.
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = M x` for a row-major `rows × cols` matrix stored in `m`.
pub fn matvec<T: Scalar>(m: &[T], cols: usize, x: &[T]) -> Vec<T> {
    debug_assert_eq!(x.len(), cols);
    m.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `out += Mᵀ y` for a row-major matrix with `y.len()` rows.
pub fn matvec_t_acc<T: Scalar>(m: &[T], cols: usize, y: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), cols);
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        if yi != T::zero() {
            axpy(yi, row, out);
        }
    }
}

/// `G += a bᵀ` for a row-major `a.len() × b.len()` gradient buffer.
pub fn outer_acc<T: Scalar>(g: &mut [T], a: &[T], b: &[T]) {
    for (row, &ai) in g.chunks_exact_mut(b.len()).zip(a) {
        if ai != T::zero() {
            axpy(ai, b, row);
        }
    }
}
