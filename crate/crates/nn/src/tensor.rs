//! Dense row-major tensors and the matrix kernels shared by the ops.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use yoas_core::Scalar;

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                T::of(e * std)
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), data }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = c[i * n + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight partial sums.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..a.len() {
        s = s + a[i] * b[i];
    }
    acc.iter().fold(s, |x, &y| x + y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n);
        let at: Vec<f64> = (0..k * m).map(|x| a[(x % m) * k + x / m]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm_tn(&at, &b, &mut c2, m, k, n);
        let bt: Vec<f64> = (0..n * k).map(|x| b[(x % k) * n + x / k]).collect();
        let mut c3 = vec![0.0; m * n];
        gemm_nt(&a, &bt, &mut c3, m, k, n);
        for i in 0..m * n {
            assert!((c[i] - want[i]).abs() < 1e-12);
            assert!((c2[i] - want[i]).abs() < 1e-12);
            assert!((c3[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::<f32>::zeros(&[2, 3]).numel(), 6);
    }
}
