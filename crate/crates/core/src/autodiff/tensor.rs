use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{AmnError, Result};

/// Floating point element type of the engine. Training runs in `f32`,
/// gradient checks in `f64`.
pub trait Real:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(AmnError::InvalidTensor(format!(
                "shape {shape:?} must have positive dimensions"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AmnError::InvalidTensor(format!(
                "shape {shape:?} holds {n} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A `[1, n]` row vector.
    pub fn row(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| F::c(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Product of all leading axes.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn row_slice(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::c(x.as_f64())).collect(),
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine<F: Real>(a: &[F], b: &[F]) -> F {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == F::zero() || nb == F::zero() {
        log::debug!("cosine similarity of a zero vector, returning 0");
        return F::zero();
    }
    dot(a, b) / (na * nb)
}

/// Scales `a` to unit L2 norm; zero vectors are returned unchanged.
pub fn normalize<F: Real>(a: &[F]) -> Vec<F> {
    let n = l2_norm(a);
    if n == F::zero() {
        return a.to_vec();
    }
    a.iter().map(|&x| x / n).collect()
}

/// Overflow-safe softmax of one row. Entries whose mask is `false` get
/// probability 0; a fully masked row falls back to uniform.
pub fn softmax_row<F: Real>(x: &[F], mask: Option<&[bool]>) -> Vec<F> {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let any_valid = (0..x.len()).any(valid);
    if !any_valid {
        log::debug!("softmax over a fully masked row, using uniform weights");
        let u = F::one() / F::from_usize(x.len()).unwrap();
        return vec![u; x.len()];
    }
    let max = (0..x.len())
        .filter(|&i| valid(i))
        .map(|i| x[i])
        .fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = (0..x.len())
        .map(|i| {
            if valid(i) {
                (x[i] - max).exp()
            } else {
                F::zero()
            }
        })
        .collect();
    let total: F = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    out
}

pub fn log_softmax_row<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    x.iter().map(|&v| v - lse).collect()
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn softmax_single_element() {
        assert_eq!(softmax_row(&[7.5f64], None), vec![1.0]);
    }

    #[test]
    fn softmax_of_zero_and_ln3() {
        // exp(0) = 1, exp(ln 3) = 3, total 4
        let p = softmax_row(&[0.0f64, 3f64.ln()], None);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_huge_logits() {
        let p = softmax_row(&[1e30f32, -1e30, 0.0], None);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn masked_softmax_falls_back_to_uniform() {
        let p = softmax_row(&[1.0f64, 2.0, 3.0], Some(&[false, false, false]));
        assert_eq!(p, vec![1.0 / 3.0; 3]);
        let q = softmax_row(&[1.0f64, 2.0, 3.0], Some(&[true, false, false]));
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0f64, 0.0], &[1.0, 2.0]), 0.0);
        let v = [0.3f64, -2.0, 4.0];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(1000.0f32), 1.0);
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
