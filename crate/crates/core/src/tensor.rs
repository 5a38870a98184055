//! Dense row-major `f64` tensors.
//!
//! Activations are stored channel-first (`C×H×W`), convolution weights as
//! `O×I×kh×kw`. Everything the network touches goes through this type so
//! the gradient tape and the checkpoint container share one layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// A `C×H×W` activation map (backbone features, modulation parameters).
pub type FeatureMap = Tensor;

/// A `K×H×W` per-class score map with logit semantics.
pub type ProbabilityMap = Tensor;

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
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
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `C×H×W` tensor from a per-element function.
    pub fn from_fn_chw(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Self {
            shape: vec![c, h, w],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// `(C, H, W)` of a rank-3 tensor.
    ///
    /// Panics if the tensor is not rank 3; callers validate shapes at API
    /// boundaries with [`Tensor::expect_chw`].
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a C×H×W tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn expect_chw(&self, what: &str) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 || self.shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected a non-empty C×H×W tensor, got {:?}",
                self.shape
            )));
        }
        Ok(self.chw())
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x] = v;
    }

    /// Contiguous view of one channel plane.
    pub fn plane(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let (_, h, w) = self.chw();
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Per-channel argmax of a `K×H×W` map; ties resolve to the lowest channel.
    pub fn argmax_channels(&self) -> Vec<u8> {
        let (k, h, w) = self.chw();
        let hw = h * w;
        let mut out = vec![0u8; hw];
        for (p, slot) in out.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_v = self.data[p];
            for c in 1..k {
                let v = self.data[c * hw + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            *slot = best as u8;
        }
        out
    }

    /// Per-pixel softmax over channels.
    pub fn softmax_channels(&self) -> Tensor {
        let (k, h, w) = self.chw();
        let hw = h * w;
        let mut out = self.clone();
        for p in 0..hw {
            let m = (0..k).map(|c| self.data[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (self.data[c * hw + p] - m).exp();
                out.data[c * hw + p] = e;
                z += e;
            }
            for c in 0..k {
                out.data[c * hw + p] /= z;
            }
        }
        out
    }

    /// Horizontal mirror of a `C×H×W` tensor.
    pub fn flip_horizontal(&self) -> Tensor {
        let (c, h, w) = self.chw();
        Tensor::from_fn_chw(c, h, w, |ci, y, x| self.at(ci, y, w - 1 - x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn argmax_ties_go_to_lowest_channel() {
        let t = Tensor::from_vec(vec![3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(t.argmax_channels(), vec![0, 1]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let t = Tensor::from_fn_chw(4, 3, 3, |c, y, x| (c as f64 * 1.7 - y as f64 + 0.3 * x as f64).sin() * 20.0);
        let s = t.softmax_channels();
        for p in 0..9 {
            let total: f64 = (0..4).map(|c| s.data()[c * 9 + p]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
