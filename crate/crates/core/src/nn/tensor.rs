//! Dense buffers used by the estimator: channel-last feature maps and the
//! keyed parameter store.

use std::collections::BTreeMap;

use super::scalar::Real;

/// Activation tensor laid out as `(batch, freq, antenna, channel)`, channel fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub batch: usize,
    pub freq: usize,
    pub ant: usize,
    pub chan: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(batch: usize, freq: usize, ant: usize, chan: usize) -> Self {
        FeatureMap { batch, freq, ant, chan, data: vec![T::zero(); batch * freq * ant * chan] }
    }

    pub fn from_vec(batch: usize, freq: usize, ant: usize, chan: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), batch * freq * ant * chan, "feature map size mismatch");
        FeatureMap { batch, freq, ant, chan, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.freq, self.ant, self.chan]
    }

    /// Number of spatial positions, i.e. rows when viewed as a `rows x chan` matrix.
    pub fn rows(&self) -> usize {
        self.batch * self.freq * self.ant
    }

    #[inline]
    pub fn index(&self, b: usize, f: usize, a: usize, c: usize) -> usize {
        ((b * self.freq + f) * self.ant + a) * self.chan + c
    }

    pub fn get(&self, b: usize, f: usize, a: usize, c: usize) -> T {
        self.data[self.index(b, f, a, c)]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis, `self` first.
    pub fn concat_channels(&self, other: &Self) -> Self {
        assert_eq!(self.rows(), other.rows(), "concat: spatial shape mismatch");
        let c = self.chan + other.chan;
        let mut data = Vec::with_capacity(self.rows() * c);
        for r in 0..self.rows() {
            data.extend_from_slice(&self.data[r * self.chan..(r + 1) * self.chan]);
            data.extend_from_slice(&other.data[r * other.chan..(r + 1) * other.chan]);
        }
        FeatureMap { batch: self.batch, freq: self.freq, ant: self.ant, chan: c, data }
    }

    /// Inverse of [`concat_channels`](Self::concat_channels) for gradients.
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        assert!(first <= self.chan);
        let second = self.chan - first;
        let mut a = Vec::with_capacity(self.rows() * first);
        let mut b = Vec::with_capacity(self.rows() * second);
        for r in 0..self.rows() {
            let row = &self.data[r * self.chan..(r + 1) * self.chan];
            a.extend_from_slice(&row[..first]);
            b.extend_from_slice(&row[first..]);
        }
        (
            FeatureMap { batch: self.batch, freq: self.freq, ant: self.ant, chan: first, data: a },
            FeatureMap { batch: self.batch, freq: self.freq, ant: self.ant, chan: second, data: b },
        )
    }

    /// Copy of frequency slice `f` as a `(batch, 1, ant, chan)` map.
    pub fn freq_slice(&self, f: usize) -> Self {
        let mut out = FeatureMap::zeros(self.batch, 1, self.ant, self.chan);
        let run = self.ant * self.chan;
        for b in 0..self.batch {
            let src = self.index(b, f, 0, 0);
            out.data[b * run..(b + 1) * run].copy_from_slice(&self.data[src..src + run]);
        }
        out
    }

    /// Write a `(batch, 1, ant, chan)` map into frequency slot `f`.
    pub fn set_freq_slice(&mut self, f: usize, slice: &Self) {
        let run = self.ant * self.chan;
        for b in 0..self.batch {
            let dst = self.index(b, f, 0, 0);
            self.data[dst..dst + run].copy_from_slice(&slice.data[b * run..(b + 1) * run]);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
    }
}

/// A named parameter or state buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Map from layer path (e.g. `enc1.conv1.w`) to tensor. Ordered for
/// deterministic iteration.
pub type TensorMap<T> = BTreeMap<String, Tensor<T>>;
