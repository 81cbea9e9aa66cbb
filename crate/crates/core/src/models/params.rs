use autograd::{Float, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Named parameter tensors in a fixed order. Layers refer to entries by index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Float> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Record every tensor on `tape`, as gradient leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Replace every tensor, checking names and shapes against `self`.
    pub fn load(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", self.len(), entries.len())));
        }
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(Error::Checkpoint(format!("tensor {i}: expected {}, found {name}", self.names[i])));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn he_normal<T: Float>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(dist.sample(rng))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<T: Float>(
        p: &mut ParamSet<T>,
        name: &str,
        (c_in, c_out, k, stride): (usize, usize, usize, usize),
        zero: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = if zero {
            Tensor::zeros(&[c_out, c_in, k, k])
        } else {
            he_normal(&[c_out, c_in, k, k], c_in * k * k, 1.0, rng)
        };
        let w = p.push(format!("{name}.weight"), weight);
        let b = p.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn apply<'t, T: Float>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p[self.w], Some(p[self.b]), self.stride, self.pad)
    }

    /// Same convolution with a substitute (e.g. spectrally normalised) weight.
    pub fn apply_with<'t, T: Float>(&self, w: Var<'t, T>, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(w, Some(p[self.b]), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new<T: Float>(
        p: &mut ParamSet<T>,
        name: &str,
        (d_in, d_out): (usize, usize),
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = p.push(format!("{name}.weight"), he_normal(&[d_out, d_in], d_in, 0.5f64.sqrt(), rng));
        let b = bias.then(|| p.push(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Self { w, b }
    }

    pub fn apply<'t, T: Float>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.linear(p[self.w], self.b.map(|b| p[b]))
    }

    pub fn apply_with<'t, T: Float>(&self, w: Var<'t, T>, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.linear(w, self.b.map(|b| p[b]))
    }
}
