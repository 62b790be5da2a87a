//! Parameterized layers on top of the autodiff tape.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::Result;

fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Affine map `x W + b` on row vectors, `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/sqrt(in)`.
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let weight = store.add(&format!("{name}.weight"), uniform(&[in_dim, out_dim], bound, rng));
        let bias = store.add(&format!("{name}.bias"), uniform(&[out_dim], bound, rng));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(&format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(self.weight))?;
        tape.add(y, p.get(self.bias))
    }

    /// `x W` without the bias, for layers split over concatenated inputs.
    pub fn forward_no_bias<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.matmul(x, p.get(self.weight))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, p, x)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt((in_ch * kernel * kernel) as f64);
        let weight = store.add(&format!("{name}.weight"), uniform(&[out_ch, in_ch, kernel, kernel], bound, rng));
        let bias = store.add(&format!("{name}.bias"), uniform(&[out_ch], bound, rng));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.weight), Some(p.get(self.bias)), self.stride, self.pad)
    }
}
