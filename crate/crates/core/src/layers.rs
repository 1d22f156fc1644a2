//! Building blocks shared by the three networks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::params::{kaiming_bound, uniform_tensor, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[out_c, in_c, kernel, kernel], kaiming_bound(fan_in), rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_c])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Uniform init in `[-bound, bound]` with `bound = gain / sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain / crate::math::sqrt(in_dim as f64);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[out_dim, in_dim], bound, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.linear(w, x, b)
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }
}

/// Stack of 3x3 stride-2 convolutions, each followed by an activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub blocks: Vec<Conv2d>,
    pub activation: Activation,
}

impl ConvStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c = in_c;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(Conv2d::new(
                store,
                &format!("{name}.{i}"),
                c,
                w,
                3,
                2,
                1,
                true,
                rng,
            ));
            c = w;
        }
        Self { blocks, activation }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        for b in &self.blocks {
            x = b.forward(tape, x);
            x = self.activation.apply(tape, x);
        }
        x
    }

    /// Spatial size after the stack for a square input of side `size`.
    pub fn output_side(&self, mut size: usize) -> usize {
        for _ in &self.blocks {
            size = (size + 2 - 3) / 2 + 1;
        }
        size
    }
}
