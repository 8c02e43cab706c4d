use std::ops::Range;

use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Anything that owns trainable tensors and their gradient buffers.
pub trait Parameterized {
    /// Calls `f(name, value, grad)` for every tensor, in a fixed order.
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v, _| n += v.numel());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, g| g.fill_zero());
    }
}

/// A free tensor with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }
}

/// Weights and bias of one layer, with gradient buffers of the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        LayerParams {
            grad_weights: Tensor::zeros(weights.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weights,
            bias,
        }
    }

    /// Dense layer with weights stored input-major (`[n_in, n_out]`),
    /// Xavier-uniform weights and zero bias.
    pub fn dense(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        LayerParams::new(
            Tensor::xavier_uniform(&[n_in, n_out], n_in, n_out, rng),
            Tensor::zeros(&[n_out]),
        )
    }

    pub fn n_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.bias.numel()
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        f(&format!("{prefix}.weight"), &self.weights, &self.grad_weights);
        f(&format!("{prefix}.bias"), &self.bias, &self.grad_bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        f(&format!("{prefix}.weight"), &mut self.weights, &mut self.grad_weights);
        f(&format!("{prefix}.bias"), &mut self.bias, &mut self.grad_bias);
    }
}

/// `y = W^T x + b` with `W` stored `[n_in, n_out]`. Zero inputs are skipped,
/// which makes sparse attribute vectors cheap.
pub fn dense_forward(x: &[f64], p: &LayerParams) -> Result<Vec<f64>> {
    let (n_in, n_out) = (p.n_in(), p.n_out());
    if x.len() != n_in {
        return Err(Error::Shape(format!("dense layer expects {n_in} inputs, got {}", x.len())));
    }
    let w = p.weights.data();
    let mut y = p.bias.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &w[i * n_out..(i + 1) * n_out];
            for (yo, wo) in y.iter_mut().zip(row) {
                *yo += xi * wo;
            }
        }
    }
    check_finite(&y, "dense layer output")?;
    Ok(y)
}

/// Accumulates weight/bias gradients and returns the input gradient for the
/// requested slice of inputs (empty when `input_grad` is `None`).
pub fn dense_backward(
    x: &[f64],
    grad_out: &[f64],
    p: &mut LayerParams,
    input_grad: Option<Range<usize>>,
) -> Vec<f64> {
    let n_out = p.n_out();
    debug_assert_eq!(grad_out.len(), n_out);
    debug_assert_eq!(x.len(), p.n_in());
    for (gb, g) in p.grad_bias.data_mut().iter_mut().zip(grad_out) {
        *gb += g;
    }
    let gw = p.grad_weights.data_mut();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &mut gw[i * n_out..(i + 1) * n_out];
            for (r, g) in row.iter_mut().zip(grad_out) {
                *r += xi * g;
            }
        }
    }
    let Some(range) = input_grad else {
        return Vec::new();
    };
    let w = p.weights.data();
    range
        .map(|i| {
            w[i * n_out..(i + 1) * n_out]
                .iter()
                .zip(grad_out)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|. Note `-ln sigmoid(d) = softplus(-d)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation and the output. ReLU uses 0 at 0.
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}
