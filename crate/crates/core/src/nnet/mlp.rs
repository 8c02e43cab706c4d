use std::ops::Range;

use super::layers::{dense_backward, dense_forward, Activation, LayerParams, Parameterized};
use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stack of dense layers. Hidden layers share one activation; the last layer
/// has its own (identity for a score head).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LayerParams>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Values recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTape {
    /// Input of every layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTape {
    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn output(&self) -> Option<&[f64]> {
        self.post.last().map(Vec::as_slice)
    }
}

impl Mlp {
    /// `sizes = [n_in, h_1, ..., n_out]`.
    pub fn new(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| LayerParams::dense(w[0], w[1], rng))
            .collect();
        Ok(Mlp {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::n_out)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_in()];
        s.extend(self.layers.iter().map(LayerParams::n_out));
        s
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        check_finite(x, "network input")?;
        let mut tape = ForwardTape::default();
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = dense_forward(&cur, layer)?;
            let act = self.activation(l);
            let post: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            tape.inputs.push(cur);
            tape.pre.push(pre);
            cur = post.clone();
            tape.post.push(post);
        }
        Ok((cur, tape))
    }

    /// Forward pass without recording.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            cur = dense_forward(&cur, layer)?
                .into_iter()
                .map(|v| act.apply(v))
                .collect();
        }
        Ok(cur)
    }

    /// Accumulates parameter gradients for `d loss / d output = grad_out` and
    /// returns the gradient w.r.t. the inputs in `input_grad` (empty if
    /// `None`).
    pub fn backward(
        &mut self,
        tape: &ForwardTape,
        grad_out: &[f64],
        input_grad: Option<Range<usize>>,
    ) -> Result<Vec<f64>> {
        if tape.is_empty() {
            return Err(Error::EmptyTape);
        }
        if tape.pre.len() != self.layers.len() || grad_out.len() != self.n_out() {
            return Err(Error::Shape("tape does not match this network".into()));
        }
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            for ((gv, &pre), &post) in g.iter_mut().zip(&tape.pre[l]).zip(&tape.post[l]) {
                *gv *= act.derivative(pre, post);
            }
            let range = if l == 0 {
                input_grad.clone()
            } else {
                Some(0..self.layers[l].n_in())
            };
            g = dense_backward(&tape.inputs[l], &g, &mut self.layers[l], range);
        }
        Ok(g)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.{l}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.{l}"), f);
        }
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.visit("mlp", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.visit_mut("mlp", f);
    }
}
