//! Text CNN: width-w convolutions over word rows, max-over-time pooling,
//! ReLU, and a dense output layer.
//!
//! Each kernel weight tensor has shape `[maps, width, embed_dim]`. A
//! convolution response is computed from per-row projections
//! `proj[o][k] = W[k][o] . row`, summed over the window after the bias, so a
//! precomputed per-token projection gives bit-identical results to the direct
//! path.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::layers::{dense_backward, dense_forward, LayerParams, Parameterized};
use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::features::{Embeddings, TokenMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCnnConfig {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub maps_per_width: usize,
    pub out_dim: usize,
}

impl Default for TextCnnConfig {
    fn default() -> Self {
        TextCnnConfig {
            embed_dim: 300,
            widths: vec![2, 3, 4, 5],
            maps_per_width: 100,
            out_dim: 512,
        }
    }
}

impl TextCnnConfig {
    pub fn pooled_dim(&self) -> usize {
        self.widths.len() * self.maps_per_width
    }

    fn proj_len(&self) -> usize {
        self.widths.iter().sum::<usize>() * self.maps_per_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.maps_per_width == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig("text CNN dimensions must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad kernel widths {:?}", self.widths)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextCnnParams {
    pub config: TextCnnConfig,
    /// One per width, weights `[maps, width, embed_dim]`, bias `[maps]`.
    pub kernels: Vec<LayerParams>,
    /// Pooled features to output, `[pooled_dim, out_dim]`.
    pub out: LayerParams,
}

/// Forward record of one encoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTape {
    valid_len: usize,
    /// Max-pooled responses before ReLU.
    pooled: Vec<f64>,
    /// Window start that attained the max, or `None` when the width did not
    /// fit and the map output is its bias.
    argmax: Vec<Option<usize>>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl TextCnnParams {
    pub fn new(config: TextCnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (maps, e) = (config.maps_per_width, config.embed_dim);
        let kernels = config
            .widths
            .iter()
            .map(|&w| {
                LayerParams::new(
                    Tensor::xavier_uniform(&[maps, w, e], w * e, maps, rng),
                    Tensor::zeros(&[maps]),
                )
            })
            .collect();
        let out = LayerParams::dense(config.pooled_dim(), config.out_dim, rng);
        Ok(TextCnnParams {
            config,
            kernels,
            out,
        })
    }

    /// Projections of one embedding row onto every (width, offset, map).
    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        let maps = self.config.maps_per_width;
        let e = self.config.embed_dim;
        let mut out = Vec::with_capacity(self.config.proj_len());
        for (wi, &w) in self.config.widths.iter().enumerate() {
            let wt = self.kernels[wi].weights.data();
            for o in 0..w {
                for k in 0..maps {
                    let base = (k * w + o) * e;
                    out.push(wt[base..base + e].iter().zip(row).map(|(a, b)| a * b).sum());
                }
            }
        }
        out
    }

    fn pool<'a>(&self, valid_len: usize, proj: impl Fn(usize) -> &'a [f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        let maps = self.config.maps_per_width;
        let mut pooled = Vec::with_capacity(self.config.pooled_dim());
        let mut argmax = Vec::with_capacity(self.config.pooled_dim());
        let mut offset = 0;
        for (wi, &w) in self.config.widths.iter().enumerate() {
            let bias = self.kernels[wi].bias.data();
            for (k, &b) in bias.iter().enumerate() {
                if valid_len < w {
                    pooled.push(b);
                    argmax.push(None);
                    continue;
                }
                let mut best = (f64::NEG_INFINITY, 0);
                for p in 0..=valid_len - w {
                    let mut r = b;
                    for o in 0..w {
                        r += proj(p + o)[offset + o * maps + k];
                    }
                    if r > best.0 {
                        best = (r, p);
                    }
                }
                pooled.push(best.0);
                argmax.push(Some(best.1));
            }
            offset += w * maps;
        }
        (pooled, argmax)
    }

    fn finish(&self, valid_len: usize, pooled: Vec<f64>, argmax: Vec<Option<usize>>) -> Result<TextTape> {
        check_finite(&pooled, "convolution output")?;
        let hidden: Vec<f64> = pooled.iter().map(|v| v.max(0.0)).collect();
        let output = dense_forward(&hidden, &self.out)?;
        Ok(TextTape {
            valid_len,
            pooled,
            argmax,
            hidden,
            output,
        })
    }

    fn check_matrix(&self, tm: &TokenMatrix) -> Result<()> {
        if tm.cols != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "token matrix has {} columns, encoder expects {}",
                tm.cols, self.config.embed_dim
            )));
        }
        if tm.valid_len > tm.rows {
            return Err(Error::Shape("valid_len exceeds token matrix rows".into()));
        }
        Ok(())
    }

    /// Convolution plus max-over-time pooling (ReLU applied after the max,
    /// which equals the max of ReLU responses).
    pub fn conv1d_maxpool_forward(&self, tm: &TokenMatrix) -> Result<Vec<f64>> {
        self.check_matrix(tm)?;
        let projs: Vec<Vec<f64>> = (0..tm.valid_len).map(|r| self.project_row(tm.row(r))).collect();
        let (pooled, _) = self.pool(tm.valid_len, |r| &projs[r]);
        check_finite(&pooled, "convolution output")?;
        Ok(pooled.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn forward(&self, tm: &TokenMatrix) -> Result<TextTape> {
        self.check_matrix(tm)?;
        let projs: Vec<Vec<f64>> = (0..tm.valid_len).map(|r| self.project_row(tm.row(r))).collect();
        let (pooled, argmax) = self.pool(tm.valid_len, |r| &projs[r]);
        self.finish(tm.valid_len, pooled, argmax)
    }

    /// Accumulates gradients for `d loss / d output = grad_out`. Embeddings
    /// are fixed, so no input gradient is produced.
    pub fn backward(&mut self, tm: &TokenMatrix, tape: &TextTape, grad_out: &[f64]) -> Result<()> {
        self.check_matrix(tm)?;
        if tape.valid_len != tm.valid_len {
            return Err(Error::Shape("tape does not match token matrix".into()));
        }
        self.backward_rows(tape, grad_out, |r| tm.row(r))
    }

    fn backward_rows<'a>(
        &mut self,
        tape: &TextTape,
        grad_out: &[f64],
        row: impl Fn(usize) -> &'a [f64],
    ) -> Result<()> {
        if grad_out.len() != self.config.out_dim {
            return Err(Error::Shape(format!(
                "text gradient has {} entries, expected {}",
                grad_out.len(),
                self.config.out_dim
            )));
        }
        let g_hidden = dense_backward(&tape.hidden, grad_out, &mut self.out, Some(0..self.config.pooled_dim()));
        let maps = self.config.maps_per_width;
        let e = self.config.embed_dim;
        for (wi, &w) in self.config.widths.iter().enumerate() {
            let kernel = &mut self.kernels[wi];
            for k in 0..maps {
                let idx = wi * maps + k;
                if tape.pooled[idx] <= 0.0 {
                    continue;
                }
                let g = g_hidden[idx];
                kernel.grad_bias.data_mut()[k] += g;
                if let Some(p) = tape.argmax[idx] {
                    let gw = kernel.grad_weights.data_mut();
                    for o in 0..w {
                        let base = (k * w + o) * e;
                        for (d, x) in gw[base..base + e].iter_mut().zip(row(p + o)) {
                            *d += g * x;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        for (wi, k) in self.kernels.iter().enumerate() {
            k.visit(&format!("{prefix}.conv{}", self.config.widths[wi]), f);
        }
        self.out.visit(&format!("{prefix}.out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        for (wi, k) in self.kernels.iter_mut().enumerate() {
            k.visit_mut(&format!("{prefix}.conv{}", self.config.widths[wi]), f);
        }
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

impl Parameterized for TextCnnParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.visit("text", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.visit_mut("text", f);
    }
}

/// Embedding rows and their kernel projections for a set of tokens, valid
/// for one fixed set of kernel weights.
#[derive(Debug, Clone, Default)]
pub struct TokenCache {
    rows: HashMap<u32, (Vec<f64>, Vec<f64>)>,
}

impl TokenCache {
    pub fn build(
        cnn: &TextCnnParams,
        embeddings: &Embeddings,
        tokens: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        if embeddings.dim() != cnn.config.embed_dim {
            return Err(Error::Shape(format!(
                "embeddings have dim {}, encoder expects {}",
                embeddings.dim(),
                cnn.config.embed_dim
            )));
        }
        let unique: BTreeSet<u32> = tokens.into_iter().collect();
        let rows = unique
            .into_iter()
            .map(|t| {
                let row = embeddings.row(t).into_owned();
                let proj = cnn.project_row(&row);
                (t, (row, proj))
            })
            .collect();
        Ok(TokenCache { rows })
    }

    fn entry(&self, t: u32) -> Result<&(Vec<f64>, Vec<f64>)> {
        self.rows
            .get(&t)
            .ok_or_else(|| Error::IndexOutOfRange(format!("token {t} not in cache")))
    }

    /// Encodes an already truncated token sequence.
    pub fn forward(&self, cnn: &TextCnnParams, tokens: &[u32]) -> Result<TextTape> {
        let entries = tokens.iter().map(|&t| self.entry(t)).collect::<Result<Vec<_>>>()?;
        let (pooled, argmax) = cnn.pool(tokens.len(), |r| &entries[r].1);
        cnn.finish(tokens.len(), pooled, argmax)
    }

    pub fn backward(&self, cnn: &mut TextCnnParams, tokens: &[u32], tape: &TextTape, grad_out: &[f64]) -> Result<()> {
        let entries = tokens.iter().map(|&t| self.entry(t)).collect::<Result<Vec<_>>>()?;
        cnn.backward_rows(tape, grad_out, |r| &entries[r].0)
    }
}
