//! The fused ranking model: a compatibility MLP over both items' visual and
//! text encodings, a matrix-factorization preference model with per-modality
//! content factors, their affine fusion, and the pairwise training loss.

mod checkpoint;
mod loss;
mod score;

pub use checkpoint::{checkpoint_bytes, checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use loss::{fused_gradcheck, BprObjective, GRADCHECK_STEP};
pub use score::{FrozenModel, ItemEncoding, ScoreBreakdown};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Embeddings;
use crate::nnet::{Activation, LayerParams, Mlp, Param, Parameterized, Tensor, TextCnnConfig, TextCnnParams};
use crate::rng::Rng;

/// Which input modalities feed the model. Disabling one zeroes it in the
/// compatibility input and drops its term from the preference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityMask {
    pub visual: bool,
    pub text: bool,
}

impl ModalityMask {
    pub const FULL: ModalityMask = ModalityMask { visual: true, text: true };
    pub const VISUAL_ONLY: ModalityMask = ModalityMask { visual: true, text: false };
    pub const TEXT_ONLY: ModalityMask = ModalityMask { visual: false, text: true };

    pub fn name(self) -> &'static str {
        match (self.visual, self.text) {
            (true, true) => "full",
            (true, false) => "visual-only",
            (false, true) => "text-only",
            (false, false) => "none",
        }
    }
}

impl Default for ModalityMask {
    fn default() -> Self {
        ModalityMask::FULL
    }
}

/// Layer sizes and text-pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    /// Hidden layer widths of the compatibility MLP.
    pub hidden: Vec<usize>,
    pub kernel_widths: Vec<usize>,
    pub maps_per_width: usize,
    pub text_dim: usize,
    pub embed_dim: usize,
    pub l_max: usize,
    /// Word vectors file; hashed pseudo-random rows are used when absent.
    pub embedding_file: Option<PathBuf>,
    pub embedding_seed: u64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![512, 128],
            kernel_widths: vec![2, 3, 4, 5],
            maps_per_width: 100,
            text_dim: 512,
            embed_dim: 300,
            l_max: 32,
            embedding_file: None,
            embedding_seed: 0,
        }
    }
}

impl Architecture {
    /// Smaller network for single-core runs on synthetic data.
    pub fn desk() -> Self {
        Architecture {
            hidden: vec![64, 32],
            maps_per_width: 16,
            text_dim: 64,
            l_max: 16,
            ..Architecture::default()
        }
    }

    pub fn text_cnn(&self) -> TextCnnConfig {
        TextCnnConfig {
            embed_dim: self.embed_dim,
            widths: self.kernel_widths.clone(),
            maps_per_width: self.maps_per_width,
            out_dim: self.text_dim,
        }
    }

    pub fn embeddings(&self) -> Result<Embeddings> {
        match &self.embedding_file {
            Some(path) => {
                let emb = Embeddings::load(path)?;
                if emb.dim() != self.embed_dim {
                    return Err(Error::InvalidConfig(format!(
                        "embedding file has dim {}, architecture says {}",
                        emb.dim(),
                        self.embed_dim
                    )));
                }
                Ok(emb)
            }
            None => Ok(Embeddings::hashed(self.embed_dim, self.embedding_seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub attr_dim: usize,
    pub n_users: usize,
    pub n_bottoms: usize,
    pub latent_dim: usize,
    pub mu: f64,
    pub lambda_reg: f64,
    pub modality_mask: ModalityMask,
    pub architecture: Architecture,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_reg must be >= 0, got {}", self.lambda_reg)));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.attr_dim == 0 || self.n_users == 0 || self.n_bottoms == 0 {
            return Err(Error::InvalidConfig("model needs users, bottoms and attributes".into()));
        }
        if self.architecture.hidden.contains(&0) || self.architecture.l_max == 0 {
            return Err(Error::InvalidConfig("layer sizes and l_max must be positive".into()));
        }
        self.architecture.text_cnn().validate()
    }

    /// Everything that fixes tensor shapes, for resume checks.
    pub fn topology(&self) -> String {
        let a = &self.architecture;
        format!(
            "attr_dim={} users={} bottoms={} D={} hidden={:?} widths={:?} maps={} text_dim={} embed_dim={}",
            self.attr_dim,
            self.n_users,
            self.n_bottoms,
            self.latent_dim,
            a.hidden,
            a.kernel_widths,
            a.maps_per_width,
            a.text_dim,
            a.embed_dim
        )
    }
}

/// All learnable parameters plus the fixed word vectors.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embeddings: Embeddings,
    /// General compatibility network over `[v_top; v_bottom; txt_top; txt_bottom]`.
    pub compat: Mlp,
    pub text: TextCnnParams,
    pub alpha: Param,
    /// Per-bottom bias, `[n_bottoms]`.
    pub beta: Param,
    pub gamma_user: Param,
    pub gamma_bottom: Param,
    pub theta_visual: Param,
    pub theta_text: Param,
    pub proj_visual: LayerParams,
    pub proj_text: LayerParams,
}

const LATENT_INIT: f64 = 0.1;

impl ModelParams {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let embeddings = config.architecture.embeddings()?;
        let a = &config.architecture;
        let mut sizes = vec![2 * config.attr_dim + 2 * a.text_dim];
        sizes.extend(&a.hidden);
        sizes.push(1);
        let compat = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        let text = TextCnnParams::new(a.text_cnn(), rng)?;
        let (m, nb, d) = (config.n_users, config.n_bottoms, config.latent_dim);
        let gamma_user = Param::new(Tensor::uniform(&[m, d], LATENT_INIT, rng));
        let gamma_bottom = Param::new(Tensor::uniform(&[nb, d], LATENT_INIT, rng));
        let theta_visual = Param::new(Tensor::uniform(&[m, d], LATENT_INIT, rng));
        let theta_text = Param::new(Tensor::uniform(&[m, d], LATENT_INIT, rng));
        let proj_visual = LayerParams::dense(config.attr_dim, d, rng);
        let proj_text = LayerParams::dense(a.text_dim, d, rng);
        Ok(ModelParams {
            embeddings,
            compat,
            text,
            alpha: Param::new(Tensor::zeros(&[1])),
            beta: Param::new(Tensor::zeros(&[nb])),
            gamma_user,
            gamma_bottom,
            theta_visual,
            theta_text,
            proj_visual,
            proj_text,
            config,
        })
    }

    pub fn mask(&self) -> ModalityMask {
        self.config.modality_mask
    }

    /// Plain SGD: `theta -= lr * grad`, then clears the gradients.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        self.visit_params_mut(&mut |_, v, g| {
            for (x, gx) in v.data_mut().iter_mut().zip(g.data_mut()) {
                *x -= learning_rate * *gx;
                *gx = 0.0;
            }
        });
    }
}

impl Parameterized for ModelParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.compat.visit("compat", f);
        self.text.visit("text", f);
        f("pref.alpha", &self.alpha.value, &self.alpha.grad);
        f("pref.beta", &self.beta.value, &self.beta.grad);
        f("pref.gamma_user", &self.gamma_user.value, &self.gamma_user.grad);
        f("pref.gamma_bottom", &self.gamma_bottom.value, &self.gamma_bottom.grad);
        f("pref.theta_visual", &self.theta_visual.value, &self.theta_visual.grad);
        f("pref.theta_text", &self.theta_text.value, &self.theta_text.grad);
        self.proj_visual.visit("pref.proj_visual", f);
        self.proj_text.visit("pref.proj_text", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.compat.visit_mut("compat", f);
        self.text.visit_mut("text", f);
        f("pref.alpha", &mut self.alpha.value, &mut self.alpha.grad);
        f("pref.beta", &mut self.beta.value, &mut self.beta.grad);
        f("pref.gamma_user", &mut self.gamma_user.value, &mut self.gamma_user.grad);
        f("pref.gamma_bottom", &mut self.gamma_bottom.value, &mut self.gamma_bottom.grad);
        f("pref.theta_visual", &mut self.theta_visual.value, &mut self.theta_visual.grad);
        f("pref.theta_text", &mut self.theta_text.value, &mut self.theta_text.grad);
        self.proj_visual.visit_mut("pref.proj_visual", f);
        self.proj_text.visit_mut("pref.proj_text", f);
    }
}
