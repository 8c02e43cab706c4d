use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use super::score::{BottomContent, ItemEncoding};
use super::{Architecture, ModalityMask, ModelConfig, ModelParams};
use crate::dataset::{generate_synthetic, sample_quadruplets, Dataset, Quadruplet, SynthSpec};
use crate::error::{Error, Result};
use crate::nnet::{
    dense_backward, grad_check, sigmoid, softplus, Differentiable, ForwardTape, GradCheckReport, Param,
    Parameterized, Tensor, TextTape, TokenCache,
};
use crate::rng;

/// Everything the backward pass needs from one batch forward.
struct BatchForward {
    loss: f64,
    /// Table positions of every item in the batch, ascending.
    items: Vec<usize>,
    encodings: Vec<ItemEncoding>,
    text_tapes: Vec<Option<TextTape>>,
    cache: Option<TokenCache>,
    /// Bottom index -> its content projections.
    content: BTreeMap<usize, BottomContent>,
    users: BTreeSet<usize>,
    pairs: Vec<QuadForward>,
}

struct QuadForward {
    top: usize,
    pos: usize,
    neg: usize,
    tape_pos: ForwardTape,
    tape_neg: ForwardTape,
    delta: f64,
}

fn row(p: &Param, r: usize, d: usize) -> &[f64] {
    &p.value.data()[r * d..(r + 1) * d]
}

fn sum_sq_rows(p: &Param, rows: impl IntoIterator<Item = usize>, d: usize) -> f64 {
    rows.into_iter()
        .map(|r| row(p, r, d).iter().map(|x| x * x).sum::<f64>())
        .sum()
}

fn add_scaled_rows(p: &mut Param, rows: &BTreeSet<usize>, d: usize, scale: f64) {
    for &r in rows {
        let (v, g) = (&p.value.data()[r * d..(r + 1) * d], &mut p.grad.data_mut()[r * d..(r + 1) * d]);
        for (gx, x) in g.iter_mut().zip(v) {
            *gx += scale * x;
        }
    }
}

fn add_scaled(v: &Tensor, g: &mut Tensor, scale: f64) {
    for (gx, x) in g.data_mut().iter_mut().zip(v.data()) {
        *gx += scale * x;
    }
}

impl ModelParams {
    fn position_of(&self, data: &Dataset, top: Option<usize>, bottom: Option<usize>) -> usize {
        let table = data.table();
        match (top, bottom) {
            (Some(i), _) => table.tops[i],
            (_, Some(j)) => table.bottoms[j],
            _ => unreachable!("an item is a top or a bottom"),
        }
    }

    fn check_batch(&self, batch: &[Quadruplet], data: &Dataset) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidData("BPR loss over an empty batch".into()));
        }
        if data.n_users() != self.config.n_users || data.n_bottoms() != self.config.n_bottoms {
            return Err(Error::Topology(format!(
                "dataset has {} users / {} bottoms, model expects {} / {}",
                data.n_users(),
                data.n_bottoms(),
                self.config.n_users,
                self.config.n_bottoms
            )));
        }
        for q in batch {
            if q.user >= data.n_users() || q.top >= data.n_tops() || q.pos >= data.n_bottoms() || q.neg >= data.n_bottoms() {
                return Err(Error::IndexOutOfRange(format!("quadruplet {q:?}")));
            }
        }
        Ok(())
    }

    /// Squared norm of the parameters the batch touches.
    fn touched_sq_norm(&self, users: &BTreeSet<usize>, bottoms: &BTreeSet<usize>) -> f64 {
        let mask = self.mask();
        let d = self.config.latent_dim;
        let mut total = 0.0;
        self.compat.visit("", &mut |_, v, _| total += v.sum_squares());
        if mask.text {
            self.text.visit("", &mut |_, v, _| total += v.sum_squares());
            total += self.proj_text.weights.sum_squares() + self.proj_text.bias.sum_squares();
            total += sum_sq_rows(&self.theta_text, users.iter().copied(), d);
        }
        if mask.visual {
            total += self.proj_visual.weights.sum_squares() + self.proj_visual.bias.sum_squares();
            total += sum_sq_rows(&self.theta_visual, users.iter().copied(), d);
        }
        total += self.alpha.value.sum_squares();
        total += bottoms.iter().map(|&j| self.beta.value.data()[j].powi(2)).sum::<f64>();
        total += sum_sq_rows(&self.gamma_user, users.iter().copied(), d);
        total += sum_sq_rows(&self.gamma_bottom, bottoms.iter().copied(), d);
        total
    }

    fn forward_batch(&self, batch: &[Quadruplet], data: &Dataset) -> Result<BatchForward> {
        self.check_batch(batch, data)?;
        let mask = self.mask();

        let mut positions = BTreeSet::new();
        let mut bottoms = BTreeSet::new();
        let mut users = BTreeSet::new();
        for q in batch {
            positions.insert(self.position_of(data, Some(q.top), None));
            positions.insert(self.position_of(data, None, Some(q.pos)));
            positions.insert(self.position_of(data, None, Some(q.neg)));
            bottoms.insert(q.pos);
            bottoms.insert(q.neg);
            users.insert(q.user);
        }
        let items: Vec<usize> = positions.into_iter().collect();
        let records = &data.table().items;

        let cache = if mask.text {
            let tokens = items.iter().flat_map(|&p| self.truncated(&records[p]).iter().copied());
            Some(TokenCache::build(&self.text, &self.embeddings, tokens)?)
        } else {
            None
        };
        let mut encodings = Vec::with_capacity(items.len());
        let mut text_tapes = Vec::with_capacity(items.len());
        for &p in &items {
            let item = &records[p];
            self.check_item(item)?;
            let visual = if mask.visual {
                item.attr_vec.clone()
            } else {
                vec![0.0; self.config.attr_dim]
            };
            let (text, tape) = match &cache {
                Some(c) => {
                    let tape = c.forward(&self.text, self.truncated(item))?;
                    (tape.output.clone(), Some(tape))
                }
                None => (vec![0.0; self.config.architecture.text_dim], None),
            };
            encodings.push(ItemEncoding { visual, text });
            text_tapes.push(tape);
        }
        let local = |p: usize| items.binary_search(&p).expect("batch item");

        let mut content = BTreeMap::new();
        for &j in &bottoms {
            let enc = &encodings[local(self.position_of(data, None, Some(j)))];
            content.insert(j, self.bottom_content(enc)?);
        }

        let mu = self.config.mu;
        let mut loss = 0.0;
        let mut pairs = Vec::with_capacity(batch.len());
        for q in batch {
            let top = local(self.position_of(data, Some(q.top), None));
            let pos = local(self.position_of(data, None, Some(q.pos)));
            let neg = local(self.position_of(data, None, Some(q.neg)));
            let (s_pos, tape_pos) = self.compat.forward(&Self::compat_input(&encodings[top], &encodings[pos]))?;
            let (s_neg, tape_neg) = self.compat.forward(&Self::compat_input(&encodings[top], &encodings[neg]))?;
            let c_pos = self.pref_content(q.user, q.pos, &content[&q.pos])?;
            let c_neg = self.pref_content(q.user, q.neg, &content[&q.neg])?;
            let p_pos = super::ScoreBreakdown::fuse(s_pos[0], c_pos, mu).p_mij;
            let p_neg = super::ScoreBreakdown::fuse(s_neg[0], c_neg, mu).p_mij;
            let delta = p_pos - p_neg;
            loss += softplus(-delta);
            pairs.push(QuadForward {
                top,
                pos,
                neg,
                tape_pos,
                tape_neg,
                delta,
            });
        }
        loss /= batch.len() as f64;
        loss += 0.5 * self.config.lambda_reg * self.touched_sq_norm(&users, &bottoms);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("BPR loss ({loss})")));
        }
        Ok(BatchForward {
            loss,
            items,
            encodings,
            text_tapes,
            cache,
            content,
            users,
            pairs,
        })
    }

    /// Mean `-ln sigmoid(p_mij - p_mik)` plus `lambda/2` times the squared
    /// norm of the parameters the batch touches. No gradients.
    pub fn batch_loss(&self, batch: &[Quadruplet], data: &Dataset) -> Result<f64> {
        Ok(self.forward_batch(batch, data)?.loss)
    }

    /// Same loss as [`ModelParams::batch_loss`], accumulating its gradient
    /// into the parameters' gradient buffers.
    pub fn bpr_loss(&mut self, batch: &[Quadruplet], data: &Dataset) -> Result<f64> {
        let fwd = self.forward_batch(batch, data)?;
        let mask = self.mask();
        let mu = self.config.mu;
        let d = self.config.latent_dim;
        let attr_dim = self.config.attr_dim;
        let text_dim = self.config.architecture.text_dim;
        let n = batch.len() as f64;
        let text_range = mask.text.then(|| 2 * attr_dim..2 * attr_dim + 2 * text_dim);

        let mut d_text: Vec<Vec<f64>> = vec![vec![0.0; text_dim]; fwd.items.len()];
        let mut d_proj: BTreeMap<usize, (Vec<f64>, Vec<f64>)> =
            fwd.content.keys().map(|&j| (j, (vec![0.0; d], vec![0.0; d]))).collect();

        for (q, f) in batch.iter().zip(&fwd.pairs) {
            let dd = -sigmoid(-f.delta) / n;
            for (item, bottom, tape, sign) in [(f.pos, q.pos, &f.tape_pos, 1.0), (f.neg, q.neg, &f.tape_neg, -1.0)] {
                let ds = sign * mu * dd;
                let gx = self.compat.backward(tape, &[ds], text_range.clone())?;
                if mask.text {
                    for (a, b) in d_text[f.top].iter_mut().zip(&gx[..text_dim]) {
                        *a += b;
                    }
                    for (a, b) in d_text[item].iter_mut().zip(&gx[text_dim..]) {
                        *a += b;
                    }
                }

                let g = sign * (1.0 - mu) * dd;
                let (m, j) = (q.user, bottom);
                self.alpha.grad.data_mut()[0] += g;
                self.beta.grad.data_mut()[j] += g;
                let gu: Vec<f64> = row(&self.gamma_user, m, d).to_vec();
                let gb: Vec<f64> = row(&self.gamma_bottom, j, d).to_vec();
                for k in 0..d {
                    self.gamma_user.grad.data_mut()[m * d + k] += g * gb[k];
                    self.gamma_bottom.grad.data_mut()[j * d + k] += g * gu[k];
                }
                let content = &fwd.content[&j];
                let dp = d_proj.get_mut(&j).expect("batch bottom");
                if let Some(pv) = &content.visual {
                    for k in 0..d {
                        self.theta_visual.grad.data_mut()[m * d + k] += g * pv[k];
                        dp.0[k] += g * self.theta_visual.value.data()[m * d + k];
                    }
                }
                if let Some(pt) = &content.text {
                    for k in 0..d {
                        self.theta_text.grad.data_mut()[m * d + k] += g * pt[k];
                        dp.1[k] += g * self.theta_text.value.data()[m * d + k];
                    }
                }
            }
        }

        let data_items = &data.table().items;
        for (j, (dv, dt)) in &d_proj {
            let local = fwd
                .items
                .binary_search(&data.table().bottoms[*j])
                .expect("batch bottom");
            let enc = &fwd.encodings[local];
            if mask.visual {
                dense_backward(&enc.visual, dv, &mut self.proj_visual, None);
            }
            if mask.text {
                let gx = dense_backward(&enc.text, dt, &mut self.proj_text, Some(0..text_dim));
                for (a, b) in d_text[local].iter_mut().zip(&gx) {
                    *a += b;
                }
            }
        }

        if let Some(cache) = &fwd.cache {
            for (local, &p) in fwd.items.iter().enumerate() {
                let tape = fwd.text_tapes[local].as_ref().expect("text tape");
                let tokens = self.truncated(&data_items[p]).to_vec();
                cache.backward(&mut self.text, &tokens, tape, &d_text[local])?;
            }
        }

        let lambda = self.config.lambda_reg;
        if lambda > 0.0 {
            let bottoms: BTreeSet<usize> = fwd.content.keys().copied().collect();
            self.compat.visit_mut("", &mut |_, v, g| add_scaled(v, g, lambda));
            add_scaled(&self.alpha.value, &mut self.alpha.grad, lambda);
            for &j in &bottoms {
                let b = self.beta.value.data()[j];
                self.beta.grad.data_mut()[j] += lambda * b;
            }
            add_scaled_rows(&mut self.gamma_user, &fwd.users, d, lambda);
            add_scaled_rows(&mut self.gamma_bottom, &bottoms, d, lambda);
            if mask.visual {
                self.proj_visual.visit_mut("", &mut |_, v, g| add_scaled(v, g, lambda));
                add_scaled_rows(&mut self.theta_visual, &fwd.users, d, lambda);
            }
            if mask.text {
                self.text.visit_mut("", &mut |_, v, g| add_scaled(v, g, lambda));
                self.proj_text.visit_mut("", &mut |_, v, g| add_scaled(v, g, lambda));
                add_scaled_rows(&mut self.theta_text, &fwd.users, d, lambda);
            }
        }
        Ok(fwd.loss)
    }
}

/// The BPR loss of a fixed batch as a function of the parameters.
pub struct BprObjective<'a> {
    pub params: ModelParams,
    pub batch: Vec<Quadruplet>,
    pub data: &'a Dataset,
}

impl Parameterized for BprObjective<'_> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.params.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.params.visit_params_mut(f)
    }
}

impl Differentiable for BprObjective<'_> {
    fn loss(&self) -> Result<f64> {
        self.params.batch_loss(&self.batch, self.data)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params.bpr_loss(&self.batch, self.data)
    }
}

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Gradient check of the full fused model (text CNN, compatibility MLP and
/// preference model) on a small seeded synthetic instance with a 5-quadruplet
/// batch. The instance has fewer than 10^4 parameters.
pub fn fused_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let spec = SynthSpec {
        users: 4,
        tops: 6,
        bottoms: 6,
        outfits_per_user: 3,
        groups: 2,
        elements_per_group: 3,
        category_dim: 2,
        color_dim: 2,
        informative_groups: 1,
        ..SynthSpec::default()
    };
    let (data, _) = generate_synthetic(&spec, seed)?;
    let config = ModelConfig {
        attr_dim: data.schema().total_dim(),
        n_users: data.n_users(),
        n_bottoms: data.n_bottoms(),
        latent_dim: 3,
        mu: 0.5,
        lambda_reg: 1e-2,
        modality_mask: ModalityMask::FULL,
        architecture: Architecture {
            hidden: vec![8, 4],
            maps_per_width: 1,
            text_dim: 4,
            l_max: 10,
            embedding_seed: seed,
            ..Architecture::default()
        },
    };
    let mut r = rng::seeded(rng::mix(seed, &[0x6772_6164]));
    let mut params = ModelParams::new(config, &mut r)?;
    // Random biases keep every ReLU and max-pool input away from exact zeros,
    // where the one-sided subgradient and the central difference disagree.
    params.visit_params_mut(&mut |name, v, _| {
        if name.ends_with(".bias") || name == "pref.alpha" || name == "pref.beta" {
            v.data_mut().iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        }
    });
    let batch: Vec<Quadruplet> = sample_quadruplets(&data, 1, seed)?.into_iter().take(5).collect();
    let mut objective = BprObjective {
        params,
        batch,
        data: &data,
    };
    grad_check(&mut objective, GRADCHECK_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(mask: ModalityMask, lambda: f64, seed: u64) -> (Dataset, ModelParams) {
        let spec = SynthSpec {
            users: 5,
            tops: 8,
            bottoms: 9,
            outfits_per_user: 4,
            ..SynthSpec::default()
        };
        let (data, _) = generate_synthetic(&spec, seed).unwrap();
        let config = ModelConfig {
            attr_dim: data.schema().total_dim(),
            n_users: 5,
            n_bottoms: 9,
            latent_dim: 3,
            mu: 0.4,
            lambda_reg: lambda,
            modality_mask: mask,
            architecture: Architecture {
                hidden: vec![6],
                maps_per_width: 2,
                text_dim: 3,
                embed_dim: 10,
                l_max: 8,
                ..Architecture::default()
            },
        };
        let mut r = rng::seeded(seed);
        let mut params = ModelParams::new(config, &mut r).unwrap();
        params.visit_params_mut(&mut |name, v, _| {
            if name.ends_with(".bias") {
                v.data_mut().iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
            }
        });
        (data, params)
    }

    #[test]
    fn equal_scores_give_ln2() {
        let (data, mut params) = setup(ModalityMask::FULL, 0.0, 1);
        // identical positive and negative make every difference zero
        let batch: Vec<Quadruplet> = (0..4)
            .map(|m| Quadruplet { user: m, top: m, pos: 2, neg: 2 })
            .collect();
        let loss = params.bpr_loss(&batch, &data).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let (data, mut params) = setup(ModalityMask::FULL, 0.0, 1);
        assert!(params.bpr_loss(&[], &data).is_err());
    }

    #[test]
    fn loss_and_gradient_agree_with_plain_loss() {
        let (data, mut params) = setup(ModalityMask::FULL, 1e-3, 2);
        let batch = sample_quadruplets(&data, 1, 2).unwrap();
        let plain = params.batch_loss(&batch, &data).unwrap();
        assert_eq!(plain, params.bpr_loss(&batch, &data).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences_per_mask() {
        for (s, mask) in [ModalityMask::FULL, ModalityMask::VISUAL_ONLY, ModalityMask::TEXT_ONLY].into_iter().enumerate() {
            let (data, params) = setup(mask, 1e-2, 10 + s as u64);
            let batch: Vec<Quadruplet> = sample_quadruplets(&data, 1, 3).unwrap().into_iter().take(5).collect();
            let mut obj = BprObjective { params, batch, data: &data };
            let rep = grad_check(&mut obj, GRADCHECK_STEP).unwrap();
            assert!(rep.max_relative_error < 1e-4, "{mask:?}: {rep:?}");
        }
    }

    #[test]
    fn fused_instance_passes() {
        let rep = fused_gradcheck(0).unwrap();
        assert!(rep.n_params <= 10_000);
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (data, mut params) = setup(ModalityMask::FULL, 1e-3, 4);
        let before = params.clone();
        let batch = sample_quadruplets(&data, 1, 4).unwrap();
        params.bpr_loss(&batch, &data).unwrap();
        params.sgd_step(0.0);
        let mut same = true;
        let mut a = Vec::new();
        before.visit_params(&mut |_, v, _| a.push(v.clone()));
        let mut i = 0;
        params.visit_params(&mut |_, v, g| {
            same &= *v == a[i] && g.data().iter().all(|x| *x == 0.0);
            i += 1;
        });
        assert!(same);
    }

    proptest! {
        #[test]
        fn pair_loss_is_positive_and_decreasing(x in -30f64..30.0, step in 1e-3f64..5.0) {
            prop_assert!(softplus(-x) > 0.0);
            prop_assert!(softplus(-(x + step)) < softplus(-x));
        }
    }

    #[test]
    fn large_margin_loss_vanishes() {
        let l = softplus(-40.0);
        assert!(l > 0.0 && l < 1e-17);
    }
}
