use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::dataset::{Dataset, ItemRecord};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::features::embed_tokens;
use crate::nnet::{dense_forward, Param, TokenCache};

/// One scored `(user, top, bottom)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_ij: f64,
    pub c_mj: f64,
    pub p_mij: f64,
    pub mu: f64,
}

impl ScoreBreakdown {
    /// `p = mu * s + (1 - mu) * c`; the endpoints return `s` or `c` itself.
    pub fn fuse(s_ij: f64, c_mj: f64, mu: f64) -> Self {
        let p_mij = if mu == 1.0 {
            s_ij
        } else if mu == 0.0 {
            c_mj
        } else {
            mu * s_ij + (1.0 - mu) * c_mj
        };
        ScoreBreakdown { s_ij, c_mj, p_mij, mu }
    }
}

/// Model-side view of one item: its attribute vector and text encoding, each
/// zeroed when the modality is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEncoding {
    pub visual: Vec<f64>,
    pub text: Vec<f64>,
}

/// Per-bottom content projections used by the preference model.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BottomContent {
    pub visual: Option<Vec<f64>>,
    pub text: Option<Vec<f64>>,
}

fn row(p: &Param, r: usize, d: usize) -> &[f64] {
    &p.value.data()[r * d..(r + 1) * d]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ModelParams {
    pub(crate) fn check_item(&self, item: &ItemRecord) -> Result<()> {
        if item.attr_vec.len() != self.config.attr_dim {
            return Err(Error::DimensionMismatch {
                id: item.id.clone(),
                expected: self.config.attr_dim,
                actual: item.attr_vec.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn truncated<'a>(&self, item: &'a ItemRecord) -> &'a [u32] {
        &item.tokens[..item.tokens.len().min(self.config.architecture.l_max)]
    }

    pub fn encode_item(&self, item: &ItemRecord) -> Result<ItemEncoding> {
        self.check_item(item)?;
        let mask = self.mask();
        let visual = if mask.visual {
            item.attr_vec.clone()
        } else {
            vec![0.0; self.config.attr_dim]
        };
        let text = if mask.text {
            let tm = embed_tokens(self.truncated(item), &self.embeddings, self.config.architecture.l_max);
            self.text.forward(&tm)?.output
        } else {
            vec![0.0; self.config.architecture.text_dim]
        };
        Ok(ItemEncoding { visual, text })
    }

    /// Encodes many items with one shared token projection cache.
    pub fn encode_items<'a>(&self, items: impl IntoIterator<Item = &'a ItemRecord> + Clone) -> Result<Vec<ItemEncoding>> {
        let mask = self.mask();
        let cache = if mask.text {
            let tokens = items.clone().into_iter().flat_map(|it| self.truncated(it).iter().copied());
            Some(TokenCache::build(&self.text, &self.embeddings, tokens)?)
        } else {
            None
        };
        items
            .into_iter()
            .map(|item| {
                self.check_item(item)?;
                let visual = if mask.visual {
                    item.attr_vec.clone()
                } else {
                    vec![0.0; self.config.attr_dim]
                };
                let text = match &cache {
                    Some(c) => c.forward(&self.text, self.truncated(item))?.output,
                    None => vec![0.0; self.config.architecture.text_dim],
                };
                Ok(ItemEncoding { visual, text })
            })
            .collect()
    }

    pub(crate) fn compat_input(top: &ItemEncoding, bottom: &ItemEncoding) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * (top.visual.len() + top.text.len()));
        x.extend_from_slice(&top.visual);
        x.extend_from_slice(&bottom.visual);
        x.extend_from_slice(&top.text);
        x.extend_from_slice(&bottom.text);
        x
    }

    pub fn compat_encoded(&self, top: &ItemEncoding, bottom: &ItemEncoding) -> Result<f64> {
        Ok(self.compat.predict(&Self::compat_input(top, bottom))?[0])
    }

    pub(crate) fn bottom_content(&self, bottom: &ItemEncoding) -> Result<BottomContent> {
        let mask = self.mask();
        Ok(BottomContent {
            visual: if mask.visual {
                Some(dense_forward(&bottom.visual, &self.proj_visual)?)
            } else {
                None
            },
            text: if mask.text {
                Some(dense_forward(&bottom.text, &self.proj_text)?)
            } else {
                None
            },
        })
    }

    pub(crate) fn pref_content(&self, m: usize, j: usize, content: &BottomContent) -> Result<f64> {
        let (n_users, n_bottoms) = (self.config.n_users, self.config.n_bottoms);
        if m >= n_users {
            return Err(Error::IndexOutOfRange(format!("user {m} (model has {n_users})")));
        }
        if j >= n_bottoms {
            return Err(Error::IndexOutOfRange(format!("bottom {j} (model has {n_bottoms})")));
        }
        let d = self.config.latent_dim;
        let mut c = self.alpha.value.data()[0] + self.beta.value.data()[j];
        c += dot(row(&self.gamma_user, m, d), row(&self.gamma_bottom, j, d));
        if let Some(v) = &content.visual {
            c += dot(row(&self.theta_visual, m, d), v);
        }
        if let Some(t) = &content.text {
            c += dot(row(&self.theta_text, m, d), t);
        }
        Ok(c)
    }

    /// `s_ij` for a top and a bottom.
    pub fn general_compat(&self, top: &ItemRecord, bottom: &ItemRecord) -> Result<f64> {
        self.compat_encoded(&self.encode_item(top)?, &self.encode_item(bottom)?)
    }

    /// `c_mj` for user `m` and bottom `j` (index into the bottom list).
    pub fn personal_pref(&self, m: usize, j: usize, bottom: &ItemRecord) -> Result<f64> {
        let content = self.bottom_content(&self.encode_item(bottom)?)?;
        self.pref_content(m, j, &content)
    }

    pub fn fused_score(&self, m: usize, top: &ItemRecord, j: usize, bottom: &ItemRecord) -> Result<ScoreBreakdown> {
        let t = self.encode_item(top)?;
        let b = self.encode_item(bottom)?;
        let s = self.compat_encoded(&t, &b)?;
        let c = self.pref_content(m, j, &self.bottom_content(&b)?)?;
        Ok(ScoreBreakdown::fuse(s, c, self.config.mu))
    }
}

/// Parameters with every item of a dataset pre-encoded, for fast repeated
/// scoring. Produces the same bits as [`ModelParams::fused_score`].
pub struct FrozenModel<'a> {
    params: &'a ModelParams,
    tops: Vec<ItemEncoding>,
    bottoms: Vec<ItemEncoding>,
    content: Vec<BottomContent>,
}

impl<'a> FrozenModel<'a> {
    pub fn new(params: &'a ModelParams, data: &Dataset) -> Result<Self> {
        if data.n_users() != params.config.n_users || data.n_bottoms() != params.config.n_bottoms {
            return Err(Error::Topology(format!(
                "dataset has {} users / {} bottoms, model was built for {} / {}",
                data.n_users(),
                data.n_bottoms(),
                params.config.n_users,
                params.config.n_bottoms
            )));
        }
        let tops = params.encode_items((0..data.n_tops()).map(|i| data.top(i)))?;
        let bottoms = params.encode_items((0..data.n_bottoms()).map(|j| data.bottom(j)))?;
        let content = bottoms
            .iter()
            .map(|b| params.bottom_content(b))
            .collect::<Result<_>>()?;
        Ok(FrozenModel {
            params,
            tops,
            bottoms,
            content,
        })
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn breakdown(&self, m: usize, i: usize, j: usize) -> Result<ScoreBreakdown> {
        let top = self
            .tops
            .get(i)
            .ok_or_else(|| Error::IndexOutOfRange(format!("top {i}")))?;
        let bottom = self
            .bottoms
            .get(j)
            .ok_or_else(|| Error::IndexOutOfRange(format!("bottom {j}")))?;
        let s = self.params.compat_encoded(top, bottom)?;
        let c = self.params.pref_content(m, j, &self.content[j])?;
        Ok(ScoreBreakdown::fuse(s, c, self.params.config.mu))
    }
}

impl Scorer for FrozenModel<'_> {
    fn score(&self, user: usize, top: usize, bottom: usize) -> f64 {
        self.breakdown(user, top, bottom)
            .map(|b| b.p_mij)
            .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModalityMask, ModelConfig};
    use crate::nnet::Parameterized;
    use crate::rng;
    use crate::dataset::{generate_synthetic, SynthSpec};
    use proptest::prelude::*;
    use rand::Rng as _;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            hidden: vec![8, 4],
            maps_per_width: 2,
            text_dim: 5,
            embed_dim: 12,
            l_max: 8,
            ..Architecture::default()
        }
    }

    fn setup(mu: f64, mask: ModalityMask, seed: u64) -> (Dataset, ModelParams) {
        let spec = SynthSpec {
            users: 4,
            tops: 6,
            bottoms: 7,
            outfits_per_user: 3,
            ..SynthSpec::default()
        };
        let (data, _) = generate_synthetic(&spec, seed).unwrap();
        let config = ModelConfig {
            attr_dim: data.schema().total_dim(),
            n_users: 4,
            n_bottoms: 7,
            latent_dim: 3,
            mu,
            lambda_reg: 0.0,
            modality_mask: mask,
            architecture: tiny_arch(),
        };
        let mut params = ModelParams::new(config, &mut rng::seeded(seed)).unwrap();
        let mut r = rng::seeded(seed + 1);
        params.alpha.value.data_mut()[0] = 0.3;
        params.beta.value.data_mut().iter_mut().for_each(|b| *b = r.random_range(-1.0..1.0));
        (data, params)
    }

    #[test]
    fn fuse_arithmetic() {
        assert_eq!(ScoreBreakdown::fuse(2.0, 4.0, 0.5).p_mij, 3.0);
        assert_eq!(ScoreBreakdown::fuse(-0.0, 4.0, 1.0).p_mij.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn endpoints_are_bit_exact() {
        for (mu, pick_s) in [(1.0, true), (0.0, false)] {
            let (data, params) = setup(mu, ModalityMask::FULL, 3);
            let frozen = FrozenModel::new(&params, &data).unwrap();
            for m in 0..4 {
                for i in 0..6 {
                    for j in 0..7 {
                        let b = frozen.breakdown(m, i, j).unwrap();
                        let s = params.general_compat(data.top(i), data.bottom(j)).unwrap();
                        let c = params.personal_pref(m, j, data.bottom(j)).unwrap();
                        let want = if pick_s { s } else { c };
                        assert_eq!(b.p_mij.to_bits(), want.to_bits());
                        assert_eq!(b, params.fused_score(m, data.top(i), j, data.bottom(j)).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_network_gives_zero_compat() {
        let (data, mut params) = setup(0.5, ModalityMask::FULL, 4);
        params.compat.visit_mut("", &mut |_, v, _| v.fill_zero());
        assert_eq!(params.general_compat(data.top(0), data.bottom(0)).unwrap(), 0.0);
    }

    #[test]
    fn compat_is_not_symmetric() {
        let (data, params) = setup(0.5, ModalityMask::FULL, 5);
        let (t, b) = (data.top(0), data.bottom(1));
        assert_ne!(params.general_compat(t, b).unwrap(), params.general_compat(b, t).unwrap());
    }

    #[test]
    fn bias_only_preference() {
        let (data, mut params) = setup(0.0, ModalityMask::FULL, 6);
        for p in [&mut params.gamma_user, &mut params.gamma_bottom, &mut params.theta_visual, &mut params.theta_text] {
            p.value.fill_zero();
        }
        params.proj_visual.weights.fill_zero();
        params.proj_visual.bias.fill_zero();
        params.proj_text.weights.fill_zero();
        params.proj_text.bias.fill_zero();
        for j in 0..7 {
            let c = params.personal_pref(2, j, data.bottom(j)).unwrap();
            assert_eq!(c, 0.3 + params.beta.value.data()[j]);
        }
    }

    #[test]
    fn preference_matches_expanded_formula() {
        let (data, params) = setup(0.0, ModalityMask::FULL, 7);
        let (m, j) = (1, 4);
        let b = data.bottom(j);
        let d = 3;
        let txt = params.encode_item(b).unwrap().text;
        let mut expect = params.alpha.value.data()[0] + params.beta.value.data()[j];
        for k in 0..d {
            expect += params.gamma_user.value.data()[m * d + k] * params.gamma_bottom.value.data()[j * d + k];
            // proj(x)[k] = b[k] + sum_i x[i] W[i][k]
            let mut pv = params.proj_visual.bias.data()[k];
            for (i, x) in b.attr_vec.iter().enumerate() {
                pv += x * params.proj_visual.weights.data()[i * d + k];
            }
            let mut pt = params.proj_text.bias.data()[k];
            for (i, x) in txt.iter().enumerate() {
                pt += x * params.proj_text.weights.data()[i * d + k];
            }
            expect += params.theta_visual.value.data()[m * d + k] * pv;
            expect += params.theta_text.value.data()[m * d + k] * pt;
        }
        let got = params.personal_pref(m, j, b).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn index_errors() {
        let (data, params) = setup(0.5, ModalityMask::FULL, 8);
        assert!(matches!(params.personal_pref(4, 0, data.bottom(0)), Err(Error::IndexOutOfRange(_))));
        assert!(matches!(params.personal_pref(0, 7, data.bottom(0)), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn encoded_batch_matches_single() {
        let (data, params) = setup(0.5, ModalityMask::FULL, 9);
        let many = params.encode_items((0..7).map(|j| data.bottom(j))).unwrap();
        for (j, enc) in many.iter().enumerate() {
            assert_eq!(enc, &params.encode_item(data.bottom(j)).unwrap());
        }
        assert!(params.param_count() > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn masked_modalities_are_ignored(seed in 0u64..1000, tok in 0u32..80, bump in 0.01f64..0.5) {
            let (data, params) = setup(0.5, ModalityMask::VISUAL_ONLY, seed);
            let (t, b) = (data.top(0).clone(), data.bottom(2).clone());
            let base = params.fused_score(1, &t, 2, &b).unwrap();
            let mut t2 = t.clone();
            let mut b2 = b.clone();
            t2.tokens.push(tok);
            b2.tokens = vec![tok, tok + 1];
            prop_assert_eq!(base, params.fused_score(1, &t2, 2, &b2).unwrap());

            let (data, params) = setup(0.5, ModalityMask::TEXT_ONLY, seed);
            let (t, b) = (data.top(0).clone(), data.bottom(2).clone());
            let base = params.fused_score(1, &t, 2, &b).unwrap();
            let mut t2 = t.clone();
            let mut b2 = b.clone();
            t2.attr_vec.iter_mut().for_each(|x| *x = (*x + bump).min(1.0));
            b2.attr_vec.iter_mut().for_each(|x| *x = 1.0 - *x);
            prop_assert_eq!(base, params.fused_score(1, &t2, 2, &b2).unwrap());
        }

        #[test]
        fn fusion_stays_between_parts(s in -1e3f64..1e3, c in -1e3f64..1e3, mu in 0.0f64..=1.0) {
            let p = ScoreBreakdown::fuse(s, c, mu).p_mij;
            prop_assert!(p >= s.min(c) - 1e-9 && p <= s.max(c) + 1e-9);
        }

        #[test]
        fn shared_compat_shift_keeps_order(s1 in -10f64..10.0, s2 in -10f64..10.0, c1 in -10f64..10.0,
                                           c2 in -10f64..10.0, k in -5f64..5.0, mu in 0.0f64..=1.0) {
            let before = ScoreBreakdown::fuse(s1, c1, mu).p_mij - ScoreBreakdown::fuse(s2, c2, mu).p_mij;
            let after = ScoreBreakdown::fuse(s1 + k, c1, mu).p_mij - ScoreBreakdown::fuse(s2 + k, c2, mu).p_mij;
            prop_assume!(before.abs() > 1e-9);
            prop_assert_eq!(before > 0.0, after > 0.0);
        }
    }
}
