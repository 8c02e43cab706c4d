//! Synthetic datasets with planted ground truth.
//!
//! Items carry near-one-hot activations per attribute group and a hidden
//! "style" class that only shows up in their token sequences. The planted
//! preference has the same shape as the learned model: a mix of a
//! user-independent top/bottom compatibility and a user/bottom affinity.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AttributeGroup, AttributeSchema, Dataset, ItemKind, ItemRecord, UserHistory};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::rng::{self, Rng};

const GROUP_NAMES: [&str; 5] = ["texture", "style", "fabric", "shape", "part"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub users: usize,
    pub tops: usize,
    pub bottoms: usize,
    pub outfits_per_user: usize,
    pub groups: usize,
    pub elements_per_group: usize,
    pub category_dim: usize,
    pub color_dim: usize,
    /// Number of text-only style classes.
    pub styles: usize,
    pub filler_vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a group's dominant element is named in the tokens.
    pub text_attr_prob: f64,
    /// Probability of a weak second activation inside a group.
    pub secondary_prob: f64,
    pub informative_groups: usize,
    pub latent_dim: usize,
    pub mu: f64,
    pub text_weight: f64,
    /// Standard deviation of the Gaussian noise added to planted scores.
    pub noise: f64,
    /// Candidate pool per outfit; 0 means every bottom.
    pub pool_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 200,
            tops: 500,
            bottoms: 500,
            outfits_per_user: 100,
            groups: 5,
            elements_per_group: 8,
            category_dim: 4,
            color_dim: super::DEFAULT_COLOR_DIM,
            styles: 6,
            filler_vocab: 40,
            min_tokens: 6,
            max_tokens: 10,
            text_attr_prob: 0.3,
            secondary_prob: 0.25,
            informative_groups: 3,
            latent_dim: 8,
            mu: 0.5,
            text_weight: 1.0,
            noise: 0.1,
            pool_size: 0,
        }
    }
}

impl SynthSpec {
    pub fn vocab_size(&self) -> usize {
        self.groups * self.elements_per_group + self.styles + self.filler_vocab
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("users", self.users),
            ("tops", self.tops),
            ("bottoms", self.bottoms),
            ("outfits_per_user", self.outfits_per_user),
            ("groups", self.groups),
            ("elements_per_group", self.elements_per_group),
            ("category_dim", self.category_dim),
            ("styles", self.styles),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise must be >= 0, got {}", self.noise)));
        }
        if self.outfits_per_user > self.tops {
            return Err(Error::InvalidConfig(format!(
                "outfits_per_user ({}) exceeds the number of tops ({})",
                self.outfits_per_user, self.tops
            )));
        }
        if self.informative_groups > self.groups {
            return Err(Error::InvalidConfig("informative_groups exceeds groups".into()));
        }
        if self.min_tokens > self.max_tokens {
            return Err(Error::InvalidConfig("min_tokens exceeds max_tokens".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig("mu must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> AttributeSchema {
        let groups = (0..self.groups)
            .map(|q| {
                let name = GROUP_NAMES
                    .get(q)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("group{q}"));
                AttributeGroup {
                    elements: (0..self.elements_per_group)
                        .map(|e| format!("{name}_{e}"))
                        .collect(),
                    name,
                }
            })
            .collect();
        AttributeSchema {
            groups,
            color_dim: self.color_dim,
            category_dim: self.category_dim,
        }
    }
}

/// All parameters the generator drew; enough to recompute every planted
/// score from the item files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub spec: SynthSpec,
    pub seed: u64,
    /// One flag per attribute group: does it enter the planted scores?
    pub informative: Vec<bool>,
    /// Per group, an elements x elements top/bottom interaction matrix.
    pub group_compat: Vec<Vec<Vec<f64>>>,
    /// styles x styles interaction, already scaled by `text_weight`.
    pub style_compat: Vec<Vec<f64>>,
    pub user_factors: Vec<Vec<f64>>,
    /// Indexed by bottom position.
    pub bottom_bias: Vec<f64>,
    /// One latent row per group element.
    pub element_factors: Vec<Vec<f64>>,
    pub style_factors: Vec<Vec<f64>>,
    /// Hidden style class of every item, by id.
    pub item_styles: BTreeMap<String, usize>,
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * { let z: f64 = StandardNormal.sample(&mut *rng); z })
        .collect::<Vec<f64>>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PlantedTruth {
    fn style(&self, id: &str) -> usize {
        self.item_styles[id]
    }

    fn compat_items(&self, top: &ItemRecord, bottom: &ItemRecord) -> f64 {
        let e = self.spec.elements_per_group;
        let mut s = 0.0;
        for (q, c) in self.group_compat.iter().enumerate() {
            if !self.informative[q] {
                continue;
            }
            let off = q * e;
            for a in 0..e {
                let ta = top.attr_vec[off + a];
                if ta == 0.0 {
                    continue;
                }
                for b in 0..e {
                    s += ta * c[a][b] * bottom.attr_vec[off + b];
                }
            }
        }
        s + self.style_compat[self.style(&top.id)][self.style(&bottom.id)]
    }

    fn pref_content(&self, bottom: &ItemRecord) -> Vec<f64> {
        let mut v = self.style_factors[self.style(&bottom.id)].clone();
        let n_elem = self.element_factors.len();
        for (d, &a) in bottom.attr_vec[..n_elem].iter().enumerate() {
            if a != 0.0 {
                for (vk, f) in v.iter_mut().zip(&self.element_factors[d]) {
                    *vk += a * f;
                }
            }
        }
        v
    }

    /// User-independent planted compatibility of top `i` and bottom `j`.
    pub fn planted_compat(&self, data: &Dataset, i: usize, j: usize) -> f64 {
        self.compat_items(data.top(i), data.bottom(j))
    }

    pub fn planted_pref(&self, data: &Dataset, m: usize, j: usize) -> f64 {
        self.bottom_bias[j] + dot(&self.user_factors[m], &self.pref_content(data.bottom(j)))
    }

    pub fn planted_score(&self, data: &Dataset, m: usize, i: usize, j: usize) -> f64 {
        let mu = self.spec.mu;
        mu * self.planted_compat(data, i, j) + (1.0 - mu) * self.planted_pref(data, m, j)
    }
}

/// Scores with the planted parameters (the noiseless oracle).
pub struct PlantedScorer<'a> {
    truth: &'a PlantedTruth,
    data: &'a Dataset,
    pref: Vec<Vec<f64>>,
}

impl<'a> PlantedScorer<'a> {
    pub fn new(truth: &'a PlantedTruth, data: &'a Dataset) -> Self {
        let contents: Vec<Vec<f64>> = (0..data.n_bottoms())
            .map(|j| truth.pref_content(data.bottom(j)))
            .collect();
        let pref = (0..data.n_users())
            .map(|m| {
                contents
                    .iter()
                    .enumerate()
                    .map(|(j, c)| truth.bottom_bias[j] + dot(&truth.user_factors[m], c))
                    .collect()
            })
            .collect();
        PlantedScorer { truth, data, pref }
    }
}

impl Scorer for PlantedScorer<'_> {
    fn score(&self, user: usize, top: usize, bottom: usize) -> f64 {
        let mu = self.truth.spec.mu;
        mu * self.truth.planted_compat(self.data, top, bottom)
            + (1.0 - mu) * self.pref[user][bottom]
    }
}

fn make_item(
    spec: &SynthSpec,
    rng: &mut Rng,
    id: String,
    kind: ItemKind,
    style: usize,
) -> ItemRecord {
    let e = spec.elements_per_group;
    let schema_dim = spec.groups * e + spec.category_dim + spec.color_dim;
    let mut attr = vec![0.0; schema_dim];
    let mut tokens = Vec::new();
    for q in 0..spec.groups {
        let dominant = rng.random_range(0..e);
        attr[q * e + dominant] = rng.random_range(0.7..=1.0);
        if e > 1 && rng.random::<f64>() < spec.secondary_prob {
            let mut other = rng.random_range(0..e - 1);
            if other >= dominant {
                other += 1;
            }
            attr[q * e + other] = rng.random_range(0.05..0.3);
        }
        if rng.random::<f64>() < spec.text_attr_prob {
            tokens.push((q * e + dominant) as u32);
        }
    }
    let category_index = rng.random_range(0..spec.category_dim);
    attr[spec.groups * e + category_index] = 1.0;
    if spec.color_dim > 0 {
        let raw: Vec<f64> = (0..spec.color_dim).map(|_| Exp1.sample(&mut *rng)).collect();
        let total: f64 = raw.iter().sum();
        let off = spec.groups * e + spec.category_dim;
        for (k, r) in raw.iter().enumerate() {
            attr[off + k] = r / total;
        }
    }
    let style_token = (spec.groups * e + style) as u32;
    tokens.push(style_token);
    let len = rng.random_range(spec.min_tokens..=spec.max_tokens).max(tokens.len());
    let filler_base = spec.groups * e + spec.styles;
    while tokens.len() < len {
        if spec.filler_vocab == 0 {
            tokens.push(style_token);
        } else {
            tokens.push((filler_base + rng.random_range(0..spec.filler_vocab)) as u32);
        }
    }
    tokens.shuffle(rng);
    ItemRecord {
        id,
        kind,
        category_index,
        attr_vec: attr,
        tokens,
    }
}

/// Builds a dataset whose outfits were chosen by the planted scorer: for
/// every (user, top) the positive bottom is the argmax of planted score plus
/// Gaussian noise over the candidate pool.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Dataset, PlantedTruth)> {
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    let e = spec.elements_per_group;
    let k = spec.latent_dim;

    let mut informative = vec![false; spec.groups];
    for q in index::sample(&mut rng, spec.groups, spec.informative_groups) {
        informative[q] = true;
    }
    let group_compat = informative
        .iter()
        .map(|&inf| {
            (0..e)
                .map(|_| normal_vec(&mut rng, e, if inf { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let style_compat = (0..spec.styles)
        .map(|_| normal_vec(&mut rng, spec.styles, spec.text_weight))
        .collect();
    let user_factors = (0..spec.users)
        .map(|_| normal_vec(&mut rng, k, 1.0 / (k as f64).sqrt()))
        .collect();
    let bottom_bias = normal_vec(&mut rng, spec.bottoms, 0.5);
    let element_factors = (0..spec.groups * e)
        .map(|d| normal_vec(&mut rng, k, if informative[d / e] { 1.0 } else { 0.0 }))
        .collect();
    let style_factors = (0..spec.styles)
        .map(|_| normal_vec(&mut rng, k, 1.0))
        .collect();

    let mut items = Vec::with_capacity(spec.tops + spec.bottoms);
    let mut item_styles = BTreeMap::new();
    for (kind, count, prefix) in [(ItemKind::Top, spec.tops, 't'), (ItemKind::Bottom, spec.bottoms, 'b')] {
        for n in 0..count {
            let id = format!("{prefix}{n:05}");
            let style = rng.random_range(0..spec.styles);
            item_styles.insert(id.clone(), style);
            items.push(make_item(spec, &mut rng, id, kind, style));
        }
    }

    let truth = PlantedTruth {
        spec: spec.clone(),
        seed,
        informative,
        group_compat,
        style_compat,
        user_factors,
        bottom_bias,
        element_factors,
        style_factors,
        item_styles,
    };

    let placeholder_users: Vec<UserHistory> = (0..spec.users)
        .map(|u| UserHistory {
            id: format!("u{u:05}"),
            outfits: Vec::new(),
        })
        .collect();
    let shell = Dataset::new(spec.schema(), items, placeholder_users)?;

    let compat: Vec<Vec<f64>> = (0..shell.n_tops())
        .map(|i| (0..shell.n_bottoms()).map(|j| truth.planted_compat(&shell, i, j)).collect())
        .collect();
    let scorer = PlantedScorer::new(&truth, &shell);

    let mu = spec.mu;
    let n_b = shell.n_bottoms();
    let mut outfits = Vec::with_capacity(spec.users);
    for m in 0..spec.users {
        let tops = index::sample(&mut rng, shell.n_tops(), spec.outfits_per_user);
        let mut chosen = Vec::with_capacity(spec.outfits_per_user);
        for i in tops.iter() {
            let pool: Vec<usize> = if spec.pool_size == 0 || spec.pool_size >= n_b {
                (0..n_b).collect()
            } else {
                index::sample(&mut rng, n_b, spec.pool_size).into_vec()
            };
            let mut best = (f64::NEG_INFINITY, 0);
            for j in pool {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let s = mu * compat[i][j] + (1.0 - mu) * scorer.pref[m][j] + spec.noise * eps;
                if s > best.0 {
                    best = (s, j);
                }
            }
            chosen.push(super::Outfit { top: i, bottom: best.1 });
        }
        outfits.push(chosen);
    }
    Ok((shell.with_outfits(outfits), truth))
}
