use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ItemRecord};
use crate::error::{Error, Result};
use crate::eval::Scorer;

/// Which pairs to score. Rows come from `top`; the scored sample set pairs
/// every bottom with `top` and with each of `context_tops`, so that
/// co-activations vary along both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationQuery {
    pub user: usize,
    pub top: usize,
    pub bottoms: Vec<usize>,
    pub context_tops: Vec<usize>,
    pub top_k: usize,
    pub bottom_k: usize,
}

impl CorrelationQuery {
    pub fn new(user: usize, top: usize, bottoms: Vec<usize>) -> Self {
        CorrelationQuery {
            user,
            top,
            bottoms,
            context_tops: Vec::new(),
            top_k: 6,
            bottom_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Attribute-vector dimensions of the selected top elements.
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `values[r][c]`, Pearson correlation in [-1, 1].
    pub values: Vec<Vec<f64>>,
    /// Entries whose co-activation or score had zero variance (reported as 0).
    pub zero_variance: Vec<Vec<bool>>,
    pub sample_count: usize,
}

impl CorrelationMatrix {
    /// Per bottom element, the sum of its correlations with every top element.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.col_dims.len())
            .map(|c| self.values.iter().map(|row| row[c]).sum())
            .collect()
    }

    /// Position `(row, col)` of the largest entry; ties go to the first in
    /// row-major order.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (r, row) in self.values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some(((r, c), v));
                }
            }
        }
        best.map(|(rc, _)| rc)
    }

    pub fn is_empty(&self) -> bool {
        self.row_dims.is_empty() || self.col_dims.is_empty()
    }
}

/// The `k` strongest positive group-element activations, strongest first,
/// ties to the lower dimension.
fn strongest(item: &ItemRecord, n_elements: usize, k: usize) -> Vec<usize> {
    let mut dims: Vec<usize> = (0..n_elements).filter(|&d| item.attr_vec[d] > 0.0).collect();
    dims.sort_by(|&a, &b| item.attr_vec[b].total_cmp(&item.attr_vec[a]).then(a.cmp(&b)));
    dims.truncate(k);
    dims
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation, across scored (top, bottom) pairs, between each
/// top/bottom element co-activation and the model score.
pub fn attribute_correlation(scorer: &dyn Scorer, data: &Dataset, query: &CorrelationQuery) -> Result<CorrelationMatrix> {
    if query.bottoms.len() < 2 {
        return Err(Error::InvalidData(format!(
            "attribute correlation needs at least 2 bottoms, got {}",
            query.bottoms.len()
        )));
    }
    if query.user >= data.n_users() {
        return Err(Error::IndexOutOfRange(format!("user {} of {}", query.user, data.n_users())));
    }
    let tops: Vec<usize> = std::iter::once(query.top).chain(query.context_tops.iter().copied()).collect();
    if let Some(&t) = tops.iter().find(|&&t| t >= data.n_tops()) {
        return Err(Error::IndexOutOfRange(format!("top {t} of {}", data.n_tops())));
    }
    if let Some(&b) = query.bottoms.iter().find(|&&b| b >= data.n_bottoms()) {
        return Err(Error::IndexOutOfRange(format!("bottom {b} of {}", data.n_bottoms())));
    }
    let schema = data.schema();
    let n_elem = schema.element_dim();
    let row_dims = strongest(data.top(query.top), n_elem, query.top_k);
    let col_dims: Vec<usize> = query
        .bottoms
        .iter()
        .flat_map(|&b| strongest(data.bottom(b), n_elem, query.bottom_k))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let pairs: Vec<(usize, usize)> = tops
        .iter()
        .flat_map(|&t| query.bottoms.iter().map(move |&b| (t, b)))
        .collect();
    let scores: Vec<f64> = pairs.iter().map(|&(t, b)| scorer.score(query.user, t, b)).collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of pair {:?}", pairs[i])));
    }

    let mut values = vec![vec![0.0; col_dims.len()]; row_dims.len()];
    let mut zero_variance = vec![vec![false; col_dims.len()]; row_dims.len()];
    let mut co = vec![0.0; pairs.len()];
    for (r, &et) in row_dims.iter().enumerate() {
        for (c, &eb) in col_dims.iter().enumerate() {
            for (v, &(t, b)) in co.iter_mut().zip(&pairs) {
                *v = data.top(t).attr_vec[et] * data.bottom(b).attr_vec[eb];
            }
            match pearson(&co, &scores) {
                Some(rho) => values[r][c] = rho,
                None => zero_variance[r][c] = true,
            }
        }
    }
    let label = |d: usize| schema.label(d).map(|l| l.element).unwrap_or_else(|| format!("dim_{d}"));
    Ok(CorrelationMatrix {
        row_labels: row_dims.iter().map(|&d| label(d)).collect(),
        col_labels: col_dims.iter().map(|&d| label(d)).collect(),
        row_dims,
        col_dims,
        values,
        zero_variance,
        sample_count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthSpec};
    use proptest::prelude::*;

    fn data(seed: u64) -> Dataset {
        let spec = SynthSpec {
            users: 2,
            tops: 30,
            bottoms: 30,
            outfits_per_user: 3,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec, seed).unwrap().0
    }

    /// Rewards only the co-occurrence of one top element and one bottom element.
    struct PairScorer<'a> {
        data: &'a Dataset,
        x: usize,
        y: usize,
        scale: f64,
        shift: f64,
    }

    impl Scorer for PairScorer<'_> {
        fn score(&self, _: usize, i: usize, j: usize) -> f64 {
            self.scale * self.data.top(i).attr_vec[self.x] * self.data.bottom(j).attr_vec[self.y] + self.shift
        }
    }

    fn query_with(d: &Dataset, x: usize) -> CorrelationQuery {
        let top = (0..d.n_tops()).find(|&t| d.top(t).attr_vec[x] > 0.5).unwrap();
        CorrelationQuery {
            context_tops: (0..d.n_tops()).filter(|&t| t != top).take(15).collect(),
            ..CorrelationQuery::new(0, top, (0..20).collect())
        }
    }

    #[test]
    fn planted_pair_is_maximum() {
        let d = data(1);
        let (x, y) = (2, 8 + 5);
        let s = PairScorer { data: &d, x, y, scale: 1.0, shift: 0.0 };
        let mut q = query_with(&d, x);
        q.bottom_k = 8;
        let m = attribute_correlation(&s, &d, &q).unwrap();
        assert_eq!(m.values.len(), m.row_dims.len());
        let (r, c) = m.argmax().unwrap();
        assert_eq!((m.row_dims[r], m.col_dims[c]), (x, y));
        assert!((m.values[r][c] - 1.0).abs() < 1e-12);
        assert_eq!(m.sample_count, 16 * 20);
    }

    #[test]
    fn identical_bottoms_are_all_flagged() {
        let d = data(2);
        let s = PairScorer { data: &d, x: 0, y: 8, scale: 1.0, shift: 0.0 };
        let q = CorrelationQuery::new(0, 0, vec![3, 3, 3]);
        let m = attribute_correlation(&s, &d, &q).unwrap();
        assert!(!m.is_empty());
        assert!(m.zero_variance.iter().flatten().all(|&f| f));
        assert!(m.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn one_bottom_is_an_error() {
        let d = data(3);
        let s = PairScorer { data: &d, x: 0, y: 8, scale: 1.0, shift: 0.0 };
        let q = CorrelationQuery::new(0, 0, vec![1]);
        assert!(matches!(attribute_correlation(&s, &d, &q), Err(Error::InvalidData(_))));
    }

    #[test]
    fn rows_are_the_strongest_top_elements() {
        let d = data(4);
        let s = PairScorer { data: &d, x: 0, y: 8, scale: 1.0, shift: 0.0 };
        let m = attribute_correlation(&s, &d, &CorrelationQuery::new(0, 5, (0..10).collect())).unwrap();
        assert!(m.row_dims.len() <= 6 && !m.row_dims.is_empty());
        let a = &d.top(5).attr_vec;
        assert!(m.row_dims.windows(2).all(|w| a[w[0]] >= a[w[1]]));
        assert!(m.col_dims.windows(2).all(|w| w[0] < w[1]));
        assert!(m.values.iter().flatten().all(|v| v.abs() <= 1.0));
    }

    proptest! {
        #[test]
        fn affine_rescaling_leaves_entries(seed in 0u64..50) {
            let d = data(seed);
            let base = PairScorer { data: &d, x: 1, y: 10, scale: 1.0, shift: 0.0 };
            let scaled = PairScorer { data: &d, x: 1, y: 10, scale: 3.0, shift: 1.0 };
            let q = CorrelationQuery {
                context_tops: (1..12).collect(),
                ..CorrelationQuery::new(0, 0, (0..15).collect())
            };
            let a = attribute_correlation(&base, &d, &q).unwrap();
            let b = attribute_correlation(&scaled, &d, &q).unwrap();
            prop_assert_eq!(&a.zero_variance, &b.zero_variance);
            for (ra, rb) in a.values.iter().zip(&b.values) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
