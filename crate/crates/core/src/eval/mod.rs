//! Ranking metrics (pairwise AUC, MRR over sampled candidates) and the
//! popularity and random baselines.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Quadruplet};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_CANDIDATES: usize = 10;

/// Anything that assigns a fused score to `(user, top, bottom)` indices.
pub trait Scorer {
    fn score(&self, user: usize, top: usize, bottom: usize) -> f64;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, user: usize, top: usize, bottom: usize) -> f64 {
        (**self).score(user, top, bottom)
    }
}

/// Fraction of quadruplets where the positive outscores the negative; ties
/// count one half.
pub fn auc(scorer: &dyn Scorer, quadruplets: &[Quadruplet]) -> Result<f64> {
    if quadruplets.is_empty() {
        return Err(Error::InvalidData("AUC over an empty quadruplet list".into()));
    }
    let mut wins = 0u64;
    let mut ties = 0u64;
    for q in quadruplets {
        let pos = scorer.score(q.user, q.top, q.pos);
        let neg = scorer.score(q.user, q.top, q.neg);
        match pos.partial_cmp(&neg) {
            Some(Ordering::Greater) => wins += 1,
            Some(Ordering::Equal) => ties += 1,
            _ => {}
        }
    }
    Ok((wins as f64 + 0.5 * ties as f64) / quadruplets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bottom: usize,
    pub bottom_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub user: usize,
    pub top: usize,
    /// Best first; equal scores ordered by ascending bottom id.
    pub candidates: Vec<Candidate>,
    /// 1-based rank of the positive, when one was supplied.
    pub positive_rank: Option<usize>,
}

/// Scores and sorts `candidates` for the query `(user, top)`.
pub fn rank_candidates(
    scorer: &dyn Scorer,
    data: &Dataset,
    user: usize,
    top: usize,
    candidates: &[usize],
    positive: Option<usize>,
) -> RankingResult {
    let mut scored: Vec<Candidate> = candidates
        .iter()
        .map(|&b| Candidate {
            bottom: b,
            bottom_id: data.bottom(b).id.clone(),
            score: scorer.score(user, top, b),
        })
        .collect();
    // Bottom indices follow id order, so the index is the id tie-break.
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.bottom.cmp(&b.bottom)));
    let positive_rank = positive.and_then(|p| scored.iter().position(|c| c.bottom == p).map(|r| r + 1));
    RankingResult {
        user,
        top,
        candidates: scored,
        positive_rank,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrrReport {
    pub mrr: f64,
    pub n_queries: usize,
    pub candidates: usize,
}

/// Mean reciprocal rank of each test outfit's bottom among itself and
/// `t - 1` other bottoms drawn without replacement.
pub fn mrr(scorer: &dyn Scorer, test: &Dataset, t: usize, seed: u64) -> Result<MrrReport> {
    let n_b = test.n_bottoms();
    if t < 2 {
        return Err(Error::InvalidConfig(format!("MRR needs at least 2 candidates, got {t}")));
    }
    if t > n_b {
        return Err(Error::InvalidConfig(format!(
            "{t} candidates requested but only {n_b} bottoms exist"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    let mut n = 0usize;
    let mut cands = Vec::with_capacity(t);
    for m in 0..test.n_users() {
        for o in test.user_outfits(m) {
            cands.clear();
            cands.push(o.bottom);
            for r in index::sample(&mut rng, n_b - 1, t - 1).iter() {
                cands.push(if r >= o.bottom { r + 1 } else { r });
            }
            let pos = scorer.score(m, o.top, o.bottom);
            // rank = 1 + candidates sorted ahead of the positive
            let ahead = cands[1..]
                .iter()
                .filter(|&&b| {
                    let s = scorer.score(m, o.top, b);
                    s > pos || (s == pos && b < o.bottom)
                })
                .count();
            total += 1.0 / (ahead + 1) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidData("MRR over a dataset with no outfits".into()));
    }
    Ok(MrrReport {
        mrr: total / n as f64,
        n_queries: n,
        candidates: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Number of training outfits containing the bottom.
    PopT,
    /// Number of distinct training users who wore the bottom.
    PopU,
    /// Seeded uniform score per (user, top, bottom).
    Rand,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::PopT => "pop_t",
            BaselineKind::PopU => "pop_u",
            BaselineKind::Rand => "rand",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineScorer {
    kind: BaselineKind,
    seed: u64,
    popularity: Vec<f64>,
}

pub fn baseline_score(kind: BaselineKind, train: &Dataset, seed: u64) -> BaselineScorer {
    let mut popularity = vec![0.0; train.n_bottoms()];
    match kind {
        BaselineKind::PopT => {
            for m in 0..train.n_users() {
                for o in train.user_outfits(m) {
                    popularity[o.bottom] += 1.0;
                }
            }
        }
        BaselineKind::PopU => {
            for m in 0..train.n_users() {
                let worn: HashSet<usize> = train.user_outfits(m).iter().map(|o| o.bottom).collect();
                for b in worn {
                    popularity[b] += 1.0;
                }
            }
        }
        BaselineKind::Rand => {}
    }
    BaselineScorer {
        kind,
        seed,
        popularity,
    }
}

impl Scorer for BaselineScorer {
    fn score(&self, user: usize, top: usize, bottom: usize) -> f64 {
        match self.kind {
            BaselineKind::Rand => rng::hash_uniform(self.seed, &[user as u64, top as u64, bottom as u64]),
            _ => self.popularity.get(bottom).copied().unwrap_or(0.0),
        }
    }
}

/// Evaluation summary written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scorer: String,
    pub auc: f64,
    pub mrr: f64,
    #[serde(rename = "T")]
    pub candidates: usize,
    pub n_quadruplets: usize,
    pub n_queries: usize,
    pub seed: u64,
    pub checkpoint_sha256: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_quadruplets, ItemKind, UserHistory};
    use crate::dataset::fixtures::{item, tiny_schema};
    use proptest::prelude::*;
    use rand::Rng as _;

    struct Table(Vec<Vec<Vec<f64>>>);

    impl Scorer for Table {
        fn score(&self, u: usize, t: usize, b: usize) -> f64 {
            self.0[u][t][b]
        }
    }

    struct Const;

    impl Scorer for Const {
        fn score(&self, _: usize, _: usize, _: usize) -> f64 {
            1.0
        }
    }

    fn fixture(n_users: usize, n_tops: usize, n_bottoms: usize) -> Dataset {
        let mut items = Vec::new();
        for t in 0..n_tops {
            items.push(item(&format!("t{t:03}"), ItemKind::Top, t));
        }
        for b in 0..n_bottoms {
            items.push(item(&format!("b{b:03}"), ItemKind::Bottom, b + 100));
        }
        let users = (0..n_users)
            .map(|u| UserHistory {
                id: format!("u{u:03}"),
                outfits: (0..n_tops.min(5))
                    .map(|t| (format!("t{t:03}"), format!("b{:03}", (t * 7 + u) % n_bottoms)))
                    .collect(),
            })
            .collect();
        Dataset::new(tiny_schema(), items, users).unwrap()
    }

    fn random_table(d: &Dataset, seed: u64, levels: u32) -> Table {
        let mut r = rng::seeded(seed);
        Table(
            (0..d.n_users())
                .map(|_| {
                    (0..d.n_tops())
                        .map(|_| (0..d.n_bottoms()).map(|_| r.random_range(0..levels) as f64).collect())
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn constant_scorer_gives_half() {
        let d = fixture(3, 5, 8);
        let q = sample_quadruplets(&d, 2, 1).unwrap();
        assert_eq!(auc(&Const, &q).unwrap(), 0.5);
        assert!(auc(&Const, &[]).is_err());
    }

    #[test]
    fn matches_brute_force_count() {
        let d = fixture(4, 5, 9);
        let q = sample_quadruplets(&d, 5, 3).unwrap();
        assert_eq!(q.len(), 100);
        let s = random_table(&d, 8, 4);
        let mut twice = 0u32;
        for x in &q {
            let (a, b) = (s.0[x.user][x.top][x.pos], s.0[x.user][x.top][x.neg]);
            twice += if a > b { 2 } else if a == b { 1 } else { 0 };
        }
        assert_eq!(auc(&s, &q).unwrap(), twice as f64 / 200.0);
    }

    #[test]
    fn perfect_scorer_mrr_is_one() {
        let d = fixture(3, 5, 12);
        struct Oracle<'a>(&'a Dataset);
        impl Scorer for Oracle<'_> {
            fn score(&self, u: usize, t: usize, b: usize) -> f64 {
                let hit = self.0.user_outfits(u).iter().any(|o| o.top == t && o.bottom == b);
                if hit { 1.0 } else { 0.0 }
            }
        }
        let r = mrr(&Oracle(&d), &d, 10, 4).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.n_queries, 15);
        assert!(mrr(&Oracle(&d), &d, 13, 4).is_err());
    }

    #[test]
    fn rank_candidates_sorts_and_ties_by_id() {
        let d = fixture(1, 2, 5);
        let s = Table(vec![vec![vec![0.5, 0.9, 0.5, 0.1, 0.9]; 2]]);
        let r = rank_candidates(&s, &d, 0, 1, &[0, 1, 2, 3, 4], Some(2));
        let order: Vec<usize> = r.candidates.iter().map(|c| c.bottom).collect();
        assert_eq!(order, vec![1, 4, 0, 2, 3]);
        assert_eq!(r.positive_rank, Some(4));
    }

    #[test]
    fn pop_t_and_pop_u_differ() {
        // b000: 3 users over 10 outfits; b001: 4 users, one outfit each
        let mut items: Vec<_> = (0..10).map(|t| item(&format!("t{t:03}"), ItemKind::Top, t)).collect();
        items.push(item("b000", ItemKind::Bottom, 50));
        items.push(item("b001", ItemKind::Bottom, 51));
        let outfits = |n: usize, b: &str| (0..n).map(|t| (format!("t{t:03}"), b.to_string())).collect::<Vec<_>>();
        let mut users = vec![
            UserHistory { id: "u0".into(), outfits: outfits(4, "b000") },
            UserHistory { id: "u1".into(), outfits: outfits(3, "b000") },
            UserHistory { id: "u2".into(), outfits: outfits(3, "b000") },
            UserHistory { id: "u3".into(), outfits: outfits(1, "b001") },
        ];
        users[0].outfits.push(("t009".into(), "b001".into()));
        users[1].outfits.push(("t009".into(), "b001".into()));
        users[2].outfits.push(("t009".into(), "b001".into()));
        let d = Dataset::new(tiny_schema(), items, users).unwrap();
        let pop_t = baseline_score(BaselineKind::PopT, &d, 0);
        let pop_u = baseline_score(BaselineKind::PopU, &d, 0);
        assert!(pop_t.score(0, 0, 0) > pop_t.score(0, 0, 1));
        assert!(pop_u.score(0, 0, 1) > pop_u.score(0, 0, 0));
        for t in 0..10 {
            assert_eq!(pop_t.score(2, t, 0), pop_t.score(0, 0, 0));
            assert_eq!(pop_u.score(2, t, 1), pop_u.score(0, 0, 1));
        }
    }

    #[test]
    fn rand_is_stable_per_triple() {
        let d = fixture(2, 3, 4);
        let r = baseline_score(BaselineKind::Rand, &d, 9);
        assert_eq!(r.score(1, 2, 3), r.score(1, 2, 3));
        assert_ne!(r.score(1, 2, 3), r.score(1, 2, 2));
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(seed in 0u64..5000) {
            let d = fixture(3, 5, 9);
            let q = sample_quadruplets(&d, 3, seed).unwrap();
            let base = random_table(&d, seed, 6);
            let map = |f: fn(f64) -> f64| Table(base.0.iter().map(|u| u.iter().map(|t| t.iter().map(|&v| f(v)).collect()).collect()).collect());
            let a = auc(&base, &q).unwrap();
            prop_assert_eq!(a, auc(&map(|x| 2.0 * x + 7.0), &q).unwrap());
            prop_assert_eq!(a, auc(&map(f64::tanh), &q).unwrap());
        }

        #[test]
        fn mrr_bounds(seed in 0u64..5000, t in 2usize..9) {
            let d = fixture(3, 5, 9);
            let r = mrr(&random_table(&d, seed, 3), &d, t, seed).unwrap();
            prop_assert!(r.mrr >= 1.0 / t as f64 - 1e-12 && r.mrr <= 1.0);
        }
    }
}
