use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, Outfit};
use crate::error::{Error, Result};
use crate::rng;

/// Training atom: user `user` prefers bottom `pos` over bottom `neg` for
/// top `top`. Indices refer to the dataset's user/top/bottom orderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruplet {
    pub user: usize,
    pub top: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Emits `negatives_per_positive` quadruplets per outfit, negatives drawn
/// uniformly from all bottoms except the positive.
pub fn sample_quadruplets(
    dataset: &Dataset,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<Quadruplet>> {
    let n_b = dataset.n_bottoms();
    if n_b < 2 {
        return Err(Error::InvalidData(format!(
            "negative sampling needs at least 2 bottoms, dataset has {n_b}"
        )));
    }
    if negatives_per_positive == 0 {
        return Err(Error::InvalidConfig("negatives_per_positive must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(dataset.total_outfits() * negatives_per_positive);
    for m in 0..dataset.n_users() {
        for o in dataset.user_outfits(m) {
            for _ in 0..negatives_per_positive {
                let r = rng.random_range(0..n_b - 1);
                let neg = if r >= o.bottom { r + 1 } else { r };
                out.push(Quadruplet {
                    user: m,
                    top: o.top,
                    pos: o.bottom,
                    neg,
                });
            }
        }
    }
    Ok(out)
}

/// Number of training outfits kept for a user with `n` outfits: the test
/// share is rounded down.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // The epsilon absorbs representation error in (1 - f), e.g. 10 * 0.2.
    let test = ((n as f64) * (1.0 - train_fraction) + 1e-9).floor() as usize;
    n - test.min(n.saturating_sub(1))
}

/// Per-user random split of outfit histories. Each part keeps the original
/// relative order of outfits.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut train = Vec::with_capacity(dataset.n_users());
    let mut test = Vec::with_capacity(dataset.n_users());
    for m in 0..dataset.n_users() {
        let outfits = dataset.user_outfits(m);
        let n = outfits.len();
        let n_test = n - train_count(n, train_fraction);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut is_test = vec![false; n];
        for &p in &order[..n_test] {
            is_test[p] = true;
        }
        let (te, tr): (Vec<(usize, &Outfit)>, Vec<(usize, &Outfit)>) =
            outfits.iter().enumerate().partition(|(p, _)| is_test[*p]);
        train.push(tr.into_iter().map(|(_, o)| *o).collect());
        test.push(te.into_iter().map(|(_, o)| *o).collect());
    }
    Ok((dataset.with_outfits(train), dataset.with_outfits(test)))
}
