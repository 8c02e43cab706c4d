//! K-means color quantization into a luminance-ordered occupancy histogram.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

const MAX_ITERS: usize = 100;
const TOLERANCE: f64 = 1e-6;

/// Normalized cluster occupancy, clusters ordered by centroid luminance.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorVector(Vec<f64>);

impl ColorVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidData("color entries must lie in [0, 1]".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!("color histogram sums to {total}")));
        }
        Ok(ColorVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(p, centroid);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Weighted k-means++ seeding over distinct colors. Stops early when every
/// remaining color already coincides with a centroid.
fn seed_centroids(colors: &[([f64; 3], f64)], k: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng::seeded(seed);
    let total: f64 = colors.iter().map(|(_, w)| w).sum();
    let mut target = rng.random::<f64>() * total;
    let mut first = colors.len() - 1;
    for (i, (_, w)) in colors.iter().enumerate() {
        if target < *w {
            first = i;
            break;
        }
        target -= w;
    }
    let mut centroids = vec![colors[first].0];
    let mut d2: Vec<f64> = colors.iter().map(|(c, _)| dist2(c, &centroids[0])).collect();
    while centroids.len() < k {
        let mass: f64 = colors.iter().zip(&d2).map(|((_, w), d)| w * d).sum();
        if mass <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * mass;
        let mut pick = None;
        for (i, ((_, w), d)) in colors.iter().zip(&d2).enumerate() {
            let m = w * d;
            if m > 0.0 {
                pick = Some(i);
                if target < m {
                    break;
                }
                target -= m;
            }
        }
        let Some(pick) = pick else { break };
        let c = colors[pick].0;
        centroids.push(c);
        for (d, (col, _)) in d2.iter_mut().zip(colors) {
            *d = d.min(dist2(col, &c));
        }
    }
    centroids
}

/// Clusters RGB pixels (components in [0, 1]) with k-means and returns the
/// share of pixels in each cluster.
///
/// Pixels are canonicalized (sorted and deduplicated with counts) before
/// clustering, so the result does not depend on pixel order. Non-empty
/// clusters come first in ascending centroid luminance; clusters that end up
/// empty (fewer distinct colors than `k`) contribute trailing zeros.
pub fn quantize_colors(pixels: &[[f64; 3]], k: usize, seed: u64) -> Result<ColorVector> {
    if pixels.is_empty() {
        return Err(Error::InvalidData("cannot quantize an empty pixel list".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if let Some(p) = pixels
        .iter()
        .find(|p| p.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0))
    {
        return Err(Error::InvalidData(format!("pixel {p:?} outside [0, 1]^3")));
    }

    let mut sorted = pixels.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite pixels"));
    let mut colors: Vec<([f64; 3], f64)> = Vec::new();
    for p in sorted {
        match colors.last_mut() {
            Some((c, w)) if *c == p => *w += 1.0,
            _ => colors.push((p, 1.0)),
        }
    }

    let mut centroids = seed_centroids(&colors, k, seed);
    let mut assign = vec![0usize; colors.len()];
    for _ in 0..MAX_ITERS {
        for (a, (c, _)) in assign.iter_mut().zip(&colors) {
            *a = nearest(c, &centroids);
        }
        let mut sums = vec![[0.0f64; 3]; centroids.len()];
        let mut weights = vec![0.0f64; centroids.len()];
        for (&a, (c, w)) in assign.iter().zip(&colors) {
            for i in 0..3 {
                sums[a][i] += w * c[i];
            }
            weights[a] += w;
        }
        let mut moved = 0.0f64;
        for (ci, centroid) in centroids.iter_mut().enumerate() {
            if weights[ci] > 0.0 {
                let next = [
                    sums[ci][0] / weights[ci],
                    sums[ci][1] / weights[ci],
                    sums[ci][2] / weights[ci],
                ];
                moved = moved.max(dist2(centroid, &next).sqrt());
                *centroid = next;
            }
        }
        if moved <= TOLERANCE {
            break;
        }
    }
    for (a, (c, _)) in assign.iter_mut().zip(&colors) {
        *a = nearest(c, &centroids);
    }

    let mut occupancy = vec![0.0f64; centroids.len()];
    for (&a, (_, w)) in assign.iter().zip(&colors) {
        occupancy[a] += w;
    }
    let mut order: Vec<usize> = (0..centroids.len()).filter(|&c| occupancy[c] > 0.0).collect();
    order.sort_by(|&a, &b| {
        luminance(&centroids[a])
            .partial_cmp(&luminance(&centroids[b]))
            .expect("finite centroids")
            .then(a.cmp(&b))
    });
    let n = pixels.len() as f64;
    let mut hist: Vec<f64> = order.iter().map(|&c| occupancy[c] / n).collect();
    hist.resize(k, 0.0);
    Ok(ColorVector(hist))
}
