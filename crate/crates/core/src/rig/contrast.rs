use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::nn::{log_sum_exp, Anchor, ContrastSets, NORM_EPS};

/// Lloyd's k-means with k-means++ seeding. Returns one cluster id per row.
/// A cluster that loses all its points is re-seeded at the point farthest
/// from its current centroid.
pub fn kmeans(points: &Array2<f64>, k: usize, iters: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.nrows();
    assert!(k >= 1, "k must be positive");
    if n == 0 {
        return Vec::new();
    }
    let dist2 = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();

    let mut centers = Array2::zeros((k, points.ncols()));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(points.row(i), centers.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = dist2(points.row(i), centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &points.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist2(points.row(a), centers.row(c)).total_cmp(&dist2(points.row(b), centers.row(c))))
                    .expect("non-empty");
                log::warn!("k-means cluster {c} emptied; re-seeding from point {far}");
                centers.row_mut(c).assign(&points.row(far));
                assign[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Per-sample facts about the training split used to pick contrast partners.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInfo {
    pub label: usize,
    pub cluster: usize,
    /// Whether the assistant classified the sample correctly.
    pub correct: bool,
}

/// Contrast sets for a batch given as rows `0..infos.len()`.
///
/// Candidates share the anchor's label but sit in another cluster. Among
/// them, partners on the other side of the assistant's correct/incorrect
/// split are preferred. Negatives are all rows with a different label.
/// Anchors without candidates or negatives are skipped.
pub fn sample_contrast_sets(infos: &[SampleInfo]) -> ContrastSets {
    let mut anchors = Vec::new();
    for (i, a) in infos.iter().enumerate() {
        let pool: Vec<usize> = infos
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != i && b.label == a.label && b.cluster != a.cluster)
            .map(|(j, _)| j)
            .collect();
        let negatives: Vec<usize> = infos.iter().enumerate().filter(|(_, b)| b.label != a.label).map(|(j, _)| j).collect();
        if pool.is_empty() || negatives.is_empty() {
            continue;
        }
        let crossed: Vec<usize> = pool.iter().copied().filter(|&j| infos[j].correct != a.correct).collect();
        let positives = if crossed.is_empty() { pool } else { crossed };
        anchors.push(Anchor { index: i, positives, negatives });
    }
    ContrastSets { anchors }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_EPS;
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_EPS;
    dot / (na * nb)
}

/// Reference contrastive loss for one anchor: the mean over positives of
/// `-log(e^{s_p} / (e^{s_p} + sum_n e^{s_n}))` with `s = cos / tau`.
pub fn contrastive_loss(anchor: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> f64 {
    assert!(!positives.is_empty() && !negatives.is_empty(), "need a positive and a negative");
    let neg: Vec<f64> = negatives.iter().map(|n| cosine(anchor, n) / tau).collect();
    let total: f64 = positives
        .iter()
        .map(|p| {
            let sp = cosine(anchor, p) / tau;
            log_sum_exp(neg.iter().copied().chain([sp])) - sp
        })
        .sum();
    total / positives.len() as f64
}
