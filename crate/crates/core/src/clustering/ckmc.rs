use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dist, silhouette_mean, ClusterInput, ClusterSet, StopReason};
use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 100;

/// Chosen partition plus the silhouette of every feasible k tried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmcOutcome {
    pub clusters: ClusterSet,
    pub k: usize,
    pub silhouettes: Vec<(usize, f64)>,
}

/// Constrained k-means with silhouette-selected k.
pub fn ckmc(input: &ClusterInput, k_range: (usize, usize), min_cluster_size: usize, seed: u64) -> Result<CkmcOutcome> {
    let (k_lo, k_hi) = k_range;
    if k_lo < 2 || k_lo > k_hi {
        return Err(Error::InvalidInput(format!(
            "k_range [{k_lo}, {k_hi}] must satisfy 2 <= lo <= hi"
        )));
    }
    if min_cluster_size == 0 {
        return Err(Error::InvalidInput("min_cluster_size must be >= 1".into()));
    }
    let x = input.prepared();
    let w = &input.weights;
    let n = x.len();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut silhouettes = Vec::new();
    for k in (k_lo..=k_hi).filter(|&k| n >= k * min_cluster_size) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut centroids = init_centroids(&x, w, k, &mut rng);
        let mut labels = lloyd(&x, w, &mut centroids);
        repair(&x, w, &mut labels, &mut centroids, min_cluster_size)?;
        let s = silhouette_mean(&x, w, &labels)?;
        silhouettes.push((k, s));
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, k, labels));
        }
    }
    let (_, k, labels) = best.ok_or_else(|| {
        Error::NoFeasibleK(format!(
            "{n} zones cannot hold clusters of size {min_cluster_size} for k in [{k_lo}, {k_hi}]"
        ))
    })?;
    Ok(CkmcOutcome {
        clusters: ClusterSet::from_labels(&labels, StopReason::Converged),
        k,
        silhouettes,
    })
}

fn init_centroids(x: &[Vec<f64>], w: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&c| dist(&x[i], &x[c], w))
                    .fold(f64::INFINITY, f64::min)
                    .powi(2)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                // rounding fell through to a chosen point; take the farthest
                pick = (0..n).fold(0, |b, i| if d2[i] > d2[b] { i } else { b });
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
    }
    chosen.into_iter().map(|i| x[i].clone()).collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>], w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centre) in centroids.iter().enumerate() {
        let d = dist(p, centre, w);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn recompute(x: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let width = x.first().map_or(0, Vec::len);
    for (c, centre) in centroids.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        if members.is_empty() {
            continue;
        }
        *centre = (0..width)
            .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64)
            .collect();
    }
}

fn lloyd(x: &[Vec<f64>], w: &[f64], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let k = centroids.len();
    let mut labels: Vec<usize> = x.iter().map(|p| nearest(p, centroids, w)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        recompute(x, &labels, centroids);
        // reseed empty clusters with the point farthest from its own centroid
        for c in 0..k {
            if labels.contains(&c) {
                continue;
            }
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let far = (0..x.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .map(|i| (i, dist(&x[i], &centroids[labels[i]], w)))
                .fold(None, |b: Option<(usize, f64)>, (i, d)| match b {
                    Some((_, bd)) if bd >= d => b,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                labels[i] = c;
                centroids[c] = x[i].clone();
            }
        }
        let next: Vec<usize> = x.iter().map(|p| nearest(p, centroids, w)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn repair(x: &[Vec<f64>], w: &[f64], labels: &mut [usize], centroids: &mut [Vec<f64>], min_size: usize) -> Result<()> {
    let k = centroids.len();
    let bound = x.len() * k;
    for _ in 0..=bound {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(deficient) = (0..k).find(|&c| sizes[c] < min_size) else {
            return Ok(());
        };
        let donor = (0..x.len())
            .filter(|&i| sizes[labels[i]] > min_size)
            .map(|i| (i, dist(&x[i], &centroids[deficient], w)))
            .fold(None, |b: Option<(usize, f64)>, (i, d)| match b {
                Some((_, bd)) if bd <= d => b,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            break;
        };
        labels[i] = deficient;
        recompute(x, labels, centroids);
    }
    Err(Error::InvalidInput(
        "minimum cluster size repair did not converge".into(),
    ))
}
