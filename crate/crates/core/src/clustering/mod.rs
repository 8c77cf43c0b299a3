//! Dynamic zone clustering on predicted demand.
//!
//! Two algorithms share the vocabulary here: constrained k-means over
//! location and demand ([`ckmc`]) and contiguity-constrained agglomerative
//! clustering with iterative constraint enforcement ([`cchc_ice`]). Percentile
//! banding ([`threshold_clusters`]) is the trivial reference.

mod cchc;
mod ckmc;

pub use cchc::{cchc_constraint_matrices, cchc_ice, CchcConstraints, CchcOutcome, IceMatrices, Merge};
pub use ckmc::{ckmc, CkmcOutcome};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::benchmarks::lower_quantile_sorted;
use crate::error::{Error, Result};

/// Why a clustering run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    KMinReached,
    DistanceThreshold,
    NoFeasiblePair,
    Converged,
    ViolationDetected,
}

/// A partition of zones `0..N` into clusters `0..K`.
///
/// Labels are canonical: cluster ids follow the order of each cluster's
/// smallest zone index, so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub labels: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub stop_reason: StopReason,
}

impl ClusterSet {
    pub fn from_labels(labels: &[usize], stop_reason: StopReason) -> Self {
        let mut remap: Vec<Option<usize>> = Vec::new();
        let mut canonical = Vec::with_capacity(labels.len());
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (zone, &l) in labels.iter().enumerate() {
            if l >= remap.len() {
                remap.resize(l + 1, None);
            }
            let id = *remap[l].get_or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[id].push(zone);
            canonical.push(id);
        }
        Self {
            labels: canonical,
            clusters,
            stop_reason,
        }
    }

    pub fn from_clusters(groups: &[Vec<usize>], n: usize, stop_reason: StopReason) -> Self {
        let mut labels = vec![usize::MAX; n];
        for (id, g) in groups.iter().enumerate() {
            for &z in g {
                labels[z] = id;
            }
        }
        Self::from_labels(&labels, stop_reason)
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks that labels and cluster lists describe the same partition.
    pub fn check_partition(&self) -> Result<()> {
        let mut seen = vec![false; self.labels.len()];
        for (id, members) in self.clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidInput(format!("cluster {id} is empty")));
            }
            for &z in members {
                if z >= seen.len() || seen[z] || self.labels[z] != id {
                    return Err(Error::InvalidInput(format!("zone {z} not partitioned consistently")));
                }
                seen[z] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("cluster set does not cover every zone".into()));
        }
        Ok(())
    }
}

/// Per-zone feature rows and the weight of each column in the distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInput {
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub normalize: bool,
}

/// Weight of the single predicted-demand column next to lat/lng.
pub const POINT_DEMAND_WEIGHT: f64 = 3.0;

impl ClusterInput {
    pub fn new(features: Vec<Vec<f64>>, weights: Vec<f64>, normalize: bool) -> Result<Self> {
        if features.iter().any(|r| r.len() != weights.len()) {
            return Err(Error::LengthMismatch("feature rows and weights differ in width".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cluster features must be finite".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput("cluster feature weights must be positive".into()));
        }
        Ok(Self {
            features,
            weights,
            normalize,
        })
    }

    /// `(lat, lng, demand)` with the demand column weighted three times.
    pub fn point_demand(locations: &[(f64, f64)], demand: &[f64]) -> Result<Self> {
        if locations.len() != demand.len() {
            return Err(Error::LengthMismatch("locations vs demand".into()));
        }
        let features = locations
            .iter()
            .zip(demand)
            .map(|(&(la, ln), &d)| vec![la, ln, d])
            .collect();
        Self::new(features, vec![1.0, 1.0, POINT_DEMAND_WEIGHT], true)
    }

    /// `(lat, lng, q25, q50, q75)` with equal weights.
    pub fn quantile_demand(locations: &[(f64, f64)], quartiles: &[[f64; 3]]) -> Result<Self> {
        if locations.len() != quartiles.len() {
            return Err(Error::LengthMismatch("locations vs quantiles".into()));
        }
        let features = locations
            .iter()
            .zip(quartiles)
            .map(|(&(la, ln), q)| vec![la, ln, q[0], q[1], q[2]])
            .collect();
        Self::new(features, vec![1.0; 5], true)
    }

    /// Demand columns only, equal weights.
    pub fn demand_only(features: Vec<Vec<f64>>) -> Result<Self> {
        let width = features.first().map_or(0, Vec::len);
        Self::new(features, vec![1.0; width], true)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// The feature matrix the distance is evaluated on.
    pub fn prepared(&self) -> Vec<Vec<f64>> {
        if self.normalize {
            normalize_features(&self.features)
        } else {
            self.features.clone()
        }
    }
}

/// `sqrt(sum_k w_k (a_k - b_k)^2)`.
pub fn weighted_distance(a: &[f64], b: &[f64], w: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != w.len() {
        return Err(Error::LengthMismatch(format!(
            "vectors of length {} and {} with {} weights",
            a.len(),
            b.len(),
            w.len()
        )));
    }
    Ok(dist(a, b, w))
}

pub(crate) fn dist(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Min-max scales each column to [0, 1]; constant columns become 0.
pub fn normalize_features(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let width = first.len();
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for r in rows {
        for (k, &v) in r.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let span = hi[k] - lo[k];
                    if span > 0.0 {
                        (v - lo[k]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Mean silhouette under the weighted distance. Singletons score 0, as do
/// points with zero intra- and nearest-cluster distance.
pub fn silhouette_mean(x: &[Vec<f64>], w: &[f64], labels: &[usize]) -> Result<f64> {
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch("rows vs labels".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != w.len()) {
        return Err(Error::LengthMismatch(format!(
            "row of width {} with {} weights",
            r.len(),
            w.len()
        )));
    }
    let set = ClusterSet::from_labels(labels, StopReason::Converged);
    if set.k() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = set.labels[i];
        if set.clusters[own].len() == 1 {
            continue;
        }
        let mut sums = vec![0.0; set.k()];
        for j in 0..n {
            if j != i {
                sums[set.labels[j]] += dist(&x[i], &x[j], w);
            }
        }
        let a = sums[own] / (set.clusters[own].len() - 1) as f64;
        let b = (0..set.k())
            .filter(|&c| c != own)
            .map(|c| sums[c] / set.clusters[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Indices of clusters whose zones do not induce a connected subgraph.
pub fn contiguity_check(clusters: &[Vec<usize>], adjacency: &[Vec<bool>]) -> Vec<usize> {
    clusters
        .iter()
        .enumerate()
        .filter(|(_, members)| !is_connected(members, adjacency))
        .map(|(id, _)| id)
        .collect()
}

fn is_connected(members: &[usize], adjacency: &[Vec<bool>]) -> bool {
    if members.len() <= 1 {
        return true;
    }
    let mut visited = vec![false; members.len()];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    let mut reached = 1;
    while let Some(at) = queue.pop_front() {
        for (k, &z) in members.iter().enumerate() {
            if !visited[k] && adjacency[members[at]][z] {
                visited[k] = true;
                reached += 1;
                queue.push_back(k);
            }
        }
    }
    reached == members.len()
}

/// Bands zones by the lower empirical percentiles of `demand` at `cuts`;
/// a value equal to a cut value falls in the lower band.
pub fn threshold_clusters(demand: &[f64], cuts: &[f64]) -> Result<ClusterSet> {
    if demand.is_empty() {
        return Err(Error::Empty("no zones to band".into()));
    }
    if let Some(&q) = cuts.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::InvalidQuantile(q));
    }
    let mut sorted = demand.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cut_values: Vec<f64> = cuts.iter().map(|&q| lower_quantile_sorted(&sorted, q)).collect();
    cut_values.sort_by(f64::total_cmp);
    let bands: Vec<usize> = demand
        .iter()
        .map(|&v| cut_values.iter().filter(|&&c| v > c).count())
        .collect();
    Ok(ClusterSet::from_labels(&bands, StopReason::Converged))
}

/// Default percentile cuts for four demand bands.
pub const DEFAULT_BAND_CUTS: [f64; 3] = [0.25, 0.5, 0.75];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn distances() {
        assert_eq!(weighted_distance(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(weighted_distance(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 1.0]).unwrap(), 5.0);
        assert_abs_diff_eq!(
            weighted_distance(&[0.0], &[2.0], &[3.0]).unwrap(),
            12f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(weighted_distance(&[0.0], &[2.0, 1.0], &[3.0]).is_err());
    }

    #[test]
    fn normalization() {
        let out = normalize_features(&[vec![2.0, 5.0, 0.0], vec![4.0, 5.0, 1.0], vec![6.0, 5.0, 0.5]]);
        assert_eq!(out.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        assert_eq!(out.iter().map(|r| r[2]).collect::<Vec<_>>(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn canonical_labels() {
        let s = ClusterSet::from_labels(&[7, 2, 7, 5], StopReason::Converged);
        assert_eq!(s.labels, vec![0, 1, 0, 2]);
        assert_eq!(s.clusters, vec![vec![0, 2], vec![1], vec![3]]);
        s.check_partition().unwrap();
        let t = ClusterSet::from_clusters(&[vec![3], vec![1], vec![2, 0]], 4, StopReason::Converged);
        assert_eq!(t, s);
    }

    #[test]
    fn silhouette_cases() {
        let x = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette_mean(&x, &[1.0], &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.9, "{s}");
        let same = vec![vec![1.0]; 4];
        assert_eq!(silhouette_mean(&same, &[1.0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette_mean(&x, &[1.0], &[0, 0, 0, 0]).is_err());
        // singleton contributes 0
        let s = silhouette_mean(&[vec![0.0], vec![1.0], vec![1.0]], &[1.0], &[0, 1, 1]).unwrap();
        assert_abs_diff_eq!(s, 2.0 / 3.0, epsilon = 1e-12);
    }

    fn path(n: usize) -> Vec<Vec<bool>> {
        (0..n).map(|i| (0..n).map(|j| i.abs_diff(j) == 1).collect()).collect()
    }

    #[test]
    fn contiguity() {
        let adj = path(3);
        assert!(contiguity_check(&[vec![0], vec![1], vec![2]], &adj).is_empty());
        assert_eq!(contiguity_check(&[vec![0, 2], vec![1]], &adj), vec![0]);
        assert!(contiguity_check(&[vec![0, 1, 2]], &adj).is_empty());
    }

    #[test]
    fn thresholds() {
        let s = threshold_clusters(&[1.0, 2.0, 3.0, 4.0], &DEFAULT_BAND_CUTS).unwrap();
        assert_eq!(s.k(), 4);
        let s = threshold_clusters(&[3.0; 5], &DEFAULT_BAND_CUTS).unwrap();
        assert_eq!(s.k(), 1);
        let s = threshold_clusters(&[0.0, 0.0, 5.0, 9.0], &[0.5]).unwrap();
        assert_eq!(s.clusters, vec![vec![0, 1], vec![2, 3]]);
    }

    proptest! {
        #[test]
        fn silhouette_in_range(
            rows in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0usize..3), 2..25),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.2).collect();
            if ClusterSet::from_labels(&labels, StopReason::Converged).k() >= 2 {
                let s = silhouette_mean(&x, &[1.0, 2.0], &labels).unwrap();
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn normalisation_ignores_positive_affine_maps(
            col in prop::collection::vec(-50.0f64..50.0, 1..20),
            scale in 0.1f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let a = normalize_features(&col.iter().map(|&v| vec![v]).collect::<Vec<_>>());
            let b = normalize_features(&col.iter().map(|&v| vec![v * scale + shift]).collect::<Vec<_>>());
            for (ra, rb) in a.iter().zip(&b) {
                prop_assert!((ra[0] - rb[0]).abs() < 1e-9);
            }
        }
    }
}
