use serde::{Deserialize, Serialize};

use super::{contiguity_check, dist, normalize_features, ClusterInput, ClusterSet, StopReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CchcConstraints {
    pub k_min: usize,
    pub s_max: usize,
    pub d_max: f64,
}

impl Default for CchcConstraints {
    fn default() -> Self {
        Self {
            k_min: 3,
            s_max: 9,
            d_max: 9.0,
        }
    }
}

impl CchcConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.s_max == 0 || !(self.d_max > 0.0) {
            return Err(Error::InvalidInput(
                "K_min >= 1, s_max >= 1 and D_max > 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Same-cluster, merge-candidate and constrained-distance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct IceMatrices {
    pub ce: Vec<Vec<bool>>,
    pub cp: Vec<Vec<bool>>,
    pub dz: Vec<Vec<f64>>,
}

pub fn cchc_constraint_matrices(
    clusters: &[Vec<usize>],
    adjacency: &[Vec<bool>],
    s_max: usize,
    x: &[Vec<f64>],
    w: &[f64],
) -> IceMatrices {
    let n = x.len();
    let mut owner = vec![0usize; n];
    for (c, members) in clusters.iter().enumerate() {
        for &z in members {
            owner[z] = c;
        }
    }
    let k = clusters.len();
    let mut feasible = vec![vec![false; k]; k];
    for m in 0..k {
        for q in m + 1..k {
            let touching = clusters[m]
                .iter()
                .any(|&i| clusters[q].iter().any(|&j| adjacency[i][j]));
            let ok = touching && clusters[m].len() + clusters[q].len() <= s_max;
            feasible[m][q] = ok;
            feasible[q][m] = ok;
        }
    }
    let mut ce = vec![vec![false; n]; n];
    let mut cp = vec![vec![false; n]; n];
    let mut dz = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in 0..n {
            if owner[i] == owner[j] {
                ce[i][j] = true;
                dz[i][j] = 0.0;
            } else if feasible[owner[i]][owner[j]] {
                cp[i][j] = true;
                dz[i][j] = dist(&x[i], &x[j], w);
            }
        }
    }
    IceMatrices { ce, cp, dz }
}

/// One executed merge: the two clusters before merging and their linkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CchcOutcome {
    pub clusters: ClusterSet,
    pub merges: Vec<Merge>,
}

/// Contiguity-constrained average-linkage clustering.
///
/// Features are min-max normalized with unit weights; `input.weights` and
/// `input.normalize` are ignored.
pub fn cchc_ice(input: &ClusterInput, adjacency: &[Vec<bool>], constraints: &CchcConstraints) -> Result<CchcOutcome> {
    constraints.validate()?;
    let n = input.len();
    if n == 0 {
        return Err(Error::Empty("no zones to cluster".into()));
    }
    if adjacency.len() != n || adjacency.iter().any(|r| r.len() != n) {
        return Err(Error::LengthMismatch(format!("adjacency is not {n}x{n}")));
    }
    let x = normalize_features(&input.features);
    let w = vec![1.0; x.first().map_or(0, Vec::len)];
    let mut omega: Vec<Vec<usize>> = (0..n).map(|z| vec![z]).collect();
    let mut merges = Vec::new();
    let stop = loop {
        if omega.len() <= constraints.k_min {
            break StopReason::KMinReached;
        }
        let ice = cchc_constraint_matrices(&omega, adjacency, constraints.s_max, &x, &w);
        let mut best: Option<(f64, usize, usize)> = None;
        for m in 0..omega.len() {
            for q in m + 1..omega.len() {
                let d = linkage(&ice.dz, &omega[m], &omega[q]);
                if d.is_finite() && best.is_none_or(|b| d < b.0) {
                    best = Some((d, m, q));
                }
            }
        }
        let Some((d, m, q)) = best else {
            break StopReason::NoFeasiblePair;
        };
        if d > constraints.d_max {
            break StopReason::DistanceThreshold;
        }
        let mut next = omega.clone();
        let right = next.remove(q);
        next[m].extend_from_slice(&right);
        next[m].sort_unstable();
        if !contiguity_check(&next, adjacency).is_empty() {
            break StopReason::ViolationDetected;
        }
        merges.push(Merge {
            left: omega[m].clone(),
            right,
            distance: d,
        });
        omega = next;
    };
    Ok(CchcOutcome {
        clusters: ClusterSet::from_clusters(&omega, n, stop),
        merges,
    })
}

fn linkage(dz: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let total: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| dz[i][j])).sum();
    total / (a.len() * b.len()) as f64
}
