//! CART regression trees with variance-reduction splits.
//!
//! Leaves keep the (possibly repeated) training indices that reached them so
//! forests can turn a tree into per-sample weights.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix plus targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        check_inputs(&features, &targets)?;
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

fn check_inputs(features: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} feature rows vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    if let Some(first) = features.first() {
        let width = first.len();
        if let Some(bad) = features.iter().find(|r| r.len() != width) {
            return Err(Error::SchemaMismatch {
                expected: width,
                found: bad.len(),
            });
        }
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// Every feature is a split candidate at every node.
    All,
    /// A fresh sample of `ceil(sqrt(F))` features per node.
    Sqrt,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().ceil() as usize).clamp(1, n_features.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until another stopping rule fires.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidInput("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidInput("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Mean member target for CART; boosting overwrites it with a shrunk value.
    pub value: f64,
    /// Training indices in this leaf, repeated once per bootstrap draw.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub root: usize,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }

    pub fn leaves_mut(&mut self) -> impl Iterator<Item = &mut Leaf> {
        self.nodes.iter_mut().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        tree_leaf_of(self, x).map(|l| l.value)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, self.root)
    }
}

/// Fits a tree on `data` restricted to `indices` (duplicates allowed).
pub fn fit_tree(data: &Dataset, indices: &[usize], params: &TreeParams) -> Result<RegressionTree> {
    fit_tree_on(&data.features, &data.targets, indices, params)
}

/// [`fit_tree`] over borrowed columns, so callers can swap in other targets.
pub fn fit_tree_on(
    features: &[Vec<f64>],
    targets: &[f64],
    indices: &[usize],
    params: &TreeParams,
) -> Result<RegressionTree> {
    params.validate()?;
    if indices.is_empty() {
        return Err(Error::Empty("tree training sample".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= targets.len()) {
        return Err(Error::InvalidInput(format!("sample index {bad} out of range")));
    }
    check_inputs(features, targets)?;
    let n_features = features.first().map_or(0, Vec::len);
    let mut grower = Grower {
        features,
        targets,
        params,
        n_features,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        nodes: Vec::new(),
    };
    let root = grower.grow(indices.to_vec(), 0);
    Ok(RegressionTree {
        nodes: grower.nodes,
        root,
        n_features,
    })
}

/// Descends to the leaf containing `x`; `x[f] <= threshold` goes left.
pub fn tree_leaf_of<'a>(tree: &'a RegressionTree, x: &[f64]) -> Result<&'a Leaf> {
    if x.len() != tree.n_features {
        return Err(Error::SchemaMismatch {
            expected: tree.n_features,
            found: x.len(),
        });
    }
    let mut at = tree.root;
    loop {
        match &tree.nodes[at] {
            Node::Leaf(leaf) => return Ok(leaf),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                at = if x[*feature] <= *threshold { *left } else { *right };
            }
        }
    }
}

struct Grower<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [f64],
    params: &'a TreeParams,
    n_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn grow(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let first = self.targets[members[0]];
        let constant = members.iter().all(|&i| self.targets[i] == first);
        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        let split = if constant || depth_reached || members.len() < self.params.min_samples_split {
            None
        } else {
            self.best_split(&members)
        };
        match split {
            None => {
                let value = members.iter().map(|&i| self.targets[i]).sum::<f64>() / members.len() as f64;
                self.nodes.push(Node::Leaf(Leaf { value, members }));
            }
            Some(choice) => {
                let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
                    .into_iter()
                    .partition(|&i| self.features[i][choice.feature] <= choice.threshold);
                self.nodes.push(Node::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                });
                let left = self.grow(left_members, depth + 1);
                let right = self.grow(right_members, depth + 1);
                if let Node::Split { left: l, right: r, .. } = &mut self.nodes[at] {
                    *l = left;
                    *r = right;
                }
            }
        }
        at
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let k = self.params.max_features.count(self.n_features);
        if k >= self.n_features {
            return (0..self.n_features).collect();
        }
        let mut picked = index::sample(&mut self.rng, self.n_features, k).into_vec();
        picked.sort_unstable();
        picked
    }

    /// Minimum children SSE over admissible midpoints; ties keep the lowest
    /// feature index, then the smallest threshold.
    fn best_split(&mut self, members: &[usize]) -> Option<SplitChoice> {
        let min_leaf = self.params.min_samples_leaf;
        let n = members.len();
        if n < 2 * min_leaf {
            return None;
        }
        let mut best: Option<SplitChoice> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in self.candidate_features() {
            order.clear();
            order.extend(members.iter().map(|&i| (self.features[i][feature], self.targets[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = order.iter().map(|p| p.1).sum();
            let total_sq: f64 = order.iter().map(|p| p.1 * p.1).sum();
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for p in 0..n - 1 {
                let (x, y) = order[p];
                left_sum += y;
                left_sq += y * y;
                let next_x = order[p + 1].0;
                let n_left = p + 1;
                let n_right = n - n_left;
                if x == next_x || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse_left = (left_sq - left_sum * left_sum / n_left as f64).max(0.0);
                let sse_right = (right_sq - right_sum * right_sum / n_right as f64).max(0.0);
                let score = sse_left + sse_right;
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mid = x + (next_x - x) / 2.0;
                    let threshold = if mid < next_x { mid } else { x };
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec()).unwrap()
    }

    #[test]
    fn constant_targets_make_one_leaf() {
        let d = data(&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]);
        let t = fit_tree(&d, &[0, 1, 2], &TreeParams::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[100.0]).unwrap(), 7.0);
    }

    #[test]
    fn two_point_split() {
        let d = data(&[0.0, 1.0], &[0.0, 10.0]);
        let t = fit_tree(&d, &[0, 1], &TreeParams::default()).unwrap();
        match &t.nodes[t.root] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(tree_leaf_of(&t, &[0.5]).unwrap().value, 0.0);
        assert_eq!(tree_leaf_of(&t, &[0.9]).unwrap().value, 10.0);
        assert_eq!(tree_leaf_of(&t, &[0.0]).unwrap().members, vec![0]);
    }

    #[test]
    fn min_leaf_blocks_split_of_three() {
        let d = data(&[0.0, 1.0, 2.0], &[0.0, 5.0, 10.0]);
        let params = TreeParams {
            min_samples_leaf: 2,
            ..TreeParams::default()
        };
        let t = fit_tree(&d, &[0, 1, 2], &params).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[0.0]).unwrap(), 5.0);
    }

    #[test]
    fn single_leaf_tree_any_input() {
        let d = data(&[0.0, 1.0], &[1.0, 3.0]);
        let params = TreeParams {
            min_samples_split: 3,
            ..TreeParams::default()
        };
        let t = fit_tree(&d, &[0, 1], &params).unwrap();
        assert_eq!(t.predict(&[-5.0]).unwrap(), 2.0);
        assert_eq!(t.predict(&[5.0]).unwrap(), 2.0);
    }

    #[test]
    fn errors() {
        let d = data(&[0.0, 1.0], &[1.0, 3.0]);
        assert!(matches!(
            fit_tree(&d, &[], &TreeParams::default()),
            Err(Error::Empty(_))
        ));
        let t = fit_tree(&d, &[0, 1], &TreeParams::default()).unwrap();
        assert!(matches!(
            tree_leaf_of(&t, &[1.0, 2.0]),
            Err(Error::SchemaMismatch { .. })
        ));
        let bad = TreeParams {
            min_samples_split: 1,
            ..TreeParams::default()
        };
        assert!(fit_tree(&d, &[0, 1], &bad).is_err());
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        // Both features separate the targets identically.
        let d = Dataset::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0.0, 1.0]).unwrap();
        let t = fit_tree(&d, &[0, 1], &TreeParams::default()).unwrap();
        assert!(matches!(t.nodes[t.root], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_limit() {
        let xs: Vec<f64> = (0..16).map(f64::from).collect();
        let d = data(&xs, &xs);
        let params = TreeParams {
            max_depth: Some(2),
            ..TreeParams::default()
        };
        let t = fit_tree(&d, &(0..16).collect::<Vec<_>>(), &params).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.leaves().count(), 4);
    }

    #[test]
    fn bootstrap_duplicates_are_kept() {
        let d = data(&[0.0, 1.0, 2.0], &[1.0, 2.0, 9.0]);
        let params = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let t = fit_tree(&d, &[0, 0, 1, 2], &params).unwrap();
        let total: usize = t.leaves().map(|l| l.members.len()).sum();
        assert_eq!(total, 4);
        let leaf = tree_leaf_of(&t, &[0.0]).unwrap();
        assert_eq!(leaf.members, vec![0, 0, 1]);
        assert!((leaf.value - 4.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn leaves_partition_sample(
            rows in prop::collection::vec((0u8..6, 0u8..6, 0.0f64..10.0), 1..40),
            sqrt in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let features: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1 as f64]).collect();
            let targets: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let d = Dataset::new(features, targets).unwrap();
            let indices: Vec<usize> = (0..d.len()).collect();
            let params = TreeParams {
                max_features: if sqrt { MaxFeatures::Sqrt } else { MaxFeatures::All },
                min_samples_leaf: 2,
                seed,
                ..TreeParams::default()
            };
            let t = fit_tree(&d, &indices, &params).unwrap();
            let mut seen: Vec<usize> = t.leaves().flat_map(|l| l.members.iter().copied()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, indices);
            for leaf in t.leaves() {
                let mean = leaf.members.iter().map(|&i| d.targets[i]).sum::<f64>() / leaf.members.len() as f64;
                prop_assert!((leaf.value - mean).abs() < 1e-9);
            }
            for (i, x) in d.features.iter().enumerate() {
                prop_assert!(tree_leaf_of(&t, x).unwrap().members.contains(&i));
            }
            prop_assert_eq!(&t, &fit_tree(&d, &(0..d.len()).collect::<Vec<_>>(), &params).unwrap());
        }
    }
}
