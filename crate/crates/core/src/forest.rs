//! Random forests and quantile regression forests.
//!
//! Both are the same fitted object. A forest turns an input `x` into a weight
//! per training sample: each tree spreads mass `1/B` uniformly over the
//! members of the leaf `x` falls into (bootstrap repeats counted). The point
//! forecast is the weighted mean of training targets and the conditional CDF
//! is the weighted empirical CDF of training targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trees::{fit_tree, tree_leaf_of, Dataset, RegressionTree, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Slack for comparing accumulated weights against a quantile level.
const CDF_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMode {
    Rf,
    Qrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub base_seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            tree: TreeParams::default(),
            bootstrap: true,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub mode: ForestMode,
    pub params: ForestParams,
    pub trees: Vec<RegressionTree>,
    /// Training targets referenced by leaf member indices.
    pub targets: Vec<f64>,
}

/// Per-training-sample weights for one input; non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Fits `n_estimators` trees. Tree `b` uses seed `base_seed + b` for both its
/// bootstrap draw and its feature sampling, so parallel fitting is
/// bit-identical to sequential fitting.
pub fn fit_forest(data: &Dataset, params: &ForestParams, mode: ForestMode) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::Empty("forest training set".into()));
    }
    if params.n_estimators == 0 {
        return Err(Error::InvalidInput("n_estimators must be >= 1".into()));
    }
    let n = data.len();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|b| {
            let seed = params.base_seed.wrapping_add(b as u64);
            let indices = if params.bootstrap {
                bootstrap_indices(n, seed)
            } else {
                (0..n).collect()
            };
            let tree_params = TreeParams { seed, ..params.tree };
            fit_tree(data, &indices, &tree_params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        mode,
        params: *params,
        trees,
        targets: data.targets.clone(),
    })
}

/// `n` draws with replacement; the stream differs from the tree's own RNG.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn forest_weights(model: &ForestModel, x: &[f64]) -> Result<WeightVector> {
    let mut weights = vec![0.0; model.targets.len()];
    let per_tree = 1.0 / model.trees.len() as f64;
    for tree in &model.trees {
        let leaf = tree_leaf_of(tree, x)?;
        let share = per_tree / leaf.members.len() as f64;
        for &i in &leaf.members {
            weights[i] += share;
        }
    }
    Ok(WeightVector(weights))
}

/// Weighted mean of training targets, clamped at zero.
pub fn forest_point(model: &ForestModel, x: &[f64]) -> Result<f64> {
    let w = forest_weights(model, x)?;
    let mu: f64 = w.0.iter().zip(&model.targets).map(|(w, y)| w * y).sum();
    Ok(mu.max(0.0))
}

/// Mean of the leaf means over trees, unclamped. Equal to the weighted form.
pub fn forest_mean_of_trees(model: &ForestModel, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for tree in &model.trees {
        total += tree_leaf_of(tree, x)?.value;
    }
    Ok(total / model.trees.len() as f64)
}

/// Distinct training targets ascending, each with its accumulated weight.
fn weighted_support(model: &ForestModel, weights: &WeightVector) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = model
        .targets
        .iter()
        .zip(&weights.0)
        .filter(|(_, w)| **w > 0.0)
        .map(|(y, w)| (*y, *w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (y, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == y => last.1 += w,
            _ => merged.push((y, w)),
        }
    }
    merged
}

/// Conditional CDF `F(y | x) = sum_i w_i(x) 1(y >= y_i)`.
pub fn forest_cdf(model: &ForestModel, x: &[f64], y: f64) -> Result<f64> {
    let w = forest_weights(model, x)?;
    Ok(model
        .targets
        .iter()
        .zip(&w.0)
        .filter(|(yi, _)| y >= **yi)
        .map(|(_, w)| w)
        .sum::<f64>()
        .min(1.0))
}

fn check_quantile_model(model: &ForestModel, q: f64) -> Result<()> {
    if model.mode != ForestMode::Qrf {
        return Err(Error::NotQuantileModel);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQuantile(q));
    }
    Ok(())
}

fn quantile_from_support(support: &[(f64, f64)], q: f64) -> f64 {
    let mut cum = 0.0;
    for &(y, w) in support {
        cum += w;
        if cum + CDF_EPS >= q {
            return y;
        }
    }
    support.last().map_or(0.0, |p| p.0)
}

/// Smallest training target whose conditional CDF reaches `q`.
pub fn forest_quantile(model: &ForestModel, x: &[f64], q: f64) -> Result<f64> {
    check_quantile_model(model, q)?;
    let w = forest_weights(model, x)?;
    Ok(quantile_from_support(&weighted_support(model, &w), q))
}

/// Several quantiles sharing one weight computation.
pub fn forest_quantiles(model: &ForestModel, x: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    for &q in levels {
        check_quantile_model(model, q)?;
    }
    let w = forest_weights(model, x)?;
    let support = weighted_support(model, &w);
    Ok(levels.iter().map(|&q| quantile_from_support(&support, q)).collect())
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported forest format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{Leaf, Node};
    use proptest::prelude::*;

    fn leaf_tree(members: Vec<usize>, targets: &[f64]) -> RegressionTree {
        let value = members.iter().map(|&i| targets[i]).sum::<f64>() / members.len() as f64;
        RegressionTree {
            nodes: vec![Node::Leaf(Leaf { value, members })],
            root: 0,
            n_features: 1,
        }
    }

    fn manual_model(trees: Vec<RegressionTree>, targets: Vec<f64>) -> ForestModel {
        ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            mode: ForestMode::Qrf,
            params: ForestParams {
                n_estimators: trees.len(),
                ..ForestParams::default()
            },
            trees,
            targets,
        }
    }

    fn line_data(n: usize) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let ys: Vec<f64> = (0..n).map(|i| (i / 2) as f64).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn degenerate_ensemble_matches_single_tree() {
        let d = line_data(12);
        let params = ForestParams {
            n_estimators: 1,
            bootstrap: false,
            base_seed: 5,
            ..Default::default()
        };
        let model = fit_forest(&d, &params, ForestMode::Rf).unwrap();
        let direct = fit_tree(&d, &(0..12).collect::<Vec<_>>(), &TreeParams { seed: 5, ..params.tree }).unwrap();
        assert_eq!(model.trees, vec![direct]);
    }

    #[test]
    fn deterministic_and_distinct_bootstraps() {
        let d = line_data(20);
        let params = ForestParams {
            n_estimators: 3,
            base_seed: 11,
            ..Default::default()
        };
        let a = fit_forest(&d, &params, ForestMode::Qrf).unwrap();
        let b = fit_forest(&d, &params, ForestMode::Qrf).unwrap();
        assert_eq!(a, b);
        let mut multisets: Vec<Vec<usize>> = (0..3)
            .map(|k| {
                let mut v = bootstrap_indices(20, 11 + k);
                v.sort_unstable();
                v
            })
            .collect();
        multisets.dedup();
        assert_eq!(multisets.len(), 3);
    }

    #[test]
    fn weights_two_members_single_tree() {
        let targets = vec![1.0, 2.0, 3.0, 4.0];
        let m = manual_model(vec![leaf_tree(vec![1, 3], &targets)], targets);
        let w = forest_weights(&m, &[0.0]).unwrap();
        assert_eq!(w.0, vec![0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn weights_average_two_point_masses() {
        let targets = vec![1.0, 2.0, 3.0];
        let m = manual_model(
            vec![leaf_tree(vec![0], &targets), leaf_tree(vec![2], &targets)],
            targets,
        );
        let w = forest_weights(&m, &[0.0]).unwrap();
        assert_eq!(w.0, vec![0.5, 0.0, 0.5]);
        assert_eq!(w.sum(), 1.0);
    }

    #[test]
    fn point_dot_product() {
        // weights {y=2: 0.25, y=6: 0.75}
        let targets = vec![2.0, 6.0];
        let m = manual_model(vec![leaf_tree(vec![0, 1, 1, 1], &targets)], targets);
        assert_eq!(forest_point(&m, &[0.0]).unwrap(), 5.0);
        assert_eq!(forest_mean_of_trees(&m, &[0.0]).unwrap(), 5.0);
    }

    #[test]
    fn point_single_leaf_trees_give_training_mean() {
        let d = line_data(10);
        let params = ForestParams {
            n_estimators: 4,
            bootstrap: false,
            tree: TreeParams {
                min_samples_split: 100,
                ..TreeParams::default()
            },
            base_seed: 0,
        };
        let m = fit_forest(&d, &params, ForestMode::Rf).unwrap();
        let mean = d.targets.iter().sum::<f64>() / 10.0;
        assert!((forest_point(&m, &[3.0, 1.0]).unwrap() - mean).abs() < 1e-12);

        let zeros = Dataset::new(d.features.clone(), vec![0.0; 10]).unwrap();
        let m = fit_forest(&zeros, &params, ForestMode::Rf).unwrap();
        assert_eq!(forest_point(&m, &[3.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn quantile_examples() {
        let targets = vec![1.0, 3.0];
        let m = manual_model(vec![leaf_tree(vec![0, 1], &targets)], targets);
        assert_eq!(forest_quantile(&m, &[0.0], 0.5).unwrap(), 1.0);
        assert_eq!(forest_quantile(&m, &[0.0], 0.75).unwrap(), 3.0);
        assert_eq!(forest_quantile(&m, &[0.0], 0.001).unwrap(), 1.0);
        assert!(matches!(
            forest_quantile(&m, &[0.0], 1.0),
            Err(Error::InvalidQuantile(_))
        ));
        assert!(matches!(
            forest_quantile(&m, &[0.0], 0.0),
            Err(Error::InvalidQuantile(_))
        ));
        assert_eq!(forest_quantiles(&m, &[0.0], &[0.25, 0.9]).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn zero_weight_targets_are_skipped() {
        let targets = vec![0.0, 5.0, 7.0];
        let m = manual_model(vec![leaf_tree(vec![1, 2], &targets)], targets);
        assert_eq!(forest_quantile(&m, &[0.0], 0.001).unwrap(), 5.0);
        assert_eq!(forest_cdf(&m, &[0.0], 0.0).unwrap(), 0.0);
        assert_eq!(forest_cdf(&m, &[0.0], 7.0).unwrap(), 1.0);
    }

    #[test]
    fn rf_mode_refuses_quantiles() {
        let d = line_data(8);
        let m = fit_forest(
            &d,
            &ForestParams {
                n_estimators: 2,
                ..Default::default()
            },
            ForestMode::Rf,
        )
        .unwrap();
        assert!(matches!(
            forest_quantile(&m, &[1.0, 1.0], 0.5),
            Err(Error::NotQuantileModel)
        ));
        assert!(forest_point(&m, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let d = line_data(8);
        let m = fit_forest(
            &d,
            &ForestParams {
                n_estimators: 2,
                ..Default::default()
            },
            ForestMode::Qrf,
        )
        .unwrap();
        let back = ForestModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bumped = m
            .to_json()
            .unwrap()
            .replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(ForestModel::from_json(&bumped).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn weight_forms_agree_and_quantiles_monotone(
            rows in prop::collection::vec((0u8..8, 0u8..4, 0u8..12), 2..50),
            probe in (0u8..8, 0u8..4),
            seed in any::<u64>(),
        ) {
            let features: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1 as f64]).collect();
            let targets: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
            let d = Dataset::new(features, targets.clone()).unwrap();
            let params = ForestParams {
                n_estimators: 7,
                tree: TreeParams { min_samples_leaf: 2, ..TreeParams::default() },
                bootstrap: true,
                base_seed: seed,
            };
            let m = fit_forest(&d, &params, ForestMode::Qrf).unwrap();
            let x = [probe.0 as f64, probe.1 as f64];
            let w = forest_weights(&m, &x).unwrap();
            prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(w.0.iter().all(|&v| v >= 0.0));
            let dot: f64 = w.0.iter().zip(&targets).map(|(a, b)| a * b).sum();
            prop_assert!((forest_mean_of_trees(&m, &x).unwrap() - dot).abs() <= 1e-9);
            let levels: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
            let qs = forest_quantiles(&m, &x, &levels).unwrap();
            prop_assert!(qs.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(qs.iter().all(|q| targets.contains(q)));
        }
    }
}
