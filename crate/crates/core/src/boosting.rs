//! Gradient-boosted regression trees under squared loss.
//!
//! Starts from the zero model. Each round fits a depth-limited tree to the
//! residuals of a row subsample, shrinks leaves with an L2 penalty, picks the
//! loss-minimising step on the full training set and adds the step scaled by
//! the learning rate.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::MODEL_FORMAT_VERSION;
use crate::trees::{fit_tree_on, Dataset, MaxFeatures, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub leaf_l2: f64,
    #[serde(default = "default_min_split")]
    pub min_samples_split: usize,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
    pub base_seed: u64,
}

fn default_min_split() -> usize {
    2
}

fn default_min_leaf() -> usize {
    1
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 5,
            subsample: 1.0,
            leaf_l2: 1.0,
            min_samples_split: 2,
            min_samples_leaf: 1,
            base_seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidInput("learning_rate must be in (0, 1]".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidInput("subsample must be in (0, 1]".into()));
        }
        if !(self.leaf_l2 >= 0.0) {
            return Err(Error::InvalidInput("leaf_l2 must be >= 0".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        Ok(())
    }

    fn tree_params(&self, round: usize) -> TreeParams {
        TreeParams {
            max_depth: Some(self.max_depth),
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            max_features: MaxFeatures::All,
            seed: self.base_seed.wrapping_add(round as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub tree: RegressionTree,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub format_version: u32,
    pub params: BoostParams,
    pub stages: Vec<BoostStage>,
}

pub fn fit_boost(data: &Dataset, params: &BoostParams) -> Result<BoostModel> {
    params.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("boosting training set".into()));
    }
    let sample_size = ((params.subsample * n as f64).ceil() as usize).min(n);
    if sample_size == 0 {
        return Err(Error::Empty("boosting subsample".into()));
    }
    let mut fitted = vec![0.0; n];
    let mut residuals = vec![0.0; n];
    let mut stages = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        for ((r, y), f) in residuals.iter_mut().zip(&data.targets).zip(&fitted) {
            *r = y - f;
        }
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(params.base_seed.wrapping_add(round as u64));
            rng.set_stream(2);
            let mut rows = index::sample(&mut rng, n, sample_size).into_vec();
            rows.sort_unstable();
            rows
        };
        let mut tree = fit_tree_on(&data.features, &residuals, &rows, &params.tree_params(round))?;
        for leaf in tree.leaves_mut() {
            let sum: f64 = leaf.members.iter().map(|&i| residuals[i]).sum();
            leaf.value = sum / (leaf.members.len() as f64 + params.leaf_l2);
        }
        let h: Vec<f64> = data.features.iter().map(|x| tree.predict(x)).collect::<Result<_>>()?;
        let num: f64 = residuals.iter().zip(&h).map(|(r, h)| r * h).sum();
        let den: f64 = h.iter().map(|h| h * h).sum();
        let gamma = if den > 0.0 { num / den } else { 1.0 };
        let step = params.learning_rate * gamma;
        for (f, h) in fitted.iter_mut().zip(&h) {
            *f += step * h;
        }
        stages.push(BoostStage { tree, gamma });
    }
    Ok(BoostModel {
        format_version: MODEL_FORMAT_VERSION,
        params: *params,
        stages,
    })
}

/// Raw additive score without clamping.
pub fn boost_raw(model: &BoostModel, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for stage in &model.stages {
        total += model.params.learning_rate * stage.gamma * stage.tree.predict(x)?;
    }
    Ok(total)
}

pub fn boost_predict(model: &BoostModel, x: &[f64]) -> Result<f64> {
    if let Some(first) = model.stages.first() {
        if x.len() != first.tree.n_features {
            return Err(Error::SchemaMismatch {
                expected: first.tree.n_features,
                found: x.len(),
            });
        }
    }
    Ok(boost_raw(model, x)?.max(0.0))
}

impl BoostModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: BoostModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported boosting format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}
