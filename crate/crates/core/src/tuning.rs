//! Grid search with chronological k-fold cross-validation.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{boost_predict, fit_boost, BoostParams};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, forest_point, forest_quantile, ForestMode, ForestParams};
use crate::trees::{Dataset, MaxFeatures, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Rf,
    Qrf,
    Boost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        Self {
            n_estimators: (50..=200).step_by(25).collect(),
            max_features: vec![MaxFeatures::All, MaxFeatures::Sqrt],
            max_depth: vec![3, 4, 5, 6, 7],
            min_samples_split: vec![4, 6, 8, 10],
            min_samples_leaf: vec![2, 3, 4, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub subsample: Vec<f64>,
}

impl Default for BoostGrid {
    fn default() -> Self {
        Self {
            n_estimators: (50..=200).step_by(25).collect(),
            learning_rate: vec![0.1, 0.15, 0.2, 0.25, 0.3],
            max_depth: vec![3, 4, 5, 6, 7],
            subsample: vec![0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    Forest(ForestGrid),
    Boost(BoostGrid),
}

impl Grid {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Rf | ModelFamily::Qrf => Grid::Forest(ForestGrid::default()),
            ModelFamily::Boost => Grid::Boost(BoostGrid::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = match self {
            Grid::Forest(g) => {
                g.n_estimators.is_empty()
                    || g.max_features.is_empty()
                    || g.max_depth.is_empty()
                    || g.min_samples_split.is_empty()
                    || g.min_samples_leaf.is_empty()
            }
            Grid::Boost(g) => {
                g.n_estimators.is_empty()
                    || g.learning_rate.is_empty()
                    || g.max_depth.is_empty()
                    || g.subsample.is_empty()
            }
        };
        if empty {
            return Err(Error::InvalidInput(
                "every grid parameter needs at least one candidate".into(),
            ));
        }
        Ok(())
    }

    /// Candidates in row-major order, the last-listed parameter varying fastest.
    pub fn candidates(&self, seed: u64) -> Vec<Candidate> {
        let mut out = Vec::new();
        match self {
            Grid::Forest(g) => {
                for &n_estimators in &g.n_estimators {
                    for &max_features in &g.max_features {
                        for &depth in &g.max_depth {
                            for &split in &g.min_samples_split {
                                for &leaf in &g.min_samples_leaf {
                                    out.push(Candidate::Forest(ForestParams {
                                        n_estimators,
                                        tree: TreeParams {
                                            max_depth: Some(depth),
                                            min_samples_split: split,
                                            min_samples_leaf: leaf,
                                            max_features,
                                            seed,
                                        },
                                        bootstrap: true,
                                        base_seed: seed,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
            Grid::Boost(g) => {
                for &n_rounds in &g.n_estimators {
                    for &learning_rate in &g.learning_rate {
                        for &max_depth in &g.max_depth {
                            for &subsample in &g.subsample {
                                out.push(Candidate::Boost(BoostParams {
                                    n_rounds,
                                    learning_rate,
                                    max_depth,
                                    subsample,
                                    base_seed: seed,
                                    ..Default::default()
                                }));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidate {
    Forest(ForestParams),
    Boost(BoostParams),
}

/// Contiguous validation blocks; the first `n % k` get one extra row.
pub fn chronological_folds(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k < 2 {
        return Err(Error::InvalidInput("cross-validation needs k >= 2".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} samples cannot fill {k} folds")));
    }
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    Ok((0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: usize,
    pub candidate: Candidate,
    pub mean_cv_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best: usize,
    pub scores: Vec<CandidateScore>,
}

impl TuningResult {
    pub fn best_candidate(&self) -> &Candidate {
        &self.scores[self.best].candidate
    }

    pub fn best_score(&self) -> f64 {
        self.scores[self.best].mean_cv_mse
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate_id", "params_json", "mean_cv_mse"])?;
        for s in &self.scores {
            w.write_record([
                s.id.to_string(),
                serde_json::to_string(&s.candidate)?,
                s.mean_cv_mse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub type PointPredictor = Box<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

/// Fits a candidate and returns its point predictor. Quantile forests use
/// the conditional median.
pub fn fit_candidate(data: &Dataset, family: ModelFamily, candidate: &Candidate) -> Result<PointPredictor> {
    match (family, candidate) {
        (ModelFamily::Rf, Candidate::Forest(p)) => {
            let m = fit_forest(data, p, ForestMode::Rf)?;
            Ok(Box::new(move |x| forest_point(&m, x)))
        }
        (ModelFamily::Qrf, Candidate::Forest(p)) => {
            let m = fit_forest(data, p, ForestMode::Qrf)?;
            Ok(Box::new(move |x| forest_quantile(&m, x, 0.5)))
        }
        (ModelFamily::Boost, Candidate::Boost(p)) => {
            let m = fit_boost(data, p)?;
            Ok(Box::new(move |x| boost_predict(&m, x)))
        }
        _ => Err(Error::InvalidInput("grid does not match model family".into())),
    }
}

pub fn grid_search_cv(data: &Dataset, family: ModelFamily, grid: &Grid, k: usize, seed: u64) -> Result<TuningResult> {
    grid.validate()?;
    let folds = chronological_folds(data.len(), k)?;
    let candidates = grid.candidates(seed);
    let scores: Vec<CandidateScore> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(id, candidate)| {
            let mut total = 0.0;
            for fold in &folds {
                let train: Vec<usize> = (0..data.len()).filter(|i| !fold.contains(i)).collect();
                let predict = fit_candidate(&data.subset(&train), family, &candidate)?;
                let mut sse = 0.0;
                for i in fold.clone() {
                    sse += (data.targets[i] - predict(&data.features[i])?).powi(2);
                }
                total += sse / fold.len() as f64;
            }
            Ok(CandidateScore {
                id,
                candidate,
                mean_cv_mse: total / folds.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.mean_cv_mse < scores[b].mean_cv_mse { i } else { b });
    Ok(TuningResult { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_cover_once() {
        for (n, k) in [(10, 10), (23, 4), (100, 7)] {
            let folds = chronological_folds(n, k).unwrap();
            assert_eq!(folds.len(), k);
            assert_eq!(folds[0].start, 0);
            assert_eq!(folds.last().unwrap().end, n);
            assert!(folds.windows(2).all(|w| w[0].end == w[1].start));
            let lens: Vec<usize> = folds.iter().map(|f| f.len()).collect();
            assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }
        assert!(chronological_folds(3, 4).is_err());
    }

    #[test]
    fn default_grids_match_table() {
        assert_eq!(
            Grid::default_for(ModelFamily::Rf).candidates(0).len(),
            7 * 2 * 5 * 4 * 5
        );
        assert_eq!(Grid::default_for(ModelFamily::Boost).candidates(0).len(), 7 * 5 * 5 * 3);
    }

    fn structured() -> Dataset {
        let xs: Vec<Vec<f64>> = (0..80).map(|i| vec![(i % 8) as f64]).collect();
        let ys = xs.iter().map(|x| if x[0] < 4.0 { 0.0 } else { 10.0 }).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn deeper_candidate_wins() {
        let grid = Grid::Forest(ForestGrid {
            n_estimators: vec![5],
            max_features: vec![MaxFeatures::All],
            max_depth: vec![3],
            min_samples_split: vec![100, 2],
            min_samples_leaf: vec![1],
        });
        let out = grid_search_cv(&structured(), ModelFamily::Rf, &grid, 5, 1).unwrap();
        assert_eq!(out.best, 1);
        assert!(out.scores[1].mean_cv_mse < out.scores[0].mean_cv_mse);
        let min = out.scores.iter().map(|s| s.mean_cv_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_score(), min);
        let again = grid_search_cv(&structured(), ModelFamily::Rf, &grid, 5, 1).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn single_candidate_and_csv() {
        let grid = Grid::Boost(BoostGrid {
            n_estimators: vec![10],
            learning_rate: vec![0.3],
            max_depth: vec![2],
            subsample: vec![1.0],
        });
        let out = grid_search_cv(&structured(), ModelFamily::Boost, &grid, 4, 0).unwrap();
        assert_eq!(out.best, 0);
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("candidate_id,params_json,mean_cv_mse\n0,"));
        assert!(grid_search_cv(&structured(), ModelFamily::Rf, &grid, 4, 0).is_err());
    }
}
