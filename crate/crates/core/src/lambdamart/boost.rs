use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lambdas::compute_lambdas;
use super::tree::{fit_regression_tree, BinnedFeatures, FeatureMatrix, RegressionTree, TreeParams};
use crate::dataset::RankingDataset;
use crate::error::{Error, Result};
use crate::eval::reciprocal_rank;
use crate::features::FeatureValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub max_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_instances_per_leaf: usize,
    /// Steepness of the pairwise logistic.
    pub sigma: f64,
    pub early_stop_patience: usize,
    /// Recorded for provenance; training has no random steps.
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            max_trees: 500,
            learning_rate: 0.1,
            max_leaves: 16,
            min_instances_per_leaf: 10,
            sigma: 1.0,
            early_stop_patience: 50,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::config("learning_rate and sigma must be positive"));
        }
        if self.max_leaves < 2 || self.min_instances_per_leaf < 1 || self.early_stop_patience < 1 {
            return Err(Error::config(
                "max_leaves must be >= 2; min_instances_per_leaf and early_stop_patience >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub train_mrr: f64,
    pub validation_mrr: f64,
    /// Largest |Σλ| over query groups this iteration.
    pub max_group_lambda_sum: f64,
}

/// Field order is the serialized order of model.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub feature_schema: Vec<String>,
    pub learning_rate: f64,
    /// Scoring uses the first `best_iteration` trees.
    pub best_iteration: usize,
    pub trees: Vec<RegressionTree>,
    #[serde(default)]
    pub training_log: Vec<IterationLog>,
}

impl TreeEnsemble {
    pub fn empty(feature_schema: Vec<String>, learning_rate: f64) -> Self {
        TreeEnsemble {
            feature_schema,
            learning_rate,
            best_iteration: 0,
            trees: Vec::new(),
            training_log: Vec::new(),
        }
    }

    fn score_raw(&self, row: &[f64]) -> f64 {
        self.trees[..self.best_iteration]
            .iter()
            .map(|t| self.learning_rate * t.predict(row))
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TreeEnsemble = serde_json::from_str(&text)?;
        if model.best_iteration > model.trees.len() {
            return Err(Error::config("best_iteration exceeds tree count"));
        }
        if let Some(bad) = model.trees.iter().position(|t| !t.is_well_formed()) {
            return Err(Error::config(format!("tree {bad} is malformed")));
        }
        Ok(model)
    }
}

fn raw_value(f: &FeatureValue) -> f64 {
    if f.present {
        f.value
    } else {
        f64::NAN
    }
}

/// Score one instance's features (aligned with the model schema).
pub fn score(model: &TreeEnsemble, features: &[FeatureValue]) -> Result<f64> {
    if features.len() != model.feature_schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "model expects {} features, got {}",
            model.feature_schema.len(),
            features.len()
        )));
    }
    let row: Vec<f64> = features.iter().map(raw_value).collect();
    Ok(model.score_raw(&row))
}

/// Scores for every instance, in dataset order.
pub fn score_dataset(model: &TreeEnsemble, ds: &RankingDataset) -> Result<Vec<f64>> {
    if model.feature_schema != ds.feature_schema {
        return Err(Error::SchemaMismatch(format!(
            "model schema {:?} vs dataset schema {:?}",
            model.feature_schema, ds.feature_schema
        )));
    }
    let m = Prepared::new(ds);
    Ok((0..m.matrix.rows).map(|r| model.score_raw(m.matrix.row(r))).collect())
}

/// Flattened dataset with per-group item-id tie order.
struct Prepared {
    matrix: FeatureMatrix,
    labels: Vec<u8>,
    groups: Vec<Range<usize>>,
    tie_order: Vec<usize>,
}

impl Prepared {
    fn new(ds: &RankingDataset) -> Self {
        let cols = ds.feature_schema.len();
        let mut values = Vec::with_capacity(ds.instance_count() * cols);
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        let mut tie_order = Vec::new();
        for g in &ds.groups {
            let start = labels.len();
            let mut by_id: Vec<usize> = (0..g.instances.len()).collect();
            by_id.sort_by(|&a, &b| g.instances[a].item_id.cmp(&g.instances[b].item_id));
            let mut tie = vec![0; g.instances.len()];
            for (pos, &i) in by_id.iter().enumerate() {
                tie[i] = pos;
            }
            tie_order.extend(tie);
            for inst in &g.instances {
                values.extend(inst.features.iter().map(raw_value));
                labels.push(inst.label);
            }
            groups.push(start..labels.len());
        }
        Prepared {
            matrix: FeatureMatrix {
                rows: labels.len(),
                cols,
                values,
            },
            labels,
            groups,
            tie_order,
        }
    }

    fn mrr(&self, scores: &[f64]) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .groups
            .iter()
            .map(|g| {
                let mut idx: Vec<usize> = g.clone().collect();
                idx.sort_by(|&a, &b| {
                    scores[b]
                        .total_cmp(&scores[a])
                        .then_with(|| self.tie_order[a].cmp(&self.tie_order[b]))
                });
                let ranked: Vec<u8> = idx.iter().map(|&i| self.labels[i]).collect();
                reciprocal_rank(&ranked)
            })
            .sum();
        total / self.groups.len() as f64
    }
}

pub fn train_lambdamart(train: &RankingDataset, validation: &RankingDataset, config: &BoostConfig) -> Result<TreeEnsemble> {
    config.validate()?;
    if train.groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.feature_schema != validation.feature_schema {
        return Err(Error::SchemaMismatch(format!(
            "train schema {:?} vs validation schema {:?}",
            train.feature_schema, validation.feature_schema
        )));
    }
    let tr = Prepared::new(train);
    let va = Prepared::new(validation);
    let binned = BinnedFeatures::from_matrix(&tr.matrix);
    let params = TreeParams {
        max_leaves: config.max_leaves,
        min_instances_per_leaf: config.min_instances_per_leaf,
    };

    let mut model = TreeEnsemble::empty(train.feature_schema.clone(), config.learning_rate);
    let mut train_scores = vec![0.0; tr.matrix.rows];
    let mut val_scores = vec![0.0; va.matrix.rows];
    let mut best_mrr = f64::NEG_INFINITY;
    for iteration in 1..=config.max_trees {
        let (lambdas, hessians) = compute_lambdas(&train_scores, &tr.labels, &tr.groups, &tr.tie_order, config.sigma);
        let max_group_lambda_sum = tr
            .groups
            .iter()
            .map(|g| lambdas[g.clone()].iter().sum::<f64>().abs())
            .fold(0.0, f64::max);
        let tree = fit_regression_tree(&binned, &lambdas, &hessians, &params);
        for (r, s) in train_scores.iter_mut().enumerate() {
            *s += config.learning_rate * tree.predict(tr.matrix.row(r));
        }
        for (r, s) in val_scores.iter_mut().enumerate() {
            *s += config.learning_rate * tree.predict(va.matrix.row(r));
        }
        model.trees.push(tree);
        let validation_mrr = va.mrr(&val_scores);
        model.training_log.push(IterationLog {
            iteration,
            train_mrr: tr.mrr(&train_scores),
            validation_mrr,
            max_group_lambda_sum,
        });
        if validation_mrr > best_mrr {
            best_mrr = validation_mrr;
            model.best_iteration = iteration;
        } else if iteration - model.best_iteration >= config.early_stop_patience {
            break;
        }
    }
    Ok(model)
}
