//! LambdaMART with reciprocal-rank swap deltas: pairwise lambdas, histogram
//! regression trees with learned missing-value directions, and boosting with
//! validation-based tree-count selection.

mod boost;
mod lambdas;
mod tree;

pub use boost::{score, score_dataset, train_lambdamart, BoostConfig, IterationLog, TreeEnsemble};
pub use lambdas::{compute_lambdas, group_ranks};
pub use tree::{fit_regression_tree, BinnedFeatures, FeatureMatrix, Node, RegressionTree, TreeParams};
