//! Ranking and correlation metrics.

mod auc;
mod list;
mod pearson;

pub use auc::{auc, auc_brute_force};
pub use list::{
    list_auc, mean_weighted_recall_at_k, ndcg, recall_at_k, weighted_recall_at_k, ActionLabel, RankedItem, RankedList,
    WeightTransform,
};
pub use pearson::{pearson, regularized_incomplete_beta, Pearson};
