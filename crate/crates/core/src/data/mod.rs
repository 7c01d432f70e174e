//! Raw file ingestion, preprocessing into a [`HeteroGraph`], splitting and
//! negative sampling.

mod graph;
mod load;
mod sampling;
mod split;

pub use graph::{preprocess, Csr, GraphStats, HeteroGraph, IdMap, PreprocessConfig};
pub use load::{
    load_features, load_interactions, load_social_links, standardize_columns, ColumnSpec,
    Delimiter, FeatureMatrix, InteractionSet, LoadReport, RatingRecord, SocialLinkSet,
};
pub use sampling::{
    sample_eval_negatives, sample_train_negatives, EvalCandidates, Holdout, TrainSamples, Triple,
    UserCandidates,
};
pub use split::{sparsity_groups, split, InteractionSplit, SparsityGroups, SplitConfig};
