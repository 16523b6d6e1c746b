//! Evaluation metrics.

mod classifier;
mod eval;
mod stats;

pub use classifier::{accuracy, train_classifier, ActionClassifier, ClassifierConfig, ClassifierReport, CLASSIFIER_VERSION};
pub use eval::{
    customization_targets, discovered_mode_groups, evaluate, generate_many, shuffled_groups,
    trajectory_customization_eval, CodeSource, CustomizationProtocol, CustomizationReport, EvalProtocol, MetricReport,
    MotionSource, Summary,
};
pub use stats::{
    apd, diversity, dist_e, fid, mean_pair_distance, mode_apd, mode_homogeneity, motion_distance, multimodality,
    n_apd, n_apd_per_category, FeatureStats, DIVERSITY_PAIRS, MULTIMODALITY_PAIRS,
};
