//! Evaluation protocols: ROI condition contrasts, PCA and t-SNE
//! projections, and the downstream augmentation-classification experiment.

pub mod augment;
pub mod classifier;
pub mod metrics;
pub mod pca;
pub mod projection;
pub mod roi;
pub mod stats;
pub mod tsne;

use serde::{Deserialize, Serialize};

pub use augment::{augment_gaussian, augmentation_experiment, build_training_set, AugmentArm, ExperimentConfig, ExperimentData};
pub use classifier::{train_classifier, Classifier, ClassifierConfig};
pub use metrics::{auc_mann_whitney, auc_trapezoid, classification_metrics, cross_entropy, reports_to_csv, ClassifierReport, Confusion};
pub use pca::{pca_reduce, PcaResult};
pub use projection::{flatten_for_projection, project_sequences, unflatten, ProjectedItem, ProjectionResult, Source};
pub use roi::{
    bio_scram_ttest, condition_mean_z, resolve_region, roi_mean_series, zscore_series, ContrastReport, RegionContrast,
    SamplingUnit, TTestOptions,
};
pub use stats::{regularized_incomplete_beta, student_t_two_tailed, two_sample_ttest, TTest, VarianceModel};
pub use tsne::{initial_layout, knn_purity, tsne_embed, tsne_embed_from, TsneParams};

/// Every evaluation output of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub contrast: Option<ContrastReport>,
    pub projection: Option<ProjectionResult>,
    pub classification: Vec<ClassifierReport>,
}
