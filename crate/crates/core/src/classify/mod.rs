//! Second-level model: FPCA of the aligned curves, a penalized functional
//! logistic regression fitted as a GLMM, and label prediction for new
//! subjects by alternating warp and label.

mod cv;
mod fpca;
mod glmm;
mod model;
mod predict;

pub use cv::{cross_validate_k, stratified_folds, CvReport, CvScore};
pub use fpca::{fpca_decompose, project_scores, smooth_covariance, CoordinateFpca, FpcaModel};
pub use glmm::{fit_glmm, fit_scalar_logit, GlmmDesign, GlmmFit, GlmmOptions};
pub use model::{
    classify_prob, compute_j, fit_classifier, fit_classifier_aligned, training_probabilities, ClassifierModel,
};
pub use predict::{predict_new, predict_panel, read_predictions, write_predictions, PredictionResult};
