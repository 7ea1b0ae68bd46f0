//! Hard-EM training and the per-subclass logistic refinement.

mod em;
pub mod logistic;

pub use em::{
    completed_log_score, fit_subclass_logreg, hard_em_train, init_params, m_step_estimate,
    train_model, Example, LearningError, ModelTemplate, TrainedModel, TrainingConfig,
    STD_DEV_FLOOR,
};
pub use logistic::{fit_logistic, fit_logistic_weighted, LogRegModel, Sample};

#[cfg(test)]
mod tests;
