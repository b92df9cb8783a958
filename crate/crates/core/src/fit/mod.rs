//! Survival-model fitting kernels shared by the adjustment methods.

mod cox;
mod dataset;
mod km;
pub(crate) mod linalg;
mod logistic;
mod posterior;
mod weibull;

pub use cox::{cox_fit, cox_fit_with, cox_loglik, cox_score_test, CoxOptions, Ties};
pub use dataset::{FitResult, SurvDataset, Z_95};
pub use km::{km_estimate, logrank, KaplanMeier, LogRank};
pub use logistic::{inv_logit, pooled_logistic_fit, PersonPeriodTable};
pub use posterior::{gamma_posterior_draws, GammaPrior, PathExposure, PathSummary, PosteriorDraws};
pub use weibull::{weibull_aft_fit, WeibullAftFit};
