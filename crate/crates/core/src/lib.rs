//! Pairwise pseudolikelihood estimation of covariate effects on disease
//! onset in left-truncated illness-death cohorts with prevalent cases.

pub mod cox;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod nuisance;
pub mod pairwise;
pub mod rng;
pub mod simulate;
pub mod step;
pub mod variance;
pub mod workflow;

pub use cox::{breslow, fit_pl, pl_information, CoxConfig, CoxFit, OnsetTransform, TransitionKind};
pub use data::{minmax_standardize, zscore_standardize, Cohort, Observation};
pub use error::{Error, Result};
pub use io::{ingest_csv, write_csv, IngestOptions};
pub use step::{eval_step, StepFunction};
pub use nuisance::{fit_nuisance, CensoringModel, NuisanceFit, NuisanceSet};
pub use pairwise::{fit_pairwise, PairSchedule, PairwiseFit, PairwiseOptions, PairwiseProblem};
pub use simulate::{gen_cohort, gen_covariates, sample_cox_time, ScenarioSpec, Setting, Simulated};
pub use variance::{bootstrap1, bootstrap2, bootstrap3, estimate_variance, robust_se, BootstrapOptions, Estimation, Method, VarianceResult};
pub use inference::{bh_adjust, one_sided_tests, stat_correlation_diag, wald_one_sided, TestResult};
pub use workflow::{run_fit, run_replicate, FitConfig, FitReport, ReplicateConfig, ReplicateReport};
