//! Partial-likelihood estimates of every quantity the pairwise objective
//! treats as known: the onset model (start value and baseline), the two
//! death models and the censoring model.

use serde::{Deserialize, Serialize};

use crate::cox::{CoxConfig, CoxFit, OnsetTransform, PartialLikelihood, TransitionKind};
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringModel {
    /// Cox model for the censoring hazard.
    #[default]
    Cox,
    /// Censoring ignored; its factors in the pair terms are 1.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensoringPart {
    pub beta: Vec<f64>,
    pub baseline: StepFunction,
}

/// Plug-in values for the pairwise objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    /// Partial-likelihood estimate of the onset coefficients.
    pub beta12_pl: Vec<f64>,
    pub h012: StepFunction,
    pub beta13: Vec<f64>,
    pub h013: StepFunction,
    /// Covariate coefficients followed by the onset-age coefficient.
    pub beta23: Vec<f64>,
    pub h023: StepFunction,
    pub censoring: Option<CensoringPart>,
    pub onset_transform: OnsetTransform,
}

impl NuisanceSet {
    pub fn censoring_model(&self) -> CensoringModel {
        if self.censoring.is_some() {
            CensoringModel::Cox
        } else {
            CensoringModel::None
        }
    }

    pub fn dim(&self) -> usize {
        self.beta12_pl.len()
    }
}

/// The partial likelihoods of a cohort, sorted once and reused by every
/// bootstrap replicate.
#[derive(Debug, Clone)]
pub struct NuisanceModel {
    pub onset: PartialLikelihood,
    pub death: PartialLikelihood,
    pub post_onset: PartialLikelihood,
    pub censoring: Option<PartialLikelihood>,
    pub config: CoxConfig,
}

/// Full partial-likelihood fits behind a [`NuisanceSet`]. Transitions
/// without events (other than onset) are absent and get a zero hazard.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub set: NuisanceSet,
    pub onset: CoxFit,
    pub death: Option<CoxFit>,
    pub post_onset: Option<CoxFit>,
    pub censoring: Option<CoxFit>,
}

impl NuisanceFit {
    pub fn fits(&self) -> Vec<&CoxFit> {
        std::iter::once(&self.onset)
            .chain(self.death.as_ref())
            .chain(self.post_onset.as_ref())
            .chain(self.censoring.as_ref())
            .collect()
    }
}

/// Coefficients at which [`NuisanceModel::baselines_at`] evaluates the
/// Breslow estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBetas {
    pub beta12: Vec<f64>,
    pub beta13: Vec<f64>,
    pub beta23: Vec<f64>,
    pub beta_c: Option<Vec<f64>>,
}

impl NuisanceModel {
    pub fn new(cohort: &Cohort, censoring: CensoringModel, config: CoxConfig) -> Self {
        let t = config.onset_transform;
        NuisanceModel {
            onset: PartialLikelihood::new(cohort, TransitionKind::Onset, t),
            death: PartialLikelihood::new(cohort, TransitionKind::Death, t),
            post_onset: PartialLikelihood::new(cohort, TransitionKind::PostOnsetDeath, t),
            censoring: match censoring {
                CensoringModel::Cox => Some(PartialLikelihood::new(cohort, TransitionKind::Censoring, t)),
                CensoringModel::None => None,
            },
            config,
        }
    }

    pub fn fit(&self, weights: Option<&[f64]>) -> Result<NuisanceFit> {
        let onset = self.onset.fit(weights, &self.config)?;
        let death = optional_fit(&self.death, weights, &self.config)?;
        let post_onset = optional_fit(&self.post_onset, weights, &self.config)?;
        let censoring = match &self.censoring {
            Some(pl) => optional_fit(pl, weights, &self.config)?,
            None => None,
        };
        let (beta13, h013) = parts(&death, self.death.dim());
        let (beta23, h023) = parts(&post_onset, self.post_onset.dim());
        let censoring_part = self.censoring.as_ref().map(|pl| {
            let (beta, baseline) = parts(&censoring, pl.dim());
            CensoringPart { beta, baseline }
        });
        let set = NuisanceSet {
            beta12_pl: onset.beta.clone(),
            h012: onset.baseline.clone(),
            beta13,
            h013,
            beta23,
            h023,
            censoring: censoring_part,
            onset_transform: self.config.onset_transform,
        };
        Ok(NuisanceFit {
            set,
            onset,
            death,
            post_onset,
            censoring,
        })
    }

    /// Weighted Breslow baselines at the given coefficients.
    pub fn baselines_at(&self, betas: &NuisanceBetas, weights: Option<&[f64]>) -> Result<NuisanceSet> {
        let censoring = match (&self.censoring, &betas.beta_c) {
            (Some(pl), Some(beta)) => Some(CensoringPart {
                beta: beta.clone(),
                baseline: pl.breslow(beta, weights)?,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Parameter(
                    "censoring coefficients do not match the censoring model".into(),
                ))
            }
        };
        Ok(NuisanceSet {
            beta12_pl: betas.beta12.clone(),
            h012: self.onset.breslow(&betas.beta12, weights)?,
            beta13: betas.beta13.clone(),
            h013: self.death.breslow(&betas.beta13, weights)?,
            beta23: betas.beta23.clone(),
            h023: self.post_onset.breslow(&betas.beta23, weights)?,
            censoring,
            onset_transform: self.config.onset_transform,
        })
    }
}

fn optional_fit(pl: &PartialLikelihood, weights: Option<&[f64]>, config: &CoxConfig) -> Result<Option<CoxFit>> {
    match pl.fit(weights, config) {
        Ok(fit) => Ok(Some(fit)),
        Err(Error::NoEvents(kind)) => {
            log::warn!("no events for transition {kind}; its hazard is taken as zero");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn parts(fit: &Option<CoxFit>, dim: usize) -> (Vec<f64>, StepFunction) {
    match fit {
        Some(f) => (f.beta.clone(), f.baseline.clone()),
        None => (vec![0.0; dim], StepFunction::zero()),
    }
}

/// Fits all nuisance partial likelihoods of a cohort.
pub fn fit_nuisance(
    cohort: &Cohort,
    weights: Option<&[f64]>,
    censoring: CensoringModel,
    config: &CoxConfig,
) -> Result<NuisanceFit> {
    NuisanceModel::new(cohort, censoring, *config).fit(weights)
}
