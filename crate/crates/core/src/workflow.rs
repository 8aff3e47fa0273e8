//! End-to-end pipelines: a single pairwise fit with optional variance, and
//! the one-model-per-candidate replication analysis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{CoxConfig, CoxFit, OnsetTransform, TransitionKind};
use crate::data::{Cohort, EventCounts, StandardizationKind};
use crate::error::{Error, Result};
use crate::inference::{one_sided_tests, stat_correlation_diag, TestResult};
use crate::nuisance::CensoringModel;
use crate::pairwise::{PairSchedule, PairwiseOptions};
use crate::variance::{estimate_variance, BootstrapOptions, Estimation, Method, VarianceResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Pairs per observation; `None` uses every pair.
    pub kn: Option<usize>,
    pub seed: u64,
    pub censoring: CensoringModel,
    pub onset_transform: OnsetTransform,
    pub variance: Option<Method>,
    pub replicates: usize,
    pub ktilde: Option<usize>,
    pub pairwise: PairwiseOptions,
}

impl FitConfig {
    pub fn new(kn: Option<usize>, seed: u64) -> Self {
        FitConfig {
            kn,
            seed,
            censoring: CensoringModel::Cox,
            onset_transform: OnsetTransform::Identity,
            variance: None,
            replicates: 100,
            ktilde: None,
            pairwise: PairwiseOptions::default(),
        }
    }

    fn schedule(&self, n: usize) -> Result<PairSchedule> {
        match self.kn {
            Some(kn) => PairSchedule::modulo(n, kn, Some(self.seed)),
            None => PairSchedule::complete(n),
        }
    }

    fn cox(&self) -> CoxConfig {
        CoxConfig {
            onset_transform: self.onset_transform,
            ..CoxConfig::default()
        }
    }

    fn bootstrap(&self) -> BootstrapOptions {
        BootstrapOptions {
            ktilde: self.ktilde,
            pairwise: self.pairwise,
            ..BootstrapOptions::new(self.replicates, self.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transition: String,
    pub covariates: Vec<String>,
    /// `false` when the transition had no events and its hazard was set to zero.
    pub fitted: bool,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub loglik: f64,
}

impl TransitionReport {
    fn from_fit(fit: &CoxFit) -> Self {
        TransitionReport {
            transition: fit.kind.label().into(),
            covariates: fit.names.clone(),
            fitted: true,
            beta: fit.beta.clone(),
            se: (0..fit.beta.len())
                .map(|k| fit.inv_information[(k, k)].max(0.0).sqrt())
                .collect(),
            n_events: fit.n_events,
            converged: fit.converged,
            iterations: fit.iterations,
            final_grad_norm: fit.final_grad_norm,
            loglik: fit.loglik,
        }
    }

    fn empty(kind: TransitionKind, names: &[String]) -> Self {
        TransitionReport {
            transition: kind.label().into(),
            covariates: names.to_vec(),
            fitted: false,
            beta: vec![0.0; names.len()],
            se: vec![0.0; names.len()],
            n_events: 0,
            converged: true,
            iterations: 0,
            final_grad_norm: 0.0,
            loglik: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub covariates: Vec<String>,
    pub estimate: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
    pub n_pairs: usize,
    pub n_invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub events: EventCounts,
    pub schedule: PairSchedule,
    pub transitions: Vec<TransitionReport>,
    pub pairwise: PairwiseReport,
    pub variance: Option<VarianceResult>,
}

/// Partial-likelihood nuisance fits, then the pairwise estimate, then the
/// requested variance.
pub fn run_fit(cohort: &Cohort, config: &FitConfig) -> Result<FitReport> {
    let schedule = config.schedule(cohort.len())?;
    let est = Estimation::new(cohort, schedule, config.censoring, config.cox(), &config.pairwise)?;
    let variance = match config.variance {
        Some(m) => Some(estimate_variance(&est, m, &config.bootstrap())?),
        None => None,
    };
    let model = &est.model;
    let mut transitions = vec![TransitionReport::from_fit(&est.nuisance.onset)];
    for (fit, pl) in [
        (&est.nuisance.death, Some(&model.death)),
        (&est.nuisance.post_onset, Some(&model.post_onset)),
        (&est.nuisance.censoring, model.censoring.as_ref()),
    ] {
        match (fit, pl) {
            (Some(f), _) => transitions.push(TransitionReport::from_fit(f)),
            (None, Some(pl)) => transitions.push(TransitionReport::empty(pl.kind(), pl.names())),
            (None, None) => {}
        }
    }
    Ok(FitReport {
        n: cohort.len(),
        events: cohort.event_counts(),
        schedule,
        transitions,
        pairwise: PairwiseReport {
            covariates: cohort.covariate_names.clone(),
            estimate: est.pairwise.estimate.clone(),
            se: variance.as_ref().map(|v| v.se.clone()),
            iterations: est.pairwise.iterations,
            grad_norm: est.pairwise.grad_norm,
            value: est.pairwise.value,
            n_pairs: est.pairwise.n_pairs,
            n_invalid: est.pairwise.n_invalid,
        },
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub candidates: Vec<String>,
    pub adjust: Vec<String>,
    pub kn: usize,
    pub replicates: usize,
    pub method: Method,
    pub ktilde: Option<usize>,
    pub level: f64,
    pub seed: u64,
    pub censoring: CensoringModel,
    /// Applied to the candidate and adjustment columns before fitting.
    pub standardize: Option<StandardizationKind>,
    /// Replicates for the test-statistic correlation check, if wanted.
    pub correlation_replicates: Option<usize>,
}

impl ReplicateConfig {
    pub fn new(candidates: Vec<String>, adjust: Vec<String>, kn: usize, replicates: usize, seed: u64) -> Self {
        ReplicateConfig {
            candidates,
            adjust,
            kn,
            replicates,
            method: Method::Boot3,
            ktilde: None,
            level: 0.05,
            seed,
            censoring: CensoringModel::Cox,
            standardize: Some(StandardizationKind::ZScore),
            correlation_replicates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub name: String,
    pub pairwise: TestResult,
    /// The standard partial-likelihood analysis of the same model.
    pub partial_likelihood: TestResult,
    pub n_invalid: usize,
    pub robust_mad: bool,
    pub dropped_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub n: usize,
    pub events: EventCounts,
    pub level: f64,
    pub candidates: Vec<CandidateResult>,
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl ReplicateReport {
    pub fn significant(&self) -> Vec<&str> {
        self.candidates
            .iter()
            .filter(|c| c.pairwise.significant)
            .map(|c| c.name.as_str())
            .collect()
    }
}

struct CandidateFit {
    estimate: f64,
    se: f64,
    pl_estimate: f64,
    pl_se: f64,
    n_invalid: usize,
    robust_mad: bool,
    dropped: usize,
}

/// One pairwise model per candidate (candidate first, then the adjusters),
/// one-sided tests for positive effects, and BH adjustment across
/// candidates.
pub fn run_replicate(cohort: &Cohort, config: &ReplicateConfig) -> Result<ReplicateReport> {
    if config.candidates.is_empty() {
        return Err(Error::Config("no candidate covariates given".into()));
    }
    if let Some(c) = config.candidates.iter().find(|c| config.adjust.contains(c)) {
        return Err(Error::Config(format!("'{c}' is both a candidate and an adjuster")));
    }
    let mut columns: Vec<&str> = config.candidates.iter().map(String::as_str).collect();
    columns.extend(config.adjust.iter().map(String::as_str));
    let mut data = cohort.select_covariates(&columns)?;
    if let Some(kind) = config.standardize {
        data.standardization = None;
        data = match kind {
            StandardizationKind::MinMax => crate::data::minmax_standardize(&data)?,
            StandardizationKind::ZScore => crate::data::zscore_standardize(&data)?,
        };
    }
    let schedule = PairSchedule::modulo(data.len(), config.kn, Some(config.seed))?;
    let boot = BootstrapOptions {
        ktilde: config.ktilde,
        ..BootstrapOptions::new(config.replicates, config.seed)
    };
    let adjust: Vec<&str> = config.adjust.iter().map(String::as_str).collect();
    let fits: Vec<CandidateFit> = config
        .candidates
        .par_iter()
        .map(|cand| {
            let mut names = vec![cand.as_str()];
            names.extend_from_slice(&adjust);
            let sub = data.select_covariates(&names)?;
            let est = Estimation::new(&sub, schedule, config.censoring, CoxConfig::default(), &boot.pairwise)?;
            let var = estimate_variance(&est, config.method, &boot)?;
            let pl = &est.nuisance.onset;
            Ok(CandidateFit {
                estimate: est.estimate()[0],
                se: var.se[0],
                pl_estimate: pl.beta[0],
                pl_se: pl.inv_information[(0, 0)].max(0.0).sqrt(),
                n_invalid: est.pairwise.n_invalid,
                robust_mad: var.robust_mad,
                dropped: var.dropped,
            })
        })
        .collect::<Result<_>>()?;
    let pick = |f: fn(&CandidateFit) -> f64| fits.iter().map(f).collect::<Vec<f64>>();
    let pairwise = one_sided_tests(&config.candidates, &pick(|f| f.estimate), &pick(|f| f.se), config.level)?;
    let pl = one_sided_tests(&config.candidates, &pick(|f| f.pl_estimate), &pick(|f| f.pl_se), config.level)?;
    let correlation = match config.correlation_replicates {
        Some(b) => {
            let cands: Vec<&str> = config.candidates.iter().map(String::as_str).collect();
            Some(stat_correlation_diag(&data, &cands, &adjust, b, config.seed)?)
        }
        None => None,
    };
    Ok(ReplicateReport {
        n: data.len(),
        events: data.event_counts(),
        level: config.level,
        candidates: fits
            .iter()
            .zip(pairwise.into_iter().zip(pl))
            .map(|(f, (pw, pl))| CandidateResult {
                name: pw.name.clone(),
                pairwise: pw,
                partial_likelihood: pl,
                n_invalid: f.n_invalid,
                robust_mad: f.robust_mad,
                dropped_replicates: f.dropped,
            })
            .collect(),
        correlation,
    })
}
