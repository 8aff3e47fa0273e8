//! One-sided Wald tests, Benjamini-Hochberg adjustment and a bootstrap
//! check on the correlation of test statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cox::{CoxConfig, PartialLikelihood, TransitionKind};
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{exponential_weights, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_one_sided: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Upper-tail p-value for `H1: effect > 0`.
pub fn wald_one_sided(estimate: f64, se: f64) -> Result<f64> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::Parameter(format!("standard error must be positive (got {se})")));
    }
    Ok(Normal::new(0.0, 1.0).expect("standard normal").sf(estimate / se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhOutcome {
    pub adjusted: Vec<f64>,
    /// Indices (input order) with adjusted p-value at or below the level.
    pub rejected: Vec<usize>,
}

/// Step-up Benjamini-Hochberg adjusted p-values, in input order.
pub fn bh_adjust(pvalues: &[f64], level: f64) -> Result<BhOutcome> {
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Parameter(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(pvalues[i] * (m as f64 / (rank + 1) as f64)).min(1.0);
        adjusted[i] = running;
    }
    let rejected = (0..m).filter(|&i| adjusted[i] <= level).collect();
    Ok(BhOutcome { adjusted, rejected })
}

/// Builds test results from estimates and standard errors, adjusting
/// across all of them.
pub fn one_sided_tests(names: &[String], estimates: &[f64], ses: &[f64], level: f64) -> Result<Vec<TestResult>> {
    let p: Vec<f64> = estimates
        .iter()
        .zip(ses)
        .map(|(&e, &s)| wald_one_sided(e, s))
        .collect::<Result<_>>()?;
    let bh = bh_adjust(&p, level)?;
    Ok((0..names.len())
        .map(|k| TestResult {
            name: names[k].clone(),
            estimate: estimates[k],
            se: ses[k],
            z: estimates[k] / ses[k],
            p_one_sided: p[k],
            p_adjusted: bh.adjusted[k],
            significant: bh.adjusted[k] <= level,
        })
        .collect())
}

/// Correlation across weighted-bootstrap replicates of the onset Wald
/// statistics of one partial-likelihood model per candidate (each with the
/// shared adjusters).
pub fn stat_correlation_diag(
    cohort: &Cohort,
    candidates: &[&str],
    adjust: &[&str],
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if replicates < 10 {
        return Err(Error::Parameter("the correlation check needs at least 10 replicates".into()));
    }
    let config = CoxConfig::default();
    let models: Vec<PartialLikelihood> = candidates
        .iter()
        .map(|c| {
            let mut names = vec![*c];
            names.extend_from_slice(adjust);
            let sub = cohort.select_covariates(&names)?;
            Ok(PartialLikelihood::new(&sub, TransitionKind::Onset, config.onset_transform))
        })
        .collect::<Result<_>>()?;
    let n = cohort.len();
    let rows: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64 + 1);
            let w = exponential_weights(&mut rng, n);
            let mut z = Vec::with_capacity(models.len());
            for m in &models {
                match m.fit(Some(&w), &config) {
                    Ok(f) => z.push(f.beta[0] / f.inv_information[(0, 0)].sqrt()),
                    Err(e) => {
                        log::warn!("correlation replicate {} dropped: {e}", b + 1);
                        return None;
                    }
                }
            }
            Some(z)
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if rows.len() < 3 {
        return Err(Error::TooManyDropped {
            dropped: replicates - rows.len(),
            total: replicates,
        });
    }
    let cov = linalg::empirical_covariance(&rows);
    let k = candidates.len();
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        out[a][a] = 1.0;
        for b in (a + 1)..k {
            let r = cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt();
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    Ok(out)
}
