use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::objective::{Order, PairEvaluation, PairwiseProblem};
use super::schedule::PairSchedule;
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::NuisanceSet;

static MAXIMIZATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of pairwise maximizations started in this process.
pub fn maximization_count() -> usize {
    MAXIMIZATIONS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOptions {
    pub max_iter: usize,
    /// Convergence when `max |score| < tol`.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for PairwiseOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFit {
    pub estimate: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
    pub n_pairs: usize,
    pub n_invalid: usize,
}

/// Newton direction for maximizing: solves `(-H) d = U`, adding a ridge
/// when `-H` is not positive definite.
fn ascent_direction(eval: &PairEvaluation) -> DVector<f64> {
    let neg_h = -eval.hessian.clone().expect("requested");
    let u = DVector::from_column_slice(&eval.score);
    if let Some(d) = linalg::solve_spd(&neg_h, &u) {
        return d;
    }
    let scale = neg_h.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    let mut ridge = 1e-8 * scale;
    for _ in 0..24 {
        let m = &neg_h + DMatrix::identity(neg_h.nrows(), neg_h.ncols()) * ridge;
        if let Some(d) = linalg::solve_spd(&m, &u) {
            log::debug!("pairwise Newton step used ridge {ridge:e}");
            return d;
        }
        ridge *= 10.0;
    }
    u
}

impl PairwiseProblem {
    /// Newton-Raphson with step-halving from `start`.
    pub fn maximize(&self, start: &[f64], opts: &PairwiseOptions) -> Result<PairwiseFit> {
        MAXIMIZATIONS.fetch_add(1, Ordering::SeqCst);
        if self.n_invalid() == self.n_pairs() {
            return Err(Error::DegenerateObjective);
        }
        let mut beta = start.to_vec();
        let mut eval = self.evaluate(&beta, Order::Hessian);
        let mut iterations = 0;
        loop {
            let gnorm = linalg::max_abs(&eval.score);
            if gnorm < opts.tol {
                return Ok(PairwiseFit {
                    estimate: beta,
                    iterations,
                    grad_norm: gnorm,
                    value: eval.value,
                    n_pairs: self.n_pairs(),
                    n_invalid: self.n_invalid(),
                });
            }
            if iterations >= opts.max_iter || !eval.value.is_finite() {
                break;
            }
            let d = ascent_direction(&eval);
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let cand: Vec<f64> = beta.iter().zip(d.iter()).map(|(b, s)| b + scale * s).collect();
                let next = self.evaluate(&cand, Order::Hessian);
                if next.value.is_finite() && next.value + 1e-14 * (1.0 + eval.value.abs()) >= eval.value {
                    accepted = Some((cand, next));
                    break;
                }
                scale *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((cand, next)) => {
                    beta = cand;
                    eval = next;
                }
                None => break,
            }
        }
        Err(Error::NonConvergence {
            what: "pairwise pseudolikelihood".into(),
            iterations,
            grad_norm: linalg::max_abs(&eval.score),
            last_iterate: beta,
        })
    }
}

/// Maximizes the pairwise objective starting at the partial-likelihood
/// estimate of the onset coefficients.
pub fn fit_pairwise(
    cohort: &Cohort,
    nuisance: &NuisanceSet,
    schedule: &PairSchedule,
    opts: &PairwiseOptions,
) -> Result<PairwiseFit> {
    PairwiseProblem::new(cohort, nuisance, schedule, None)?.maximize(&nuisance.beta12_pl, opts)
}
