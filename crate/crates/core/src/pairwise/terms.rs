//! Per-pair factors. For a pair `(i, j)` the objective compares the observed
//! configuration with the one obtained by swapping their outcomes. The ratio
//! of the two likelihoods factorizes into `eta` (everything involving the
//! onset coefficients) and `zeta` (the remaining transitions).

use serde::{Deserialize, Serialize};

use crate::cox::LP_CLIP;
use crate::data::Observation;
use crate::nuisance::NuisanceSet;
use crate::step::StepFunction;

/// One scheduled pair. `log_zeta` is `-inf` for invalid pairs, whose
/// contribution to the objective is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub log_zeta: f64,
    pub valid: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-LP_CLIP, LP_CLIP)
}

/// Nuisance quantities of one observation that enter `zeta`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Factors {
    entry: f64,
    exit: f64,
    onset: bool,
    death: bool,
    lp13: f64,
    e13: f64,
    h13_exit: f64,
    lp23: f64,
    onset_cov: f64,
    h23_exit: f64,
    h23_entry: f64,
    lpc: f64,
    ec: f64,
    hc_exit: f64,
    hc_entry: f64,
}

impl Factors {
    pub(crate) fn new(nuisance: &NuisanceSet, o: &Observation) -> Self {
        let p = o.covariates.len();
        let lp13 = dot(&nuisance.beta13, &o.covariates);
        let lp23 = dot(&nuisance.beta23[..p], &o.covariates);
        let (lpc, hc_exit, hc_entry) = match &nuisance.censoring {
            Some(c) => (
                dot(&c.beta, &o.covariates),
                c.baseline.eval(o.exit_age),
                c.baseline.eval(o.entry_age),
            ),
            None => (0.0, 0.0, 0.0),
        };
        Factors {
            entry: o.entry_age,
            exit: o.exit_age,
            onset: o.onset,
            death: o.death,
            lp13,
            e13: lp13.exp(),
            h13_exit: nuisance.h013.eval(o.exit_age),
            lp23,
            onset_cov: nuisance.onset_transform.apply(o.exit_age),
            h23_exit: nuisance.h023.eval(o.exit_age),
            h23_entry: nuisance.h023.eval(o.entry_age),
            lpc,
            ec: lpc.exp(),
            hc_exit,
            hc_entry,
        }
    }
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `log zeta` from precomputed factors. `b23` is the onset-age coefficient
/// of the 2->3 model.
pub(crate) fn log_zeta_factors(fi: &Factors, fj: &Factors, b23: f64, censoring: bool) -> f64 {
    let valid = (fj.onset || fi.entry < fj.exit) && (fi.onset || fj.entry < fi.exit);
    if !valid {
        return f64::NEG_INFINITY;
    }
    let post = |lp: f64, onset_cov: f64| (lp + b23 * onset_cov).clamp(-LP_CLIP, LP_CLIP).exp();
    let mut x = (fi.lp13 - fj.lp13) * (ind(fj.death) - ind(fi.death))
        + (fi.h13_exit - fj.h13_exit) * (fi.e13 - fj.e13);
    if fi.entry > fj.exit {
        x += (fj.h23_exit - fi.h23_entry) * post(fi.lp23, fj.onset_cov);
    }
    if fj.entry > fi.exit {
        x += (fi.h23_exit - fj.h23_entry) * post(fj.lp23, fi.onset_cov);
    }
    if fi.entry > fi.exit {
        x += (fi.h23_entry - fi.h23_exit) * post(fi.lp23, fi.onset_cov);
    }
    if fj.entry > fj.exit {
        x += (fj.h23_entry - fj.h23_exit) * post(fj.lp23, fj.onset_cov);
    }
    if censoring {
        let di = ind(fi.onset) + ind(fi.death);
        let dj = ind(fj.onset) + ind(fj.death);
        x += (fi.lpc - fj.lpc) * (di - dj);
        x += ((fi.hc_exit - fi.hc_entry) * ind(fi.exit > fi.entry)
            + (fi.hc_entry - fj.hc_exit) * ind(fj.exit > fi.entry))
            * fi.ec;
        x += ((fj.hc_exit - fj.hc_entry) * ind(fj.exit > fj.entry)
            + (fj.hc_entry - fi.hc_exit) * ind(fi.exit > fj.entry))
            * fj.ec;
    }
    x
}

/// Log of the nuisance factor `zeta` for the pair `(i, j)`; `-inf` when the
/// swap would place a subject without onset at an exit before its entry.
pub fn log_zeta(nuisance: &NuisanceSet, obs_i: &Observation, obs_j: &Observation) -> f64 {
    let b23 = nuisance.beta23.last().copied().unwrap_or(0.0);
    log_zeta_factors(
        &Factors::new(nuisance, obs_i),
        &Factors::new(nuisance, obs_j),
        b23,
        nuisance.censoring.is_some(),
    )
}

pub fn log_eta(beta12: &[f64], h012: &StepFunction, obs_i: &Observation, obs_j: &Observation) -> f64 {
    let lpi = dot(beta12, &obs_i.covariates);
    let lpj = dot(beta12, &obs_j.covariates);
    let dd = ind(obs_j.onset) - ind(obs_i.onset);
    let dh = h012.eval(obs_i.exit_age) - h012.eval(obs_j.exit_age);
    (lpi - lpj) * dd + dh * (lpi.exp() - lpj.exp())
}

/// The onset factor `eta` of the pair `(i, j)`.
pub fn eta(beta12: &[f64], h012: &StepFunction, obs_i: &Observation, obs_j: &Observation) -> f64 {
    log_eta(beta12, h012, obs_i, obs_j).exp()
}

/// `ln(1 + e^x)` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + e^-x)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
