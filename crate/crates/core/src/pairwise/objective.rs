use nalgebra::DMatrix;
use rayon::prelude::*;

use super::schedule::PairSchedule;
use super::terms::{dot, log_zeta_factors, logistic, softplus, Factors, PairTerm};
use crate::cox::check_weights;
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceSet;

/// Pairs per parallel block; partial sums are reduced in block order.
const BLOCK: usize = 4096;

/// The pairwise objective for fixed nuisance quantities: `zeta` is computed
/// once per pair, only the onset factor depends on the coefficients.
#[derive(Debug, Clone)]
pub struct PairwiseProblem {
    n: usize,
    p: usize,
    z: Vec<f64>,
    onset: Vec<f64>,
    h012: Vec<f64>,
    pairs: Vec<(u32, u32)>,
    log_zeta: Vec<f64>,
    weights: Option<Vec<f64>>,
    normalizer: f64,
    schedule: PairSchedule,
    n_invalid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Score,
    Hessian,
}

/// Objective value and derivatives at one coefficient vector.
#[derive(Debug, Clone)]
pub struct PairEvaluation {
    pub value: f64,
    pub score: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

struct Partial {
    value: f64,
    score: Vec<f64>,
    outer: Vec<f64>,
    diag_coef: Vec<(u32, f64)>,
}

impl PairwiseProblem {
    /// `weights`, when given, multiply the term of pair `(i, j)` by
    /// `w_i * w_j`; the normalizer is unchanged.
    pub fn new(
        cohort: &Cohort,
        nuisance: &NuisanceSet,
        schedule: &PairSchedule,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        let n = cohort.len();
        let p = cohort.dim();
        if schedule.n() != n {
            return Err(Error::Parameter(format!(
                "schedule built for {} observations, cohort has {n}",
                schedule.n()
            )));
        }
        if nuisance.beta12_pl.len() != p
            || nuisance.beta13.len() != p
            || nuisance.beta23.len() != p + 1
            || nuisance.censoring.as_ref().is_some_and(|c| c.beta.len() != p)
        {
            return Err(Error::Parameter(
                "nuisance coefficient dimensions do not match the cohort".into(),
            ));
        }
        if let Some(w) = weights {
            check_weights(w, n)?;
        }
        let factors: Vec<Factors> = cohort
            .observations
            .iter()
            .map(|o| Factors::new(nuisance, o))
            .collect();
        let b23 = nuisance.beta23[p];
        let censoring = nuisance.censoring.is_some();
        let pairs = schedule.pairs();
        let log_zeta: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| log_zeta_factors(&factors[i as usize], &factors[j as usize], b23, censoring))
            .collect();
        let n_invalid = log_zeta.iter().filter(|x| **x == f64::NEG_INFINITY).count();
        let z = cohort
            .observations
            .iter()
            .flat_map(|o| o.covariates.iter().copied())
            .collect();
        Ok(PairwiseProblem {
            n,
            p,
            z,
            onset: cohort
                .observations
                .iter()
                .map(|o| if o.onset { 1.0 } else { 0.0 })
                .collect(),
            h012: cohort
                .observations
                .iter()
                .map(|o| nuisance.h012.eval(o.exit_age))
                .collect(),
            pairs,
            log_zeta,
            weights: weights.map(<[f64]>::to_vec),
            normalizer: schedule.normalizer(),
            schedule: *schedule,
            n_invalid,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn schedule(&self) -> &PairSchedule {
        &self.schedule
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_invalid(&self) -> usize {
        self.n_invalid
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn terms(&self) -> impl Iterator<Item = PairTerm> + '_ {
        self.pairs.iter().zip(&self.log_zeta).map(|(&(i, j), &lz)| PairTerm {
            i: i as usize,
            j: j as usize,
            log_zeta: lz,
            valid: lz != f64::NEG_INFINITY,
        })
    }

    fn zrow(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    fn pair_weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i] * w[j],
            None => 1.0,
        }
    }

    fn predictors(&self, beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lp: Vec<f64> = (0..self.n).map(|i| dot(beta, self.zrow(i))).collect();
        let e = lp.iter().map(|x| x.exp()).collect();
        (lp, e)
    }

    /// `log zeta + log eta` of pair `k`, and the onset-factor gradient
    /// ingredients `(d_delta, d_h)`.
    #[inline]
    fn pair_x(&self, k: usize, lp: &[f64], e: &[f64]) -> (f64, f64, f64) {
        let (i, j) = (self.pairs[k].0 as usize, self.pairs[k].1 as usize);
        let dd = self.onset[j] - self.onset[i];
        let dh = self.h012[i] - self.h012[j];
        let log_eta = (lp[i] - lp[j]) * dd + dh * (e[i] - e[j]);
        (self.log_zeta[k] + log_eta, dd, dh)
    }

    fn block(&self, range: std::ops::Range<usize>, lp: &[f64], e: &[f64], order: Order) -> Partial {
        let p = self.p;
        let mut part = Partial {
            value: 0.0,
            score: vec![0.0; if order >= Order::Score { p } else { 0 }],
            outer: vec![0.0; if order >= Order::Hessian { p * p } else { 0 }],
            diag_coef: Vec::new(),
        };
        let mut g = vec![0.0; p];
        for k in range {
            if self.log_zeta[k] == f64::NEG_INFINITY {
                continue;
            }
            let (i, j) = (self.pairs[k].0 as usize, self.pairs[k].1 as usize);
            let w = self.pair_weight(i, j);
            let (x, dd, dh) = self.pair_x(k, lp, e);
            part.value -= w * softplus(x);
            if order == Order::Value {
                continue;
            }
            let s = logistic(x);
            let (zi, zj) = (self.zrow(i), self.zrow(j));
            for c in 0..p {
                g[c] = (zi[c] - zj[c]) * dd + dh * (e[i] * zi[c] - e[j] * zj[c]);
                part.score[c] -= w * s * g[c];
            }
            if order == Order::Hessian {
                let a = w * s * (1.0 - s);
                for c in 0..p {
                    let ag = a * g[c];
                    for d in c..p {
                        part.outer[c * p + d] += ag * g[d];
                    }
                }
                let b = w * s * dh;
                if b != 0.0 {
                    part.diag_coef.push((i as u32, b * e[i]));
                    part.diag_coef.push((j as u32, -b * e[j]));
                }
            }
        }
        part
    }

    pub fn evaluate(&self, beta: &[f64], order: Order) -> PairEvaluation {
        assert_eq!(beta.len(), self.p, "coefficient length");
        let p = self.p;
        let (lp, e) = self.predictors(beta);
        let starts: Vec<usize> = (0..self.pairs.len()).step_by(BLOCK).collect();
        let parts: Vec<Partial> = starts
            .par_iter()
            .map(|&s| self.block(s..(s + BLOCK).min(self.pairs.len()), &lp, &e, order))
            .collect();
        let mut value = 0.0;
        let mut score = vec![0.0; p];
        let mut outer = vec![0.0; p * p];
        let mut coef = vec![0.0; if order == Order::Hessian { self.n } else { 0 }];
        for part in &parts {
            value += part.value;
            for (acc, x) in score.iter_mut().zip(&part.score) {
                *acc += x;
            }
            for (acc, x) in outer.iter_mut().zip(&part.outer) {
                *acc += x;
            }
            for &(i, c) in &part.diag_coef {
                coef[i as usize] += c;
            }
        }
        let norm = self.normalizer;
        let hessian = (order == Order::Hessian).then(|| {
            let mut h = DMatrix::zeros(p, p);
            for (i, &c) in coef.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let zi = self.zrow(i);
                for a in 0..p {
                    for b in a..p {
                        outer[a * p + b] += c * zi[a] * zi[b];
                    }
                }
            }
            for a in 0..p {
                for b in a..p {
                    let v = -outer[a * p + b] / norm;
                    h[(a, b)] = v;
                    h[(b, a)] = v;
                }
            }
            h
        });
        PairEvaluation {
            value: value / norm,
            score: score.iter().map(|s| s / norm).collect(),
            hessian,
        }
    }

    pub fn loglik(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta, Order::Value).value
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.evaluate(beta, Order::Score).score
    }

    pub fn hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        self.evaluate(beta, Order::Hessian).hessian.expect("requested")
    }

    /// Unnormalized per-pair score contributions `psi`, row-major
    /// (`n_pairs x p`), in schedule order. Invalid pairs give zero rows.
    pub fn psi(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p;
        let (lp, e) = self.predictors(beta);
        let mut out = vec![0.0; self.pairs.len() * p];
        out.par_chunks_mut(p).enumerate().for_each(|(k, row)| {
            if self.log_zeta[k] == f64::NEG_INFINITY {
                return;
            }
            let (i, j) = (self.pairs[k].0 as usize, self.pairs[k].1 as usize);
            let w = self.pair_weight(i, j);
            let (x, dd, dh) = self.pair_x(k, &lp, &e);
            let s = w * logistic(x);
            let (zi, zj) = (self.zrow(i), self.zrow(j));
            for c in 0..p {
                row[c] = -s * ((zi[c] - zj[c]) * dd + dh * (e[i] * zi[c] - e[j] * zj[c]));
            }
        });
        out
    }
}

pub fn pair_loglik(beta12: &[f64], nuisance: &NuisanceSet, cohort: &Cohort, schedule: &PairSchedule) -> Result<f64> {
    Ok(PairwiseProblem::new(cohort, nuisance, schedule, None)?.loglik(beta12))
}

pub fn pair_score(
    beta12: &[f64],
    nuisance: &NuisanceSet,
    cohort: &Cohort,
    schedule: &PairSchedule,
) -> Result<Vec<f64>> {
    Ok(PairwiseProblem::new(cohort, nuisance, schedule, None)?.score(beta12))
}

pub fn pair_hessian(
    beta12: &[f64],
    nuisance: &NuisanceSet,
    cohort: &Cohort,
    schedule: &PairSchedule,
) -> Result<DMatrix<f64>> {
    Ok(PairwiseProblem::new(cohort, nuisance, schedule, None)?.hessian(beta12))
}
