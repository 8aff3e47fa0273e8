//! Weighted Cox partial likelihood with delayed-entry risk sets, Breslow
//! baselines and information matrices for the four transitions of the
//! illness-death model.
//!
//! Breslow baselines fitted here are conditional on survival to entry; they
//! are not population baselines. The pairwise estimator only uses their
//! differences, so no life-table correction is applied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::linalg;
use crate::step::StepFunction;

/// Linear predictors are clipped to this range before exponentiation.
pub const LP_CLIP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    /// healthy -> diseased, incident cases only
    Onset,
    /// healthy -> dead
    Death,
    /// diseased -> dead, with onset age as an extra covariate
    PostOnsetDeath,
    Censoring,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 4] = [
        TransitionKind::Onset,
        TransitionKind::Death,
        TransitionKind::PostOnsetDeath,
        TransitionKind::Censoring,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TransitionKind::Onset => "1->2",
            TransitionKind::Death => "1->3",
            TransitionKind::PostOnsetDeath => "2->3",
            TransitionKind::Censoring => "censoring",
        }
    }
}

/// How onset age enters the 2->3 model as a covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnsetTransform {
    #[default]
    Identity,
    Log,
}

impl OnsetTransform {
    pub fn apply(self, onset_age: f64) -> f64 {
        match self {
            OnsetTransform::Identity => onset_age,
            OnsetTransform::Log => onset_age.ln(),
        }
    }
}

pub const ONSET_AGE_COLUMN: &str = "onset_age";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxConfig {
    pub max_iter: usize,
    /// Convergence when `max |score| < tol`.
    pub tol: f64,
    pub max_halvings: usize,
    pub onset_transform: OnsetTransform,
}

impl Default for CoxConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 20,
            onset_transform: OnsetTransform::Identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub kind: TransitionKind,
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub information: DMatrix<f64>,
    pub inv_information: DMatrix<f64>,
    pub baseline: StepFunction,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub loglik: f64,
}

/// Risk-set layout of one transition, sorted once and reused for every
/// evaluation.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    kind: TransitionKind,
    names: Vec<String>,
    p: usize,
    /// Cohort row of each member.
    rows: Vec<usize>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    event: Vec<bool>,
    z: Vec<f64>,
    by_exit: Vec<usize>,
    by_entry: Vec<usize>,
    n_cohort: usize,
}

struct Evaluation {
    loglik: f64,
    grad: Vec<f64>,
    info: Option<DMatrix<f64>>,
    /// Ascending (time, weighted events, weighted S0, at-risk count).
    steps: Vec<(f64, f64, f64, usize)>,
    weighted_events: f64,
}

struct Sums {
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    count: usize,
}

impl Sums {
    fn new(p: usize, with_s2: bool) -> Self {
        Sums {
            s0: 0.0,
            s1: vec![0.0; p],
            s2: if with_s2 { vec![0.0; p * p] } else { Vec::new() },
            count: 0,
        }
    }

    fn add(&mut self, r: f64, z: &[f64]) {
        self.count += 1;
        self.s0 += r;
        for (a, za) in z.iter().enumerate() {
            self.s1[a] += r * za;
        }
        if !self.s2.is_empty() {
            let p = z.len();
            for a in 0..p {
                let rza = r * z[a];
                for b in a..p {
                    self.s2[a * p + b] += rza * z[b];
                }
            }
        }
    }
}

impl PartialLikelihood {
    pub fn new(cohort: &Cohort, kind: TransitionKind, transform: OnsetTransform) -> Self {
        let mut names = cohort.covariate_names.clone();
        if kind == TransitionKind::PostOnsetDeath {
            names.push(ONSET_AGE_COLUMN.to_string());
        }
        let p = names.len();
        let mut pl = PartialLikelihood {
            kind,
            names,
            p,
            rows: Vec::new(),
            entry: Vec::new(),
            exit: Vec::new(),
            event: Vec::new(),
            z: Vec::new(),
            by_exit: Vec::new(),
            by_entry: Vec::new(),
            n_cohort: cohort.len(),
        };
        for (i, o) in cohort.observations.iter().enumerate() {
            let (entry, exit, event) = match kind {
                TransitionKind::Onset | TransitionKind::Death | TransitionKind::Censoring => {
                    if o.entry_age > o.exit_age {
                        continue;
                    }
                    let ev = match kind {
                        TransitionKind::Onset => o.onset,
                        TransitionKind::Death => o.death,
                        _ => o.is_censored(),
                    };
                    (o.entry_age, o.exit_age, ev)
                }
                TransitionKind::PostOnsetDeath => {
                    if !o.onset {
                        continue;
                    }
                    (o.entry_age.max(o.exit_age), o.post_onset_exit_age, o.post_onset_death)
                }
            };
            pl.rows.push(i);
            pl.entry.push(entry);
            pl.exit.push(exit);
            pl.event.push(event);
            pl.z.extend_from_slice(&o.covariates);
            if kind == TransitionKind::PostOnsetDeath {
                pl.z.push(transform.apply(o.exit_age));
            }
        }
        let m = pl.rows.len();
        pl.by_exit = (0..m).collect();
        pl.by_exit.sort_by(|&a, &b| pl.exit[b].total_cmp(&pl.exit[a]).then(a.cmp(&b)));
        pl.by_entry = (0..m).collect();
        pl.by_entry.sort_by(|&a, &b| pl.entry[b].total_cmp(&pl.entry[a]).then(a.cmp(&b)));
        pl
    }

    pub fn kind(&self) -> TransitionKind {
        self.kind
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Members of the transition's sample (cohort row indices).
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn covariates_of(&self, member: usize) -> &[f64] {
        &self.z[member * self.p..(member + 1) * self.p]
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|e| **e).count()
    }

    fn member_weights(&self, weights: Option<&[f64]>) -> Result<Vec<f64>> {
        match weights {
            None => Ok(vec![1.0; self.rows.len()]),
            Some(w) => {
                check_weights(w, self.n_cohort)?;
                Ok(self.rows.iter().map(|&i| w[i]).collect())
            }
        }
    }

    fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        let mut clipped = 0usize;
        let lp = (0..self.rows.len())
            .map(|k| {
                let eta: f64 = self.covariates_of(k).iter().zip(beta).map(|(z, b)| z * b).sum();
                if eta.abs() > LP_CLIP {
                    clipped += 1;
                }
                eta.clamp(-LP_CLIP, LP_CLIP)
            })
            .collect();
        if clipped > 0 {
            log::debug!("{}: clipped {clipped} linear predictors", self.kind.label());
        }
        lp
    }

    fn evaluate(&self, beta: &[f64], weights: &[f64], want_info: bool) -> Result<Evaluation> {
        let p = self.p;
        let lp = self.linear_predictors(beta);
        let r: Vec<f64> = lp.iter().zip(weights).map(|(l, w)| w * l.exp()).collect();

        let mut at_exit = Sums::new(p, want_info);
        let mut after_entry = Sums::new(p, want_info);
        let (mut a, mut b) = (0usize, 0usize);
        let m = self.rows.len();

        let mut loglik = 0.0;
        let mut grad = vec![0.0; p];
        let mut info = if want_info { Some(DMatrix::zeros(p, p)) } else { None };
        let mut steps = Vec::new();
        let mut weighted_events = 0.0;

        let mut e = 0usize;
        while e < m {
            // next distinct event time, descending
            let k = self.by_exit[e];
            if !self.event[k] {
                e += 1;
                continue;
            }
            let t = self.exit[k];
            let mut d_w = 0.0;
            let mut d_count = 0usize;
            let mut ev_z = vec![0.0; p];
            let mut ev_lp = 0.0;
            while a < m && self.exit[self.by_exit[a]] >= t {
                let j = self.by_exit[a];
                at_exit.add(r[j], self.covariates_of(j));
                if self.event[j] && self.exit[j] == t {
                    let w = weights[j];
                    d_w += w;
                    d_count += 1;
                    ev_lp += w * lp[j];
                    for (acc, z) in ev_z.iter_mut().zip(self.covariates_of(j)) {
                        *acc += w * z;
                    }
                }
                a += 1;
            }
            while b < m && self.entry[self.by_entry[b]] > t {
                let j = self.by_entry[b];
                after_entry.add(r[j], self.covariates_of(j));
                b += 1;
            }
            e = a;
            let count = at_exit.count - after_entry.count;
            if count == 0 {
                return Err(Error::EmptyRiskSet { time: t });
            }
            if d_count == 0 || d_w == 0.0 {
                continue;
            }
            let s0 = at_exit.s0 - after_entry.s0;
            if !(s0 > 0.0) {
                return Err(Error::EmptyRiskSet { time: t });
            }
            weighted_events += d_w;
            loglik += ev_lp - d_w * s0.ln();
            let mean: Vec<f64> = (0..p)
                .map(|c| (at_exit.s1[c] - after_entry.s1[c]) / s0)
                .collect();
            for c in 0..p {
                grad[c] += ev_z[c] - d_w * mean[c];
            }
            if let Some(info) = info.as_mut() {
                for c in 0..p {
                    for d in c..p {
                        let s2 = at_exit.s2[c * p + d] - after_entry.s2[c * p + d];
                        info[(c, d)] += d_w * (s2 / s0 - mean[c] * mean[d]);
                    }
                }
            }
            steps.push((t, d_w, s0, count));
        }
        if let Some(info) = info.as_mut() {
            for c in 0..p {
                for d in 0..c {
                    info[(c, d)] = info[(d, c)];
                }
            }
        }
        steps.reverse();
        Ok(Evaluation {
            loglik,
            grad,
            info,
            steps,
            weighted_events,
        })
    }

    pub fn loglik(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<f64> {
        let w = self.member_weights(weights)?;
        Ok(self.evaluate(beta, &w, false)?.loglik)
    }

    pub fn score(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
        let w = self.member_weights(weights)?;
        Ok(self.evaluate(beta, &w, false)?.grad)
    }

    pub fn information(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
        let w = self.member_weights(weights)?;
        Ok(self.evaluate(beta, &w, true)?.info.expect("requested"))
    }

    /// Breslow cumulative baseline at `beta`.
    pub fn breslow(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<StepFunction> {
        let w = self.member_weights(weights)?;
        let ev = self.evaluate(beta, &w, false)?;
        Ok(steps_to_baseline(&ev.steps))
    }

    /// Largest ratio of a Breslow jump (unit weights) to the bound
    /// `kappa * d(t) / |risk set(t)|`, where `kappa` bounds `exp(beta'z)` and
    /// its reciprocal over the transition's sample. Never exceeds 1.
    pub fn breslow_bound_ratio(&self, beta: &[f64]) -> Result<f64> {
        let w = vec![1.0; self.rows.len()];
        let ev = self.evaluate(beta, &w, false)?;
        let lp = self.linear_predictors(beta);
        let hi = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = lp.iter().copied().fold(f64::INFINITY, f64::min);
        let kappa = hi.exp().max((-lo).exp());
        Ok(ev
            .steps
            .iter()
            .map(|&(_, d, s0, count)| (d / s0) / (kappa * d / count as f64))
            .fold(0.0, f64::max))
    }

    pub fn fit(&self, weights: Option<&[f64]>, config: &CoxConfig) -> Result<CoxFit> {
        let w = self.member_weights(weights)?;
        if !self.event.iter().zip(&w).any(|(e, w)| *e && *w > 0.0) {
            return Err(Error::NoEvents(self.kind.label().to_string()));
        }
        let mut beta = vec![0.0; self.p];
        let mut ev = self.evaluate(&beta, &w, true)?;
        let floor = 1e-10 * ev.weighted_events.max(1.0);
        let mut iterations = 0;
        let mut converged = false;
        loop {
            let gnorm = linalg::max_abs(&ev.grad);
            if gnorm < config.tol {
                converged = true;
                break;
            }
            if iterations >= config.max_iter {
                break;
            }
            let info = ev.info.as_ref().expect("requested");
            let singular = linalg::null_space_columns(info, &self.names, floor);
            if !singular.is_empty() {
                return Err(Error::RankDeficient {
                    columns: singular.join(","),
                });
            }
            let step = linalg::solve_spd(info, &DVector::from_column_slice(&ev.grad)).ok_or_else(|| {
                Error::RankDeficient {
                    columns: self.names.join(","),
                }
            })?;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=config.max_halvings {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
                let next = self.evaluate(&cand, &w, true)?;
                if next.loglik.is_finite() && next.loglik + 1e-12 * (1.0 + ev.loglik.abs()) >= ev.loglik {
                    accepted = Some((cand, next));
                    break;
                }
                scale *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((cand, next)) => {
                    beta = cand;
                    ev = next;
                }
                None => break,
            }
        }
        let final_grad_norm = linalg::max_abs(&ev.grad);
        if !converged {
            return Err(Error::NonConvergence {
                what: format!("partial likelihood {}", self.kind.label()),
                iterations,
                grad_norm: final_grad_norm,
                last_iterate: beta,
            });
        }
        let information = ev.info.take().expect("requested");
        let degenerate = !linalg::null_space_columns(&information, &self.names, floor).is_empty();
        let inv_information = match (degenerate, linalg::inverse_spd(&information)) {
            (false, Some(inv)) => inv,
            _ => {
                log::warn!(
                    "{}: information matrix is singular at the solution; using its pseudo-inverse",
                    self.kind.label()
                );
                linalg::pseudo_inverse_sym(&information)
            }
        };
        Ok(CoxFit {
            kind: self.kind,
            names: self.names.clone(),
            beta,
            information,
            inv_information,
            baseline: steps_to_baseline(&ev.steps),
            n_events: self.event.iter().zip(&w).filter(|(e, w)| **e && **w > 0.0).count(),
            converged,
            iterations,
            final_grad_norm,
            loglik: ev.loglik,
        })
    }
}

fn steps_to_baseline(steps: &[(f64, f64, f64, usize)]) -> StepFunction {
    let (times, incs) = steps.iter().map(|&(t, d, s0, _)| (t, d / s0)).unzip();
    StepFunction::from_parts_unchecked(times, incs)
}

pub(crate) fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Parameter(format!(
            "expected {n} weights, found {}",
            w.len()
        )));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Parameter("weights must be finite and nonnegative".into()));
    }
    if w.iter().all(|x| *x == 0.0) {
        return Err(Error::Parameter("weights are all zero".into()));
    }
    Ok(())
}

/// Fits the weighted partial likelihood of one transition with default
/// optimizer settings.
pub fn fit_pl(cohort: &Cohort, kind: TransitionKind, weights: Option<&[f64]>) -> Result<CoxFit> {
    fit_pl_with(cohort, kind, weights, &CoxConfig::default())
}

pub fn fit_pl_with(
    cohort: &Cohort,
    kind: TransitionKind,
    weights: Option<&[f64]>,
    config: &CoxConfig,
) -> Result<CoxFit> {
    PartialLikelihood::new(cohort, kind, config.onset_transform).fit(weights, config)
}

pub fn breslow(
    cohort: &Cohort,
    kind: TransitionKind,
    beta: &[f64],
    weights: Option<&[f64]>,
) -> Result<StepFunction> {
    PartialLikelihood::new(cohort, kind, OnsetTransform::Identity).breslow(beta, weights)
}

pub fn pl_information(cohort: &Cohort, kind: TransitionKind, beta: &[f64]) -> Result<DMatrix<f64>> {
    PartialLikelihood::new(cohort, kind, OnsetTransform::Identity).information(beta, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn obs(id: &str, r: f64, v: f64, onset: bool, death: bool, z: Vec<f64>) -> Observation {
        let w = if onset { Some(v.max(r) + 1.0) } else { None };
        let d3 = if onset { Some(false) } else { None };
        Observation::new(id, r, v, onset, death, w, d3, z).unwrap()
    }

    fn cohort(obs: Vec<Observation>, p: usize) -> Cohort {
        Cohort::new(obs, (0..p).map(|k| format!("x{k}")).collect()).unwrap()
    }

    /// Exact partial log-likelihood of a scalar covariate without truncation
    /// and with distinct event times, written directly from its definition.
    fn direct_pl(times: &[f64], events: &[bool], z: &[f64], beta: f64) -> f64 {
        let mut ll = 0.0;
        for i in 0..times.len() {
            if !events[i] {
                continue;
            }
            let denom: f64 = (0..times.len())
                .filter(|&j| times[j] >= times[i])
                .map(|j| (beta * z[j]).exp())
                .sum();
            ll += beta * z[i] - denom.ln();
        }
        ll
    }

    #[test]
    fn matches_grid_search_on_six_subjects() {
        let times = [2.0, 3.5, 4.0, 6.0, 7.5, 9.0];
        let events = [true, true, false, true, true, false];
        let z = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let c = cohort(
            (0..6)
                .map(|i| obs(&format!("s{i}"), 0.0, times[i], events[i], false, vec![z[i]]))
                .collect(),
            1,
        );
        let fit = fit_pl(&c, TransitionKind::Onset, None).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let steps = 100_000;
        for k in 0..=steps {
            let b = -5.0 + 10.0 * k as f64 / steps as f64;
            let v = direct_pl(&times, &events, &z, b);
            if v > best.0 {
                best = (v, b);
            }
        }
        assert!((fit.beta[0] - best.1).abs() < 1e-4, "{} vs {}", fit.beta[0], best.1);
        assert!(fit.converged && fit.final_grad_norm < 1e-8);
    }

    #[test]
    fn identical_covariates_give_zero() {
        let c = cohort(
            vec![
                obs("a", 0.0, 1.0, true, false, vec![0.3, 0.7]),
                obs("b", 0.0, 2.0, false, false, vec![0.3, 0.7]),
                obs("c", 0.5, 3.0, true, false, vec![0.3, 0.7]),
            ],
            2,
        );
        let fit = fit_pl(&c, TransitionKind::Onset, None).unwrap();
        assert!(fit.beta.iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn single_event_two_at_risk_jump_is_half() {
        let c = cohort(
            vec![
                obs("a", 0.0, 3.0, true, false, vec![0.0]),
                obs("b", 0.0, 5.0, false, false, vec![1.0]),
            ],
            1,
        );
        let h = breslow(&c, TransitionKind::Onset, &[0.0], None).unwrap();
        assert_eq!(h.times(), &[3.0]);
        assert_eq!(h.increments(), &[0.5]);
        let info = pl_information(&c, TransitionKind::Onset, &[0.0]).unwrap();
        assert!((info[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn no_events_gives_empty_baseline_and_fit_error() {
        let c = cohort(vec![obs("a", 0.0, 3.0, false, false, vec![0.0])], 1);
        assert!(breslow(&c, TransitionKind::Onset, &[0.0], None).unwrap().is_empty());
        assert!(matches!(
            fit_pl(&c, TransitionKind::Onset, None),
            Err(Error::NoEvents(_))
        ));
    }

    #[test]
    fn delayed_entry_excludes_late_entrants() {
        // b enters after a's event and must not be in its risk set
        let c = cohort(
            vec![
                obs("a", 0.0, 3.0, true, false, vec![0.0]),
                obs("b", 4.0, 5.0, false, false, vec![1.0]),
                obs("c", 1.0, 6.0, false, false, vec![1.0]),
            ],
            1,
        );
        let h = breslow(&c, TransitionKind::Onset, &[0.0], None).unwrap();
        assert_eq!(h.increments(), &[0.5]);
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let c = cohort(
            vec![
                obs("a", 0.0, 1.0, true, false, vec![0.0, 1.0]),
                obs("b", 0.0, 2.0, true, false, vec![1.0, 1.0]),
                obs("c", 0.0, 3.0, false, false, vec![0.5, 1.0]),
                obs("d", 0.0, 2.5, true, false, vec![1.0, 1.0]),
            ],
            2,
        );
        match fit_pl(&c, TransitionKind::Onset, None) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, "x1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn post_onset_model_appends_onset_age() {
        let c = cohort(
            vec![
                Observation::new("a", 50.0, 45.0, true, false, Some(60.0), Some(true), vec![0.2]).unwrap(),
                Observation::new("b", 40.0, 52.0, true, false, Some(70.0), Some(false), vec![0.8]).unwrap(),
                Observation::new("c", 40.0, 55.0, true, false, Some(65.0), Some(true), vec![0.1]).unwrap(),
            ],
            1,
        );
        let pl = PartialLikelihood::new(&c, TransitionKind::PostOnsetDeath, OnsetTransform::Identity);
        assert_eq!(pl.names(), &["x0".to_string(), ONSET_AGE_COLUMN.to_string()]);
        assert_eq!(pl.covariates_of(0), &[0.2, 45.0]);
        let logs = PartialLikelihood::new(&c, TransitionKind::PostOnsetDeath, OnsetTransform::Log);
        assert_eq!(logs.covariates_of(1)[1], 52.0f64.ln());
    }
}
