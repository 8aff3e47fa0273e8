//! Bootstrap variance estimation for the pairwise onset coefficients.
//!
//! * `Boot1` refits every nuisance model and the pairwise objective under
//!   exponential weights.
//! * `Boot2` draws nuisance coefficients from their asymptotic normal law
//!   and only recomputes the weighted Breslow estimators before the
//!   pairwise maximization.
//! * `Boot3` is a sandwich with a nuisance correction; it never runs the
//!   optimizer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{CoxConfig, CoxFit};
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::{CensoringModel, NuisanceBetas, NuisanceFit, NuisanceModel, NuisanceSet};
use crate::pairwise::{Order, PairSchedule, PairwiseFit, PairwiseOptions, PairwiseProblem};
use crate::rng::{exponential_weights, stream_rng};

/// Scale factor turning a median absolute deviation into a normal SD.
pub const MAD_SCALE: f64 = 1.4826;
/// Boot3 falls back to robust scales when a replicate lies further than
/// this many interquartile ranges from the median.
pub const OUTLIER_IQR: f64 = 10.0;
const MAX_DROPPED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Boot1,
    Boot2,
    Boot3,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boot1" => Ok(Method::Boot1),
            "boot2" => Ok(Method::Boot2),
            "boot3" => Ok(Method::Boot3),
            other => Err(Error::Config(format!(
                "unknown variance method '{other}' (expected boot1, boot2 or boot3)"
            ))),
        }
    }
}

/// Switches that make the bootstrap degenerate on purpose, for checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// All weights equal to one.
    pub unit_weights: bool,
    /// Nuisance coefficients are not perturbed in boot2/boot3.
    pub zero_nuisance_cov: bool,
    /// Boot3 replicates reuse the point nuisance estimates unchanged.
    pub freeze_nuisance: bool,
    /// Every replicate uses the same random stream.
    pub repeat_seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Pairs per observation used for the boot3 middle term; defaults to
    /// all scheduled pairs.
    pub ktilde: Option<usize>,
    pub pairwise: PairwiseOptions,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            ktilde: None,
            pairwise: PairwiseOptions::default(),
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Pieces of the boot3 covariance, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichParts {
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
    pub v3: Vec<Vec<f64>>,
    pub ktilde: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    pub method: Method,
    pub covariance: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// Requested replicates.
    pub b: usize,
    pub dropped: usize,
    /// Boot1/boot2 replicate estimates, one row per kept replicate.
    pub replicate_estimates: Option<Vec<Vec<f64>>>,
    /// Boot3 nuisance-correction vectors, one row per kept replicate.
    #[serde(skip)]
    pub correction_replicates: Option<Vec<Vec<f64>>>,
    pub robust_mad: bool,
    pub sandwich: Option<SandwichParts>,
}

impl VarianceResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.se.len();
        DMatrix::from_fn(p, p, |a, b| self.covariance[a][b])
    }

    fn from_covariance(method: Method, cov: DMatrix<f64>, b: usize, dropped: usize) -> Self {
        let mut cov = cov;
        linalg::symmetrize(&mut cov);
        let se = (0..cov.nrows()).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
        VarianceResult {
            method,
            covariance: linalg::to_rows(&cov),
            se,
            b,
            dropped,
            replicate_estimates: None,
            correction_replicates: None,
            robust_mad: false,
            sandwich: None,
        }
    }
}

/// Point estimates shared by every variance method.
#[derive(Debug, Clone)]
pub struct Estimation<'a> {
    pub cohort: &'a Cohort,
    pub schedule: PairSchedule,
    pub model: NuisanceModel,
    pub nuisance: NuisanceFit,
    pub problem: PairwiseProblem,
    pub pairwise: PairwiseFit,
}

impl<'a> Estimation<'a> {
    pub fn new(
        cohort: &'a Cohort,
        schedule: PairSchedule,
        censoring: CensoringModel,
        cox: CoxConfig,
        pairwise: &PairwiseOptions,
    ) -> Result<Self> {
        let model = NuisanceModel::new(cohort, censoring, cox);
        let nuisance = model.fit(None)?;
        let problem = PairwiseProblem::new(cohort, &nuisance.set, &schedule, None)?;
        let fit = problem.maximize(&nuisance.set.beta12_pl, pairwise)?;
        Ok(Estimation {
            cohort,
            schedule,
            model,
            nuisance,
            problem,
            pairwise: fit,
        })
    }

    pub fn estimate(&self) -> &[f64] {
        &self.pairwise.estimate
    }

    pub fn dim(&self) -> usize {
        self.cohort.dim()
    }
}

pub fn estimate_variance(est: &Estimation<'_>, method: Method, opts: &BootstrapOptions) -> Result<VarianceResult> {
    match method {
        Method::Boot1 => bootstrap1(est, opts),
        Method::Boot2 => bootstrap2(est, opts),
        Method::Boot3 => bootstrap3(est, opts),
    }
}

fn replicate_rng(opts: &BootstrapOptions, b: usize) -> rand_chacha::ChaCha8Rng {
    let stream = if opts.diagnostics.repeat_seed { 1 } else { b as u64 + 1 };
    stream_rng(opts.seed, stream)
}

fn draw_weights<R: Rng>(rng: &mut R, n: usize, diag: &Diagnostics) -> Vec<f64> {
    let w = exponential_weights(rng, n);
    if diag.unit_weights {
        vec![1.0; n]
    } else {
        w
    }
}

fn check_replicates(opts: &BootstrapOptions) -> Result<()> {
    if opts.replicates < 2 {
        return Err(Error::Parameter("at least 2 bootstrap replicates are needed".into()));
    }
    Ok(())
}

/// Keeps successful replicates; numerical failures are dropped and counted.
fn collect<T>(results: Vec<Result<T>>, what: &str) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let mut kept = Vec::with_capacity(total);
    let mut dropped = 0;
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(x) => kept.push(x),
            Err(e) if e.is_numerical() => {
                log::warn!("{what} replicate {} dropped: {e}", b + 1);
                dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if dropped as f64 > MAX_DROPPED * total as f64 {
        return Err(Error::TooManyDropped { dropped, total });
    }
    if dropped > 0 {
        log::info!("{what}: {dropped} of {total} replicates dropped");
    }
    if kept.len() < 2 {
        return Err(Error::TooManyDropped { dropped, total });
    }
    Ok((kept, dropped))
}

fn finish_resampling(method: Method, rows: Vec<Vec<f64>>, b: usize, dropped: usize) -> VarianceResult {
    let cov = linalg::empirical_covariance(&rows);
    let mut out = VarianceResult::from_covariance(method, cov, b, dropped);
    out.replicate_estimates = Some(rows);
    out
}

/// Full weighted bootstrap: every replicate refits the weighted partial
/// likelihoods and Breslow estimators, then maximizes the weighted pairwise
/// objective from the replicate's partial-likelihood onset estimate.
pub fn bootstrap1(est: &Estimation<'_>, opts: &BootstrapOptions) -> Result<VarianceResult> {
    check_replicates(opts)?;
    let n = est.cohort.len();
    let results: Vec<Result<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(opts, b);
            let w = draw_weights(&mut rng, n, &opts.diagnostics);
            let nuisance = est.model.fit(Some(&w))?;
            let prob = PairwiseProblem::new(est.cohort, &nuisance.set, &est.schedule, Some(&w))?;
            Ok(prob.maximize(&nuisance.set.beta12_pl, &opts.pairwise)?.estimate)
        })
        .collect();
    let (rows, dropped) = collect(results, "boot1")?;
    Ok(finish_resampling(Method::Boot1, rows, opts.replicates, dropped))
}

/// Lower-triangular factors of the inverse information matrices, used to
/// perturb nuisance coefficients.
struct NuisanceSampler {
    fits: [Option<(Vec<f64>, DMatrix<f64>)>; 4],
    dims: [usize; 4],
    censoring: bool,
}

impl NuisanceSampler {
    fn new(model: &NuisanceModel, fit: &NuisanceFit) -> Self {
        let factor = |f: Option<&CoxFit>| {
            f.map(|f| {
                let (l, clipped) = linalg::psd_factor(&f.inv_information);
                if clipped {
                    log::warn!(
                        "inverse information of transition {} is not positive definite; eigenvalues clipped",
                        f.kind.label()
                    );
                }
                (f.beta.clone(), l)
            })
        };
        NuisanceSampler {
            fits: [
                factor(Some(&fit.onset)),
                factor(fit.death.as_ref()),
                factor(fit.post_onset.as_ref()),
                factor(fit.censoring.as_ref()),
            ],
            dims: [
                model.onset.dim(),
                model.death.dim(),
                model.post_onset.dim(),
                model.censoring.as_ref().map_or(0, |pl| pl.dim()),
            ],
            censoring: model.censoring.is_some(),
        }
    }

    /// Coefficients drawn from `N(estimate, I^-1)`; transitions without
    /// events keep their zero coefficients.
    fn draw<R: Rng>(&self, rng: &mut R, perturb: bool) -> NuisanceBetas {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(4);
        for (slot, &dim) in self.fits.iter().zip(&self.dims) {
            let xi: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let beta = match slot {
                Some((beta, l)) if perturb => {
                    let shift = l * DVector::from_vec(xi);
                    beta.iter().zip(shift.iter()).map(|(b, s)| b + s).collect()
                }
                Some((beta, _)) => beta.clone(),
                None => vec![0.0; dim],
            };
            out.push(beta);
        }
        let beta_c = out.pop().filter(|_| self.censoring);
        let beta23 = out.pop().expect("four slots");
        let beta13 = out.pop().expect("four slots");
        let beta12 = out.pop().expect("four slots");
        NuisanceBetas {
            beta12,
            beta13,
            beta23,
            beta_c,
        }
    }
}

/// Weights and perturbed nuisance estimates for replicate `b`, shared by
/// boot2 and boot3.
fn nuisance_replicate(
    est: &Estimation<'_>,
    sampler: &NuisanceSampler,
    opts: &BootstrapOptions,
    b: usize,
) -> Result<(Vec<f64>, NuisanceSet)> {
    let mut rng = replicate_rng(opts, b);
    let w = draw_weights(&mut rng, est.cohort.len(), &opts.diagnostics);
    let betas = sampler.draw(&mut rng, !opts.diagnostics.zero_nuisance_cov);
    let set = est.model.baselines_at(&betas, Some(&w))?;
    Ok((w, set))
}

/// Piggyback bootstrap: nuisance coefficients are sampled from their
/// asymptotic normal law instead of being refitted.
pub fn bootstrap2(est: &Estimation<'_>, opts: &BootstrapOptions) -> Result<VarianceResult> {
    check_replicates(opts)?;
    let sampler = NuisanceSampler::new(&est.model, &est.nuisance);
    let results: Vec<Result<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let (w, set) = nuisance_replicate(est, &sampler, opts, b)?;
            let prob = PairwiseProblem::new(est.cohort, &set, &est.schedule, Some(&w))?;
            Ok(prob.maximize(est.estimate(), &opts.pairwise)?.estimate)
        })
        .collect();
    let (rows, dropped) = collect(results, "boot2")?;
    Ok(finish_resampling(Method::Boot2, rows, opts.replicates, dropped))
}

/// Sandwich variance plus the spread of one-step corrections
/// `H^-1 U` evaluated at the point estimate under perturbed nuisances.
pub fn bootstrap3(est: &Estimation<'_>, opts: &BootstrapOptions) -> Result<VarianceResult> {
    check_replicates(opts)?;
    let beta = est.estimate();
    let p = est.dim();
    let v1 = est.problem.hessian(beta);
    let v1_inv = linalg::inverse(&v1).ok_or_else(|| Error::Singular("pairwise Hessian at the estimate".into()))?;
    let psi = est.problem.psi(beta);
    let v2 = middle_term(&psi, p, &est.schedule, opts.ktilde)?;

    let sampler = NuisanceSampler::new(&est.model, &est.nuisance);
    let results: Vec<Result<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let prob = if opts.diagnostics.freeze_nuisance {
                None
            } else {
                let (_, set) = nuisance_replicate(est, &sampler, opts, b)?;
                Some(PairwiseProblem::new(est.cohort, &set, &est.schedule, None)?)
            };
            let ev = prob.as_ref().unwrap_or(&est.problem).evaluate(beta, Order::Hessian);
            let h = ev.hessian.expect("requested");
            let h_inv = linalg::inverse(&h).ok_or_else(|| Error::Singular("replicate pairwise Hessian".into()))?;
            let u = h_inv * DVector::from_vec(ev.score);
            if u.iter().all(|x| x.is_finite()) {
                Ok(u.iter().copied().collect())
            } else {
                Err(Error::Singular("replicate correction is not finite".into()))
            }
        })
        .collect();
    let (rows, dropped) = collect(results, "boot3")?;

    let robust = has_outliers(&rows);
    let v3 = if robust {
        log::warn!("boot3 corrections contain outliers; using median-absolute-deviation scales");
        robust_covariance(&rows)
    } else {
        linalg::empirical_covariance(&rows)
    };
    let cov = &v1_inv * &v2 * v1_inv.transpose() + &v3;
    let mut out = VarianceResult::from_covariance(Method::Boot3, cov, opts.replicates, dropped);
    out.robust_mad = robust;
    out.correction_replicates = Some(rows);
    out.sandwich = Some(SandwichParts {
        v1: linalg::to_rows(&v1),
        v2: linalg::to_rows(&v2),
        v3: linalg::to_rows(&v3),
        ktilde: opts.ktilde,
    });
    Ok(out)
}

/// Variance of the normalized score from per-pair contributions `psi`
/// (row-major, schedule order).
///
/// Modulo schedules: squared terms plus cross products of pairs sharing an
/// anchor, scaled up to all pairs sharing an observation. With `ktilde`,
/// only the first `ktilde` pairs of each anchor enter. Complete schedules
/// use every pair sharing an observation.
pub fn middle_term(psi: &[f64], p: usize, schedule: &PairSchedule, ktilde: Option<usize>) -> Result<DMatrix<f64>> {
    let n = schedule.n();
    match *schedule {
        PairSchedule::Modulo { kn, .. } => {
            let kt = ktilde.unwrap_or(kn);
            if ktilde.is_some() && kt < 2 {
                return Err(Error::Parameter(format!("ktilde must be at least 2 (got {kt})")));
            }
            if kt > kn {
                return Err(Error::Parameter(format!("ktilde must not exceed K_n = {kn} (got {kt})")));
            }
            let mut square = DMatrix::zeros(p, p);
            let mut cross = DMatrix::zeros(p, p);
            for a in 0..n {
                let block = &psi[a * kn * p..(a * kn + kt) * p];
                let mut sum = DVector::zeros(p);
                let mut sq = DMatrix::zeros(p, p);
                for row in block.chunks(p) {
                    let v = DVector::from_column_slice(row);
                    sq += &v * v.transpose();
                    sum += v;
                }
                cross += &sum * sum.transpose() - &sq;
                square += sq;
            }
            let (n, k, kt) = (n as f64, kn as f64, kt as f64);
            let cross_coef = if kt > 1.0 {
                2.0 * (2.0 * k - 1.0) / (n * n * k * kt * (kt - 1.0))
            } else {
                0.0
            };
            Ok(square / (n * n * k * kt) + cross * cross_coef)
        }
        PairSchedule::Complete { .. } => {
            if ktilde.is_some() {
                return Err(Error::Parameter("ktilde applies to modulo schedules only".into()));
            }
            let pairs = schedule.pairs();
            let mut square = DMatrix::zeros(p, p);
            let mut sums = vec![DVector::zeros(p); n];
            for (&(i, j), row) in pairs.iter().zip(psi.chunks(p)) {
                let v = DVector::from_column_slice(row);
                square += &v * v.transpose();
                sums[i as usize] += &v;
                sums[j as usize] += &v;
            }
            let mut cross = DMatrix::zeros(p, p);
            for s in &sums {
                cross += s * s.transpose();
            }
            cross -= &square * 2.0;
            let nf = n as f64;
            let m = nf * (nf - 1.0) / 2.0;
            Ok(square / (m * m) + cross * (4.0 / (nf * nf * (nf - 1.0) * (nf - 1.0))))
        }
    }
}

fn sorted(col: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = col.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median(sorted: &[f64]) -> f64 {
    quantile(sorted, 0.5)
}

/// Per-coordinate `MAD * 1.4826` of replicate rows.
pub fn robust_se(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.len() < 3 {
        return Err(Error::Parameter("robust scales need at least 3 replicates".into()));
    }
    let p = rows[0].len();
    Ok((0..p)
        .map(|k| {
            let col = sorted(rows.iter().map(|r| r[k]));
            let m = median(&col);
            let dev = sorted(col.iter().map(|x| (x - m).abs()));
            MAD_SCALE * median(&dev)
        })
        .collect())
}

fn has_outliers(rows: &[Vec<f64>]) -> bool {
    if rows.len() < 4 {
        return false;
    }
    let p = rows[0].len();
    (0..p).any(|k| {
        let col = sorted(rows.iter().map(|r| r[k]));
        let m = median(&col);
        let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
        col.iter().any(|x| (x - m).abs() > OUTLIER_IQR * iqr)
    })
}

/// Robust scales on the diagonal; correlations from values winsorized at
/// three robust scales around the median.
fn robust_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows[0].len();
    let scales = robust_se(rows).expect("guard requires at least 4 rows");
    let centers: Vec<f64> = (0..p).map(|k| median(&sorted(rows.iter().map(|r| r[k])))).collect();
    let clipped: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            (0..p)
                .map(|k| r[k].clamp(centers[k] - 3.0 * scales[k], centers[k] + 3.0 * scales[k]))
                .collect()
        })
        .collect();
    let cov = linalg::empirical_covariance(&clipped);
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            return scales[a] * scales[a];
        }
        let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
        if denom > 0.0 {
            cov[(a, b)] / denom * scales[a] * scales[b]
        } else {
            0.0
        }
    })
}
