//! Cohort generators for the simulation settings, plus a genotype-style
//! scenario for replication experiments.
//!
//! Subjects are drawn into a pool with latent onset, death, censoring and
//! recruitment ages; only those alive at recruitment are kept. Pool members
//! are generated in fixed-size chunks, each with its own random stream, so
//! a seed determines the cohort regardless of thread count.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::distributions::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Gamma, Normal};

use crate::data::{Cohort, Observation, StandardizationKind};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::step::StepFunction;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            "C" | "c" => Ok(Setting::C),
            other => Err(Error::Config(format!("unknown setting '{other}' (expected A, B or C)"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub const BETA12_AB: [f64; 8] = [2.0, -1.5, 0.1, -0.5, 1.0, -2.5, -1.0, 0.0];
pub const BETA12_C: [f64; 8] = [2.0, -1.0, 0.1, -0.5, 1.0, -1.0, -1.0, 0.0];
pub const BETA13_AB: [f64; 8] = [0.3, 0.0, 0.0, 0.0, -0.2, 0.4, 0.0, 0.7];
/// The last entry multiplies the onset age.
pub const BETA23_AB: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.3, 0.9, 0.05];
pub const BETA_C_B: [f64; 8] = [0.0, 1.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0];

/// Marginal covariate distributions, sampled by inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Gamma { shape: f64, rate: f64 },
    /// Number of failures before the first success, support `{0, 1, ...}`.
    Geometric { p: f64 },
    Exponential { rate: f64 },
    Beta { a: f64, b: f64 },
    Normal { mean: f64, sd: f64 },
    Weibull { shape: f64, scale: f64 },
    Poisson { lambda: f64 },
    Uniform,
}

pub const MIXED_MARGINALS: [Marginal; 8] = [
    Marginal::Gamma { shape: 2.0, rate: 6.0 },
    Marginal::Geometric { p: 0.1 },
    Marginal::Exponential { rate: 0.25 },
    Marginal::Beta { a: 2.0, b: 8.0 },
    Marginal::Normal { mean: 0.0, sd: 2.0 },
    Marginal::Weibull { shape: 3.0, scale: 4.0 },
    Marginal::Poisson { lambda: 5.0 },
    Marginal::Uniform,
];

/// Root of `cdf(x) = u` on `[lo, hi]` by Newton steps safeguarded with
/// bisection.
fn invert_cdf<D: ContinuousCDF<f64, f64> + Continuous<f64, f64>>(d: &D, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    while d.cdf(hi) < u {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = d.cdf(x) - u;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = d.pdf(x);
        let newton = x - f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * hi.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

impl Marginal {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Gamma { shape, rate } => {
                let d = Gamma::new(shape, rate).expect("valid gamma");
                invert_cdf(&d, u, 0.0, shape / rate)
            }
            Marginal::Geometric { p } => {
                let mut k = 0u64;
                let mut cdf = p;
                while cdf < u {
                    k += 1;
                    cdf = 1.0 - (1.0 - p).powi(k as i32 + 1);
                }
                k as f64
            }
            Marginal::Exponential { rate } => -(-u).ln_1p() / rate,
            Marginal::Beta { a, b } => {
                let d = Beta::new(a, b).expect("valid beta");
                invert_cdf(&d, u, 0.0, 1.0)
            }
            Marginal::Normal { mean, sd } => Normal::new(mean, sd).expect("valid normal").inverse_cdf(u),
            Marginal::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
            Marginal::Poisson { lambda } => {
                let mut k = 0u64;
                let mut pmf = (-lambda).exp();
                let mut cdf = pmf;
                while cdf < u && pmf > 0.0 {
                    k += 1;
                    pmf *= lambda / k as f64;
                    cdf += pmf;
                }
                k as f64
            }
            Marginal::Uniform => u,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Gamma { shape, rate } => shape / rate,
            Marginal::Geometric { p } => (1.0 - p) / p,
            Marginal::Exponential { rate } => 1.0 / rate,
            Marginal::Beta { a, b } => a / (a + b),
            Marginal::Normal { mean, .. } => mean,
            Marginal::Weibull { shape, scale } => scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape),
            Marginal::Poisson { lambda } => lambda,
            Marginal::Uniform => 0.5,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Gamma { shape, rate } => shape / (rate * rate),
            Marginal::Geometric { p } => (1.0 - p) / (p * p),
            Marginal::Exponential { rate } => 1.0 / (rate * rate),
            Marginal::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Marginal::Normal { sd, .. } => sd * sd,
            Marginal::Weibull { shape, scale } => {
                let g = statrs::function::gamma::gamma;
                scale * scale * (g(1.0 + 2.0 / shape) - g(1.0 + 1.0 / shape).powi(2))
            }
            Marginal::Poisson { lambda } => lambda,
            Marginal::Uniform => 1.0 / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateModel {
    /// The eight mixed marginals, independent or joined by an
    /// equicorrelated Gaussian copula; min-max standardized over the pool.
    Mixed { copula_correlation: Option<f64> },
    /// `candidates` genotype columns (minor-allele counts) followed by a
    /// binary `sex` and a standard normal `pc1` column; z-scored over the pool.
    Genotypes { candidates: usize, minor_allele_freq: f64 },
}

impl CovariateModel {
    pub fn names(&self) -> Vec<String> {
        match self {
            CovariateModel::Mixed { .. } => (1..=8).map(|k| format!("z{k}")).collect(),
            CovariateModel::Genotypes { candidates, .. } => (1..=*candidates)
                .map(|k| format!("snp{k:02}"))
                .chain(["sex".to_string(), "pc1".to_string()])
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.names().len()
    }

    fn standardization(&self) -> StandardizationKind {
        match self {
            CovariateModel::Mixed { .. } => StandardizationKind::MinMax,
            CovariateModel::Genotypes { .. } => StandardizationKind::ZScore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Constant(f64),
    Cumulative(StepFunction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxHazard {
    pub baseline: Baseline,
    pub beta: Vec<f64>,
}

/// Inverse-transform draw from a Cox model started at `origin`:
/// the first `t >= origin` with `exp(beta'z) * (H0(t) - H0(origin)) = -ln u`.
pub fn sample_cox_time(h0: &Baseline, beta: &[f64], z: &[f64], origin: f64, u: f64) -> f64 {
    let risk = beta.iter().zip(z).map(|(b, x)| b * x).sum::<f64>().exp();
    match h0 {
        Baseline::Constant(rate) => origin - u.ln() / (rate * risk),
        Baseline::Cumulative(h) => h.inverse_from(origin, -u.ln() / risk),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Recruitment {
    /// Symmetric triangular on `(lower, upper)`.
    Triangular { lower: f64, upper: f64 },
    /// `(intercept + sum coef * z[index] + N(0, noise_sd^2))_+`
    Linear {
        intercept: f64,
        terms: Vec<(usize, f64)>,
        noise_sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeathMechanism {
    Cox(CoxHazard),
    /// Exponential with rate `rate / mu`,
    /// `mu = sin(pi z1) + 2 |z5 - 0.5| + z6^3`.
    ScaledExponential { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PostOnsetMechanism {
    /// Cox model on `(z, onset age)`, started at onset.
    Cox(CoxHazard),
    /// Onset age plus a gamma residual with the given scale and shape
    /// `0.5 + cos(pi z7)^2 + 2 |z8 - 0.5| + sqrt(onset age) / 3`.
    GammaResidual { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CensoringMechanism {
    /// Entry age plus an exponential residual.
    ExponentialAfterEntry { rate: f64 },
    /// Cox model with constant baseline, conditioned to exceed the entry age.
    CoxAfterEntry(CoxHazard),
    /// Entry age plus a log-normal residual with log-scale mean
    /// `3 |z2 - 0.5| + 2 z5` and log-scale standard deviation `sd`.
    LogNormalAfterEntry { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub covariates: CovariateModel,
    pub recruitment: Recruitment,
    pub onset: CoxHazard,
    pub death: DeathMechanism,
    pub post_onset: PostOnsetMechanism,
    pub censoring: CensoringMechanism,
}

impl ScenarioSpec {
    pub fn setting(setting: Setting, n: usize, seed: u64) -> Self {
        let cox = |rate: f64, beta: &[f64]| CoxHazard {
            baseline: Baseline::Constant(rate),
            beta: beta.to_vec(),
        };
        let copula = Some(0.8);
        match setting {
            Setting::A => ScenarioSpec {
                label: "A".into(),
                n,
                seed,
                covariates: CovariateModel::Mixed { copula_correlation: None },
                recruitment: Recruitment::Triangular { lower: 0.0, upper: 22.0 },
                onset: cox(0.02, &BETA12_AB),
                death: DeathMechanism::Cox(cox(0.02, &BETA13_AB)),
                post_onset: PostOnsetMechanism::Cox(cox(0.05, &BETA23_AB)),
                censoring: CensoringMechanism::ExponentialAfterEntry { rate: 0.05 },
            },
            Setting::B => ScenarioSpec {
                label: "B".into(),
                n,
                seed,
                covariates: CovariateModel::Mixed { copula_correlation: copula },
                recruitment: Recruitment::Linear {
                    intercept: 1.0,
                    terms: vec![(0, 5.0), (1, 7.0), (5, 10.0)],
                    noise_sd: 1.0,
                },
                onset: cox(0.02, &BETA12_AB),
                death: DeathMechanism::Cox(cox(0.02, &BETA13_AB)),
                post_onset: PostOnsetMechanism::Cox(cox(0.05, &BETA23_AB)),
                censoring: CensoringMechanism::CoxAfterEntry(cox(0.05, &BETA_C_B)),
            },
            Setting::C => ScenarioSpec {
                label: "C".into(),
                n,
                seed,
                covariates: CovariateModel::Mixed { copula_correlation: copula },
                recruitment: Recruitment::Linear {
                    intercept: 1.0,
                    terms: vec![(0, 5.0), (1, 6.0), (5, 4.0)],
                    noise_sd: 1.0,
                },
                onset: cox(0.01, &BETA12_C),
                death: DeathMechanism::ScaledExponential { rate: 0.04 },
                post_onset: PostOnsetMechanism::GammaResidual { scale: 3.0 },
                censoring: CensoringMechanism::LogNormalAfterEntry { sd: 1.5 },
            },
        }
    }

    /// Genotype-style scenario: `candidates` standardized allele counts of
    /// which the first `causal` raise the onset hazard by `effect` per
    /// standard deviation, plus `sex` and `pc1` adjusters.
    pub fn genotypes(n: usize, seed: u64, candidates: usize, causal: usize, effect: f64) -> Self {
        let mut beta12 = vec![0.0; candidates + 2];
        beta12.iter_mut().take(causal).for_each(|b| *b = effect);
        beta12[candidates] = 0.3;
        beta12[candidates + 1] = -0.2;
        let mut beta13 = vec![0.0; candidates + 2];
        beta13[candidates] = 0.3;
        let mut beta23 = vec![0.0; candidates + 3];
        beta23[candidates + 2] = 0.01;
        ScenarioSpec {
            label: "genotypes".into(),
            n,
            seed,
            covariates: CovariateModel::Genotypes {
                candidates,
                minor_allele_freq: 0.3,
            },
            recruitment: Recruitment::Triangular { lower: 40.0, upper: 70.0 },
            onset: CoxHazard {
                baseline: Baseline::Constant(0.008),
                beta: beta12,
            },
            death: DeathMechanism::Cox(CoxHazard {
                baseline: Baseline::Constant(0.01),
                beta: beta13,
            }),
            post_onset: PostOnsetMechanism::Cox(CoxHazard {
                baseline: Baseline::Constant(0.03),
                beta: beta23,
            }),
            censoring: CensoringMechanism::ExponentialAfterEntry { rate: 0.08 },
        }
    }

    pub fn true_beta12(&self) -> &[f64] {
        &self.onset.beta
    }

    fn validate(&self) -> Result<()> {
        let p = self.covariates.dim();
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.onset.beta.len() != p {
            return Err(Error::Config(format!("onset coefficients need length {p}")));
        }
        if let DeathMechanism::Cox(h) = &self.death {
            if h.beta.len() != p {
                return Err(Error::Config(format!("death coefficients need length {p}")));
            }
        }
        if let PostOnsetMechanism::Cox(h) = &self.post_onset {
            if h.beta.len() != p + 1 {
                return Err(Error::Config(format!("post-onset coefficients need length {}", p + 1)));
            }
        }
        if let CensoringMechanism::CoxAfterEntry(h) = &self.censoring {
            if h.beta.len() != p || !matches!(h.baseline, Baseline::Constant(_)) {
                return Err(Error::Config(format!(
                    "censoring needs a constant baseline and {p} coefficients"
                )));
            }
        }
        let needs_mixed = matches!(self.death, DeathMechanism::ScaledExponential { .. })
            || matches!(self.post_onset, PostOnsetMechanism::GammaResidual { .. })
            || matches!(self.censoring, CensoringMechanism::LogNormalAfterEntry { .. });
        if needs_mixed && p < 8 {
            return Err(Error::Config("non-Cox mechanisms need the eight mixed covariates".into()));
        }
        if let Recruitment::Linear { terms, .. } = &self.recruitment {
            if terms.iter().any(|(k, _)| *k >= p) {
                return Err(Error::Config("recruitment term refers to a missing covariate".into()));
            }
        }
        Ok(())
    }
}

/// Latent ages of one pool member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub entry: f64,
    pub onset: f64,
    /// Death age drawn for the healthy state.
    pub death_healthy: f64,
    /// Death age after substitution when onset comes first.
    pub death: f64,
    pub censoring: f64,
}

/// One scanned pool member; `accepted` marks those alive at recruitment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub pool_index: usize,
    pub entry: f64,
    pub onset: f64,
    pub death: f64,
    pub censoring: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub cohort: Cohort,
    pub truth: Vec<TruthRecord>,
    pub pool_size: usize,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(Open01)
}

fn raw_covariates(model: &CovariateModel, count: usize, seed: u64, attempt: u64) -> Vec<Vec<f64>> {
    let factor = match model {
        CovariateModel::Mixed {
            copula_correlation: Some(rho),
        } => {
            let m = DMatrix::from_fn(8, 8, |a, b| if a == b { 1.0 } else { *rho });
            Some(m.cholesky().expect("equicorrelation matrix is positive definite").l())
        }
        _ => None,
    };
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, (attempt << 40) | ((c as u64) << 1));
            let len = CHUNK.min(count - c * CHUNK);
            let factor = factor.clone();
            (0..len)
                .map(|_| match model {
                    CovariateModel::Mixed { .. } => {
                        let u: Vec<f64> = match &factor {
                            None => (0..8).map(|_| uniform(&mut rng)).collect(),
                            Some(l) => {
                                let x: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
                                (0..8)
                                    .map(|a| {
                                        let y: f64 = (0..=a).map(|b| l[(a, b)] * x[b]).sum();
                                        std_normal.cdf(y).clamp(1e-300, 1.0 - 1e-16)
                                    })
                                    .collect()
                            }
                        };
                        MIXED_MARGINALS.iter().zip(&u).map(|(m, &u)| m.quantile(u)).collect()
                    }
                    CovariateModel::Genotypes {
                        candidates,
                        minor_allele_freq,
                    } => {
                        let mut z: Vec<f64> = (0..*candidates)
                            .map(|_| {
                                (0..2).filter(|_| rng.gen_bool(*minor_allele_freq)).count() as f64
                            })
                            .collect();
                        z.push(if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                        z.push(rng.sample(StandardNormal));
                        z
                    }
                })
                .collect::<Vec<Vec<f64>>>()
        })
        .collect()
}

fn standardize_rows(rows: &mut [Vec<f64>], kind: StandardizationKind) {
    let Some(p) = rows.first().map(Vec::len) else {
        return;
    };
    let m = rows.len() as f64;
    for k in 0..p {
        let (a, b) = match kind {
            StandardizationKind::MinMax => {
                let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
            StandardizationKind::ZScore => {
                let mean = rows.iter().map(|r| r[k]).sum::<f64>() / m;
                let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
                (mean, var.sqrt())
            }
        };
        let scale = if b > 0.0 { b } else { 1.0 };
        for r in rows.iter_mut() {
            r[k] = (r[k] - a) / scale;
        }
    }
}

/// Standardized covariate matrix (`count` rows) of a setting.
pub fn gen_covariates(setting: Setting, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let spec = ScenarioSpec::setting(setting, count.max(1), seed);
    let mut rows = raw_covariates(&spec.covariates, count, seed, 0);
    standardize_rows(&mut rows, spec.covariates.standardization());
    rows
}

impl ScenarioSpec {
    /// Latent ages for covariates `z`. Always consumes the same number of
    /// draws from `rng`, whichever branch is taken.
    pub fn draw_latent(&self, z: &[f64], rng: &mut ChaCha8Rng) -> Latent {
        let entry = match &self.recruitment {
            Recruitment::Triangular { lower, upper } => {
                let u = uniform(rng);
                let w = upper - lower;
                if u < 0.5 {
                    lower + w * (u / 2.0).sqrt()
                } else {
                    upper - w * ((1.0 - u) / 2.0).sqrt()
                }
            }
            Recruitment::Linear {
                intercept,
                terms,
                noise_sd,
            } => {
                let eps: f64 = rng.sample(StandardNormal);
                let lin: f64 = intercept + terms.iter().map(|(k, c)| c * z[*k]).sum::<f64>();
                (lin + noise_sd * eps).max(0.0)
            }
        };
        let (u1, u2, u3, u4) = (uniform(rng), uniform(rng), uniform(rng), uniform(rng));
        let onset = sample_cox_time(&self.onset.baseline, &self.onset.beta, z, 0.0, u1);
        let death_healthy = match &self.death {
            DeathMechanism::Cox(h) => sample_cox_time(&h.baseline, &h.beta, z, 0.0, u2),
            DeathMechanism::ScaledExponential { rate } => {
                let mu = ((PI * z[0]).sin() + 2.0 * (z[4] - 0.5).abs() + z[5].powi(3)).max(1e-12);
                -u2.ln() * mu / rate
            }
        };
        let death = if onset < death_healthy {
            match &self.post_onset {
                PostOnsetMechanism::Cox(h) => {
                    let mut zt = z.to_vec();
                    zt.push(onset);
                    sample_cox_time(&h.baseline, &h.beta, &zt, onset, u3)
                }
                PostOnsetMechanism::GammaResidual { scale } => {
                    let shape = 0.5 + (PI * z[6]).cos().powi(2) + 2.0 * (z[7] - 0.5).abs() + onset.sqrt() / 3.0;
                    let g = Gamma::new(shape, 1.0 / scale).expect("positive shape");
                    onset + invert_cdf(&g, u3, 0.0, shape * scale)
                }
            }
        } else {
            death_healthy
        };
        let censoring = match &self.censoring {
            CensoringMechanism::ExponentialAfterEntry { rate } => entry - u4.ln() / rate,
            CensoringMechanism::CoxAfterEntry(h) => sample_cox_time(&h.baseline, &h.beta, z, entry, u4),
            CensoringMechanism::LogNormalAfterEntry { sd } => {
                let mean = 3.0 * (z[1] - 0.5).abs() + 2.0 * z[4];
                let x = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(u4);
                entry + (mean + sd * x).exp()
            }
        };
        Latent {
            entry,
            onset,
            death_healthy,
            death,
            censoring,
        }
    }
}

fn observe(id: String, lat: &Latent, z: Vec<f64>) -> Observation {
    let exit = lat.onset.min(lat.death).min(lat.censoring);
    let onset = lat.onset <= exit && lat.onset < lat.death;
    let death = !onset && lat.death <= lat.censoring && lat.death == exit;
    let (w, d3) = if onset {
        (Some(lat.death.min(lat.censoring)), Some(lat.death <= lat.censoring))
    } else {
        (None, None)
    };
    Observation::new(id, lat.entry, exit, onset, death, w, d3, z).expect("generated record is consistent")
}

/// Draws subjects until `spec.n` of them are alive at recruitment.
pub fn gen_cohort(spec: &ScenarioSpec) -> Result<Simulated> {
    spec.validate()?;
    let n = spec.n;
    let names = spec.covariates.names();
    for attempt in 0..12u64 {
        let pool = (4 * n) << attempt;
        let mut z = raw_covariates(&spec.covariates, pool, spec.seed, attempt);
        standardize_rows(&mut z, spec.covariates.standardization());
        let chunks = pool.div_ceil(CHUNK);
        let latents: Vec<Latent> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = stream_rng(spec.seed, (attempt << 40) | ((c as u64) << 1) | 1);
                let z = &z;
                (c * CHUNK..((c + 1) * CHUNK).min(pool))
                    .map(|i| spec.draw_latent(&z[i], &mut rng))
                    .collect::<Vec<_>>()
            })
            .collect();
        let accepted = latents.iter().filter(|l| l.death > l.entry).count();
        if accepted < n {
            if (accepted as f64) < 0.001 * pool as f64 {
                return Err(Error::Config(format!(
                    "only {accepted} of {pool} pool subjects survive to recruitment; \
                     check the recruitment and hazard settings"
                )));
            }
            log::debug!("pool of {pool} gave {accepted} acceptances, growing");
            continue;
        }
        let mut observations = Vec::with_capacity(n);
        let mut truth = Vec::new();
        for (i, (lat, zi)) in latents.iter().zip(z).enumerate() {
            if observations.len() == n {
                break;
            }
            let keep = lat.death > lat.entry;
            truth.push(TruthRecord {
                pool_index: i,
                entry: lat.entry,
                onset: lat.onset,
                death: lat.death,
                censoring: lat.censoring,
                accepted: keep,
            });
            if keep {
                observations.push(observe(format!("s{}", observations.len() + 1), lat, zi));
            }
        }
        let cohort = Cohort::new(observations, names)?;
        return Ok(Simulated {
            cohort,
            truth,
            pool_size: pool,
        });
    }
    Err(Error::Config("pool growth limit reached".into()))
}

/// Writes the truth sidecar CSV.
pub fn write_truth<W: std::io::Write>(truth: &[TruthRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["pool_index", "R", "T1", "T2", "C", "accepted"])?;
    for t in truth {
        wtr.write_record([
            t.pool_index.to_string(),
            t.entry.to_string(),
            t.onset.to_string(),
            t.death.to_string(),
            t.censoring.to_string(),
            (t.accepted as u8).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cox_time_examples() {
        let u = (-1.0f64).exp();
        let t = sample_cox_time(&Baseline::Constant(0.02), &[0.0], &[1.0], 0.0, u);
        assert!((t - 50.0).abs() < 1e-12);
        let base = sample_cox_time(&Baseline::Constant(0.02), &[0.0], &[1.0], 0.0, 0.5);
        let doubled = sample_cox_time(&Baseline::Constant(0.02), &[2f64.ln()], &[1.0], 0.0, 0.5);
        assert!((doubled - base / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cox_time_with_step_baseline() {
        let h = StepFunction::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]).unwrap();
        let u = (-0.7f64).exp();
        assert_eq!(sample_cox_time(&Baseline::Cumulative(h.clone()), &[], &[], 0.0, u), 2.0);
        assert_eq!(sample_cox_time(&Baseline::Cumulative(h), &[], &[], 1.5, u), 3.0);
    }

    #[test]
    fn cox_time_survival_matches_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h0, beta, z) = (0.02, [0.7], [1.0]);
        let rate = h0 * 0.7f64.exp();
        let mut t: Vec<f64> = (0..100_000)
            .map(|_| sample_cox_time(&Baseline::Constant(h0), &beta, &z, 0.0, uniform(&mut rng)))
            .collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let ks = t
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let f = 1.0 - (-rate * x).exp();
                (f - k as f64 / n).abs().max((f - (k + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn quantiles_invert_cdfs() {
        let g = Gamma::new(2.0, 6.0).unwrap();
        let b = Beta::new(2.0, 8.0).unwrap();
        for &u in &[1e-9, 0.01, 0.3, 0.5, 0.9, 0.999999] {
            let x = Marginal::Gamma { shape: 2.0, rate: 6.0 }.quantile(u);
            assert!((g.cdf(x) - u).abs() < 1e-12);
            let x = Marginal::Beta { a: 2.0, b: 8.0 }.quantile(u);
            assert!((b.cdf(x) - u).abs() < 1e-12);
        }
        assert_eq!(Marginal::Geometric { p: 0.1 }.quantile(0.05), 0.0);
        assert_eq!(Marginal::Geometric { p: 0.1 }.quantile(0.15), 1.0);
        assert_eq!(Marginal::Poisson { lambda: 5.0 }.quantile(0.001), 0.0);
        assert_eq!(Marginal::Poisson { lambda: 5.0 }.quantile(0.5), 5.0);
    }

    #[test]
    fn covariates_are_standardized() {
        for s in [Setting::A, Setting::B, Setting::C] {
            let z = gen_covariates(s, 2000, 3);
            for k in 0..8 {
                let col: Vec<f64> = z.iter().map(|r| r[k]).collect();
                assert!(col.iter().all(|x| (0.0..=1.0).contains(x)));
                assert_eq!(col.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
                assert_eq!(col.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }
    }

    #[test]
    fn independent_marginal_means() {
        let count = 10_000;
        let spec = ScenarioSpec::setting(Setting::A, count, 17);
        let raw = raw_covariates(&spec.covariates, count, 17, 0);
        for (k, m) in MIXED_MARGINALS.iter().enumerate() {
            let col: Vec<f64> = raw.iter().map(|r| r[k]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let standardized_mean = col.iter().map(|x| (x - lo) / (hi - lo)).sum::<f64>() / count as f64;
            let expected = (m.mean() - lo) / (hi - lo);
            let se = m.variance().sqrt() / (hi - lo) / (count as f64).sqrt();
            assert!(
                (standardized_mean - expected).abs() < 3.0 * se,
                "column {k}: {standardized_mean} vs {expected} (se {se})"
            );
        }
    }

    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut r = vec![0.0; x.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut e = k;
            while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
                e += 1;
            }
            let avg = (k + e) as f64 / 2.0;
            for &i in &idx[k..=e] {
                r[i] = avg;
            }
            k = e + 1;
        }
        r
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn copula_gives_strong_rank_correlation() {
        let z = gen_covariates(Setting::B, 10_000, 4);
        let cols: Vec<Vec<f64>> = (0..8).map(|k| ranks(&z.iter().map(|r| r[k]).collect::<Vec<_>>())).collect();
        for a in 0..8 {
            for b in (a + 1)..8 {
                let rho = pearson(&cols[a], &cols[b]);
                assert!(rho > 0.5, "columns {a},{b}: spearman {rho}");
            }
        }
    }

    #[test]
    fn generated_cohorts_respect_truncation_and_are_reproducible() {
        for s in [Setting::A, Setting::B, Setting::C] {
            let spec = ScenarioSpec::setting(s, 400, 21);
            let a = gen_cohort(&spec).unwrap();
            let b = gen_cohort(&spec).unwrap();
            assert_eq!(a.cohort, b.cohort);
            assert_eq!(a.cohort.len(), 400);
            assert!(a.truth.iter().filter(|t| t.accepted).all(|t| t.death > t.entry));
            assert_eq!(a.truth.iter().filter(|t| t.accepted).count(), 400);
            for o in &a.cohort.observations {
                assert!(o.check().is_ok());
            }
        }
    }

    #[test]
    fn setting_c_healthy_death_follows_scaled_exponential() {
        // fixed covariates give a single stratum with known rate 0.04 / mu
        let spec = ScenarioSpec::setting(Setting::C, 10, 1);
        let z = [0.5, 0.2, 0.3, 0.4, 0.9, 0.6, 0.1, 0.7];
        let mu = (PI * 0.5).sin() + 2.0 * 0.4 + 0.6f64.powi(3);
        let rate = 0.04 / mu;
        let mut rng = stream_rng(8, 0);
        let mut t: Vec<f64> = (0..20_000).map(|_| spec.draw_latent(&z, &mut rng).death_healthy).collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let ks = t
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let f = 1.0 - (-rate * x).exp();
                (f - k as f64 / n).abs().max((f - (k + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "KS distance {ks}");
    }

    #[test]
    fn hopeless_recruitment_is_a_configuration_error() {
        let mut spec = ScenarioSpec::setting(Setting::A, 50, 1);
        spec.recruitment = Recruitment::Triangular { lower: 900.0, upper: 1000.0 };
        assert!(matches!(gen_cohort(&spec), Err(Error::Config(_))));
    }
}
