//! Cohort data model: one record per subject of an illness-death cohort
//! observed under delayed entry.
//!
//! Ages are in years. A subject is recruited at `entry_age` and followed
//! until `exit_age`, the first of disease onset, disease-free death, or
//! censoring. Subjects diagnosed before recruitment ("prevalent") report
//! their onset age retrospectively, so `exit_age < entry_age` is allowed
//! only when `onset` is set. For diseased subjects the follow-up continues
//! to `post_onset_exit_age`, ending in death (`post_onset_death`) or
//! censoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    /// Recruitment (delayed entry) age.
    pub entry_age: f64,
    /// Age at onset, disease-free death, or censoring, whichever came first.
    pub exit_age: f64,
    /// Disease onset observed at `exit_age`.
    pub onset: bool,
    /// Disease-free death observed at `exit_age`.
    pub death: bool,
    /// End of post-onset follow-up. Equal to `exit_age` when `onset` is false.
    pub post_onset_exit_age: f64,
    /// Death observed at `post_onset_exit_age`.
    pub post_onset_death: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    /// Builds a validated observation. Post-onset fields of subjects without
    /// onset are normalized (`post_onset_exit_age = exit_age`, no death), so
    /// they may be passed as `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        entry_age: f64,
        exit_age: f64,
        onset: bool,
        death: bool,
        post_onset_exit_age: Option<f64>,
        post_onset_death: Option<bool>,
        covariates: Vec<f64>,
    ) -> std::result::Result<Self, String> {
        let (w, d3) = if onset {
            let w = post_onset_exit_age
                .ok_or_else(|| "post-onset exit age W is required when delta1 = 1".to_string())?;
            let d3 = post_onset_death
                .ok_or_else(|| "delta3 is required when delta1 = 1".to_string())?;
            (w, d3)
        } else {
            (exit_age, false)
        };
        let obs = Observation {
            id: id.into(),
            entry_age,
            exit_age,
            onset,
            death,
            post_onset_exit_age: w,
            post_onset_death: d3,
            covariates,
        };
        obs.check()?;
        Ok(obs)
    }

    /// Checks every record invariant, returning the first violated rule.
    pub fn check(&self) -> std::result::Result<(), String> {
        let all_finite = self.entry_age.is_finite()
            && self.exit_age.is_finite()
            && self.post_onset_exit_age.is_finite()
            && self.covariates.iter().all(|z| z.is_finite());
        if !all_finite {
            return Err("all fields must be finite".into());
        }
        if self.entry_age < 0.0 {
            return Err("R >= 0 violated".into());
        }
        if self.exit_age <= 0.0 {
            return Err("V > 0 violated".into());
        }
        if self.onset && self.death {
            return Err("delta1 + delta2 <= 1 violated".into());
        }
        if self.post_onset_death && !self.onset {
            return Err("delta3 <= delta1 violated".into());
        }
        if !self.onset && self.exit_age < self.entry_age {
            return Err("V >= R violated for non-prevalent".into());
        }
        if self.onset && self.post_onset_exit_age < self.exit_age.max(self.entry_age) {
            return Err("W >= max(V, R) violated for diseased subject".into());
        }
        if !self.onset && (self.post_onset_exit_age != self.exit_age || self.post_onset_death) {
            return Err("W = V and delta3 = 0 required when delta1 = 0".into());
        }
        Ok(())
    }

    /// Diagnosed before recruitment.
    pub fn is_prevalent(&self) -> bool {
        self.onset && self.exit_age < self.entry_age
    }

    pub fn is_censored(&self) -> bool {
        !self.onset && !self.death
    }

    pub fn dim(&self) -> usize {
        self.covariates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizationKind {
    /// `(x - min) / (max - min)`
    MinMax,
    /// `(x - mean) / sd`
    ZScore,
}

/// Record of a covariate transformation, kept so coefficients stay
/// interpretable on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub kind: StandardizationKind,
    /// Per covariate: (min, max) for min-max, (mean, sd) for z-scores.
    pub params: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub observations: Vec<Observation>,
    pub covariate_names: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl Cohort {
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for (k, obs) in observations.iter().enumerate() {
            if obs.dim() != p {
                return Err(Error::Row {
                    line: k + 1,
                    id: obs.id.clone(),
                    rule: format!("expected {p} covariates, found {}", obs.dim()),
                });
            }
            obs.check().map_err(|rule| Error::Row {
                line: k + 1,
                id: obs.id.clone(),
                rule,
            })?;
        }
        Ok(Self {
            observations,
            covariate_names,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn count_prevalent(&self) -> usize {
        self.observations.iter().filter(|o| o.is_prevalent()).count()
    }

    pub fn covariate_column(&self, k: usize) -> Vec<f64> {
        self.observations.iter().map(|o| o.covariates[k]).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate {
                name: name.to_string(),
                available: self.covariate_names.join(","),
            })
    }

    /// A copy keeping only the named covariates, in the given order.
    pub fn select_covariates(&self, names: &[&str]) -> Result<Cohort> {
        let idx = names
            .iter()
            .map(|n| self.covariate_index(n))
            .collect::<Result<Vec<_>>>()?;
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                covariates: idx.iter().map(|&k| o.covariates[k]).collect(),
                ..o.clone()
            })
            .collect();
        let standardization = self.standardization.as_ref().map(|s| Standardization {
            kind: s.kind,
            params: idx.iter().map(|&k| s.params[k]).collect(),
        });
        Ok(Cohort {
            observations,
            covariate_names: names.iter().map(|s| s.to_string()).collect(),
            standardization,
        })
    }

    pub fn event_counts(&self) -> EventCounts {
        let mut c = EventCounts::default();
        for o in &self.observations {
            if o.onset {
                c.onset += 1;
                if o.is_prevalent() {
                    c.prevalent += 1;
                }
                if o.post_onset_death {
                    c.post_onset_death += 1;
                }
            } else if o.death {
                c.death += 1;
            } else {
                c.censored += 1;
            }
        }
        c
    }
}

/// Observed events per transition; `onset` includes prevalent cases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub onset: usize,
    pub prevalent: usize,
    pub death: usize,
    pub post_onset_death: usize,
    pub censored: usize,
}

/// Rescales every covariate to `[0, 1]`.
pub fn minmax_standardize(cohort: &Cohort) -> Result<Cohort> {
    standardize(cohort, StandardizationKind::MinMax)
}

/// Centres every covariate and scales it to unit (sample) variance.
pub fn zscore_standardize(cohort: &Cohort) -> Result<Cohort> {
    standardize(cohort, StandardizationKind::ZScore)
}

fn standardize(cohort: &Cohort, kind: StandardizationKind) -> Result<Cohort> {
    if cohort.standardization.is_some() {
        return Err(Error::AlreadyStandardized);
    }
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut params = Vec::with_capacity(cohort.dim());
    for k in 0..cohort.dim() {
        let col = cohort.covariate_column(k);
        let pair = match kind {
            StandardizationKind::MinMax => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            StandardizationKind::ZScore => {
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (mean, var.sqrt())
            }
        };
        let degenerate = match kind {
            StandardizationKind::MinMax => pair.1 <= pair.0,
            StandardizationKind::ZScore => !(pair.1 > 0.0),
        };
        if degenerate {
            return Err(Error::DegenerateCovariate(cohort.covariate_names[k].clone()));
        }
        params.push(pair);
    }
    let observations = cohort
        .observations
        .iter()
        .map(|o| Observation {
            covariates: o
                .covariates
                .iter()
                .zip(&params)
                .map(|(&x, &(a, b))| match kind {
                    StandardizationKind::MinMax => (x - a) / (b - a),
                    StandardizationKind::ZScore => (x - a) / b,
                })
                .collect(),
            ..o.clone()
        })
        .collect();
    Ok(Cohort {
        observations,
        covariate_names: cohort.covariate_names.clone(),
        standardization: Some(Standardization { kind, params }),
    })
}
