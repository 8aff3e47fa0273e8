//! Right-continuous nondecreasing step functions, used for every cumulative
//! baseline hazard in the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cumulative hazard stored as jump times and positive increments.
///
/// `H(t)` is the sum of increments at times `<= t`. It is zero before the
/// first jump and constant after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "RawStep", into = "RawStep")]
pub struct StepFunction {
    times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStep {
    times: Vec<f64>,
    increments: Vec<f64>,
}

impl TryFrom<RawStep> for StepFunction {
    type Error = Error;

    fn try_from(raw: RawStep) -> Result<Self> {
        Self::new(raw.times, raw.increments)
    }
}

impl From<StepFunction> for RawStep {
    fn from(h: StepFunction) -> Self {
        RawStep {
            times: h.times,
            increments: h.increments,
        }
    }
}

impl StepFunction {
    pub fn new(times: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if times.len() != increments.len() {
            return Err(Error::Parameter(format!(
                "step function has {} times but {} increments",
                times.len(),
                increments.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("step function times must be finite".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(
                "step function times must be strictly increasing".into(),
            ));
        }
        if increments.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Parameter(
                "step function increments must be positive and finite".into(),
            ));
        }
        Ok(Self::from_parts_unchecked(times, increments))
    }

    pub(crate) fn from_parts_unchecked(times: Vec<f64>, increments: Vec<f64>) -> Self {
        let cumulative = increments
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        Self {
            times,
            increments,
            cumulative,
        }
    }

    /// The identically zero function.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Value beyond the last jump.
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn max_increment(&self) -> f64 {
        self.increments.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest `t >= origin` with `H(t) - H(origin) >= target`, or infinity
    /// when the plateau is reached first.
    pub fn inverse_from(&self, origin: f64, target: f64) -> f64 {
        if target <= 0.0 {
            return origin;
        }
        let goal = self.eval(origin) + target;
        let k = self.cumulative.partition_point(|&c| c < goal);
        match self.times.get(k) {
            Some(&t) => t.max(origin),
            None => f64::INFINITY,
        }
    }
}

/// Convenience wrapper matching the free-function form used in the docs.
pub fn eval_step(h: &StepFunction, t: f64) -> f64 {
    h.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_jumps() -> StepFunction {
        StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.3]).unwrap()
    }

    #[test]
    fn evaluates_between_jumps() {
        assert_eq!(two_jumps().eval(1.5), 0.5);
    }

    #[test]
    fn zero_below_first_jump() {
        assert_eq!(two_jumps().eval(0.5), 0.0);
    }

    #[test]
    fn constant_beyond_last_jump() {
        assert!((two_jumps().eval(9.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn right_continuous_at_jump() {
        let h = two_jumps();
        assert_eq!(h.eval(1.0), 0.5);
        assert_eq!(h.eval(1.0 - 1e-12), 0.0);
    }

    #[test]
    fn rejects_unsorted_and_nonpositive() {
        assert!(StepFunction::new(vec![2.0, 1.0], vec![0.1, 0.1]).is_err());
        assert!(StepFunction::new(vec![1.0, 2.0], vec![0.1, 0.0]).is_err());
        assert!(StepFunction::new(vec![1.0], vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn inverse_finds_first_crossing() {
        let h = two_jumps();
        assert_eq!(h.inverse_from(0.0, 0.4), 1.0);
        assert_eq!(h.inverse_from(0.0, 0.6), 2.0);
        assert_eq!(h.inverse_from(1.5, 0.2), 2.0);
        assert!(h.inverse_from(0.0, 1.0).is_infinite());
    }

    proptest! {
        #[test]
        fn eval_is_monotone(
            jumps in proptest::collection::vec((0.0f64..100.0, 1e-6f64..5.0), 0..30),
            a in -10.0f64..120.0,
            b in -10.0f64..120.0,
        ) {
            let mut jumps = jumps;
            jumps.sort_by(|x, y| x.0.total_cmp(&y.0));
            jumps.dedup_by(|x, y| x.0 == y.0);
            let (times, incs): (Vec<_>, Vec<_>) = jumps.into_iter().unzip();
            let h = StepFunction::new(times, incs).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(h.eval(lo) <= h.eval(hi));
        }
    }
}
