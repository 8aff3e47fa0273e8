//! Pairwise pseudolikelihood for the onset coefficients.

mod fit;
mod objective;
mod schedule;
mod terms;

pub use fit::{fit_pairwise, maximization_count, PairwiseFit, PairwiseOptions};
pub use objective::{pair_hessian, pair_loglik, pair_score, Order, PairEvaluation, PairwiseProblem};
pub use schedule::PairSchedule;
pub use terms::{eta, log_eta, log_zeta, logistic, softplus, PairTerm};

#[cfg(test)]
pub(crate) mod testing {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::cox::OnsetTransform;
    use crate::data::{Cohort, Observation};
    use crate::nuisance::{CensoringPart, NuisanceSet};
    use crate::step::StepFunction;

    /// Small random cohort with incident, prevalent, dead and censored rows.
    pub fn random_cohort(seed: u64, n: usize, p: usize) -> Cohort {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..n)
            .map(|k| {
                let z: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
                let r: f64 = rng.gen_range(0.5..30.0);
                let kind = rng.gen_range(0..4);
                let (v, d1, d2) = match kind {
                    0 => (r + rng.gen_range(0.1..40.0), true, false),
                    1 => (r * rng.gen_range(0.2..0.95), true, false),
                    2 => (r + rng.gen_range(0.1..40.0), false, true),
                    _ => (r + rng.gen_range(0.1..40.0), false, false),
                };
                let (w, d3) = if d1 {
                    (Some(v.max(r) + rng.gen_range(0.0..20.0)), Some(rng.gen_bool(0.5)))
                } else {
                    (None, None)
                };
                Observation::new(format!("s{k}"), r, v, d1, d2, w, d3, z).unwrap()
            })
            .collect();
        Cohort::new(obs, (0..p).map(|k| format!("z{k}")).collect()).unwrap()
    }

    fn random_step(rng: &mut ChaCha8Rng, count: usize, scale: f64) -> StepFunction {
        let mut t = 0.0;
        let (mut times, mut incs) = (Vec::new(), Vec::new());
        for _ in 0..count {
            t += rng.gen_range(0.5..8.0);
            times.push(t);
            incs.push(rng.gen_range(0.01..scale));
        }
        StepFunction::new(times, incs).unwrap()
    }

    pub fn random_nuisance(seed: u64, p: usize, censoring: bool) -> NuisanceSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coef = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let beta12 = coef(p);
        let beta13 = coef(p);
        let mut beta23 = coef(p);
        beta23.push(0.01);
        let beta_c = coef(p);
        NuisanceSet {
            beta12_pl: beta12,
            h012: random_step(&mut rng, 12, 0.1),
            beta13,
            h013: random_step(&mut rng, 12, 0.1),
            beta23,
            h023: random_step(&mut rng, 12, 0.2),
            censoring: censoring.then(|| CensoringPart {
                beta: beta_c,
                baseline: random_step(&mut rng, 12, 0.1),
            }),
            onset_transform: OnsetTransform::Identity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::data::Cohort;
    use crate::nuisance::NuisanceSet;
    use nalgebra::DMatrix;

    /// Objective over every unordered pair, written directly from the
    /// per-pair definitions (no schedule, no precomputation).
    fn all_pairs(beta: &[f64], nu: &NuisanceSet, c: &Cohort) -> (f64, Vec<f64>, DMatrix<f64>) {
        let n = c.len();
        let p = c.dim();
        let norm = (n * (n - 1) / 2) as f64;
        let (mut v, mut g, mut h) = (0.0, vec![0.0; p], DMatrix::zeros(p, p));
        let obs = &c.observations;
        for i in 0..n {
            for j in (i + 1)..n {
                let lz = log_zeta(nu, &obs[i], &obs[j]);
                if lz == f64::NEG_INFINITY {
                    continue;
                }
                let x = lz + log_eta(beta, &nu.h012, &obs[i], &obs[j]);
                v -= (1.0 + x.exp()).ln();
                let (zi, zj) = (&obs[i].covariates, &obs[j].covariates);
                let lin = |z: &[f64]| z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
                let (ei, ej) = (lin(zi), lin(zj));
                let dd = (obs[j].onset as i32 - obs[i].onset as i32) as f64;
                let dh = nu.h012.eval(obs[i].exit_age) - nu.h012.eval(obs[j].exit_age);
                let grad: Vec<f64> = (0..p)
                    .map(|k| (zi[k] - zj[k]) * dd + dh * (ei * zi[k] - ej * zj[k]))
                    .collect();
                let s = 1.0 / (1.0 + (-x).exp());
                for a in 0..p {
                    g[a] -= s * grad[a];
                    for b in 0..p {
                        h[(a, b)] -= s * (1.0 - s) * grad[a] * grad[b]
                            + s * dh * (ei * zi[a] * zi[b] - ej * zj[a] * zj[b]);
                    }
                }
            }
        }
        (v / norm, g.iter().map(|x| x / norm).collect(), h / norm)
    }

    #[test]
    fn full_modulo_equals_all_pairs() {
        for seed in 0..5 {
            let c = random_cohort(seed, 23, 3);
            let nu = random_nuisance(seed + 100, 3, seed % 2 == 0);
            let beta = [0.7, -0.4, 1.2];
            let reference = all_pairs(&beta, &nu, &c);
            for schedule in [
                PairSchedule::modulo(c.len(), c.len() - 1, Some(seed)).unwrap(),
                PairSchedule::complete(c.len()).unwrap(),
            ] {
                let prob = PairwiseProblem::new(&c, &nu, &schedule, None).unwrap();
                let ev = prob.evaluate(&beta, Order::Hessian);
                assert!((ev.value - reference.0).abs() < 1e-12);
                for a in 0..3 {
                    assert!((ev.score[a] - reference.1[a]).abs() < 1e-12);
                }
                assert!((ev.hessian.unwrap() - &reference.2).abs().max() < 1e-12);
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-3)
    }

    #[test]
    fn score_and_hessian_match_finite_differences() {
        for seed in 0..20u64 {
            let c = random_cohort(seed, 30, 3);
            let nu = random_nuisance(seed + 7, 3, seed % 3 != 0);
            let schedule = PairSchedule::modulo(30, 5, Some(seed)).unwrap();
            let prob = PairwiseProblem::new(&c, &nu, &schedule, None).unwrap();
            let beta = [0.3, -0.8, 0.5];
            let ev = prob.evaluate(&beta, Order::Hessian);
            let h = ev.hessian.unwrap();
            let step = 1e-5;
            for a in 0..3 {
                let mut up = beta;
                let mut dn = beta;
                up[a] += step;
                dn[a] -= step;
                let fd = (prob.loglik(&up) - prob.loglik(&dn)) / (2.0 * step);
                assert!(rel_err(ev.score[a], fd) < 1e-6, "score {a}: {} vs {fd}", ev.score[a]);
                let (su, sd) = (prob.score(&up), prob.score(&dn));
                for b in 0..3 {
                    let fd = (su[b] - sd[b]) / (2.0 * step);
                    assert!(rel_err(h[(b, a)], fd) < 1e-5, "hessian {b},{a}: {} vs {fd}", h[(b, a)]);
                }
            }
        }
    }

    #[test]
    fn invalid_pairs_contribute_nothing() {
        use crate::data::Observation;
        // every subject dies or is censored before anyone else's entry
        let obs = vec![
            Observation::new("a", 50.0, 55.0, false, true, None, None, vec![0.1]).unwrap(),
            Observation::new("b", 60.0, 65.0, false, false, None, None, vec![0.9]).unwrap(),
            Observation::new("c", 70.0, 75.0, false, true, None, None, vec![0.4]).unwrap(),
        ];
        let c = Cohort::new(obs, vec!["x".into()]).unwrap();
        let nu = random_nuisance(1, 1, true);
        let schedule = PairSchedule::modulo(3, 2, None).unwrap();
        let prob = PairwiseProblem::new(&c, &nu, &schedule, None).unwrap();
        assert_eq!(prob.n_invalid(), 6);
        let ev = prob.evaluate(&[0.4], Order::Hessian);
        assert_eq!(ev.value, 0.0);
        assert_eq!(ev.score, vec![0.0]);
        assert_eq!(ev.hessian.unwrap()[(0, 0)], 0.0);
        assert!(matches!(
            prob.maximize(&[0.0], &PairwiseOptions::default()),
            Err(crate::error::Error::DegenerateObjective)
        ));
    }

    #[test]
    fn objective_is_nonpositive_and_row_order_free_with_all_pairs() {
        let c = random_cohort(4, 25, 2);
        let nu = random_nuisance(5, 2, true);
        let beta = [0.2, 0.1];
        let full = PairSchedule::modulo(25, 24, None).unwrap();
        let a = PairwiseProblem::new(&c, &nu, &full, None).unwrap().loglik(&beta);
        let mut rev = c.clone();
        rev.observations.reverse();
        let b = PairwiseProblem::new(&rev, &nu, &full, None).unwrap().loglik(&beta);
        assert!(a <= 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn maximizer_is_stationary_and_reproducible() {
        let c = random_cohort(11, 120, 2);
        let nu = random_nuisance(12, 2, true);
        let schedule = PairSchedule::modulo(120, 10, Some(3)).unwrap();
        let fit = fit_pairwise(&c, &nu, &schedule, &PairwiseOptions::default()).unwrap();
        let again = fit_pairwise(&c, &nu, &schedule, &PairwiseOptions::default()).unwrap();
        assert_eq!(fit.estimate, again.estimate);
        let u = pair_score(&fit.estimate, &nu, &c, &schedule).unwrap();
        assert!(u.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-8);
        let h = pair_hessian(&fit.estimate, &nu, &c, &schedule).unwrap();
        assert!((-h).cholesky().is_some());
    }

    #[test]
    fn unit_weights_change_nothing() {
        let c = random_cohort(2, 40, 2);
        let nu = random_nuisance(3, 2, false);
        let schedule = PairSchedule::modulo(40, 6, Some(1)).unwrap();
        let plain = PairwiseProblem::new(&c, &nu, &schedule, None).unwrap();
        let ones = vec![1.0; 40];
        let weighted = PairwiseProblem::new(&c, &nu, &schedule, Some(&ones)).unwrap();
        let beta = [0.5, -0.5];
        assert_eq!(plain.loglik(&beta), weighted.loglik(&beta));
    }

    #[test]
    fn psi_sums_to_scaled_score() {
        let c = random_cohort(8, 35, 3);
        let nu = random_nuisance(9, 3, true);
        let schedule = PairSchedule::modulo(35, 4, Some(2)).unwrap();
        let prob = PairwiseProblem::new(&c, &nu, &schedule, None).unwrap();
        let beta = [0.1, 0.2, -0.3];
        let psi = prob.psi(&beta);
        let score = prob.score(&beta);
        for a in 0..3 {
            let s: f64 = psi.chunks(3).map(|r| r[a]).sum::<f64>() / prob.normalizer();
            assert!((s - score[a]).abs() < 1e-14);
        }
    }
}
