//! Kept in its own binary so no other test touches the process-wide
//! maximization counter.

use prevpair::pairwise::maximization_count;
use prevpair::simulate::{gen_cohort, ScenarioSpec, Setting};
use prevpair::variance::{bootstrap2, bootstrap3, BootstrapOptions, Estimation};
use prevpair::{CensoringModel, CoxConfig, PairSchedule, PairwiseOptions};

#[test]
fn boot3_never_calls_the_optimizer() {
    let cohort = gen_cohort(&ScenarioSpec::setting(Setting::A, 400, 9)).unwrap().cohort;
    let schedule = PairSchedule::modulo(400, 10, Some(2)).unwrap();
    let est = Estimation::new(&cohort, schedule, CensoringModel::Cox, CoxConfig::default(), &PairwiseOptions::default())
        .unwrap();
    let before = maximization_count();
    let opts = BootstrapOptions::new(30, 4);
    bootstrap3(&est, &opts).unwrap();
    assert_eq!(maximization_count(), before);
    bootstrap2(&est, &opts).unwrap();
    assert_eq!(maximization_count(), before + 30);
}
