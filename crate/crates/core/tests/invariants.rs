use std::collections::BTreeSet;

use proptest::prelude::*;

use iqa_core::corpus::{Preference, TaskIdentifier};
use iqa_core::indicators::FeatureVector;
use iqa_core::ranker::{init_params, rank_pair, score, score_difference_pair, score_logit, train_stage, StageId, StageSpec};
use iqa_core::synth::separable_relativity_pool;

fn moving_average(trace: &[f64], end: usize, window: usize) -> f64 {
    trace[end + 1 - window..=end].iter().sum::<f64>() / window as f64
}

#[test]
fn stage_one_loss_falls_on_the_separable_pool() {
    let pool = separable_relativity_pool(4000, 10, 21);
    let spec = StageSpec {
        stage_id: StageId::Relativity,
        tasks: BTreeSet::from([TaskIdentifier::Relativity]),
        dataset_ids: vec!["separable".into()],
        steps: 2001,
        batch_size: 32,
        learning_rate: 0.05,
        seed: 21,
    };
    let out = train_stage(&init_params(16, 21).unwrap(), &spec, &pool.pools).unwrap();
    assert!(moving_average(&out.loss_trace, 2000, 100) < moving_average(&out.loss_trace, 100, 100));
}

fn features() -> impl Strategy<Value = FeatureVector> {
    prop::array::uniform12(-2.0f64..2.0).prop_map(FeatureVector)
}

proptest! {
    #[test]
    fn rank_pair_ignores_increasing_transforms(seed in 0u64..500, a in features(), b in features()) {
        let p = init_params(8, seed).unwrap();
        let (za, zb) = (score_logit(&p, &a), score_logit(&p, &b));
        prop_assume!(za != zb);
        let decided = rank_pair(&p, ("a", &a), ("b", &b));
        for g in [|z: f64| z.exp(), |z: f64| z * z * z, |z: f64| 3.0 * z - 1.0] {
            let expected = if g(za) > g(zb) { Preference::First } else { Preference::Second };
            prop_assert_eq!(decided, expected);
        }
    }

    #[test]
    fn ranking_and_score_difference_agree_in_generic_position(seed in 0u64..500, a in features(), b in features()) {
        let p = init_params(8, seed).unwrap();
        prop_assume!(score(&p, &a) != score(&p, &b));
        prop_assert_eq!(rank_pair(&p, ("a", &a), ("b", &b)), score_difference_pair(&p, ("a", &a), ("b", &b)));
    }
}
