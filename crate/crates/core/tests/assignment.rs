use capacity_rank::assignment::{
    brute_force_optimal, descending_order, expected_profit, rank_by_predicted_reward, rank_tasks,
    RankMode,
};
use capacity_rank::capacity::{CapacityKind, CapacityModel};
use capacity_rank::gbm::{fit, FeatureMatrix, TrainConfig};
use capacity_rank::objectives::{dcg, CrossEntropy};
use capacity_rank::tasks::{generate_synthetic, CostSchema, SyntheticSpec};
use proptest::prelude::*;

fn monotone_weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..=8).prop_map(|mut w| {
        w.sort_by(|a, b| b.total_cmp(a));
        w
    })
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    monotone_weights().prop_flat_map(|w| {
        let n = w.len();
        (prop::collection::vec(-10.0f64..10.0, n), Just(w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn sorting_matches_the_exhaustive_optimum((rewards, w) in instance()) {
        let sorted = expected_profit(&descending_order(&rewards), &rewards, &w).unwrap();
        let (_, best) = brute_force_optimal(&rewards, &w).unwrap();
        prop_assert_eq!(sorted, best);
    }

    #[test]
    fn dcg_equals_expected_profit((rewards, w) in instance(), seed in any::<u64>()) {
        let n = rewards.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let a = dcg(&order, &rewards, &w).unwrap();
        let b = expected_profit(&order, &rewards, &w).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn expected_profit_is_linear((rewards, w) in instance(), c in -5.0f64..5.0) {
        let order = descending_order(&rewards);
        let base = expected_profit(&order, &rewards, &w).unwrap();
        let scaled_r: Vec<f64> = rewards.iter().map(|r| c * r).collect();
        let scaled_w: Vec<f64> = w.iter().map(|x| x * c.abs()).collect();
        let tol = 1e-12 * (1.0 + base.abs() * c.abs());
        prop_assert!((expected_profit(&order, &scaled_r, &w).unwrap() - c * base).abs() <= tol);
        prop_assert!((expected_profit(&order, &rewards, &scaled_w).unwrap() - c.abs() * base).abs() <= tol);
    }

    #[test]
    fn raising_a_reward_never_lowers_the_sorted_profit((rewards, w) in instance(), i in 0usize..8, bump in 0.0f64..10.0) {
        let i = i % rewards.len();
        let before = expected_profit(&descending_order(&rewards), &rewards, &w).unwrap();
        let mut raised = rewards.clone();
        raised[i] += bump;
        let after = expected_profit(&descending_order(&raised), &raised, &w).unwrap();
        prop_assert!(after >= before - 1e-12);
    }
}

#[test]
fn distinct_rewards_have_the_descending_order_as_optimum() {
    let rewards = [3.0, -2.5, 7.25, 0.5, 1.0];
    let w = [1.0, 0.8, 0.5, 0.25, 0.1];
    let (order, _) = brute_force_optimal(&rewards, &w).unwrap();
    assert_eq!(order, descending_order(&rewards));
}

#[test]
fn expected_reward_ranking_is_optimal_on_its_own_estimates() {
    // Sorting by estimated reward maximises the estimated profit.
    let spec = SyntheticSpec {
        n: 300,
        schema: CostSchema::Fraud,
        ..Default::default()
    };
    let data = generate_synthetic(&spec, 21).unwrap();
    let model = fit(
        &FeatureMatrix::from_tasks(&data),
        &CrossEntropy::new(data.labels()),
        &TrainConfig {
            n_rounds: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let subset = data.subset(&[0, 1, 2, 3, 4, 5, 6]).unwrap();
    let ranking = rank_by_predicted_reward(&model, &subset, RankMode::ExpectedReward).unwrap();
    let predicted = ranking.predicted_rewards.clone().unwrap();
    let cap = CapacityModel::new(
        CapacityKind::Lognormal {
            mu_log: 3f64.ln(),
            sigma: 1.0,
        },
        7,
    )
    .unwrap();
    let w = cap.survival_weights().unwrap();
    let plan = expected_profit(&ranking.order, &predicted, w.as_slice()).unwrap();
    let (_, best) = brute_force_optimal(&predicted, w.as_slice()).unwrap();
    assert_eq!(plan, best);
    assert!(ranking.warning.is_none());
}

#[test]
fn raw_score_ranking_of_a_classifier_warns() {
    let spec = SyntheticSpec {
        n: 100,
        ..Default::default()
    };
    let data = generate_synthetic(&spec, 1).unwrap();
    let model = fit(
        &FeatureMatrix::from_tasks(&data),
        &CrossEntropy::new(data.labels()),
        &TrainConfig {
            n_rounds: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let r = rank_by_predicted_reward(&model, &data, RankMode::RawScore).unwrap();
    assert!(r.warning.is_some());
    let p = rank_by_predicted_reward(&model, &data, RankMode::Probability).unwrap();
    assert_eq!(r.order, p.order);
    assert!(rank_tasks(
        &[0.0],
        Some(&[(1.0, 0.0), (2.0, 0.0)]),
        RankMode::Probability
    )
    .is_err());
}
