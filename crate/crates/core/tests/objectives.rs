use capacity_rank::assignment::descending_order;
use capacity_rank::capacity::WorkerWeights;
use capacity_rank::objectives::{
    dcg, ideal_dcg, lambda_grad_hess, make_objective, ndcg, swap_delta, LambdaParams,
    ObjectiveKind, PairCutoff, TrainingTargets,
};
use capacity_rank::tasks::CostMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nonincreasing weights in [0, 1]; dyadic when `dyadic` is set, so sums are exact.
fn random_weights(rng: &mut impl Rng, n: usize, dyadic: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if dyadic {
                f64::from(rng.gen_range(0..=64u32)) / 64.0
            } else {
                rng.gen::<f64>()
            }
        })
        .collect();
    w.sort_by(|a, b| b.total_cmp(a));
    w
}

fn swapped(order: &[usize], a: usize, b: usize) -> Vec<usize> {
    let mut o = order.to_vec();
    o.swap(a, b);
    o
}

fn exact_params() -> LambdaParams {
    LambdaParams {
        sigma: 1.0,
        cutoff: PairCutoff::Exact,
    }
}

#[test]
fn swap_delta_is_exact_on_dyadic_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let w = random_weights(&mut rng, n, true);
        let rel: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..5u32))).collect();
        let ideal = ideal_dcg(&rel, &w).unwrap();
        if ideal <= 0.0 {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let order = descending_order(&scores);
        let before = dcg(&order, &rel, &w).unwrap();
        for a in 0..n {
            for b in a + 1..n {
                let after = dcg(&swapped(&order, a, b), &rel, &w).unwrap();
                let brute = (after - before).abs() / ideal;
                let analytic = swap_delta(w[a], w[b], rel[order[a]], rel[order[b]], ideal);
                assert_eq!(analytic, brute, "pair ({a}, {b})");
            }
        }
    }
}

#[test]
fn swap_delta_matches_brute_force_on_real_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let w = random_weights(&mut rng, n, false);
        let rel: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..100.0)).collect();
        let ideal = ideal_dcg(&rel, &w).unwrap();
        if ideal <= 0.0 {
            continue;
        }
        let order: Vec<usize> = (0..n).collect();
        let before = ndcg(&order, &rel, &w).unwrap();
        for a in 0..n {
            for b in a + 1..n {
                let brute = (ndcg(&swapped(&order, a, b), &rel, &w).unwrap() - before).abs();
                let analytic = swap_delta(w[a], w[b], rel[a], rel[b], ideal);
                assert!(
                    (analytic - brute).abs() <= 1e-12 * (1.0 + brute),
                    "{analytic} vs {brute}"
                );
            }
        }
    }
}

/// Lambdas rebuilt from brute-force swaps and the pairwise logistic.
fn brute_lambdas(scores: &[f64], rel: &[f64], w: &[f64], sigma: f64) -> Vec<f64> {
    let n = scores.len();
    let order = descending_order(scores);
    let base = ndcg(&order, rel, w).unwrap();
    let mut lam = vec![0.0; n];
    for a in 0..n {
        for b in a + 1..n {
            let (i, j) = (order[a], order[b]);
            if rel[i] == rel[j] {
                continue;
            }
            let delta = (ndcg(&swapped(&order, a, b), rel, w).unwrap() - base).abs();
            let (hi, lo) = if rel[i] > rel[j] { (i, j) } else { (j, i) };
            let rho = 1.0 / (1.0 + (sigma * (scores[hi] - scores[lo])).exp());
            lam[hi] -= rho * delta;
            lam[lo] += rho * delta;
        }
    }
    lam
}

#[test]
fn lambda_gradients_match_brute_force_swaps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let n = rng.gen_range(2..=30);
        let w = random_weights(&mut rng, n, false);
        // Few distinct relevances on even trials exercises the grouped scan.
        let rel: Vec<f64> = if trial % 2 == 0 {
            (0..n).map(|_| f64::from(rng.gen_range(0..3u32))).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-5.0..50.0)).collect()
        };
        if ideal_dcg(&rel, &w).unwrap() <= 0.0 || rel.windows(2).all(|p| p[0] == p[1]) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let got = lambda_grad_hess(&scores, &rel, &w, &exact_params()).unwrap();
        let want = brute_lambdas(&scores, &rel, &w, 1.0);
        for (g, b) in got.grad.iter().zip(&want) {
            assert!((g - b).abs() <= 1e-12, "{g} vs {b}");
        }
    }
}

#[test]
fn lambdas_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(2..=200);
        let w = random_weights(&mut rng, n, false);
        let rel: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..50.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = lambda_grad_hess(&scores, &rel, &w, &LambdaParams::default()).unwrap();
        let total: f64 = g.grad.iter().sum();
        let scale: f64 = g.grad.iter().map(|x| x.abs()).sum();
        assert!(total.abs() <= 1e-12 * (1.0 + scale), "sum {total}");
    }
}

#[test]
fn gradient_step_improves_ndcg() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut trials, mut improved) = (0, 0);
    while trials < 1000 {
        let n = 5;
        let w = random_weights(&mut rng, n, false);
        let rel: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..4u32))).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let Ok(before) = ndcg(&descending_order(&scores), &rel, &w) else {
            continue;
        };
        if before >= 1.0 - 1e-12 || w[0] == w[n - 1] {
            continue;
        }
        trials += 1;
        let g = lambda_grad_hess(&scores, &rel, &w, &exact_params()).unwrap();
        let scale = g.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let stepped: Vec<f64> = scores
            .iter()
            .zip(&g.grad)
            .map(|(s, gi)| s - gi / scale)
            .collect();
        let after = ndcg(&descending_order(&stepped), &rel, &w).unwrap();
        if after > before {
            improved += 1;
        }
    }
    assert!(improved >= 950, "improved in {improved} of 1000");
}

#[test]
fn ndcg_depends_only_on_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let n = rng.gen_range(2..40);
        let w = random_weights(&mut rng, n, false);
        let rel: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (a, b) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        assert_eq!(
            ndcg(&descending_order(&scores), &rel, &w).unwrap(),
            ndcg(&descending_order(&affine), &rel, &w).unwrap()
        );
    }
}

#[test]
fn ndcg_with_negative_relevance_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let w = random_weights(&mut rng, 5, false);
        let rel: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut rng);
        let direct: f64 = order.iter().zip(&w).map(|(&i, wk)| wk * rel[i]).sum();
        let mut sorted = rel.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let ideal: f64 = sorted.iter().zip(&w).map(|(r, wk)| r * wk).sum();
        match ndcg(&order, &rel, &w) {
            Ok(v) => assert!((v - direct / ideal).abs() < 1e-12),
            Err(_) => assert!(ideal <= 0.0),
        }
    }
}

#[test]
fn brute_force_best_dcg_is_the_sorted_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let w = random_weights(&mut rng, 6, false);
        let rel: Vec<f64> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (_, best) = capacity_rank::assignment::brute_force_optimal(&rel, &w).unwrap();
        assert_eq!(best, ideal_dcg(&rel, &w).unwrap());
    }
}

#[test]
fn cross_entropy_ignores_worker_weights() {
    let targets = TrainingTargets {
        labels: vec![1, 0, 0, 1],
        costs: Some(vec![CostMatrix::new(0.0, 12.0, 2.0, 0.0).unwrap(); 4]),
    };
    let scores = [0.3, -1.0, 2.0, 0.0];
    let mut out = Vec::new();
    for w in [vec![1.0, 1.0, 0.5, 0.0], vec![0.2, 0.1, 0.1, 0.1]] {
        let w = WorkerWeights::new(w).unwrap();
        let obj = make_objective(
            ObjectiveKind::CrossEntropy,
            &targets,
            Some(&w),
            LambdaParams::default(),
        )
        .unwrap();
        let (mut g, mut h) = (vec![0.0; 4], vec![0.0; 4]);
        obj.grad_hess(&scores, &mut g, &mut h);
        out.push((g, h, obj.loss(&scores)));
    }
    assert_eq!(out[0], out[1]);
}
