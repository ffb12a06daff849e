use proptest::prelude::*;

use mmpareto::data::{generate, SyntheticSpec};
use mmpareto::diag::{landscape_scan, noise_variance_compare, variance_threshold};
use mmpareto::integrate::{integrate_conventional_pareto, integrate_mmpareto, integrate_uniform};
use mmpareto::model::{cross_entropy, ModelDims};
use mmpareto::pareto::{solve_brute_force, solve_closed_form};
use mmpareto::train::{init_model, train, TrainConfig};
use mmpareto::{CaseTag, Matrix, RealVec, RngStream, Strategy as IntegrationStrategy, StrategyConfig};

/// Same-length pairs with entries spread over several orders of magnitude.
fn pair() -> impl Strategy<Value = (RealVec, RealVec)> {
    (2usize..48, -3.0f64..3.0, -3.0f64..3.0).prop_flat_map(|(n, sa, sb)| {
        let (ka, kb) = (10f64.powf(sa), 10f64.powf(sb));
        (
            proptest::collection::vec(-1.0f64..1.0, n).prop_map(move |v| v.into_iter().map(|x| ka * x).collect()),
            proptest::collection::vec(-1.0f64..1.0, n).prop_map(move |v| v.into_iter().map(|x| kb * x).collect()),
        )
    })
}

fn norm(v: &RealVec) -> f64 {
    v.l2_norm().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn interior_solution_is_orthogonal_to_difference((a, b) in pair()) {
        let s = solve_closed_form(&a, &b).unwrap();
        if s.alpha_m > 0.0 && s.alpha_m < 1.0 && !s.is_stationary {
            let d = a.sub(&b).unwrap();
            let rel = s.min_norm_vec.dot(&d).unwrap() / (s.min_norm * norm(&d));
            prop_assert!(rel.abs() <= 1e-9, "{rel}");
        }
    }

    #[test]
    fn min_norm_point_descends_on_both((a, b) in pair()) {
        let s = solve_closed_form(&a, &b).unwrap();
        if !s.is_stationary {
            for g in [&a, &b] {
                let rel = s.min_norm_vec.dot(g).unwrap() / (s.min_norm * norm(g));
                prop_assert!(rel >= -1e-12, "{rel}");
            }
        }
    }

    #[test]
    fn closed_form_never_beaten_by_grid((a, b) in pair()) {
        let cf = solve_closed_form(&a, &b).unwrap();
        let grid = solve_brute_force(&a, &b, 10_001).unwrap();
        prop_assert!(cf.min_norm <= grid.min_norm * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn non_conflict_is_scaled_uniform((a, b) in pair(), gamma in 1.0f64..4.0) {
        let mm = integrate_mmpareto(&a, &b, gamma).unwrap();
        if mm.case_tag == CaseTag::NonConflict {
            let uni = integrate_uniform(&a, &b).unwrap();
            prop_assert_eq!(mm.final_grad, uni.final_grad.scale(gamma));
        }
    }

    #[test]
    fn conflict_boost_exceeds_one((a, b) in pair()) {
        let mm = integrate_mmpareto(&a, &b, 1.5).unwrap();
        let (na, nb) = (norm(&a), norm(&b));
        let interior = mm.alpha_m > 0.0 && mm.alpha_m < 1.0;
        if mm.case_tag == CaseTag::Conflict && interior && (na - nb).abs() > 1e-9 * na.max(nb) {
            prop_assert!(mm.lambda > 1.0, "lambda {}", mm.lambda);
        }
    }

    #[test]
    fn mmpareto_magnitude_and_direction((a, b) in pair(), gamma in 1.0f64..4.0) {
        let mm = integrate_mmpareto(&a, &b, gamma).unwrap();
        prop_assert!(mm.final_grad.is_finite());
        if mm.case_tag != CaseTag::Stationary {
            let nf = norm(&mm.final_grad);
            let target = gamma * norm(&a.add(&b).unwrap());
            prop_assert!((nf - target).abs() <= 1e-9 * target);
            for g in [&a, &b] {
                prop_assert!(mm.final_grad.dot(g).unwrap() >= -1e-12 * nf * norm(g));
            }
        }
    }

    #[test]
    fn conventional_pareto_shrinks_conflicting_sum((a, b) in pair()) {
        let (gm, gu) = if norm(&a) < norm(&b) { (a, b) } else { (b, a) };
        let mm = integrate_mmpareto(&gm, &gu, 1.0).unwrap();
        if mm.case_tag == CaseTag::Conflict && norm(&gm) < norm(&gu) {
            let cp = integrate_conventional_pareto(&gm, &gu).unwrap();
            prop_assert!(norm(&cp.final_grad) < norm(&gm.add(&gu).unwrap()));
        }
    }

    #[test]
    fn uniform_logits_give_log_classes(n in 2usize..50, rows in 1usize..8, z in -50.0f64..50.0) {
        let logits = Matrix::from_vec(rows, n, vec![z; rows * n]).unwrap();
        let labels: Vec<usize> = (0..rows).map(|r| r % n).collect();
        let (loss, _) = cross_entropy(&logits, &labels);
        prop_assert!((loss - (n as f64).ln()).abs() <= 1e-12);
    }

    #[test]
    fn threshold_strictly_increasing(p in 1u32..400, q in 1u32..400, r in 1u32..50) {
        let k1 = 1.0 + p as f64 / r as f64;
        let k2 = k1 + q as f64 / r as f64;
        prop_assert!(variance_threshold(k1).unwrap() < variance_threshold(k2).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn total_loss_gradient_decomposes(seed in any::<u64>()) {
        let spec = SyntheticSpec {
            n_classes: 3,
            dim_per_modality: vec![3, 4],
            n_train: 12,
            n_test: 3,
            modality_noise: vec![0.5, 1.5],
            informative_frac: vec![1.0, 1.0],
            seed,
        };
        let data = generate(&spec).unwrap();
        let mut dims = ModelDims::for_modalities(vec![3, 4], 3);
        dims.hidden_dim = Some(5);
        dims.output_dim = 3;
        let model = init_model(dims, seed ^ 1).unwrap();
        let batch = &data.train.samples;
        let grads = model.backward_per_loss(batch).unwrap();
        let mut rng = RngStream::new(seed, 9);
        let segs = model.segment_ranges();
        let theta = model.flat_params();
        // directional derivative of the total loss along a random direction in each encoder
        for (k, r) in segs.iter().take(2).cloned().enumerate() {
            let dir: Vec<f64> = (0..r.len()).map(|_| rng.standard_normal()).collect();
            let summed = grads.per_encoder_multimodal[k].add(&grads.per_encoder_unimodal[k]).unwrap();
            let analytic: f64 = summed.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let h = 1e-6;
            let shifted = |sign: f64| {
                let mut p = theta.clone();
                for (x, d) in p[r.clone()].iter_mut().zip(&dir) {
                    *x += sign * h * d;
                }
                let mut m = model.clone();
                m.set_flat_params(&p).unwrap();
                m.losses(batch).unwrap().total()
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
            prop_assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn class_balance_within_two_percent(seed in any::<u64>()) {
        let data = generate(&SyntheticSpec::asymmetric(seed)).unwrap();
        let labels = &data.train.samples.labels;
        let mut counts = [0usize; 6];
        for &l in labels {
            counts[l] += 1;
        }
        let expect = labels.len() as f64 / 6.0;
        for c in counts {
            prop_assert!((c as f64 - expect).abs() / labels.len() as f64 <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn landscape_deterministic_and_row_order_free(seed in any::<u64>()) {
        let spec = SyntheticSpec { n_train: 60, n_test: 6, ..SyntheticSpec::asymmetric(seed) };
        let data = generate(&spec).unwrap();
        let model = init_model(ModelDims::for_modalities(vec![20, 20], 6), seed).unwrap();
        let scan = |ds| landscape_scan(&model, ds, 7, 0.3, &mut RngStream::new(seed, 3)).unwrap();
        let base = scan(&data.train);
        prop_assert_eq!(&base, &scan(&data.train));
        let perm = RngStream::new(seed, 5).permutation(data.train.len());
        let shuffled = scan(&data.train.permuted(&perm));
        for (a, b) in base.losses.iter().zip(&shuffled.losses) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert_eq!(base.accuracies, shuffled.accuracies);
    }
}

proptest! {
    // fixed seed: a 3-sigma check fails by chance about once in 370 draws
    #![proptest_config(ProptestConfig {
        cases: 6,
        rng_seed: proptest::test_runner::RngSeed::Fixed(7),
        ..ProptestConfig::default()
    })]

    #[test]
    fn noise_estimates_within_three_standard_errors(k in 1.0f64..8.0, alpha in 0.5f64..1.0, seed in any::<u64>()) {
        let r = noise_variance_compare(k, alpha, 1.0, 100_000, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert!((r.var_pareto - r.analytic_pareto).abs() <= 3.0 * r.se_pareto + 1e-12);
        prop_assert!((r.var_uniform - r.analytic_uniform).abs() <= 3.0 * r.se_uniform);
    }

    #[test]
    fn mmpareto_updates_stay_aligned_during_training(seed in any::<u64>()) {
        let spec = SyntheticSpec { n_train: 256, n_test: 64, ..SyntheticSpec::asymmetric(seed) };
        let data = generate(&spec).unwrap();
        let model = init_model(ModelDims::for_modalities(vec![20, 20], 6), seed).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            strategy: StrategyConfig::new(IntegrationStrategy::MMPareto, 1.5),
            seed,
            ..TrainConfig::default()
        };
        let (_, record) = train(model, &data, &cfg).unwrap();
        prop_assert!(record.min_update_alignment() >= -1e-12);
    }
}
