use async_local_sgd::config::SpeedProfile;
use async_local_sgd::data::shard_probabilities;
use async_local_sgd::model::max_relative_error;
use async_local_sgd::optim::{
    outer_nesterov, poly_discount, DelayedNesterovState, LrScheduleSpec, PseudoGradient,
};
use async_local_sgd::sim::dylu_steps;
use async_local_sgd::{Activation, Batch, ExperimentConfig, Mlp, MlpConfig, ParamVector, StrategyKind};
use proptest::prelude::*;

fn tanh_mlp() -> Mlp {
    Mlp::new(MlpConfig {
        input_dim: 3,
        hidden_dims: vec![5],
        num_classes: 3,
        activation: Activation::Tanh,
    })
    .unwrap()
}

fn batch_strategy(dim: usize, classes: usize, rows: usize) -> impl Strategy<Value = Batch> {
    (
        prop::collection::vec(-10.0..10.0f64, dim * rows),
        prop::collection::vec(0..classes, rows),
    )
        .prop_map(move |(x, y)| Batch::new(dim, x, y).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_matches_finite_differences(
        values in prop::collection::vec(-10.0..10.0f64, 38),
        batch in batch_strategy(3, 3, 4),
    ) {
        let mlp = tanh_mlp();
        prop_assert_eq!(mlp.num_params(), 38);
        let params = ParamVector::from_values(mlp.shapes(), values).unwrap();
        let (loss, grad) = mlp.backward(&params, &batch).unwrap();
        prop_assert_eq!(loss, mlp.forward_loss(&params, &batch).unwrap());
        let fd = mlp.finite_diff_grad(&params, &batch, 1e-5).unwrap();
        prop_assert!(max_relative_error(grad.values(), fd.values()) <= 1e-5);
    }

    #[test]
    fn loss_ignores_row_order(
        values in prop::collection::vec(-3.0..3.0f64, 38),
        batch in batch_strategy(3, 3, 6),
        rotation in 0usize..6,
    ) {
        let mlp = tanh_mlp();
        let params = ParamVector::from_values(mlp.shapes(), values).unwrap();
        let order: Vec<usize> = (0..6).map(|i| (i + rotation) % 6).rev().collect();
        let a = mlp.forward_loss(&params, &batch).unwrap();
        let b = mlp.forward_loss(&params, &batch.select(&order)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn shard_probabilities_form_a_distribution(
        sizes in prop::collection::vec(1usize..1000, 1..8),
        seed_consumed in prop::collection::vec(0u64..5000, 8),
    ) {
        let consumed = &seed_consumed[..sizes.len()];
        let p = shard_probabilities(&sizes, consumed);
        prop_assert_eq!(p.len(), sizes.len());
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn delayed_nesterov_with_one_slot_is_nesterov(
        c in 0.0..=1.0f64,
        beta in 0.0..0.99f64,
        lr in 0.01..1.0f64,
        grads in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 1..20),
    ) {
        let start = ParamVector::flat(vec![0.5, -0.5, 1.0, 0.0]);
        let mut dn_params = start.clone();
        let mut dn = DelayedNesterovState::new(&start, 1, c, beta).unwrap();
        let mut params = start.clone();
        let mut m = start.zeros_like();
        for g in grads {
            let g = ParamVector::flat(g);
            dn.step(&mut dn_params, &g, lr).unwrap();
            outer_nesterov(&mut m, beta, &mut params, &g, lr).unwrap();
            prop_assert!(dn_params.max_abs_diff(&params).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn zero_poly_exponent_is_identity(
        delta in prop::collection::vec(-100.0..100.0f64, 1..10),
        staleness in 0u64..10_000,
    ) {
        let mut g = PseudoGradient::new(ParamVector::flat(delta.clone()), 0, 0);
        g.staleness = staleness;
        let out = poly_discount(g, 0.0);
        prop_assert_eq!(out.delta.values(), &delta[..]);
    }

    #[test]
    fn poly_discount_never_grows_updates(
        delta in prop::collection::vec(-100.0..100.0f64, 1..10),
        staleness in 0u64..10_000,
        exponent in 0.0..3.0f64,
    ) {
        let mut g = PseudoGradient::new(ParamVector::flat(delta.clone()), 0, 0);
        g.staleness = staleness;
        let out = poly_discount(g, exponent);
        for (a, b) in out.delta.values().iter().zip(&delta) {
            prop_assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn lr_stays_in_range_and_decays_after_warmup(
        max_lr in 1e-4..1.0f64,
        ratio in 0.0..1.0f64,
        warmup in 0u64..100,
        extra in 0u64..1000,
    ) {
        let spec = LrScheduleSpec {
            max_lr,
            min_lr: max_lr * ratio,
            warmup_steps: warmup,
            total_steps: warmup + extra,
        };
        let mut prev = f64::INFINITY;
        for t in 0..warmup + extra + 50 {
            let lr = spec.lr_at(t);
            prop_assert!((0.0..=max_lr + 1e-15).contains(&lr));
            if t >= warmup {
                prop_assert!(lr >= spec.min_lr - 1e-15);
                prop_assert!(lr <= prev + 1e-15);
                prev = lr;
            }
        }
    }

    #[test]
    fn dylu_completion_spread_is_one_slow_step(
        speeds in prop::collection::vec(0.01..=1.0f64, 1..12),
        h in 1u64..300,
    ) {
        let fastest = speeds.iter().cloned().fold(0.0, f64::max);
        let slowest = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        let times: Vec<f64> = speeds.iter().map(|&v| dylu_steps(v, fastest, h) as f64 / v).collect();
        let spread = times.iter().cloned().fold(0.0, f64::max) - times.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(spread <= 1.0 / slowest + 1e-9);
    }

    #[test]
    fn config_text_round_trips(
        k in 1usize..8,
        hidden in 1usize..64,
        lr in 1e-4..0.1f64,
        beta in 0.0..0.99f64,
        dylu in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.workers = k;
        cfg.hidden = vec![hidden];
        cfg.inner.lr = lr;
        cfg.outer.beta = beta;
        cfg.outer.strategy = StrategyKind::DelayedNesterov;
        cfg.dylu = dylu;
        cfg.seeds.run = seed;
        cfg.profile = SpeedProfile::Explicit((0..k).map(|i| 1.0 / (i + 1) as f64).collect());
        let text = cfg.to_string();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
