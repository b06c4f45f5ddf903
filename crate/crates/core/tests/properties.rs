//! Property tests for the library-wide invariants.

use proptest::prelude::*;

use unlearn_core::checkpoint;
use unlearn_core::data::{make_gaussian_blobs, select_forget, ForgetRule};
use unlearn_core::inner::{self, InnerConfig, NoiseKind};
use unlearn_core::nn::{self, Activation, Layer, Model};
use unlearn_core::outer::topk_soft_target;
use unlearn_core::rng;

fn arb_dims() -> impl Strategy<Value = Vec<usize>> {
    (2usize..6, 1usize..12, 2usize..5).prop_map(|(input, hidden, classes)| {
        vec![input, hidden, classes]
    })
}

fn arb_model() -> impl Strategy<Value = Model<f64>> {
    (arb_dims(), any::<u64>()).prop_map(|(dims, seed)| Model::glorot(&dims, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_always_a_distribution(model in arb_model(), seed in any::<u64>()) {
        let mut r = rng::stream(seed, 0);
        let x: Vec<f64> = (0..model.input_dim()).map(|_| NoiseKind::Gaussian.sample(&mut r) * 3.0).collect();
        let bundle = nn::forward(&model, &x).unwrap();
        let sum: f64 = bundle.probabilities.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(bundle.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn sign_steps_have_magnitude_zero_or_eps(
        g in proptest::collection::vec(-5.0f64..5.0, 1..16),
        gamma in 0.0f64..2.0,
        lambda in 0.0f64..1.0,
        c in 0.01f64..3.0,
        t in 1usize..50,
        seed in any::<u64>(),
    ) {
        let delta: Vec<f64> = g.iter().map(|v| v * 0.1).collect();
        let cfg = InnerConfig {
            c,
            t_inner: t,
            gamma,
            lambda,
            kappa: 0.5,
            early_stop_at_kappa: false,
            noise: NoiseKind::Gaussian,
            seed,
        };
        let mut r = rng::stream(seed, 1);
        let d = inner::sign_step(&g, &delta, &cfg, t, &mut r);
        let eps = c / t as f64;
        for di in d {
            prop_assert!(di == 0.0 || (di.abs() - eps).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_targets_are_distributions_with_at_most_k_support(
        logits in proptest::collection::vec(-10.0f64..10.0, 2..8),
        k_frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((logits.len() - 1) as f64 * k_frac) as usize;
        let t = topk_soft_target(&logits, k);
        let sum: f64 = t.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
        prop_assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(t.iter().filter(|v| **v != 0.0).count() <= k);
    }

    #[test]
    fn forget_partitions_are_exact(
        classes in 2usize..5,
        fraction in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let ds = make_gaussian_blobs::<f64>(classes, 30, 2, 5.0, seed).unwrap();
        let rule = ForgetRule::ClassFraction { class: classes - 1, fraction };
        let p = match select_forget(&ds, rule, seed) {
            Ok(p) => p,
            Err(_) => return Ok(()), // rounding can select zero rows at tiny fractions
        };
        let mut all: Vec<usize> = p.forget.iter().chain(&p.remain).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ds.train_rows());
        let mut test_all: Vec<usize> = p.forget_test.iter().chain(&p.remain_test).copied().collect();
        test_all.sort_unstable();
        prop_assert_eq!(test_all, ds.test_rows());
    }

    #[test]
    fn checkpoints_roundtrip_bit_exactly(model in arb_model()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        checkpoint::save(&model, &path).unwrap();
        let loaded: Model<f64> = checkpoint::load(&path).unwrap();
        for (a, b) in model.layers().iter().zip(loaded.layers()) {
            let wa: Vec<u64> = a.weights().iter().map(|v| v.to_bits()).collect();
            let wb: Vec<u64> = b.weights().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(wa, wb);
        }
    }

    #[test]
    fn forward_never_panics_on_finite_inputs(
        x in proptest::collection::vec(-100.0f64..100.0, 3),
        seed in any::<u64>(),
    ) {
        let model = Model::<f64>::glorot(&[3, 6, 3], seed).unwrap();
        let bundle = nn::forward(&model, &x).unwrap();
        prop_assert!(bundle.logits.iter().all(|l| l.is_finite()));
        let loss = bundle.cross_entropy(&nn::one_hot(3, 0));
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}

#[test]
fn boundary_labels_disagree_with_true_class_when_strictly_crossed() {
    // kappa strictly below 1/K plus crossed=true forces a different argmax.
    let model = Model::from_layers(vec![Layer::new(
        2,
        3,
        Activation::Identity,
        vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0],
        vec![0.0, 0.0, 0.0],
    )
    .unwrap()])
    .unwrap();
    let mut cfg = InnerConfig::for_classes(3);
    cfg.kappa = 1.0 / 3.0 - 1e-6;
    cfg.t_inner = 40;
    cfg.c = 0.5;
    for (i, x) in [[2.0, -1.0], [1.5, 0.5], [0.3, -0.2]].iter().enumerate() {
        let r = inner::search_boundary(&model, x, 0, &cfg, i as u64).unwrap();
        if r.crossed {
            assert_ne!(r.y_boundary, 0, "crossed sample still labeled class 0");
        }
    }
}
