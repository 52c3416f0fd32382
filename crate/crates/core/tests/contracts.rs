mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcnet_core::blocks::{predictive_error, RecurrentBlock};
use vcnet_core::data::{
    generate_synthetic, load_idx, load_lightfield, write_idx, write_lightfield, LabeledImage, SyntheticSpec,
};
use vcnet_core::gradcheck::{check, TOLERANCE};
use vcnet_core::graph::{build_model, AreaName, ModelConfig};
use vcnet_core::train::{
    composite_loss, correct_predictions, fit, train_epoch, AdamConfig, AdamState, AugmentationConfig, EpochOptions,
    TrainConfig,
};
use vcnet_core::{ParamStore, Tape, Tensor};

fn mini_batch(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(&[n, 1, 32, 32], 0.0, 1.0, &mut rng);
    let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
    (x, labels)
}

fn grads_at(lambda: f64) -> (vcnet_core::graph::StreamGraph, Vec<Tensor>) {
    let g = build_model(&ModelConfig::mini(10), 11).unwrap();
    let (x, labels) = mini_batch(4, 12);
    let mut t = Tape::new();
    let p = g.bind(&mut t);
    let xv = t.constant(x);
    let out = g.forward(&mut t, &p, xv).unwrap();
    let loss = composite_loss(&mut t, &out, &labels, lambda).unwrap();
    t.backward(loss.total).unwrap();
    let grads = p.grads(&t);
    (g, grads)
}

#[test]
fn prediction_error_is_rectified() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5)];
        let a = Tensor::uniform(&shape, -2.0, 2.0, &mut rng);
        let b = Tensor::uniform(&shape, -2.0, 2.0, &mut rng);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b));
        let eps = predictive_error(&mut t, av, bv).unwrap().epsilon;
        assert!(t.value(eps).data().iter().all(|&v| v >= 0.0));
        let a2 = t.constant(a);
        let same = predictive_error(&mut t, av, a2).unwrap().epsilon;
        assert!(t.value(same).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lambda_gates_top_down_gradient() {
    let (g, zero) = grads_at(0.0);
    let ids = g.top_down().projection.param_ids();
    for id in &ids {
        assert!(zero[id.index()].data().iter().all(|&v| v == 0.0));
    }
    let (_, live) = grads_at(0.1);
    assert!(ids.iter().any(|id| live[id.index()].max_abs() > 0.0));
}

#[test]
fn both_streams_receive_gradient() {
    let (g, grads) = grads_at(0.1);
    for area in [AreaName::V1, AreaName::V4, AreaName::Pit, AreaName::Mt, AreaName::Mst] {
        let norm: f64 = g.area_param_ids(area).iter().map(|id| grads[id.index()].max_abs()).sum();
        assert!(norm > 0.0, "{area} received no gradient");
    }
}

#[test]
fn feedback_does_not_change_logits() {
    let g = build_model(&ModelConfig::mini(10), 3).unwrap();
    let (x, _) = mini_batch(3, 4);
    let (with, eps_with) = g.infer(&x).unwrap();
    let (without, eps_without) = g.without_feedback().infer(&x).unwrap();
    assert_eq!(with, without);
    assert_ne!(eps_with, eps_without);
}

#[test]
fn recurrent_shared_weight_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let z0 = store.add("z0", Tensor::uniform(&[1, 2, 4, 4], 0.0, 1.0, &mut rng));
    let block = RecurrentBlock::new(&mut store, "recurrent", 2, 3, &mut rng).unwrap();
    assert_eq!(block.conv.param_ids().len(), 2);
    assert_eq!(store.len(), 3);
    let report = check(
        "recurrent",
        &store,
        |t, p| {
            let z = block.forward(t, p, p.get(z0))?;
            let sq = t.mul(z, z)?;
            Ok(t.sum(sq))
        },
        None,
        None,
    )
    .unwrap();
    assert!(report.max_rel_error <= TOLERANCE, "{report}");
}

#[test]
fn recurrent_identity_and_zero_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let block = RecurrentBlock::new(&mut store, "r", 2, 3, &mut rng).unwrap();
    let z0 = Tensor::uniform(&[1, 2, 5, 5], 0.0, 1.0, &mut rng);
    let run = |store: &ParamStore| {
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let x = t.constant(z0.clone());
        let y = block.forward(&mut t, &p, x).unwrap();
        t.value(y).clone()
    };
    store.get_mut(block.conv.weight).data_mut().fill(0.0);
    assert_eq!(run(&store), z0);
    let w = store.get_mut(block.conv.weight);
    for c in 0..2 {
        w.data_mut()[(c * 2 + c) * 9 + 4] = 1.0;
    }
    let four = run(&store);
    for (a, b) in four.data().iter().zip(z0.data()) {
        assert!((a - 4.0 * b).abs() <= 1e-12);
    }
}

fn synthetic_subset(n: usize, seed: u64) -> Vec<LabeledImage> {
    SyntheticSpec::new(n.div_ceil(10) + 1, seed).interleaved(n).unwrap()
}

#[test]
fn lambda_zero_training_leaves_top_down_untouched() {
    let data = synthetic_subset(16, 2);
    let mut g = build_model(&ModelConfig::mini(10), 0).unwrap();
    let ids = g.top_down().projection.param_ids();
    let before: Vec<Tensor> = ids.iter().map(|&id| g.params().get(id).clone()).collect();
    let mut adam = AdamState::new(g.params().tensors(), AdamConfig::default());
    let opts = EpochOptions {
        lambda: 0.0,
        ..EpochOptions::default()
    };
    let m = train_epoch(&mut g, &data, &mut adam, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(m.loss.prediction_penalty > 0.0);
    assert_eq!(m.loss.total, m.loss.cross_entropy);
    for (id, b) in ids.iter().zip(&before) {
        assert_eq!(g.params().get(*id), b);
    }
}

#[test]
fn loss_falls_below_a_quarter_in_fifty_epochs() {
    let data = synthetic_subset(32, 2);
    let mut g = build_model(&ModelConfig::mini(10), 2).unwrap();
    let mut cfg = TrainConfig::new(2);
    cfg.epochs = 50;
    cfg.epoch.augmentation = AugmentationConfig::none();
    let records = fit(&mut g, &data, &data, &cfg, |_| Ok(())).unwrap();
    let (first, last) = (records[0].train_loss, records[49].train_loss);
    assert!(last < 0.25 * first, "{first} -> {last}");
}

#[test]
fn seeded_runs_are_identical() {
    let data = synthetic_subset(20, 4);
    let run = || {
        let mut g = build_model(&ModelConfig::mini(10), 1).unwrap();
        let mut cfg = TrainConfig::new(1);
        cfg.epochs = 2;
        cfg.deterministic = true;
        let rows: Vec<String> = fit(&mut g, &data, &data[..10], &cfg, |_| Ok(()))
            .unwrap()
            .iter()
            .map(|r| r.csv_row())
            .collect();
        (rows, g.params().tensors().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn synthetic_orientation_audit() {
    let spec = SyntheticSpec::new(20, 9);
    let mean_ratio = |label: usize| (0..20).map(|i| anisotropy(&spec.render(label, i))).sum::<f64>() / 20.0;
    let stripes = mean_ratio(1);
    let spots = mean_ratio(0);
    assert!(stripes > 2.0, "stripes {stripes}");
    assert!(spots < 1.3, "spots {spots}");
}

#[test]
fn idx_round_trip_within_half_step() {
    let dir = tempfile::tempdir().unwrap();
    let (samples, _) = generate_synthetic(&SyntheticSpec::new(3, 1)).unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ip, &lp, &samples).unwrap();
    let loaded = load_idx(&ip, &lp).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in loaded.iter().zip(&samples) {
        assert_eq!(a.label, b.label);
        assert!(max_abs_diff(&a.pixels, &b.pixels) <= 1.0 / 510.0 + 1e-12);
    }
}

#[test]
fn parallax_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = parallax_fixture(2, 12, 0);
    write_lightfield(dir.path(), &fixture).unwrap();
    let loaded = load_lightfield(dir.path(), 2, 2).unwrap();
    assert_eq!(loaded.len(), 6);
    for (a, b) in loaded.iter().zip(&fixture) {
        assert_eq!((a.label, &a.class_name), (b.label, &b.class_name));
        assert_eq!(a.views.shape(), &[4, 12, 12]);
        assert!(max_abs_diff(&a.views, &b.views) <= 1.0 / 510.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epsilon_never_negative(a in prop::collection::vec(-10.0f64..10.0, 12), b in prop::collection::vec(-10.0f64..10.0, 12)) {
        let mut t = Tape::new();
        let av = t.constant(Tensor::new(vec![1, 3, 2, 2], a).unwrap());
        let bv = t.constant(Tensor::new(vec![1, 3, 2, 2], b).unwrap());
        let eps = predictive_error(&mut t, av, bv).unwrap().epsilon;
        prop_assert!(t.value(eps).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_zero_gradient_fixes_parameters(p in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..30) {
        let mut params = vec![Tensor::new(vec![p.len()], p.clone()).unwrap()];
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let zero = vec![Tensor::zeros(&[p.len()])];
        for _ in 0..steps {
            adam.step(&mut params, &zero).unwrap();
        }
        prop_assert_eq!(params[0].data(), p.as_slice());
        prop_assert!(adam.second_moments()[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn accuracy_ignores_positive_logit_scale(logits in prop::collection::vec(-3.0f64..3.0, 40), scale in 0.01f64..100.0) {
        let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
        let t = Tensor::new(vec![10, 4], logits).unwrap();
        prop_assert_eq!(correct_predictions(&t, &labels), correct_predictions(&t.map(|v| v * scale), &labels));
    }

    #[test]
    fn augmentation_preserves_shape_and_range(seed in 0u64..1000, n in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::uniform(&[2, n, n], 0.2, 0.9, &mut rng);
        let out = vcnet_core::train::augment(&img, &AugmentationConfig::default(), &mut rng);
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|&v| (0.0..=0.9 + 1e-12).contains(&v)));
    }
}
