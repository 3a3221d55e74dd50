//! Trainer, checkpoints and inference modes on tiny synthetic sets.

use unetpp_core::arch::{ArchSpec, Network, Variant, INPUT, LABELS, LOSS};
use unetpp_core::autograd::Feeds;
use unetpp_core::data::{gen_synthetic, Dataset, Split, SynthConfig};
use unetpp_core::loss::LossConfig;
use unetpp_core::train::*;
use unetpp_core::{Error, Rng, Tensor};

fn tiny_data(count: usize, seed: u64) -> Dataset {
    gen_synthetic(&SynthConfig {
        count,
        height: 16,
        width: 16,
        radius_min: 2.0,
        radius_max: 5.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_spec(variant: Variant, depth: usize) -> ArchSpec {
    ArchSpec::new(variant, depth)
        .with_widths(&[3, 4, 5, 6, 7][..=depth])
        .with_deep_supervision(variant != Variant::Unet)
        .with_input(1, 16, 16)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        max_epochs: epochs,
        patience: epochs,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn two_adam_steps_match_reference() {
    // reference: the published update written out per element
    let cfg = AdamConfig::default();
    let grads = [[0.5, -2.0, 1e-3], [-0.25, 3.0, 0.0]];
    let mut p = Tensor::from_vec(&[3], vec![1.0, 0.0, -1.0]).unwrap();
    let (mut m, mut v) = (p.zeros_like(), p.zeros_like());
    let mut reference = [1.0f64, 0.0, -1.0];
    let (mut rm, mut rv) = ([0.0f64; 3], [0.0f64; 3]);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        for k in 0..3 {
            rm[k] = 0.9 * rm[k] + 0.1 * g[k];
            rv[k] = 0.999 * rv[k] + 0.001 * g[k] * g[k];
            let mh = rm[k] / (1.0 - 0.9f64.powi(t));
            let vh = rv[k] / (1.0 - 0.999f64.powi(t));
            reference[k] -= 3e-4 * mh / (vh.sqrt() + 1e-8);
        }
        let gt = Tensor::from_vec(&[3], g.to_vec()).unwrap();
        adam_step(&mut p, &gt, &mut m, &mut v, t as u64, &cfg).unwrap();
    }
    for k in 0..3 {
        assert!((p.data()[k] - reference[k]).abs() < 1e-12, "{k}: {} vs {}", p.data()[k], reference[k]);
    }
}

#[test]
fn histories_are_deterministic() {
    let data = tiny_data(9, 1);
    let spec = tiny_spec(Variant::UnetPP, 2);
    let (c1, h1) = train(&spec, &data, &cfg(3)).unwrap();
    let (c2, h2) = train(&spec, &data, &cfg(3)).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(c1, c2);
    assert_eq!(h1.epochs.len(), 3);
    assert_eq!(h1.heads, vec!["head@X^{0,1}", "head@X^{0,2}"]);
    assert_eq!(h1.stop_reason, Some(StopReason::MaxEpochs));
}

#[test]
fn best_epoch_has_minimum_val_loss() {
    let data = tiny_data(9, 2);
    let mut c = cfg(6);
    c.adam.learning_rate = 5e-2;
    let (ckpt, h) = train(&tiny_spec(Variant::UnetPlus, 2), &data, &c).unwrap();
    let best = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].val_loss, best);
    assert!(h.epochs.len() <= 6);
    // the returned parameters are the best epoch's, not the last
    let state = ckpt.state.as_ref().unwrap();
    assert_eq!(state.best_epoch, h.best_epoch);
}

#[test]
fn patience_one_stops_early() {
    let data = tiny_data(9, 3);
    let mut c = cfg(40);
    c.patience = 1;
    c.adam.learning_rate = 0.3;
    let (_, h) = train(&tiny_spec(Variant::Unet, 1), &data, &c).unwrap();
    assert_eq!(h.stop_reason, Some(StopReason::EarlyStop));
    assert!(h.epochs.len() < 40);
    assert_eq!(h.epochs.len(), h.best_epoch + 1);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tiny_data(9, 4);
    let spec = tiny_spec(Variant::UnetPP, 2);
    let c = cfg(4);
    let (full_ckpt, full_hist) = train(&spec, &data, &c).unwrap();

    let mut t = Trainer::new(&spec, &c).unwrap();
    t.run_epoch(&data).unwrap();
    t.run_epoch(&data).unwrap();
    let mid = t.checkpoint();
    drop(t);
    let mut t = Trainer::resume(&mid, &c).unwrap();
    t.run(&data).unwrap();
    assert_eq!(t.history(), full_hist);
    assert_eq!(t.checkpoint(), full_ckpt);
}

#[test]
fn errors_for_bad_data() {
    let spec = tiny_spec(Variant::UnetPP, 2);
    let data = tiny_data(9, 5);
    let only_train: Vec<_> = data.samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let err = train(&spec, &Dataset::new(only_train).unwrap(), &cfg(1)).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");

    let wrong = spec.clone().with_input(1, 32, 32);
    assert!(matches!(train(&wrong, &data, &cfg(1)).unwrap_err(), Error::Data(_)));
}

#[test]
fn divergence_names_the_epoch() {
    let data = tiny_data(9, 6);
    let mut c = cfg(3);
    c.adam.learning_rate = 1e300;
    match train(&tiny_spec(Variant::Unet, 1), &data, &c) {
        Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn small_step_decreases_loss() {
    let data = tiny_data(12, 7);
    let batch: Vec<_> = data.split(Split::Train).take(3).collect();
    let stack = |f: &dyn Fn(&unetpp_core::data::Sample) -> Tensor| {
        let ts: Vec<Tensor> = batch.iter().map(|s| f(s)).collect();
        Tensor::stack_batch(&ts.iter().collect::<Vec<_>>()).unwrap()
    };
    let mut feeds = Feeds::new();
    feeds.insert(INPUT.into(), stack(&|s| s.input().unwrap()));
    feeds.insert(LABELS.into(), stack(&|s| s.labels().unwrap()));
    let adam = AdamConfig {
        learning_rate: 1e-5,
        ..AdamConfig::default()
    };
    for trial in 0..10 {
        let net = Network::build(&tiny_spec(Variant::UnetPP, 2), &Rng::new(trial)).unwrap();
        let mut g = net.training_graph(&LossConfig { full_bce: true, ..LossConfig::default() }).unwrap();
        let e = g.forward(&feeds).unwrap();
        let before = e.scalar(LOSS).unwrap();
        let grads = g.backward(&e, LOSS).unwrap();
        drop(e);
        for (id, gr) in grads.iter() {
            let p = g.param_mut(*id).unwrap();
            let (mut m, mut v) = (p.zeros_like(), p.zeros_like());
            adam_step(p, gr, &mut m, &mut v, 1, &adam).unwrap();
        }
        let after = g.forward(&feeds).unwrap().scalar(LOSS).unwrap();
        assert!(after < before, "trial {trial}: {before} -> {after}");
    }
}

#[test]
fn pruned_equals_full_head_bitwise() {
    let data = tiny_data(9, 8);
    let spec = tiny_spec(Variant::UnetPP, 4);
    let (ckpt, _) = train(&spec, &data, &cfg(1)).unwrap();
    let model = Model::from_checkpoint(&ckpt).unwrap();
    for s in data.samples.iter().take(4) {
        let x = s.input().unwrap();
        for k in 1..=4 {
            let pruned = model.predict(&x, Mode::Pruned(k)).unwrap();
            let head = model.head_output(&x, k).unwrap();
            assert_eq!(pruned.data(), head.data(), "k={k}");
        }
    }
    assert!(model.pruned_network(1).unwrap().param_count() < model.pruned_network(2).unwrap().param_count());
    assert!(matches!(model.pruned_network(5), Err(Error::Range { .. })));
}

#[test]
fn ensemble_is_mean_of_heads() {
    let spec = tiny_spec(Variant::UnetPP, 2);
    let net = Network::build(&spec, &Rng::new(9)).unwrap();
    let model = Model::new(net).unwrap();
    let x = Tensor::randn(&[2, 1, 16, 16], 0.0, 1.0, &mut Rng::new(1)).unwrap();
    let e = model.predict(&x, Mode::Ensemble).unwrap();
    let a = model.head_output(&x, 1).unwrap();
    let b = model.head_output(&x, 2).unwrap();
    for ((&m, &p), &q) in e.data().iter().zip(a.data()).zip(b.data()) {
        assert_eq!(m, (p + q) * 0.5);
    }
    assert_eq!(mean_maps(&[&Tensor::scalar(0.2), &Tensor::scalar(0.8)]).unwrap().item().unwrap(), 0.5);
    let odd = Tensor::zeros(&[1, 1, 18, 16]).unwrap();
    assert!(matches!(model.predict(&odd, Mode::Ensemble), Err(Error::Shape(_))));
}

#[test]
fn sliding_window_matches_whole_image_for_single_tile() {
    let spec = tiny_spec(Variant::UnetPP, 2);
    let model = Model::new(Network::build(&spec, &Rng::new(2)).unwrap()).unwrap();
    let x = Tensor::randn(&[1, 1, 16, 16], 0.0, 1.0, &mut Rng::new(3)).unwrap();
    let whole = model.predict(&x, Mode::Ensemble).unwrap();
    let tiled = model.predict_sliding(&x, (16, 16), (8, 8), Mode::Ensemble).unwrap();
    assert_eq!(whole, tiled);
    // a non-divisible image still gets a full map through windows
    let big = Tensor::randn(&[1, 1, 20, 28], 0.0, 1.0, &mut Rng::new(4)).unwrap();
    let out = model.predict_sliding(&big, (8, 8), (4, 4), Mode::Pruned(1)).unwrap();
    assert_eq!(out.shape(), &[1, 1, 20, 28]);
    assert!(out.data().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn embedded_vs_isolated_contract() {
    let data = tiny_data(9, 10);
    let spec = tiny_spec(Variant::UnetPP, 2);
    let r = embedded_vs_isolated(&spec, &data, &cfg(1), 2).unwrap();
    assert!(r.structurally_equal);
    assert_eq!(r.delta_iou, 0.0, "same seed, same nodes, same training");
    let r = embedded_vs_isolated(&spec, &data, &cfg(1), 1).unwrap();
    assert!(!r.structurally_equal);
    assert_eq!(r.delta_iou, r.embedded_iou - r.isolated_iou);
    assert!(embedded_vs_isolated(&tiny_spec(Variant::UnetPlus, 2), &data, &cfg(1), 1).is_err());
}
