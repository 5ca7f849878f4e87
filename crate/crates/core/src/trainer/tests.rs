use super::*;
use crate::data::{generate_dataset, DatasetConfig, SceneConfig};
use crate::losses::LossWeights;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        steps: 3,
        batch_size: 2,
        base_width: 4,
        depth_levels: 2,
        height: 16,
        width: 16,
        seed: 7,
        ..Default::default()
    }
}

fn tiny_data(count: usize) -> Vec<Sample> {
    generate_dataset(&DatasetConfig {
        count,
        seed: 1,
        scene: SceneConfig {
            height: 16,
            width: 16,
            sparsity_density: 0.1,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap()
}

fn mixed_batch_of(data: &[Sample]) -> Batch {
    let syn = data.iter().find(|s| s.domain == Domain::Synthetic).unwrap().clone();
    let real = data.iter().find(|s| s.domain == Domain::Real).unwrap().clone();
    Batch {
        samples: vec![syn, real],
    }
}

#[test]
fn reconstruction_only_total() {
    let data = tiny_data(4);
    let cfg = TrainConfig {
        ablation: AblationFlags {
            disable_adv: true,
            disable_smooth: true,
            ..Default::default()
        },
        ..tiny_config()
    };
    let mut state = TrainState::new(cfg).unwrap();
    let r = state.train_step(&mixed_batch_of(&data)).unwrap();
    assert_eq!((r.adv_g, r.adv_d_s, r.adv_d_r, r.smooth), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(r.total, 150.0 * r.rec_sg + 100.0 * r.rec_dg);
    assert_eq!(state.step, 1);
}

#[test]
fn full_step_reports_every_component() {
    let data = tiny_data(4);
    let mut state = TrainState::new(tiny_config()).unwrap();
    let r = state.train_step(&mixed_batch_of(&data)).unwrap();
    for v in [r.rec_sg, r.rec_dg, r.adv_g, r.adv_d_s, r.adv_d_r, r.smooth] {
        assert!(v.is_finite() && v > 0.0, "{r:?}");
    }
    let w = LossWeights::default();
    let expected = w.rec_sg * r.rec_sg + w.rec_dg * r.rec_dg + w.adv * r.adv_g + w.smooth * r.smooth;
    assert_eq!(r.total, expected);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = tiny_data(4);
    let mut state = TrainState::new(tiny_config()).unwrap();
    state.set_learning_rate(0.0);
    let before = state.clone();
    state.train_step(&mixed_batch_of(&data)).unwrap();
    assert_eq!(state.sg.params(), before.sg.params());
    assert_eq!(state.dg.as_ref().unwrap().params(), before.dg.as_ref().unwrap().params());
    assert_eq!(state.d_s.params(), before.d_s.params());
    assert_eq!(state.d_r.params(), before.d_r.params());
}

#[test]
fn sparse_generator_learns_through_dense_path() {
    let data = tiny_data(4);
    let cfg = TrainConfig {
        weights: LossWeights {
            rec_sg: 0.0,
            ..Default::default()
        },
        measured_input_ratio: 0.0,
        ..tiny_config()
    };
    let state = TrainState::new(cfg).unwrap();
    let batch = mixed_batch_of(&data);
    let grads = state.sparse_generator_gradients(&batch).unwrap();
    // probe the head bias: every output pixel depends on it
    let idx = state.sg.param_names().iter().position(|n| n == "head.bias").unwrap();
    let analytic = grads[idx].as_ref().unwrap().data()[0];
    let h = 1e-5;
    let probe = |delta: f64| {
        let mut s = state.clone();
        s.sg.params_mut()[idx].data_mut()[0] += delta;
        s.generator_objective_value(&batch).unwrap()
    };
    let fd = (probe(h) - probe(-h)) / (2.0 * h);
    assert!(fd.abs() > 1e-8, "finite difference {fd}");
    assert!((fd - analytic).abs() <= 1e-4 * fd.abs().max(analytic.abs()), "fd {fd} vs analytic {analytic}");
}

#[test]
fn measured_input_cuts_the_dense_path() {
    let data = tiny_data(4);
    let cfg = TrainConfig {
        weights: LossWeights {
            rec_sg: 0.0,
            ..Default::default()
        },
        measured_input_ratio: 1.0,
        ..tiny_config()
    };
    let state = TrainState::new(cfg).unwrap();
    let batch = mixed_batch_of(&data);
    // every slot completes its measured depth, so nothing reaches the first stage
    let grads = state.sparse_generator_gradients(&batch).unwrap();
    assert!(grads.iter().flatten().all(|g| g.data().iter().all(|&v| v == 0.0)));

    let mut trained = state.clone();
    let r = trained.train_step(&batch).unwrap();
    assert!(r.rec_dg.is_finite() && r.rec_sg > 0.0);
}

#[test]
fn discriminator_and_generator_updates_are_separate() {
    let data = tiny_data(4);
    let mut state = TrainState::new(tiny_config()).unwrap();
    let bt = state.tensors(&mixed_batch_of(&data)).unwrap();
    let pass = state.generator_forward(&bt, Mode::Train).unwrap();
    let fake = pass.graph.value(pass.dense).clone();

    let before_d = state.clone();
    let d_losses = state.update_discriminators(&bt, &fake).unwrap();
    assert_eq!(state.sg, before_d.sg);
    assert_eq!(state.dg, before_d.dg);
    assert_ne!(state.d_s.params(), before_d.d_s.params());
    assert_ne!(state.d_r.params(), before_d.d_r.params());

    let before_g = state.clone();
    state.update_generators(pass, &bt, d_losses).unwrap();
    assert_eq!(state.d_s, before_g.d_s);
    assert_eq!(state.d_r, before_g.d_r);
    assert_ne!(state.sg.params(), before_g.sg.params());
}

#[test]
fn steps_zero_rejected() {
    let data = tiny_data(4);
    let cfg = TrainConfig {
        steps: 0,
        ..tiny_config()
    };
    assert!(matches!(train(cfg, &data, None), Err(Error::InvalidConfig(_))));
}

#[test]
fn real_only_batches() {
    let data = tiny_data(6);
    let mut state = TrainState::new(tiny_config().with_ablation(Ablation::FullRealOnly)).unwrap();
    for _ in 0..20 {
        let b = state.next_batch(&data).unwrap();
        assert!(b.samples.iter().all(|s| s.domain == Domain::Real));
        state.step += 1;
    }
    let synthetic_only: Vec<Sample> = data.iter().filter(|s| s.domain == Domain::Synthetic).cloned().collect();
    assert!(matches!(state.next_batch(&synthetic_only), Err(Error::Dataset(_))));
}

#[test]
fn identical_seeds_reproduce_trace() {
    let data = tiny_data(6);
    let cfg = TrainConfig {
        steps: 10,
        ..tiny_config()
    };
    let (_, a) = train(cfg.clone(), &data, None).unwrap();
    let (_, b) = train(cfg.clone(), &data, None).unwrap();
    assert_eq!(a.len(), 10);
    for ((sa, ra), (sb, rb)) in a.iter().zip(&b) {
        assert_eq!(sa, sb);
        assert!((ra.total - rb.total).abs() <= 1e-6);
    }
    let (_, c) = train(TrainConfig { seed: 8, ..cfg }, &data, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoints_are_monotonic_and_resumable() {
    let data = tiny_data(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        steps: 6,
        checkpoint_every: 2,
        ..tiny_config()
    };
    let (state, trace) = train(cfg.clone(), &data, Some(dir.path())).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["step_000002.ckpt", "step_000004.ckpt", "step_000006.ckpt"]);
    let steps: Vec<u64> = names.iter().map(|n| TrainState::load(dir.path().join(n)).unwrap().step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");

    // resuming from step 4 replays steps 4 and 5 exactly
    let mut resumed = TrainState::load(dir.path().join("step_000004.ckpt")).unwrap();
    let tail = resumed.run(&data, 2, None, |_, _| {}).unwrap();
    assert_eq!(tail, trace[4..]);
    assert_eq!(resumed, state);
}

#[test]
fn inference_composition_and_determinism() {
    let data = tiny_data(4);
    let (state, _) = train(tiny_config(), &data, None).unwrap();
    let rgb = &data[0].rgb;
    let est = state.infer_estimate(rgb).unwrap();
    assert_eq!(est, state.infer_estimate(rgb).unwrap());
    let sparse = state.infer_sparse(rgb).unwrap();
    assert_eq!(est, state.infer_complete(&sparse).unwrap());
    let (s2, d2) = state.forward_full(rgb).unwrap();
    assert_eq!((s2, d2), (sparse, est.clone()));
    assert!(est.data().iter().all(|&v| (0.0..=state.config.d_max).contains(&v)));

    let wrong = RgbImage::from_fn(10, 16, |_, _| [0.5; 3]);
    assert!(matches!(state.infer_estimate(&wrong), Err(Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip_reproduces_inference() {
    let data = tiny_data(4);
    let (state, _) = train(tiny_config(), &data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    state.save(&path).unwrap();
    let back = TrainState::load(&path).unwrap();
    assert_eq!(back, state);
    let est = state.infer_estimate(&data[1].rgb).unwrap();
    assert_eq!(back.infer_estimate(&data[1].rgb).unwrap().data(), est.data());
}

#[test]
fn single_network_has_no_completion_stage() {
    let data = tiny_data(4);
    let cfg = tiny_config().with_ablation(Ablation::SingleAll);
    let (state, trace) = train(cfg, &data, None).unwrap();
    assert!(state.dg.is_none());
    assert!(trace.iter().all(|(_, r)| r.rec_sg == 0.0));
    let est = state.infer_estimate(&data[0].rgb).unwrap();
    assert_eq!(est, state.infer_sparse(&data[0].rgb).unwrap());
    assert!(matches!(state.infer_complete(&data[0].sparse_gt), Err(Error::Unsupported(_))));
    let full = TrainState::new(tiny_config()).unwrap();
    assert!(full.generator_parameter_count() > state.generator_parameter_count());
}

#[test]
fn non_finite_parameters_abort_with_step() {
    let data = tiny_data(4);
    let mut state = TrainState::new(tiny_config()).unwrap();
    state.train_step(&mixed_batch_of(&data)).unwrap();
    let idx = state.sg.param_names().iter().position(|n| n == "head.bias").unwrap();
    state.sg.params_mut()[idx].data_mut()[0] = f64::NAN;
    match state.train_step(&mixed_batch_of(&data)) {
        Err(Error::NonFinite { component, step }) => {
            assert_eq!(step, Some(1));
            assert!(!component.is_empty());
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn loss_csv_round_trip() {
    let data = tiny_data(4);
    let (_, trace) = train(tiny_config(), &data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_csv(&path, &trace).unwrap();
    assert_eq!(read_loss_csv(&path).unwrap(), trace);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,rec_sg,rec_dg,adv_g,adv_d_s,adv_d_r,smooth,total\n"));
}

#[test]
fn mismatched_sample_size_rejected() {
    let mut state = TrainState::new(tiny_config()).unwrap();
    let other = generate_dataset(&DatasetConfig {
        count: 2,
        ..Default::default()
    })
    .unwrap();
    let batch = Batch { samples: other };
    assert!(matches!(state.train_step(&batch), Err(Error::Shape(_))));
}
