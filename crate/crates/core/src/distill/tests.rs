use super::*;
use crate::model::NormMode;
use crate::synth::{generate, split, SynthConfig};
use crate::tensor::gradcheck::check_gradients;
use rand::Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn t2(rows: &[&[f64]]) -> Tensor<f64> {
    let d = rows[0].len();
    Tensor::new(vec![rows.len(), d], rows.concat()).unwrap()
}

#[test]
fn cross_entropy_values() {
    let ln2 = core::f64::consts::LN_2;
    assert!((cross_entropy(&t2(&[&[0.0, 0.0]]), &[0]).unwrap() - ln2).abs() < 1e-15);
    let big = cross_entropy(&t2(&[&[1000.0, 0.0]]), &[0]).unwrap();
    assert!(big.is_finite() && big.abs() < 1e-12);
    assert!(matches!(
        cross_entropy(&t2(&[&[0.0, 0.0]]), &[2]),
        Err(DistillError::Tensor(TensorError::LabelOutOfRange { .. }))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let logits = random(&mut rng, &[5, 7], 10.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..7)).collect();
        // Oracle: ln Σ exp(x − x_label) per row.
        let mut expected = 0.0;
        for (row, &l) in logits.data().chunks(7).zip(&labels) {
            expected += row.iter().map(|&x| (x - row[l]).exp()).sum::<f64>().ln();
        }
        expected /= 5.0;
        let got = cross_entropy(&logits, &labels).unwrap();
        assert!((got - expected).abs() < 1e-10);
        assert!(got >= 0.0);
    }
}

fn bundle(rng: &mut ChaCha8Rng) -> HintBundle<f64> {
    HintBundle {
        features: vec![random(rng, &[3, 4, 2, 3, 3], 2.0), random(rng, &[3, 8, 2, 2, 2], 2.0)],
    }
}

#[test]
fn hint_loss_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = bundle(&mut rng);
    assert_eq!(hint_loss(&a, &a).unwrap(), vec![0.0, 0.0]);
    let c = 0.75;
    let shifted = HintBundle {
        features: a.features.iter().map(|f| f.map(|v| v + c)).collect(),
    };
    for l in hint_loss(&shifted, &a).unwrap() {
        assert!((l - c * c).abs() < 1e-12);
    }
    for _ in 0..20 {
        let s = bundle(&mut rng);
        let t = bundle(&mut rng);
        let got = hint_loss(&s, &t).unwrap();
        assert_eq!(got, hint_loss(&t, &s).unwrap());
        for (layer, (fs, ft)) in s.features.iter().zip(&t.features).enumerate() {
            // Batch mean of per-sample squared norms over per-sample element count.
            let n = fs.shape()[0];
            let per = fs.len() / n;
            let mut acc = 0.0;
            for i in 0..n {
                let mut sq = 0.0;
                for j in 0..per {
                    let d = fs.data()[i * per + j] - ft.data()[i * per + j];
                    sq += d * d;
                }
                acc += sq / per as f64;
            }
            assert!((got[layer] - acc / n as f64).abs() < 1e-12);
        }
    }
    let short = HintBundle {
        features: vec![a.features[0].clone()],
    };
    assert!(matches!(hint_loss(&short, &a), Err(DistillError::HintCount { .. })));
    let swapped = HintBundle {
        features: vec![a.features[1].clone(), a.features[0].clone()],
    };
    assert!(matches!(
        hint_loss(&swapped, &a),
        Err(DistillError::HintShape { layer: 0, .. })
    ));
}

#[test]
fn soft_logit_loss_values() {
    let s = t2(&[&[0.0, 0.0]]);
    let t = t2(&[&[0.0, 3f64.ln()]]);
    let expected = 0.5 * (4.0f64 / 3.0).ln();
    assert!((soft_logit_loss(&s, &t, 1.0).unwrap() - expected).abs() < 1e-9);
    assert!((expected - 0.143841).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[4, 8], 5.0);
    assert_eq!(soft_logit_loss(&a, &a, 4.0).unwrap(), 0.0);

    let b = random(&mut rng, &[4, 8], 5.0);
    let mut prev = f64::INFINITY;
    for tau in [1.0, 10.0, 100.0, 1e4] {
        let l = soft_logit_loss(&a, &b, tau).unwrap();
        assert!(l < prev, "tau {tau}: {l} !< {prev}");
        prev = l;
    }
    assert!(prev < 1e-6);

    for _ in 0..50 {
        let x = random(&mut rng, &[3, 5], 8.0);
        let y = random(&mut rng, &[3, 5], 8.0);
        assert!(soft_logit_loss(&x, &y, rng.random_range(0.5..8.0)).unwrap() >= 0.0);
    }
    for bad in [0.0, -1.0, f64::NAN] {
        assert!(matches!(soft_logit_loss(&a, &b, bad), Err(DistillError::Tau(_))));
    }
    assert!(matches!(
        soft_logit_loss(&a, &random(&mut rng, &[4, 7], 1.0), 1.0),
        Err(DistillError::LogitShape(..))
    ));
}

#[test]
fn loss_gradients_match_finite_differences() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + trial);
        let s = random(&mut rng, &[3, 5], 3.0);
        let t = random(&mut rng, &[3, 5], 3.0);
        let tau = rng.random_range(0.5..5.0);
        let checks = check_gradients(std::slice::from_ref(&s), 1e-5, None, |tape, v| {
            let tv = tape.constant(t.clone());
            soft_logit_loss_on(tape, v[0], tv, tau).map_err(|e| match e {
                DistillError::Tensor(t) => t,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(
            checks[0].relative_error < 1e-4,
            "sl trial {trial}: {}",
            checks[0].relative_error
        );

        let fs = random(&mut rng, &[2, 3, 2, 2, 2], 1.0);
        let ft = random(&mut rng, &[2, 3, 2, 2, 2], 1.0);
        let checks = check_gradients(&[fs], 1e-5, None, |tape, v| {
            let tv = tape.constant(ft.clone());
            hint_loss_on(tape, 0, v[0], tv).map_err(|_| unreachable!())
        })
        .unwrap();
        assert!(checks[0].relative_error < 1e-4);

        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
        let checks = check_gradients(&[s], 1e-5, None, |tape, v| {
            cross_entropy_on(tape, v[0], &labels).map_err(|_| unreachable!())
        })
        .unwrap();
        assert!(checks[0].relative_error < 1e-4);
    }
}

#[test]
fn total_loss_values() {
    assert_eq!(total_loss(1.25, &[0.3, 0.4], 0.9, 0.0, 0.0), 1.25);
    assert_eq!(total_loss(1.0, &[0.5, 0.5], 2.0, 1.0, 0.5), 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let ce: f64 = rng.random_range(0.0..3.0);
        let hints: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let sl: f64 = rng.random_range(0.0..1.0);
        let (l1, l2) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let direct = ce + l1 * (hints[0] + hints[1] + hints[2]) + l2 * sl;
        assert!((total_loss(ce, &hints, sl, l1, l2) - direct).abs() < 1e-12);
        // Affine in each lambda, with slopes Σ hints and sl.
        let at = |a: f64, b: f64| total_loss(ce, &hints, sl, a, b);
        let slope1 = hints.iter().sum::<f64>();
        for a in [0.0, 0.5, 2.0] {
            assert!((at(a, l2) - at(0.0, l2) - a * slope1).abs() < 1e-12);
            assert!((at(l1, a) - at(l1, 0.0) - a * sl).abs() < 1e-12);
        }
    }
}

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::scalar(v)
}

#[test]
fn sgd_updates() {
    let mut p = [scalar(2.0)];
    Sgd::new(0.1, 0.0, 0.0).step(p.iter_mut(), &[scalar(3.0)]).unwrap();
    assert!((p[0].data()[0] - 1.7).abs() < 1e-15);

    let mut p = [scalar(1.0)];
    Sgd::new(1.0, 0.0, 0.1).step(p.iter_mut(), &[scalar(0.0)]).unwrap();
    assert!((p[0].data()[0] - 0.9).abs() < 1e-15);

    let mut p = [scalar(0.0)];
    let mut opt = Sgd::new(1.0, 0.9, 0.0);
    opt.step(p.iter_mut(), &[scalar(1.0)]).unwrap();
    assert_eq!(p[0].data()[0], -1.0);
    opt.step(p.iter_mut(), &[scalar(1.0)]).unwrap();
    assert!((p[0].data()[0] + 2.9).abs() < 1e-15);

    let mut q = [Tensor::<f64>::zeros(&[2])];
    assert!(Sgd::new(1.0, 0.0, 0.0).step(q.iter_mut(), &[scalar(1.0)]).is_err());
    assert!(Sgd::new(1.0, 0.0, 0.0).step(q.iter_mut(), &[]).is_err());
}

fn tiny_data() -> (SynthConfig, ModelConfig, CodecParams) {
    let synth = SynthConfig {
        height: 16,
        width: 16,
        frames: 4,
        samples_per_class: 4,
        sprite_min: 4,
        sprite_max: 6,
        ..Default::default()
    };
    let model = ModelConfig {
        clip_len: 4,
        height: 16,
        width: 16,
        stage_widths: vec![4, 8],
        fibers: 2,
        ..Default::default()
    };
    let codec = CodecParams {
        block: 8,
        search: 3,
        gop_size: 4,
    };
    (synth, model, codec)
}

fn tiny_sets(formats: &[ClipFormat]) -> (Vec<ClipSet<f64>>, Vec<ClipSet<f64>>, ModelConfig) {
    let (synth, model, codec) = tiny_data();
    let data = generate(&synth).unwrap();
    let (train, test) = split(&data, 0.75, 0).unwrap();
    let tr = prepare_clips::<f64>(&train, formats, codec, 4).unwrap();
    let te = prepare_clips::<f64>(&test, formats, codec, 4).unwrap();
    (tr, te, model)
}

fn quick(epochs: usize, seed: u64) -> DistillConfig {
    DistillConfig {
        epochs,
        batch_size: 4,
        seed,
        ..Default::default()
    }
}

#[test]
fn prepared_sets_pair_items() {
    let (tr, te, _) = tiny_sets(&[ClipFormat::Full, ClipFormat::Raw]);
    assert_eq!(tr[0].items, tr[1].items);
    assert_eq!(tr[0].len(), 24);
    assert_eq!(te[0].len(), 8);
    assert_eq!(tr[0].clips[0].shape(), &[3, 4, 16, 16]);
    let (synth, _, codec) = tiny_data();
    let data = generate(&synth).unwrap();
    assert!(matches!(
        prepare_clips::<f64>(&data[..1], &[ClipFormat::Full], codec, 12),
        Err(DistillError::NoFullGop(0, 12))
    ));
}

#[test]
fn single_sample_is_memorized() {
    let (tr, _, model) = tiny_sets(&[ClipFormat::Raw]);
    let one = ClipSet {
        format: ClipFormat::Raw,
        items: tr[0].items[..1].to_vec(),
        clips: tr[0].clips[..1].to_vec(),
    };
    let (m, report) = train_teacher(&one, &one, &model, &quick(40, 0), None).unwrap();
    assert_eq!(report.epochs.last().unwrap().train_accuracy, 1.0);
    assert_eq!(evaluate(&m, &one, ClipSampling::AllGops).unwrap().accuracy, 1.0);
    let first = report.epochs[0].ce;
    assert!(report.epochs.last().unwrap().ce < first);
}

#[test]
fn training_is_reproducible() {
    let (tr, te, model) = tiny_sets(&[ClipFormat::Full]);
    let run = || train_plain(&tr[0], &te[0], &model, &quick(2, 3), None).unwrap();
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1.to_csv(), r2.to_csv());
    assert_eq!(r1.to_text(), r2.to_text());
    let (m3, _) = train_plain(&tr[0], &te[0], &model, &quick(2, 4), None).unwrap();
    assert_ne!(m1, m3);
}

#[test]
fn zero_lambdas_reduce_to_plain_training() {
    let (tr, te, model) = tiny_sets(&[ClipFormat::Full, ClipFormat::Raw]);
    let (teacher, _) = train_teacher(&tr[1], &te[1], &model, &quick(1, 9), None).unwrap();
    let cfg = DistillConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..quick(2, 1)
    };
    let (plain, rp) = train_plain(&tr[0], &te[0], &model, &cfg, None).unwrap();
    let t = Teacher {
        model: &teacher,
        raw_train: &tr[1],
    };
    let (dist, rd) = distill_student(&tr[0], &te[0], t, &model, &cfg, None).unwrap();
    assert_eq!(plain, dist);
    assert_eq!(rp.epochs, rd.epochs);
    for e in &rd.epochs {
        assert_eq!(e.total, e.ce);
    }

    // Per step: the objective is the cross-entropy itself, bit for bit.
    let idx = [0, 1, 2];
    let input = tr[0].batch(&idx).unwrap();
    let raw = tr[1].batch(&idx).unwrap();
    let s = batch_losses(&plain, &input, &tr[0].labels(&idx), Some((&teacher, &raw)), &cfg).unwrap();
    assert_eq!(s.total.to_bits(), s.ce.to_bits());
}

/// The frozen teacher always runs on running statistics while the student
/// trains on batch statistics, so the exact-zero start needs the affine norm.
#[test]
fn self_distillation_starts_at_zero() {
    let (tr, te, model) = tiny_sets(&[ClipFormat::Raw]);
    let model = ModelConfig {
        norm: NormMode::Affine,
        ..model
    };
    let (teacher, _) = train_teacher(&tr[0], &te[0], &model, &quick(1, 2), None).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let raw = tr[0].batch(&idx).unwrap();
    let s = batch_losses(
        &teacher.clone(),
        &raw,
        &tr[0].labels(&idx),
        Some((&teacher, &raw)),
        &quick(1, 0),
    )
    .unwrap();
    assert_eq!(s.hints, vec![0.0, 0.0]);
    assert_eq!(s.sl, 0.0);
}

#[test]
fn distillation_leaves_teacher_untouched_and_uses_all_terms() {
    let (tr, te, model) = tiny_sets(&[ClipFormat::Full, ClipFormat::Raw]);
    let (teacher, _) = train_teacher(&tr[1], &te[1], &model, &quick(1, 5), None).unwrap();
    let frozen = teacher.clone();
    let t = Teacher {
        model: &teacher,
        raw_train: &tr[1],
    };
    let (_, report) = distill_student(&tr[0], &te[0], t, &model, &quick(2, 0), None).unwrap();
    assert_eq!(teacher, frozen);
    assert_eq!(report.kind, RunKind::Distilled);
    for e in &report.epochs {
        assert!(e.hints > 0.0 && e.sl > 0.0);
        assert!((e.total - total_loss(e.ce, &[e.hints], e.sl, 1.0, 1.0)).abs() < 1e-4);
    }

    // Mismatched pairing and formats are rejected.
    let t = Teacher {
        model: &teacher,
        raw_train: &te[1],
    };
    assert!(matches!(
        distill_student(&tr[0], &te[0], t, &model, &quick(1, 0), None),
        Err(DistillError::Pairing(_))
    ));
    let t = Teacher {
        model: &teacher,
        raw_train: &tr[1],
    };
    assert!(matches!(
        distill_student(&tr[1], &te[1], t, &model, &quick(1, 0), None),
        Err(DistillError::Format { .. })
    ));
    let bad_layers = DistillConfig {
        hint_layers: Some(vec![5]),
        ..quick(1, 0)
    };
    assert!(matches!(
        distill_student(&tr[0], &te[0], t, &model, &bad_layers, None),
        Err(DistillError::HintLayer { layer: 5, stages: 2 })
    ));
}

#[test]
fn batch_statistics_mode_trains() {
    let (tr, te, model) = tiny_sets(&[ClipFormat::Raw]);
    let model = ModelConfig {
        norm: NormMode::BatchStats,
        ..model
    };
    let (m, report) = train_teacher(&tr[0], &te[0], &model, &quick(2, 0), None).unwrap();
    assert!(report.epochs.iter().all(|e| e.ce.is_finite()));
    assert!(m
        .buffers()
        .iter()
        .any(|b| b.value.data().iter().any(|&v| v != 0.0 && v != 1.0)));
}

#[test]
fn untrained_model_scores_near_chance() {
    let (synth, _, codec) = tiny_data();
    let data = generate(&SynthConfig {
        samples_per_class: 50,
        ..synth
    })
    .unwrap();
    let (_, model_cfg, _) = tiny_data();
    let set = prepare_clips::<f32>(&data, &[ClipFormat::Full], codec, 4)
        .unwrap()
        .remove(0);
    let m = Model::<f32>::build(&model_cfg, 0).unwrap();
    let e = evaluate(&m, &set, ClipSampling::AllGops).unwrap();
    assert_eq!(e.predictions.len(), 400);
    assert!((e.accuracy - 0.125).abs() <= 0.08, "{}", e.accuracy);

    let r = evaluate(&m, &set, ClipSampling::Random { clips: 15, seed: 1 }).unwrap();
    assert_eq!(r.passes, 400 * 15);
    // A single GOP per video: sampling with replacement gives the same scores.
    assert_eq!(r.predictions, e.predictions);
}

#[test]
fn report_formats() {
    let report = TrainReport {
        kind: RunKind::Plain,
        format: ClipFormat::IPlusRes,
        seed: 2,
        epochs: vec![EpochRecord {
            epoch: 1,
            ce: 1.5,
            hints: 0.0,
            sl: 0.0,
            total: 1.5,
            train_accuracy: 0.25,
            test_accuracy: 0.5,
        }],
    };
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TrainReport::CSV_HEADER));
    assert_eq!(
        lines.next(),
        Some("plain,I_PLUS_RES,2,1,1.500000000,0.000000000,0.000000000,1.500000000,0.250000,0.500000")
    );
    assert!(report
        .to_text()
        .starts_with("plain I_PLUS_RES seed=2 epoch=1 ce=1.500000"));
    assert_eq!(report.final_test_accuracy(), 0.5);
}

#[test]
fn config_validation() {
    assert!(DistillConfig::default().validate().is_ok());
    let d = DistillConfig::default();
    assert_eq!((d.lr, d.momentum, d.weight_decay), (0.005, 0.9, 1e-4));
    assert_eq!((d.tau, d.lambda1, d.lambda2), (4.0, 1.0, 1.0));
    for bad in [
        DistillConfig { tau: 0.0, ..d.clone() },
        DistillConfig {
            lambda1: -1.0,
            ..d.clone()
        },
        DistillConfig { epochs: 0, ..d.clone() },
        DistillConfig {
            batch_size: 0,
            ..d.clone()
        },
        DistillConfig { lr: 0.0, ..d.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let mut sq = DistillConfig {
        tau_squared_scaling: true,
        ..d
    };
    assert_eq!(sq.sl_weight(), 16.0);
    sq.tau_squared_scaling = false;
    assert_eq!(sq.sl_weight(), 1.0);
}
