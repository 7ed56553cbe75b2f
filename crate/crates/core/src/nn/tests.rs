use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::EmotionLabel;
use crate::dsp::FeatureVector;
use Activation::{Relu, Softmax};

fn tiny_arch() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d { filters: 4, kernel: 3, activation: Relu },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 6, activation: Softmax },
    ]
}

fn deep_arch() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d { filters: 4, kernel: 3, activation: Relu },
        LayerSpec::Conv1d { filters: 5, kernel: 3, activation: Relu },
        LayerSpec::MaxPool1d { pool: 3 },
        LayerSpec::Dropout { rate: 0.3 },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 8, activation: Relu },
        LayerSpec::Dropout { rate: 0.2 },
        LayerSpec::Dense { units: 6, activation: Softmax },
    ]
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Loss under a fixed dropout-mask stream (`mask_seed`), or in eval mode.
fn loss_at(model: &Model<f64>, x: &Array2<f64>, y: &[usize], mask_seed: Option<u64>) -> f64 {
    let probs = match mask_seed {
        Some(s) => model.forward(x.view(), Mode::Train(&mut ChaCha8Rng::seed_from_u64(s))).unwrap(),
        None => model.forward(x.view(), Mode::Eval).unwrap(),
    };
    cross_entropy(probs.view(), y).unwrap()
}

/// Largest relative error between analytic and central-difference gradients,
/// `|a - n| / max(|a|, |n|, 1e-6)`, over every weight and bias.
fn max_gradient_error(arch: &[LayerSpec], mask_seed: Option<u64>) -> f64 {
    let mut model: Model<f64> = build_model(32, 6, arch, 11).unwrap();
    // Non-zero biases so ReLU units are not all at the same operating point.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in model.params_mut().iter_mut().flatten() {
        p.bias.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
    }
    let x = random_batch(5, 32, 7);
    let y = vec![0, 3, 5, 1, 3];
    let pass = match mask_seed {
        Some(s) => model.forward_train(x.view(), &mut ChaCha8Rng::seed_from_u64(s)).unwrap(),
        None => model.forward_recorded(x.view()).unwrap(),
    };
    let grads = pass.backward(&model, &y).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (layer, g) in grads.into_iter().enumerate() {
        let Some(g) = g else {
            assert!(model.params()[layer].is_none());
            continue;
        };
        let n_kernel = g.kernel.len();
        for idx in 0..n_kernel + g.bias.len() {
            let analytic = if idx < n_kernel { g.kernel.as_slice().unwrap()[idx] } else { g.bias[idx - n_kernel] };
            let nudge = |m: &mut Model<f64>, d: f64| {
                let p = m.params_mut()[layer].as_mut().unwrap();
                if idx < n_kernel {
                    p.kernel.as_slice_mut().unwrap()[idx] += d;
                } else {
                    p.bias[idx - n_kernel] += d;
                }
            };
            nudge(&mut model, h);
            let up = loss_at(&model, &x, &y, mask_seed);
            nudge(&mut model, -2.0 * h);
            let down = loss_at(&model, &x, &y, mask_seed);
            nudge(&mut model, h);
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_on_tiny_model() {
    let err = max_gradient_error(&tiny_arch(), None);
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_with_pool_and_dropout() {
    for seed in [1u64, 2] {
        let err = max_gradient_error(&deep_arch(), Some(seed));
        assert!(err <= 1e-4, "mask seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn default_architecture_counts_and_shapes() {
    let model = default_model(0);
    assert_eq!(model.param_count(), 412_358);
    assert_eq!(model.layer_param_counts(), vec![704, 82_048, 163_968, 164_096, 1_542]);
    let lengths: Vec<usize> = model
        .output_shapes()
        .iter()
        .zip(model.layers())
        .filter(|(_, l)| !matches!(l, LayerSpec::Dropout { .. }))
        .map(|(s, _)| s.leading())
        .collect();
    assert_eq!(lengths, vec![250, 241, 40, 31, 5, 640, 256, 6]);
    assert_eq!(model.output_shapes()[0], Shape::Seq { len: 250, channels: 64 });
    let names: Vec<String> = model.summary().into_iter().map(|s| s.name).collect();
    assert_eq!(names[1], "conv1d_1");
    assert_eq!(names[10], "dense_1");
}

#[test]
fn short_input_breaks_shape_chain() {
    let err = build_model::<f32>(20, 6, &default_architecture(0.2), 0).unwrap_err();
    assert!(matches!(err, NnError::ShapeChain { .. }), "{err}");
}

#[test]
fn softmax_only_on_final_dense() {
    let mut arch = tiny_arch();
    arch.insert(0, LayerSpec::Conv1d { filters: 2, kernel: 2, activation: Softmax });
    assert!(build_model::<f32>(32, 6, &arch, 0).is_err());
    let arch = vec![
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 6, activation: Softmax },
        LayerSpec::Dense { units: 6, activation: Softmax },
    ];
    assert!(build_model::<f32>(32, 6, &arch, 0).is_err());
    let arch = vec![LayerSpec::Flatten, LayerSpec::Dense { units: 6, activation: Relu }];
    assert!(build_model::<f32>(32, 6, &arch, 0).is_err());
}

#[test]
fn zero_weights_give_uniform_output_and_analytic_bias_gradient() {
    let mut model: Model<f64> = build_model(32, 6, &tiny_arch(), 0).unwrap();
    for p in model.params_mut().iter_mut().flatten() {
        p.kernel.fill(0.0);
        p.bias.fill(0.0);
    }
    let x = Array2::zeros((4, 32));
    let y = vec![0, 2, 2, 5];
    let pass = model.forward_recorded(x.view()).unwrap();
    assert!(pass.probabilities().iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-12));
    let grads = pass.backward(&model, &y).unwrap();
    let bias = &grads[2].as_ref().unwrap().bias;
    for c in 0..6 {
        let hits = y.iter().filter(|&&l| l == c).count() as f64;
        let expected = (4.0 / 6.0 - hits) / 4.0;
        assert!((bias[c] - expected).abs() < 1e-12);
    }
    assert_eq!(cross_entropy(pass.probabilities().view(), &y).unwrap(), -(1.0f64 / 6.0 + 1e-12).ln());
}

#[test]
fn duplicated_batch_has_same_gradient() {
    let model: Model<f64> = build_model(32, 6, &tiny_arch(), 5).unwrap();
    let x = random_batch(1, 32, 9);
    let single = model.forward_recorded(x.view()).unwrap().backward(&model, &[4]).unwrap();
    let doubled_x = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view(), x.view()]).unwrap();
    let tripled = model.forward_recorded(doubled_x.view()).unwrap().backward(&model, &[4, 4, 4]).unwrap();
    for (a, b) in single.iter().flatten().zip(tripled.iter().flatten()) {
        for (u, v) in a.kernel.iter().zip(&b.kernel).chain(a.bias.iter().zip(&b.bias)) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn cross_entropy_reference_values() {
    let uniform = Array2::from_elem((3, 6), 1.0f64 / 6.0);
    let ce = cross_entropy(uniform.view(), &[0, 1, 5]).unwrap();
    assert!((ce - 6f64.ln()).abs() < 1e-9);
    assert!((ce - 1.7918).abs() < 1e-4);
    let mut onehot = Array2::zeros((2, 6));
    onehot[(0, 3)] = 1.0f64;
    onehot[(1, 1)] = 1.0;
    assert_eq!(cross_entropy(onehot.view(), &[3, 1]).unwrap(), 0.0);
    let mut half = Array2::from_elem((1, 6), 0.1f64);
    half[(0, 2)] = 0.5;
    assert!((cross_entropy(half.view(), &[2]).unwrap() - 2f64.ln()).abs() < 1e-9);
    assert!(cross_entropy(half.view(), &[2, 2]).is_err());
    half[(0, 2)] = f64::NAN;
    assert!(cross_entropy(half.view(), &[2]).unwrap().is_nan());
}

#[test]
fn forward_rejects_wrong_length() {
    let model = default_model(1);
    let x = Array2::<f32>::zeros((2, 100));
    assert_eq!(
        model.forward(x.view(), Mode::Eval).unwrap_err(),
        NnError::LengthMismatch { expected: 259, actual: 100 }
    );
    let fv = FeatureVector::new(vec![0.0; 10]).unwrap();
    assert!(predict(&model, &fv).is_err());
}

#[test]
fn dropout_only_in_training_mode() {
    let model = default_model(2);
    let x = Array2::from_shape_fn((4, 259), |(i, j)| ((i * 7 + j) % 13) as f32 - 6.0);
    let a = model.forward(x.view(), Mode::Eval).unwrap();
    let b = model.forward(x.view(), Mode::Eval).unwrap();
    assert_eq!(a, b);
    let t = model.forward(x.view(), Mode::Train(&mut ChaCha8Rng::seed_from_u64(0))).unwrap();
    assert_ne!(a, t);
    let no_dropout: Model<f32> = build_model(259, 6, &default_architecture(0.0), 2).unwrap();
    let t = no_dropout.forward(x.view(), Mode::Train(&mut ChaCha8Rng::seed_from_u64(0))).unwrap();
    assert_eq!(t, no_dropout.forward(x.view(), Mode::Eval).unwrap());
}

#[test]
fn uniform_model_predicts_neutral() {
    let mut model = default_model(3);
    let last = model.params_mut().last_mut().unwrap().as_mut().unwrap();
    last.kernel.fill(0.0);
    last.bias.fill(0.0);
    let fv = FeatureVector::new(vec![-40.0; 259]).unwrap();
    let p = predict(&model, &fv).unwrap();
    assert_eq!(p.label, EmotionLabel::Neutral);
    assert!(p.probabilities.iter().all(|&q| (q - 1.0 / 6.0).abs() < 1e-6));
    assert_eq!(p, predict(&model, &fv).unwrap());
}

#[test]
fn prediction_tie_break_prefers_lowest_index() {
    let p = Prediction::from_probabilities([0.1, 0.3, 0.3, 0.1, 0.1, 0.1]);
    assert_eq!(p.label, EmotionLabel::Calm);
    assert_eq!(p.confidence(), 0.3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eval_rows_are_distributions(seed in 0u64..1000, scale in 0.01f32..200.0) {
        let model: Model<f32> = build_model(40, 6, &[
            LayerSpec::Conv1d { filters: 3, kernel: 5, activation: Relu },
            LayerSpec::MaxPool1d { pool: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 6, activation: Softmax },
        ], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((3, 40), || rng.gen_range(-scale..scale));
        let probs = model.forward(x.view(), Mode::Eval).unwrap();
        for row in probs.rows() {
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p.is_finite()));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn confusion_matrix_laws(pairs in proptest::collection::vec((0usize..6, 0usize..6), 0..60)) {
        let preds: Vec<EmotionLabel> = pairs.iter().map(|p| EmotionLabel::from_index(p.0).unwrap()).collect();
        let truths: Vec<EmotionLabel> = pairs.iter().map(|p| EmotionLabel::from_index(p.1).unwrap()).collect();
        let cm = confusion_matrix(&preds, &truths).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        let correct = pairs.iter().filter(|(p, t)| p == t).count();
        if !pairs.is_empty() {
            prop_assert!((cm.accuracy() - correct as f64 / pairs.len() as f64).abs() < 1e-12);
        }
        for (c, support) in cm.row_sums().iter().enumerate() {
            prop_assert_eq!(*support, pairs.iter().filter(|p| p.1 == c).count() as u64);
        }
    }
}

#[test]
fn confusion_matrix_shapes() {
    let truths: Vec<EmotionLabel> = EmotionLabel::ALL.iter().copied().cycle().take(12).collect();
    let cm = confusion_matrix(&truths, &truths).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(cm.counts[i][j], if i == j { 2 } else { 0 });
        }
    }
    let angry = vec![EmotionLabel::Angry; 12];
    let cm = confusion_matrix(&angry, &truths).unwrap();
    let cols = cm.column_sums();
    assert_eq!(cols[EmotionLabel::Angry.index()], 12);
    assert_eq!(cols.iter().filter(|&&c| c > 0).count(), 1);
    assert!(confusion_matrix(&angry[..3], &truths).is_err());
    let mut csv = Vec::new();
    cm.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("true\\predicted,neutral,calm,happy,sad,angry,fearful\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn save_load_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let mut model = default_model(9);
    model.metadata.insert("note".into(), "x".into());
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.param_count(), 412_358);
    let fv = FeatureVector::new((0..259).map(|i| (i as f32).sin() * 30.0 - 50.0).collect()).unwrap();
    assert_eq!(predict(&loaded, &fv).unwrap(), predict(&model, &fv).unwrap());
}

#[test]
fn corrupt_files_are_rejected() {
    let model: Model<f32> = build_model(32, 6, &tiny_arch(), 1).unwrap();
    let bytes = encode_model(&model);

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 20;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_model(&flipped), Err(ModelIoError::ChecksumMismatch { .. })));

    assert!(matches!(decode_model(&bytes[..bytes.len() - 9]), Err(ModelIoError::Truncated { .. })));
    assert!(matches!(decode_model(&bytes[..5]), Err(ModelIoError::Truncated { .. })));

    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    assert!(matches!(decode_model(&wrong_version), Err(ModelIoError::VersionMismatch { found: 9, .. })));

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(decode_model(&wrong_magic), Err(ModelIoError::BadMagic)));

    assert_eq!(decode_model(&bytes).unwrap(), model);
}

fn toy_data(per_class: usize, len: usize, seed: u64) -> LabeledData {
    // Log-mel-like scale: values around -60 dB with a class-specific bump.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * 6;
    let labels: Vec<usize> = (0..n).map(|i| i % 6).collect();
    let features = Array2::from_shape_fn((n, len), |(i, j)| {
        let c = labels[i];
        let bump = if j * 6 / len == c { 15.0 } else { 0.0 };
        -60.0 + bump + rng.gen_range(-8.0..8.0)
    });
    LabeledData::new(features, labels).unwrap()
}

#[test]
fn toy_training_is_seeded_and_learns() {
    let data = toy_data(2, 259, 1);
    let cfg = TrainConfig { epochs: 40, seed: 5, ..Default::default() };
    let mut a = default_model(1);
    let ra = train(&mut a, &data, &data, &cfg, None).unwrap();
    let mut b = default_model(1);
    let rb = train(&mut b, &data, &data, &cfg, None).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(ra.epochs.len(), 40);
    let best = ra.epochs.iter().map(|e| e.test_acc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ra.best_test_accuracy, best);
    assert!(ra.epochs.last().unwrap().train_loss < ra.epochs[0].train_loss);
    let mut csv = Vec::new();
    ra.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,train_loss,train_acc,test_loss,test_acc");
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn checkpoint_written_only_on_strict_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    let data = toy_data(2, 259, 2);
    let mut model = default_model(4);
    let mut last_bytes: Option<Vec<u8>> = None;
    let mut best_so_far = f64::NEG_INFINITY;
    let mut events = Vec::new();
    // Observe the file at the start of every epoch (after the previous epoch's save decision).
    let report = train_with_hook(
        &mut model,
        &data,
        &data,
        &TrainConfig { epochs: 25, seed: 1, ..Default::default() },
        Some(&path),
        |epoch, _| {
            let now = std::fs::read(&path).ok();
            events.push((epoch, now.clone()));
            last_bytes = now;
        },
    )
    .unwrap();
    let final_bytes = std::fs::read(&path).unwrap();
    events.push((26, Some(final_bytes)));
    for (i, stats) in report.epochs.iter().enumerate() {
        let before = &events[i].1;
        let after = &events[i + 1].1;
        if stats.test_acc > best_so_far {
            assert!(stats.checkpointed);
            best_so_far = stats.test_acc;
            let saved = decode_model(after.as_ref().unwrap()).unwrap();
            assert_eq!(saved.metadata["epoch"], stats.epoch);
        } else {
            assert!(!stats.checkpointed);
            assert_eq!(before, after, "epoch {} rewrote the checkpoint", stats.epoch);
        }
    }
    let saved = load_model(&path).unwrap();
    assert_eq!(saved.metadata["test_accuracy"].as_f64().unwrap(), report.best_test_accuracy);
    assert!(last_bytes.is_some());
}

#[test]
fn non_finite_model_is_never_checkpointed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    let data = toy_data(2, 259, 3);
    let mut model = default_model(6);
    let mut snapshot = None;
    let err = train_with_hook(
        &mut model,
        &data,
        &data,
        &TrainConfig { epochs: 10, ..Default::default() },
        Some(&path),
        |epoch, m| {
            if epoch == 4 {
                snapshot = std::fs::read(&path).ok();
                m.params_mut()[0].as_mut().unwrap().kernel[(0, 0)] = f32::NAN;
            }
        },
    )
    .unwrap_err();
    match err {
        TrainError::NonFinite { epoch, report, .. } => {
            assert_eq!(epoch, 4);
            assert_eq!(report.epochs.len(), 3);
        }
        other => panic!("unexpected error {other}"),
    }
    let after = std::fs::read(&path).unwrap();
    assert_eq!(Some(after.clone()), snapshot);
    assert!(load_model(&path).unwrap().all_finite());
}

#[test]
fn training_rejects_bad_inputs() {
    let data = toy_data(1, 259, 4);
    let mut model = default_model(0);
    let zero = TrainConfig { epochs: 0, ..Default::default() };
    assert!(matches!(train(&mut model, &data, &data, &zero, None), Err(TrainError::InvalidConfig(_))));
    let short = toy_data(1, 100, 4);
    assert!(train(&mut model, &short, &short, &TrainConfig::default(), None).is_err());
    let empty = LabeledData::new(Array2::zeros((0, 259)), vec![]).unwrap();
    assert!(train(&mut model, &data, &empty, &TrainConfig::default(), None).is_err());
}
