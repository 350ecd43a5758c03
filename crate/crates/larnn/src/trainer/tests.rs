use super::*;
use crate::cell::CellMode;
use crate::data::{synth_task, SynthKind};
use crate::model::Stacking;
use crate::trainer::checkpoint;
use crate::trainer::sweep::{ablation, sweep, SpaceSpec, SweepOptions};

fn tiny_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed,
        model: ModelConfig {
            input_dim: 2,
            classes: 2,
            hidden: 4,
            layers: 1,
            window: 2,
            heads: 2,
            mode: CellMode::LarnnResidual,
            stacking: Stacking::Residual,
            n_pe: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn tiny_data(seed: u64) -> (crate::data::Dataset, crate::data::Dataset) {
    let train = synth_task(SynthKind::Adding, 32, 6, seed);
    let test = synth_task(SynthKind::Adding, 16, 6, seed + 1);
    (train, test)
}

fn param_bits(model: &mut Model) -> Vec<u64> {
    let mut bits = Vec::new();
    model.visit_params(&mut |_, t| bits.extend(t.data().iter().map(|v| v.to_bits())));
    bits
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let (train_ds, test_ds) = tiny_data(1);
    let config = TrainConfig {
        lr: 0.0,
        ..tiny_config(2, 7)
    };
    let mut trained = train(&config, &train_ds, &test_ds).unwrap();
    assert!(!trained.record.diverged);
    let mut fresh = Model::init(&config.model, config.seed).unwrap();
    assert_eq!(param_bits(&mut trained.model), param_bits(&mut fresh));
}

#[test]
fn adam_first_step_magnitude_is_the_learning_rate() {
    let config = tiny_config(1, 1);
    let mut adam = AdamState::new();
    adam.step = 1;
    let mut values = vec![0.5, -0.25, 1.0];
    let grads = vec![0.3, -2.0, 1e-3];
    adam.update("p", &mut values, &grads, &config);
    for (i, (&v, &g)) in values.iter().zip(&[0.5, -0.25, 1.0]).enumerate() {
        let step = (v - g).abs();
        let expected = config.lr * grads[i].abs() / (grads[i].abs() + config.adam_eps);
        assert!((step - expected).abs() < 1e-12, "coordinate {i}: {step}");
        assert!((step - config.lr).abs() < 1e-4 * config.lr, "coordinate {i}: {step}");
    }
}

#[test]
fn adam_matches_textbook_recurrence_on_a_scalar() {
    let config = TrainConfig {
        lr: 0.05,
        ..tiny_config(1, 1)
    };
    let grads = [1.0, -0.5, 0.25, 2.0, -1.25];
    let mut adam = AdamState::new();
    let mut theta = vec![0.3];

    // Independent hand recurrence.
    let (mut m, mut v, mut expected) = (0.0f64, 0.0f64, 0.3f64);
    for (t, &g) in grads.iter().enumerate() {
        let step = (t + 1) as f64;
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g * g;
        let m_hat = m / (1.0 - config.beta1.powf(step));
        let v_hat = v / (1.0 - config.beta2.powf(step));
        expected -= config.lr * m_hat / (v_hat.sqrt() + config.adam_eps);

        adam.step += 1;
        adam.update("x", &mut theta, &[g], &config);
        assert!(
            (theta[0] - expected).abs() < 1e-12,
            "step {step}: {} vs {expected}",
            theta[0]
        );
    }
}

#[test]
fn global_norm_clip_bounds_the_norm() {
    let mut grads = vec![
        ("a".to_string(), vec![3.0, 4.0]),
        ("b".to_string(), vec![12.0]),
    ];
    // norm = sqrt(9 + 16 + 144) = 13
    let pre = clip_global_norm(&mut grads, 5.0);
    assert!((pre - 13.0).abs() < 1e-12);
    let post: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.iter().map(|v| v * v))
        .sum::<f64>()
        .sqrt();
    assert!(post <= 5.0 + 1e-9, "post-clip norm {post}");

    let mut small = vec![("a".to_string(), vec![0.3])];
    let pre = clip_global_norm(&mut small, 5.0);
    assert!((pre - 0.3).abs() < 1e-15);
    assert_eq!(small[0].1, vec![0.3]); // untouched below the cap
}

#[test]
fn training_is_bit_reproducible() {
    let (train_ds, test_ds) = tiny_data(3);
    let config = tiny_config(3, 11);
    let mut t1 = train(&config, &train_ds, &test_ds).unwrap();
    let mut t2 = train(&config, &train_ds, &test_ds).unwrap();
    assert_eq!(param_bits(&mut t1.model), param_bits(&mut t2.model));
    assert_eq!(metrics_csv(&t1.record), metrics_csv(&t2.record));
}

#[test]
fn non_finite_data_marks_the_trial_diverged() {
    let train_ds = crate::data::Dataset::new(
        vec![f64::NAN; 8 * 6 * 2],
        8,
        6,
        2,
        vec![0, 1, 0, 1, 0, 1, 0, 1],
        2,
    );
    let (_, test_ds) = tiny_data(5);
    let config = tiny_config(2, 13);
    let record = train(&config, &train_ds, &test_ds).unwrap().record;
    assert!(record.diverged);
    assert!(record.epochs.len() < config.epochs);
}

#[test]
fn metrics_csv_has_one_row_per_epoch() {
    let (train_ds, test_ds) = tiny_data(7);
    let config = tiny_config(2, 17);
    let record = train(&config, &train_ds, &test_ds).unwrap().record;
    let csv = metrics_csv(&record);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,test_acc");
    assert_eq!(lines.len(), 1 + config.epochs);
}

#[test]
fn record_json_lines_have_sorted_keys() {
    let (train_ds, test_ds) = tiny_data(9);
    let record = train(&tiny_config(1, 19), &train_ds, &test_ds).unwrap().record;
    let line = record_json_line(&record);
    let keys: Vec<&str> = line
        .match_indices('"')
        .map(|(i, _)| i)
        .collect::<Vec<_>>()
        .chunks(2)
        .map(|pair| &line[pair[0] + 1..pair[1]])
        .take(3)
        .collect();
    // Top-level keys arrive alphabetically.
    assert_eq!(keys[0], "best_test_accuracy");
    assert!(serde_json::from_str::<serde_json::Value>(&line).is_ok());
    assert!(!line.contains('\n'));
}

// ── checkpoints ─────────────────────────────────────────────────────────

#[test]
fn checkpoint_round_trip_is_byte_identical_and_preserves_logits() {
    let (train_ds, test_ds) = tiny_data(11);
    let config = tiny_config(1, 23);
    let mut model = train(&config, &train_ds, &test_ds).unwrap().model;
    let adam = AdamState::new(); // moments exercised separately below
    let bytes1 = checkpoint::to_bytes(&mut model, &adam);
    let (mut loaded, adam2) = checkpoint::from_bytes(&bytes1).unwrap();
    let bytes2 = checkpoint::to_bytes(&mut loaded, &adam2);
    assert_eq!(bytes1, bytes2);

    let (x, _) = test_ds.gather(&[0, 1, 2]);
    let a = model.forward_sequence(&x, false).unwrap();
    let b = loaded.forward_sequence(&x, false).unwrap();
    let bits = |t: &crate::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn checkpoint_preserves_adam_moments() {
    let (train_ds, test_ds) = tiny_data(13);
    let config = tiny_config(2, 29);
    let mut model = train(&config, &train_ds, &test_ds).unwrap().model;
    // Rebuild an Adam state by hand so moments are nonempty.
    let mut adam = AdamState::new();
    adam.step = 7;
    model.visit_params(&mut |name, t| {
        adam.moments
            .insert(name.to_string(), (vec![0.25; t.len()], vec![0.5; t.len()]));
    });
    let bytes = checkpoint::to_bytes(&mut model, &adam);
    let (_, restored) = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(restored.step, 7);
    assert_eq!(restored.moments.len(), adam.moments.len());
    for (name, (m, v)) in &adam.moments {
        assert_eq!(&restored.moments[name].0, m);
        assert_eq!(&restored.moments[name].1, v);
    }
}

#[test]
fn corrupted_magic_is_rejected() {
    let (train_ds, test_ds) = tiny_data(15);
    let mut model = train(&tiny_config(1, 31), &train_ds, &test_ds).unwrap().model;
    let mut bytes = checkpoint::to_bytes(&mut model, &AdamState::new());
    bytes[0] = b'X';
    let err = checkpoint::from_bytes(&bytes).err().expect("should fail");
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn truncated_checkpoint_reports_the_offset() {
    let (train_ds, test_ds) = tiny_data(17);
    let mut model = train(&tiny_config(1, 37), &train_ds, &test_ds).unwrap().model;
    let bytes = checkpoint::to_bytes(&mut model, &AdamState::new());
    let err = checkpoint::from_bytes(&bytes[..bytes.len() / 2])
        .err()
        .expect("should fail");
    let msg = err.to_string();
    assert!(msg.contains("offset") && msg.contains("end of file"), "{msg}");
}

#[test]
fn wrong_version_is_an_explicit_error() {
    let (train_ds, test_ds) = tiny_data(19);
    let mut model = train(&tiny_config(1, 41), &train_ds, &test_ds).unwrap().model;
    let mut bytes = checkpoint::to_bytes(&mut model, &AdamState::new());
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    let err = checkpoint::from_bytes(&bytes).err().expect("should fail");
    assert!(err.to_string().contains("version mismatch"), "{err}");
}

// ── sweep and ablation ──────────────────────────────────────────────────

fn tiny_space() -> SpaceSpec {
    SpaceSpec {
        mode: vec!["residual".into(), "layer".into()],
        use_pe: vec![true, false],
        activate_linears: vec![true, false],
        layers: vec![1],
        window: vec![2, 4],
        hidden: vec![4, 8],
        lr: super::sweep::LogRange { lo: 1e-3, hi: 1e-2 },
    }
}

#[test]
fn sampling_is_deterministic_given_the_seed() {
    use rand::SeedableRng;
    let space = tiny_space();
    let base = tiny_config(1, 0);
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5)
            .map(|_| serde_json::to_string(&space.sample(&base, &mut rng).unwrap()).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
}

#[test]
fn narrowed_space_is_a_subset() {
    let space = tiny_space();
    let mut best = tiny_config(1, 0);
    best.model.mode = CellMode::LarnnLayer;
    best.model.use_pe = false;
    best.model.activate_linears = true;
    best.model.layers = 1;
    best.model.window = 4;
    best.model.hidden = 8;
    best.lr = 3e-3;
    let narrowed = space.narrowed(&best);
    assert!(narrowed.subset_of(&space));
    assert_eq!(narrowed.mode, vec!["layer".to_string()]);
    assert!(narrowed.lr.lo >= space.lr.lo && narrowed.lr.hi <= space.lr.hi);
    assert!(narrowed.lr.hi / narrowed.lr.lo < space.lr.hi / space.lr.lo);
}

#[test]
fn sweep_logs_one_line_per_trial() {
    let (train_ds, test_ds) = tiny_data(21);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("trials.jsonl");
    let opts = SweepOptions {
        rounds: 2,
        trials_per_round: 2,
        budget_epochs: 1,
        seed: 5,
        jobs: 1,
        base: tiny_config(1, 0),
    };
    let records = sweep(&tiny_space(), &opts, &train_ds, &test_ds, Some(&log)).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(records.iter().filter(|r| r.round == 1).count(), 2);
    let content = std::fs::read_to_string(&log).unwrap();
    assert_eq!(content.lines().count(), 4);
    for line in content.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("final_test_accuracy").is_some());
    }
    // Round-2 trials trained 4x the budget.
    assert!(records
        .iter()
        .filter(|r| r.round == 1)
        .all(|r| r.config.epochs == 4));
}

#[test]
fn ablation_covers_the_grid_and_flags_winners() {
    let (train_ds, test_ds) = tiny_data(23);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ablation.jsonl");
    let base = tiny_config(1, 0);
    let (records, report) =
        ablation(&base, &[1, 2], &train_ds, &test_ds, 1, Some(&log)).unwrap();
    assert_eq!(records.len(), 8 * 2);
    assert_eq!(report.cells.len(), 8);
    for axis in ["mode", "use_pe", "activate_linears"] {
        assert!(report.winner(axis).is_some(), "axis {axis}");
    }
    let rendered = report.render();
    assert!(rendered.contains("winner"));
    assert!(rendered.contains("non-binding"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 16);
}
