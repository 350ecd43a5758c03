use super::*;
use rand::Rng;

fn tiny(mode: CellMode, layers: usize, stacking: Stacking) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        classes: 2,
        hidden: 4,
        layers,
        window: 3,
        heads: 2,
        mode,
        stacking,
        n_pe: 4,
        ..ModelConfig::default()
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(shape, -1.5, 1.5, &mut rng)
}

#[test]
fn single_layer_residual_and_plain_stacking_agree() {
    let x = random_input(&[2, 4, 3], 1);
    let residual = Model::init(&tiny(CellMode::LarnnResidual, 1, Stacking::Residual), 7).unwrap();
    let plain = Model::init(&tiny(CellMode::LarnnResidual, 1, Stacking::Plain), 7).unwrap();
    let a = residual.forward_sequence(&x, false).unwrap();
    let b = plain.forward_sequence(&x, false).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
}

#[test]
fn logits_shape_is_batch_by_classes() {
    let model = Model::init(&tiny(CellMode::LarnnResidual, 2, Stacking::Residual), 3).unwrap();
    for steps in [1usize, 2, 9] {
        let x = random_input(&[5, steps, 3], steps as u64);
        let logits = model.forward_sequence(&x, false).unwrap();
        assert_eq!(logits.shape(), &[5, 2]);
    }
}

#[test]
fn untrained_model_loss_is_near_uniform_entropy() {
    let config = ModelConfig {
        input_dim: 4,
        classes: 6,
        hidden: 8,
        layers: 1,
        window: 4,
        heads: 4,
        n_pe: 4,
        ..ModelConfig::default()
    };
    let target = 6.0f64.ln();
    for seed in 0..10 {
        let model = Model::init(&config, seed).unwrap();
        let x = random_input(&[16, 6, 4], 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let labels: Vec<usize> = (0..16).map(|_| rng.gen_range(0..6)).collect();
        let logits = model.forward_sequence(&x, false).unwrap();
        let loss = logits.cross_entropy(&labels).data()[0];
        assert!(
            (loss - target).abs() < 0.5,
            "seed {seed}: loss {loss} vs ln(6) = {target}"
        );
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let model = Model::init(&tiny(CellMode::LarnnResidual, 2, Stacking::Residual), 11).unwrap();
    let x = random_input(&[3, 5, 3], 13);
    let a = model.forward_sequence(&x, false).unwrap();
    let b = model.forward_sequence(&x, false).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn shifting_logits_preserves_accuracy_and_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let logits = Tensor::rand_uniform(&[8, 5], -2.0, 2.0, &mut rng);
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..5)).collect();
    let shifted = logits.add(&Tensor::filled(&[8, 5], 3.7));
    assert_eq!(accuracy(&logits, &labels), accuracy(&shifted, &labels));
    let a = logits.cross_entropy(&labels).data()[0];
    let b = shifted.cross_entropy(&labels).data()[0];
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn accuracy_edge_cases() {
    let perfect = Tensor::new(&[2, 3], vec![9.0, 0.0, 0.0, 0.0, 9.0, 0.0]);
    assert_eq!(accuracy(&perfect, &[0, 1]), 1.0);
    assert_eq!(accuracy(&perfect, &[2, 2]), 0.0);
    // Ties break toward the lowest class index.
    let tied = Tensor::new(&[1, 3], vec![1.0, 1.0, 1.0]);
    assert_eq!(accuracy(&tied, &[0]), 1.0);
    assert_eq!(accuracy(&tied, &[1]), 0.0);
}

#[test]
fn random_logits_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let logits = Tensor::rand_uniform(&[10000, 6], -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..10000).map(|_| rng.gen_range(0..6)).collect();
    let acc = accuracy(&logits, &labels);
    assert!((acc - 1.0 / 6.0).abs() < 0.03, "accuracy {acc}");
}

#[test]
#[should_panic(expected = "input features")]
fn input_width_mismatch_panics() {
    let model = Model::init(&tiny(CellMode::BnLstm, 1, Stacking::Plain), 23).unwrap();
    let x = Tensor::zeros(&[2, 4, 5]);
    let _ = model.forward_sequence(&x, false);
}

#[test]
fn full_model_gradient_check_on_tiny_config() {
    let config = tiny(CellMode::LarnnResidual, 1, Stacking::Residual);
    let check = crate::gradcheck::check_model(&config, "tiny", 29).unwrap();
    assert!(
        check.max_rel_err < 1e-4,
        "worst {} at {}[{}]",
        check.max_rel_err,
        check.worst_param,
        check.worst_index
    );
}

#[test]
fn layer_count_out_of_range_is_rejected() {
    let config = ModelConfig {
        layers: 4,
        ..ModelConfig::default()
    };
    assert!(Model::init(&config, 1).is_err());
}

#[test]
fn heads_must_divide_hidden() {
    let config = ModelConfig {
        hidden: 10,
        heads: 4,
        ..ModelConfig::default()
    };
    assert!(Model::init(&config, 1).is_err());
}
