//! Finite-difference gradient verification.
//!
//! Central differences at f64 with h = 1e-5 serve as the independent oracle
//! for every analytic gradient in the crate: the per-operation checks in the
//! module tests and the full-model suite behind `larnn gradcheck`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error tolerated by the gradient suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`: (f(x+h) - f(x-h)) / 2h per
/// coordinate.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error with an absolute floor so finite-difference noise on
/// near-zero gradients does not read as disagreement.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Worst relative error between two gradient vectors and where it occurs.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let e = rel_err(analytic[i], numeric[i]);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

/// Result of checking one model configuration.
#[derive(Debug, Clone)]
pub struct ConfigCheck {
    pub label: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub parameters: usize,
}

/// Summary of the whole suite.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub configs: Vec<ConfigCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> &ConfigCheck {
        self.configs
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("empty gradcheck report")
    }

    pub fn passed(&self) -> bool {
        self.worst().max_rel_err < GRADCHECK_TOLERANCE
    }
}

/// Verifies the full analytic gradient of one model configuration against
/// central finite differences on a random batch, in eval mode (fixed batch
/// normalization statistics).
pub fn check_model(config: &ModelConfig, label: &str, seed: u64) -> crate::Result<ConfigCheck> {
    use rand::SeedableRng;
    let mut model = Model::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let batch = 2;
    let steps = 5;
    let x = Tensor::rand_uniform(&[batch, steps, config.input_dim], -2.0, 2.0, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..config.classes)).collect();

    // Analytic gradients through the tape.
    let tape = crate::tensor::Tape::new();
    model.track(&tape);
    let logits = model.forward_sequence(&x, false)?;
    let loss = logits.cross_entropy(&labels);
    loss.backward()?;
    let mut names = Vec::new();
    let mut analytic = Vec::new();
    let mut flat = Vec::new();
    model.visit_params(&mut |name, t| {
        let g = t.grad().expect("parameter not tracked");
        names.push((name.to_string(), t.len()));
        analytic.extend_from_slice(&g);
        flat.extend_from_slice(t.data());
    });
    model.detach_params();

    // Numeric gradients by reassembling the model per evaluation.
    let numeric = central_diff(
        |theta| {
            let mut offset = 0;
            model.visit_params(&mut |_, t| {
                let n = t.len();
                *t = Tensor::new(t.shape(), theta[offset..offset + n].to_vec());
                offset += n;
            });
            let logits = model.forward_sequence(&x, false).expect("forward failed");
            logits.cross_entropy(&labels).data()[0]
        },
        &flat,
        FD_STEP,
    );

    let (worst, at) = max_rel_err(&analytic, &numeric);
    let mut cursor = 0;
    let mut worst_param = String::new();
    let mut worst_index = 0;
    for (name, len) in &names {
        if at < cursor + len {
            worst_param = name.clone();
            worst_index = at - cursor;
            break;
        }
        cursor += len;
    }
    Ok(ConfigCheck {
        label: label.to_string(),
        max_rel_err: worst,
        worst_param,
        worst_index,
        parameters: flat.len(),
    })
}

/// The tiny-configuration suite: both attention merge modes, positional
/// encoding on/off, key/value linear activation on/off, at D=3, H=4,
/// heads=2, k=3, T=5, B=2, C=2.
pub fn tiny_config_suite() -> crate::Result<GradCheckReport> {
    use crate::cell::CellMode;
    let mut configs = Vec::new();
    for mode in [CellMode::LarnnResidual, CellMode::LarnnLayer] {
        for use_pe in [true, false] {
            for activate_linears in [true, false] {
                let label = format!(
                    "{mode:?}/pe={}/linact={}",
                    if use_pe { "on" } else { "off" },
                    if activate_linears { "on" } else { "off" }
                );
                let config = ModelConfig {
                    input_dim: 3,
                    classes: 2,
                    hidden: 4,
                    layers: 1,
                    window: 3,
                    heads: 2,
                    mode,
                    use_pe,
                    n_pe: 4,
                    activate_linears,
                    ..ModelConfig::default()
                };
                configs.push((config, label));
            }
        }
    }
    let mut report = GradCheckReport { configs: Vec::new() };
    for (i, (config, label)) in configs.iter().enumerate() {
        report.configs.push(check_model(config, label, 41 + i as u64)?);
    }
    Ok(report)
}
