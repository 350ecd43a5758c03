//! Adam training loop, metric tracking, checkpoints, and the two-round
//! random-search sweep harness.

pub mod checkpoint;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Error;
use crate::model::{accuracy, Model, ModelConfig};
use crate::tensor::{Tape, Tensor};

/// Full training configuration: optimizer settings plus the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            epochs: 25,
            batch_size: 32,
            seed: 42,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        // lr = 0 is tolerated as the degenerate no-op step.
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::contract(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::contract("gradient clip norm must be > 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::contract(format!("{name} = {b} must be in (0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be >= 1"));
        }
        self.model.validate()
    }
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// One hyperparameter-sweep trial (or a single training run).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub round: usize,
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    pub wall_time_secs: f64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    pub diverged: bool,
}

/// Adam moment estimates keyed by parameter name, plus the shared step
/// counter for bias correction.
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState {
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One bias-corrected update of a single parameter:
    /// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    /// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    /// `step` must already be advanced for this round of updates.
    pub fn update(
        &mut self,
        name: &str,
        values: &mut [f64],
        grad: &[f64],
        config: &TrainConfig,
    ) {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; values.len()], vec![0.0; values.len()]));
        let t = self.step as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for i in 0..values.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= config.lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
}

/// Scales all gradients so their global norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [(String, Vec<f64>)], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.iter() {
        for v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Runs evaluation-mode inference over a whole dataset, returning accuracy.
pub fn evaluate(model: &Model, ds: &Dataset, batch_size: usize) -> crate::Result<f64> {
    let mut correct = 0.0;
    for indices in ds.sequential_batches(batch_size) {
        let (x, labels) = ds.gather(&indices);
        let logits = model.forward_sequence(&x, false)?;
        correct += accuracy(&logits, &labels) * labels.len() as f64;
    }
    Ok(correct / ds.len() as f64)
}

/// A finished training run: the model, the optimizer state that produced
/// it, and the per-epoch record.
pub struct Trained {
    pub model: Model,
    pub adam: AdamState,
    pub record: TrialRecord,
}

/// Trains a model from scratch: per epoch, shuffle, forward in training
/// mode, cross-entropy, backward, global-norm clip, Adam step, then an
/// eval-mode test pass. Deterministic given the seed. A non-finite loss
/// aborts the trial and flags the record as diverged instead of crashing.
pub fn train(
    config: &TrainConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
) -> crate::Result<Trained> {
    config.validate()?;
    if train_ds.channels() != config.model.input_dim || train_ds.classes > config.model.classes {
        return Err(Error::contract(format!(
            "dataset ({} channels, {} classes) does not fit model ({}, {})",
            train_ds.channels(),
            train_ds.classes,
            config.model.input_dim,
            config.model.classes
        )));
    }
    let started = Instant::now();
    let mut model = Model::init(&config.model, config.seed)?;
    let mut adam = AdamState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut record = TrialRecord {
        trial_id: 0,
        round: 0,
        config: config.clone(),
        epochs: Vec::new(),
        wall_time_secs: 0.0,
        final_test_accuracy: 0.0,
        best_test_accuracy: 0.0,
        diverged: false,
    };

    'epochs: for epoch in 0..config.epochs {
        let shuffle_seed = shuffle_rng.next_u64();
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for (x, labels) in train_ds.batches(config.batch_size, shuffle_seed) {
            let tape = Tape::new();
            model.track(&tape);
            let step = (|| -> crate::Result<(f64, f64)> {
                let logits = model.forward_sequence(&x, true)?;
                let loss = logits.cross_entropy(&labels);
                let loss_value = loss.data()[0];
                if !loss_value.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss.backward()?;
                Ok((loss_value, accuracy(&logits, &labels)))
            })();
            let (loss_value, batch_acc) = match step {
                Ok(ok) => ok,
                Err(Error::Diverged { .. }) | Err(Error::NonFinite { .. }) => {
                    model.detach_params();
                    record.diverged = true;
                    break 'epochs;
                }
                Err(e) => {
                    model.detach_params();
                    return Err(e);
                }
            };
            loss_sum += loss_value * labels.len() as f64;
            correct += batch_acc * labels.len() as f64;

            let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
            model.visit_params(&mut |name, t| {
                grads.push((name.to_string(), t.grad().expect("tracked parameter")));
            });
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step += 1;
            let mut cursor = 0;
            model.visit_params(&mut |name, t| {
                let (gname, grad) = &grads[cursor];
                debug_assert_eq!(gname, name);
                let mut values = t.to_vec();
                adam.update(name, &mut values, grad, config);
                *t = Tensor::new(t.shape(), values);
                cursor += 1;
            });
        }
        let n = train_ds.len() as f64;
        let test_accuracy = evaluate(&model, test_ds, config.batch_size)?;
        record.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct / n,
            test_accuracy,
        });
    }

    record.final_test_accuracy = record.epochs.last().map_or(0.0, |e| e.test_accuracy);
    record.best_test_accuracy = record
        .epochs
        .iter()
        .map(|e| e.test_accuracy)
        .fold(0.0, f64::max);
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(Trained {
        model,
        adam,
        record,
    })
}

/// Renders the per-trial metrics CSV (`epoch,train_loss,train_acc,test_acc`).
pub fn metrics_csv(record: &TrialRecord) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
    for e in &record.epochs {
        writeln!(
            out,
            "{},{:?},{:?},{:?}",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy
        )
        .unwrap();
    }
    out
}

/// Serializes a record as one JSON line with sorted keys.
pub fn record_json_line(record: &TrialRecord) -> String {
    let value = serde_json::to_value(record).expect("record serializes");
    serde_json::to_string(&value).expect("value serializes")
}

/// Writes a file atomically: temp file in the target directory, then rename,
/// so interrupted runs never leave truncated output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    use std::io::Write;
    tmp.write_all(bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests;
