//! Stacks one to three cells over a sequence and classifies at the last
//! time step. With residual stacking the classifier consumes the
//! elementwise sum of every layer's final hidden state; with plain
//! stacking, just the top layer's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, CellMode, CellParams, CellState};
use crate::error::Error;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stacking {
    #[serde(rename = "residual")]
    Residual,
    #[serde(rename = "plain")]
    Plain,
}

impl Stacking {
    pub fn parse(s: &str) -> crate::Result<Stacking> {
        match s {
            "residual" => Ok(Stacking::Residual),
            "plain" => Ok(Stacking::Plain),
            other => Err(Error::contract(format!(
                "unknown stacking '{other}' (expected residual|plain)"
            ))),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub window: usize,
    pub heads: usize,
    pub mode: CellMode,
    pub stacking: Stacking,
    pub use_pe: bool,
    pub n_pe: usize,
    pub activate_linears: bool,
    pub activate_query: bool,
    pub layer_tanh: bool,
}

impl Default for ModelConfig {
    /// The human-activity-recognition default: 9 inertial channels, 6
    /// classes, hidden width 42 with 21 heads (d_k = 2), two residual-mode
    /// cells stacked residually over a window of 32.
    fn default() -> Self {
        ModelConfig {
            input_dim: 9,
            classes: 6,
            hidden: 42,
            layers: 2,
            window: 32,
            heads: 21,
            mode: CellMode::LarnnResidual,
            stacking: Stacking::Residual,
            use_pe: true,
            n_pe: 8,
            activate_linears: true,
            activate_query: false,
            layer_tanh: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(1..=3).contains(&self.layers) {
            return Err(Error::contract(format!(
                "layers must be 1..=3, got {}",
                self.layers
            )));
        }
        if self.hidden == 0 || self.input_dim == 0 || self.classes < 2 {
            return Err(Error::contract(
                "hidden and input_dim must be >= 1 and classes >= 2",
            ));
        }
        if self.mode.uses_attention() {
            if self.heads == 0 || self.hidden % self.heads != 0 {
                return Err(Error::contract(format!(
                    "hidden {} must be divisible by heads {}",
                    self.hidden, self.heads
                )));
            }
            if self.window == 0 {
                return Err(Error::contract("attention modes need window >= 1"));
            }
            if self.use_pe && self.n_pe > 0 {
                crate::encoding::EncodingSpec::new(self.window, self.n_pe)?;
            }
        }
        Ok(())
    }

    fn cell_config(&self, layer: usize) -> CellConfig {
        CellConfig {
            input_dim: if layer == 0 { self.input_dim } else { self.hidden },
            hidden: self.hidden,
            window: self.window,
            heads: self.heads,
            mode: self.mode,
            use_pe: self.use_pe,
            n_pe: self.n_pe,
            activate_linears: self.activate_linears,
            activate_query: self.activate_query,
            layer_tanh: self.layer_tanh,
        }
    }
}

/// Final classification layer at the last time step.
#[derive(Clone)]
pub struct Classifier {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Stacked cells plus classifier.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub cells: Vec<CellParams>,
    pub classifier: Classifier,
}

/// Attention weights collected per time step (layer 0), each
/// `[batch, heads, window]`.
#[derive(Default)]
pub struct AttentionTrace {
    pub steps: Vec<Tensor>,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> crate::Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::with_capacity(config.layers);
        for layer in 0..config.layers {
            cells.push(CellParams::init(&config.cell_config(layer), &mut rng)?);
        }
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let classifier = Classifier {
            weight: Tensor::rand_uniform(&[config.hidden, config.classes], -bound, bound, &mut rng),
            bias: Tensor::zeros(&[config.classes]),
        };
        Ok(Model {
            config: config.clone(),
            cells,
            classifier,
        })
    }

    /// Runs the whole `[batch, time, features]` sequence and returns
    /// `[batch, classes]` logits from the final time step.
    pub fn forward_sequence(&self, x: &Tensor, training: bool) -> crate::Result<Tensor> {
        self.forward_traced(x, training, None)
    }

    /// As `forward_sequence`, optionally collecting the first layer's
    /// attention weights at every step.
    pub fn forward_traced(
        &self,
        x: &Tensor,
        training: bool,
        mut trace: Option<&mut AttentionTrace>,
    ) -> crate::Result<Tensor> {
        let (batch, steps, features) = x.dims3();
        assert_eq!(
            features, self.config.input_dim,
            "forward: input features {:?} vs configured {}",
            x.shape(),
            self.config.input_dim
        );
        if steps == 0 {
            return Err(Error::contract("forward: sequence must have at least one step"));
        }
        let mut states = Vec::with_capacity(self.cells.len());
        for _ in &self.cells {
            states.push(CellState::zeros(batch, self.config.hidden, self.config.window)?);
        }
        let mut final_h: Vec<Tensor> = Vec::new();
        for t in 0..steps {
            let mut input = x.slice_time(t);
            let last_step = t + 1 == steps;
            for (layer, cell) in self.cells.iter().enumerate() {
                let (h, next, weights) = cell.step_traced(&states[layer], &input, training)?;
                if layer == 0 {
                    if let (Some(trace), Some(w)) = (trace.as_deref_mut(), weights) {
                        trace.steps.push(w.detach());
                    }
                }
                states[layer] = next;
                if last_step {
                    final_h.push(h.clone());
                }
                input = h;
            }
        }
        let pooled = match self.config.stacking {
            Stacking::Residual => {
                let mut sum = final_h[0].clone();
                for h in &final_h[1..] {
                    sum = sum.add(h);
                }
                sum
            }
            Stacking::Plain => final_h.last().expect("at least one layer").clone(),
        };
        Ok(pooled.matmul(&self.classifier.weight).add(&self.classifier.bias))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, cell) in self.cells.iter_mut().enumerate() {
            cell.visit_params(&format!("layer{i}."), f);
        }
        f("classifier.weight", &mut self.classifier.weight);
        f("classifier.bias", &mut self.classifier.bias);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        for (i, cell) in self.cells.iter_mut().enumerate() {
            cell.visit_buffers(&format!("layer{i}."), f);
        }
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn track(&mut self, tape: &Tape) {
        self.visit_params(&mut |_, t| *t = t.track(tape));
    }

    /// Drops all tape handles, leaving plain values.
    pub fn detach_params(&mut self) {
        self.visit_params(&mut |_, t| *t = t.detach());
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, t| count += t.len());
        count
    }
}

/// Fraction of rows whose argmax logit matches the label; ties break
/// toward the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (batch, classes) = logits.dims2();
    assert_eq!(batch, labels.len(), "accuracy: {batch} rows vs {} labels", labels.len());
    let mut correct = 0usize;
    for (b, &label) in labels.iter().enumerate() {
        let mut best = 0;
        for c in 1..classes {
            if logits.at2(b, c) > logits.at2(b, best) {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / batch as f64
}

#[cfg(test)]
mod tests;
