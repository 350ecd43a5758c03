//! One time step of the recurrent cell, in four flavours:
//!
//! * `vanilla` - plain LSTM (no batch norm, tanh output path);
//! * `bnlstm` - batch-normalized LSTM with an ELU on the cell state
//!   in the output path;
//! * `residual` - the full attention cell, attention folded into the
//!   candidate pre-activation through an extra weight;
//! * `layer` - the full attention cell, candidate replaced by an affine
//!   map of `[x_t, h_prev, a_t]` (no activation by default; a tanh wrap
//!   is available as an ablation flag).
//!
//! Gates follow `sigma(BN(W_h h_prev + W_x x_t + b))`; the cell state is
//! `BN(f * c_prev + i * g)` and the output `BN(o * elu(c))`, with the BN
//! sites dropped entirely in vanilla mode.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::encoding::EncodingSpec;
use crate::error::Error;
use crate::state_queue::{QueueInit, StateQueue};
use crate::tensor::{BatchNormParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellMode {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "bnlstm")]
    BnLstm,
    #[serde(rename = "residual")]
    LarnnResidual,
    #[serde(rename = "layer")]
    LarnnLayer,
}

impl CellMode {
    pub fn uses_attention(self) -> bool {
        matches!(self, CellMode::LarnnResidual | CellMode::LarnnLayer)
    }

    pub fn uses_batch_norm(self) -> bool {
        self != CellMode::Vanilla
    }

    pub fn parse(s: &str) -> crate::Result<CellMode> {
        match s {
            "vanilla" => Ok(CellMode::Vanilla),
            "bnlstm" => Ok(CellMode::BnLstm),
            "residual" => Ok(CellMode::LarnnResidual),
            "layer" => Ok(CellMode::LarnnLayer),
            other => Err(Error::contract(format!(
                "unknown cell mode '{other}' (expected vanilla|bnlstm|residual|layer)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellMode::Vanilla => "vanilla",
            CellMode::BnLstm => "bnlstm",
            CellMode::LarnnResidual => "residual",
            CellMode::LarnnLayer => "layer",
        }
    }
}

/// Everything needed to initialize one cell.
#[derive(Debug, Clone)]
pub struct CellConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub heads: usize,
    pub mode: CellMode,
    pub use_pe: bool,
    pub n_pe: usize,
    pub activate_linears: bool,
    pub activate_query: bool,
    pub layer_tanh: bool,
}

/// One gate: recurrent and input weights, bias, optional pre-activation
/// batch norm.
#[derive(Clone)]
pub struct GateParams {
    pub w_h: Tensor,
    pub w_x: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNormParams>,
}

/// How the attended vector joins the candidate gate.
#[derive(Clone)]
pub enum AttentionMerge {
    /// Candidate pre-activation gains `a_t . w_attn`.
    Residual { w_attn: Tensor },
    /// Candidate becomes `[x_t, h_prev, a_t] . weight + bias`.
    Layer { weight: Tensor, bias: Tensor },
}

/// All learnable parameters and normalizer state for one cell.
#[derive(Clone)]
pub struct CellParams {
    pub mode: CellMode,
    pub input_dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
    pub bn_cell: Option<BatchNormParams>,
    pub bn_hidden: Option<BatchNormParams>,
    pub attention: Option<AttentionParams>,
    pub merge: Option<AttentionMerge>,
    pub encoding: Option<EncodingSpec>,
    pub layer_tanh: bool,
}

/// Recurrent state threaded through time: hidden output, cell state, and
/// the FIFO window of past cell states.
#[derive(Clone)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
    pub queue: StateQueue,
}

impl CellState {
    pub fn zeros(batch: usize, hidden: usize, window: usize) -> crate::Result<CellState> {
        Ok(CellState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
            queue: StateQueue::new(window.max(1), batch, hidden, QueueInit::Zeros)?,
        })
    }
}

impl CellParams {
    /// Deterministic initialization: weights uniform in +-1/sqrt(hidden),
    /// biases zero except the forget-gate bias at 1.0, batch-norm gamma 1
    /// everywhere except the cell-state site at 0.1.
    pub fn init(cfg: &CellConfig, rng: &mut ChaCha8Rng) -> crate::Result<CellParams> {
        let (d, h) = (cfg.input_dim, cfg.hidden);
        if cfg.mode.uses_attention() && cfg.window == 0 {
            return Err(Error::contract(
                "attention cell modes need a state window of at least 1",
            ));
        }
        let bound = 1.0 / (h as f64).sqrt();
        let gate = |bias_value: f64, rng: &mut ChaCha8Rng| GateParams {
            w_h: Tensor::rand_uniform(&[h, h], -bound, bound, rng),
            w_x: Tensor::rand_uniform(&[d, h], -bound, bound, rng),
            bias: Tensor::filled(&[h], bias_value),
            bn: cfg.mode.uses_batch_norm().then(|| BatchNormParams::new(h, 1.0)),
        };
        let forget = gate(1.0, rng);
        let input = gate(0.0, rng);
        let output = gate(0.0, rng);
        let candidate = gate(0.0, rng);

        let encoding = if cfg.mode.uses_attention() && cfg.use_pe && cfg.n_pe > 0 {
            Some(EncodingSpec::new(cfg.window, cfg.n_pe)?)
        } else {
            None
        };
        let pe_width = encoding.as_ref().map_or(0, |e| e.n_pe);
        let attention = if cfg.mode.uses_attention() {
            Some(AttentionParams::init(
                d,
                h,
                h + pe_width,
                cfg.heads,
                cfg.activate_linears,
                cfg.activate_query,
                rng,
            )?)
        } else {
            None
        };
        let merge = match cfg.mode {
            CellMode::LarnnResidual => Some(AttentionMerge::Residual {
                w_attn: Tensor::rand_uniform(&[h, h], -bound, bound, rng),
            }),
            CellMode::LarnnLayer => Some(AttentionMerge::Layer {
                weight: Tensor::rand_uniform(&[d + 2 * h, h], -bound, bound, rng),
                bias: Tensor::zeros(&[h]),
            }),
            _ => None,
        };

        Ok(CellParams {
            mode: cfg.mode,
            input_dim: d,
            hidden: h,
            window: cfg.window,
            forget,
            input,
            output,
            candidate,
            bn_cell: cfg.mode.uses_batch_norm().then(|| BatchNormParams::new(h, 0.1)),
            bn_hidden: cfg.mode.uses_batch_norm().then(|| BatchNormParams::new(h, 1.0)),
            attention,
            merge,
            encoding,
            layer_tanh: cfg.layer_tanh,
        })
    }

    /// Runs one time step. Inputs are left untouched; the returned state
    /// carries the new hidden/cell tensors and the advanced window.
    pub fn step(
        &self,
        state: &CellState,
        x_t: &Tensor,
        training: bool,
    ) -> crate::Result<(Tensor, CellState)> {
        let (h, s, _) = self.step_traced(state, x_t, training)?;
        Ok((h, s))
    }

    /// As `step`, additionally returning the attention weights
    /// `[batch, heads, k]` for the attention modes.
    pub fn step_traced(
        &self,
        state: &CellState,
        x_t: &Tensor,
        training: bool,
    ) -> crate::Result<(Tensor, CellState, Option<Tensor>)> {
        let (_, d) = x_t.dims2();
        assert_eq!(
            d, self.input_dim,
            "cell step: input features {:?} vs configured {}",
            x_t.shape(),
            self.input_dim
        );

        // Attention over the windowed past cell states.
        let (attended, weights) = if let Some(attn) = &self.attention {
            let v = state.queue.as_tensor();
            let memory = match &self.encoding {
                Some(spec) => spec.concat_onto(&v),
                None => v,
            };
            let query = attn.make_query(x_t, &state.h);
            let (a, w) = attn.attend(&query, &memory, training)?;
            (Some(a), Some(w))
        } else {
            (None, None)
        };

        let pre = |gate: &GateParams| {
            let z = state.h.matmul(&gate.w_h).add(&x_t.matmul(&gate.w_x)).add(&gate.bias);
            match &gate.bn {
                Some(bn) => z.batch_norm(bn, training),
                None => z,
            }
        };

        let f = pre(&self.forget).sigmoid();
        ensure_finite(&f, "forget gate")?;
        let i = pre(&self.input).sigmoid();
        ensure_finite(&i, "input gate")?;
        let o = pre(&self.output).sigmoid();
        ensure_finite(&o, "output gate")?;

        let g = match (&self.merge, attended) {
            (None, _) => pre(&self.candidate).tanh(),
            (Some(AttentionMerge::Residual { w_attn }), Some(a)) => {
                let z = state
                    .h
                    .matmul(&self.candidate.w_h)
                    .add(&x_t.matmul(&self.candidate.w_x))
                    .add(&a.matmul(w_attn))
                    .add(&self.candidate.bias);
                let z = match &self.candidate.bn {
                    Some(bn) => z.batch_norm(bn, training),
                    None => z,
                };
                z.tanh()
            }
            (Some(AttentionMerge::Layer { weight, bias }), Some(a)) => {
                let z = Tensor::concat(&[x_t, &state.h, &a], 1).matmul(weight).add(bias);
                if self.layer_tanh {
                    z.tanh()
                } else {
                    z
                }
            }
            (Some(_), None) => unreachable!("attention merge without attention output"),
        };
        ensure_finite(&g, "candidate gate")?;

        let c_raw = f.mul(&state.c).add(&i.mul(&g));
        let c = match &self.bn_cell {
            Some(bn) => c_raw.batch_norm(bn, training),
            None => c_raw,
        };
        ensure_finite(&c, "cell state")?;

        let h = match self.mode {
            CellMode::Vanilla => o.mul(&c.tanh()),
            _ => {
                let z = o.mul(&c.elu());
                match &self.bn_hidden {
                    Some(bn) => z.batch_norm(bn, training),
                    None => z,
                }
            }
        };
        ensure_finite(&h, "hidden output")?;

        let queue = state.queue.pushed(&c);
        Ok((
            h.clone(),
            CellState { h, c, queue },
            weights,
        ))
    }

    /// Visits every learnable tensor in a fixed order, names prefixed.
    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let gates: [(&str, &mut GateParams); 4] = [
            ("forget", &mut self.forget),
            ("input", &mut self.input),
            ("output", &mut self.output),
            ("candidate", &mut self.candidate),
        ];
        for (name, gate) in gates {
            f(&format!("{prefix}{name}.w_h"), &mut gate.w_h);
            f(&format!("{prefix}{name}.w_x"), &mut gate.w_x);
            f(&format!("{prefix}{name}.bias"), &mut gate.bias);
            if let Some(bn) = &mut gate.bn {
                f(&format!("{prefix}{name}.bn.gamma"), &mut bn.gamma);
                f(&format!("{prefix}{name}.bn.beta"), &mut bn.beta);
            }
        }
        for (name, bn) in [("bn_cell", &mut self.bn_cell), ("bn_hidden", &mut self.bn_hidden)] {
            if let Some(bn) = bn {
                f(&format!("{prefix}{name}.gamma"), &mut bn.gamma);
                f(&format!("{prefix}{name}.beta"), &mut bn.beta);
            }
        }
        if let Some(attn) = &mut self.attention {
            for (name, lin) in [
                ("attn.query", &mut attn.query),
                ("attn.key", &mut attn.key),
                ("attn.value", &mut attn.value),
            ] {
                f(&format!("{prefix}{name}.weight"), &mut lin.weight);
                f(&format!("{prefix}{name}.bias"), &mut lin.bias);
            }
            for (name, bn) in [
                ("attn.bn_key", &mut attn.bn_key),
                ("attn.bn_value", &mut attn.bn_value),
                ("attn.bn_query", &mut attn.bn_query),
            ] {
                if let Some(bn) = bn {
                    f(&format!("{prefix}{name}.gamma"), &mut bn.gamma);
                    f(&format!("{prefix}{name}.beta"), &mut bn.beta);
                }
            }
        }
        match &mut self.merge {
            Some(AttentionMerge::Residual { w_attn }) => {
                f(&format!("{prefix}merge.w_attn"), w_attn);
            }
            Some(AttentionMerge::Layer { weight, bias }) => {
                f(&format!("{prefix}merge.weight"), weight);
                f(&format!("{prefix}merge.bias"), bias);
            }
            None => {}
        }
    }

    /// Visits the non-learnable running statistics of every batch-norm site.
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        let visit_bn = |name: String, bn: &mut Option<BatchNormParams>, f: &mut dyn FnMut(&str, &mut Vec<f64>)| {
            if let Some(bn) = bn {
                f(&format!("{name}.running_mean"), &mut bn.running_mean.borrow_mut());
                f(&format!("{name}.running_var"), &mut bn.running_var.borrow_mut());
            }
        };
        visit_bn(format!("{prefix}forget.bn"), &mut self.forget.bn, f);
        visit_bn(format!("{prefix}input.bn"), &mut self.input.bn, f);
        visit_bn(format!("{prefix}output.bn"), &mut self.output.bn, f);
        visit_bn(format!("{prefix}candidate.bn"), &mut self.candidate.bn, f);
        visit_bn(format!("{prefix}bn_cell"), &mut self.bn_cell, f);
        visit_bn(format!("{prefix}bn_hidden"), &mut self.bn_hidden, f);
        if let Some(attn) = &mut self.attention {
            visit_bn(format!("{prefix}attn.bn_key"), &mut attn.bn_key, f);
            visit_bn(format!("{prefix}attn.bn_value"), &mut attn.bn_value, f);
            visit_bn(format!("{prefix}attn.bn_query"), &mut attn.bn_query, f);
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params("", &mut |_, t| count += t.len());
        count
    }
}

fn ensure_finite(t: &Tensor, site: &str) -> crate::Result<()> {
    if t.has_non_finite() {
        Err(Error::non_finite(site))
    } else {
        Ok(())
    }
}
