//! Single-query multi-head scaled dot-product attention over the encoded
//! window of past cell states.
//!
//! One query per step, formed from the feature concatenation of the input
//! and the previous hidden state; keys and values are linear maps of the
//! window memory and, optionally, pass through an ELU followed by
//! feature-axis batch normalization before the dot products are taken.
//! Heads partition the hidden width: d_k = hidden / heads.

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::{attn_combine, attn_scores, BatchNormParams, Tensor};

/// A linear map `input -> output` with bias, applied over the innermost
/// feature axis (rank-3 inputs are flattened to rows first).
#[derive(Clone)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    /// Weights uniform in (-bound, +bound), bias zero.
    pub fn init(input: usize, output: usize, bound: f64, rng: &mut ChaCha8Rng) -> LinearParams {
        LinearParams {
            weight: Tensor::rand_uniform(&[input, output], -bound, bound, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        match x.rank() {
            2 => x.matmul(&self.weight).add(&self.bias),
            3 => {
                let (b, t, f) = x.dims3();
                let out = self.weight.shape()[1];
                x.reshape(&[b * t, f])
                    .matmul(&self.weight)
                    .add(&self.bias)
                    .reshape(&[b, t, out])
            }
            _ => panic!("linear: expected rank 2 or 3 input, got {:?}", x.shape()),
        }
    }
}

/// Parameters of one attention site.
#[derive(Clone)]
pub struct AttentionParams {
    /// Query map from `[x_t, h_prev]` (input_dim + hidden) to hidden.
    pub query: LinearParams,
    /// Key map from encoded memory features to hidden.
    pub key: LinearParams,
    /// Value map from encoded memory features to hidden.
    pub value: LinearParams,
    /// ELU + batch norm on the key linear (the activation-on-linears toggle).
    pub bn_key: Option<BatchNormParams>,
    pub bn_value: Option<BatchNormParams>,
    /// Optional ELU + batch norm on the query; off by default (only the
    /// key/value linear mappings are activated).
    pub bn_query: Option<BatchNormParams>,
    pub heads: usize,
}

impl AttentionParams {
    /// `memory_features` is the window feature width after the positional
    /// encoding concatenation (hidden + n_pe).
    pub fn init(
        input_dim: usize,
        hidden: usize,
        memory_features: usize,
        heads: usize,
        activate_linears: bool,
        activate_query: bool,
        rng: &mut ChaCha8Rng,
    ) -> crate::Result<AttentionParams> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::contract(format!(
                "attention: hidden {hidden} must be divisible by heads {heads}"
            )));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(AttentionParams {
            query: LinearParams::init(input_dim + hidden, hidden, bound, rng),
            key: LinearParams::init(memory_features, hidden, bound, rng),
            value: LinearParams::init(memory_features, hidden, bound, rng),
            bn_key: activate_linears.then(|| BatchNormParams::new(hidden, 1.0)),
            bn_value: activate_linears.then(|| BatchNormParams::new(hidden, 1.0)),
            bn_query: activate_query.then(|| BatchNormParams::new(hidden, 1.0)),
            heads,
        })
    }

    pub fn head_width(&self) -> usize {
        self.query.weight.shape()[1] / self.heads
    }

    /// The single query: a plain linear map of `[x_t, h_prev]` concatenated
    /// on the feature axis. No activation here.
    pub fn make_query(&self, x_t: &Tensor, h_prev: &Tensor) -> Tensor {
        self.query.apply(&Tensor::concat(&[x_t, h_prev], 1))
    }

    /// Attends the query over the `[batch, k, memory_features]` window.
    /// Returns the attended output `[batch, hidden]` and the attention
    /// weights `[batch, heads, k]`.
    pub fn attend(
        &self,
        query: &Tensor,
        memory: &Tensor,
        training: bool,
    ) -> crate::Result<(Tensor, Tensor)> {
        let (_, positions, _) = memory.dims3();
        if positions == 0 {
            return Err(Error::contract("attention: memory window is empty"));
        }
        let bnelu = |x: &Tensor, bn: &Option<BatchNormParams>| match bn {
            Some(bn) => x.elu().batch_norm(bn, training),
            None => x.clone(),
        };
        let q = bnelu(query, &self.bn_query);
        let keys = bnelu(&self.key.apply(memory), &self.bn_key);
        let values = bnelu(&self.value.apply(memory), &self.bn_value);
        let weights = attn_scores(&q, &keys, self.heads).softmax(2);
        let attended = attn_combine(&weights, &values, self.heads);
        Ok((attended, weights))
    }
}
