//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are rank 1..=3, row-major, with the feature axis innermost
//! (batch, time, feature by convention). Values are immutable snapshots
//! behind an `Rc`, so threading state through a recurrent loop is cheap.
//! An operation whose operands carry a tape handle records itself on that
//! tape and returns a tracked result; operations on plain values stay off
//! the tape entirely, which is what evaluation mode relies on.

mod batchnorm;
mod tape;

pub use batchnorm::{BatchNormParams, BN_EPSILON, BN_MOMENTUM};
pub use tape::Tape;

use std::rc::Rc;

use rand::Rng;

use tape::{Arg, Op};

use crate::error::Error;

/// Dense tensor of 64-bit floats, optionally tracked on a gradient tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<Node>,
}

#[derive(Clone)]
struct Node {
    tape: Tape,
    generation: u64,
    id: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 12 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{:?}, ...]", &self.data[..12])
        }
    }
}

// ── Construction and access ─────────────────────────────────────────────

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "tensor rank must be 1..=3, got shape {shape:?}"
        );
        let expected: usize = shape.iter().product();
        assert_eq!(
            expected,
            data.len(),
            "shape {shape:?} implies {expected} elements, data has {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(&[1], vec![value])
    }

    /// Uniform random tensor in `[lo, hi)`, deterministic given the rng.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.rank(), 2, "expected rank-2 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.rank(), 3, "expected rank-3 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn at3(&self, b: usize, t: usize, f: usize) -> f64 {
        let (_, time, feat) = self.dims3();
        self.data[(b * time + t) * feat + f]
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

// ── Tape bookkeeping ────────────────────────────────────────────────────

impl Tensor {
    /// Registers this tensor as a leaf on `tape` and returns the tracked
    /// handle. Gradients accumulate into the leaf during `backward`.
    pub fn track(&self, tape: &Tape) -> Tensor {
        let id = tape.push(Op::Leaf, self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: Some(Node {
                tape: tape.clone(),
                generation: tape.inner.borrow().generation,
                id,
            }),
        }
    }

    /// Value-only copy with no tape association.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Accumulated gradient, shaped like `self`. `None` for untracked
    /// tensors and for handles invalidated by `Tape::clear`.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let node = self.node.as_ref()?;
        let inner = node.tape.inner.borrow();
        if inner.generation != node.generation {
            return None;
        }
        Some(match &inner.grads[node.id] {
            Some(g) => g.clone(),
            None => vec![0.0; inner.entries[node.id].out_len],
        })
    }

    /// Seeds dL/dL = 1 at this scalar and propagates gradients through the
    /// tape. Repeated calls accumulate; callers zero grads between steps.
    pub fn backward(&self) -> crate::Result<()> {
        let node = self.node.as_ref().ok_or_else(|| {
            Error::contract("backward: loss tensor is not tracked on any tape")
        })?;
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape
            )));
        }
        let tape = node.tape.clone();
        assert_eq!(
            tape.inner.borrow().generation,
            node.generation,
            "backward: stale node handle (tape was cleared)"
        );
        tape.backward_from(node.id);
        Ok(())
    }

    /// Operand view for recording: node id if tracked plus a value snapshot.
    fn arg(&self) -> Arg {
        let id = self.node.as_ref().map(|n| {
            assert_eq!(
                n.tape.inner.borrow().generation,
                n.generation,
                "stale node handle (tape was cleared)"
            );
            n.id
        });
        Arg {
            id,
            data: Rc::clone(&self.data),
        }
    }
}

/// Resolves the tape shared by the tracked operands, panicking on a mix of
/// distinct tapes or a cleared tape.
fn joint_tape(operands: &[&Tensor]) -> Option<Tape> {
    let mut found: Option<&Node> = None;
    for t in operands {
        if let Some(node) = &t.node {
            assert_eq!(
                node.tape.inner.borrow().generation,
                node.generation,
                "stale node handle (tape was cleared)"
            );
            match found {
                None => found = Some(node),
                Some(prev) => assert!(
                    prev.tape.same_tape(&node.tape),
                    "operands are tracked on different tapes"
                ),
            }
        }
    }
    found.map(|n| n.tape.clone())
}

fn record(tape: Option<Tape>, op: Op, shape: Vec<usize>, data: Rc<Vec<f64>>) -> Tensor {
    let node = tape.map(|tape| {
        let generation = tape.inner.borrow().generation;
        let id = tape.push(op, data.len());
        Node {
            tape,
            generation,
            id,
        }
    });
    Tensor { shape, data, node }
}

// ── Differentiable operations ───────────────────────────────────────────

impl Tensor {
    /// Standard 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, ka) = self.dims2();
        let (kb, n) = other.dims2();
        assert_eq!(
            ka, kb,
            "matmul: inner dimensions disagree: {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..ka {
                let av = a[i * ka + p];
                if av == 0.0 {
                    continue;
                }
                let row = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        let tape = joint_tape(&[self, other]);
        record(
            tape,
            Op::MatMul {
                a: self.arg(),
                b: other.arg(),
                m,
                k: ka,
                n,
            },
            vec![m, n],
            Rc::new(out),
        )
    }

    /// Elementwise addition. The one permitted broadcast is adding a rank-1
    /// bias over the innermost (feature) axis.
    pub fn add(&self, other: &Tensor) -> Tensor {
        if self.shape == other.shape {
            let out: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
            let tape = joint_tape(&[self, other]);
            return record(
                tape,
                Op::Add {
                    a: self.arg(),
                    b: other.arg(),
                },
                self.shape.clone(),
                Rc::new(out),
            );
        }
        let (x, bias) = if other.rank() == 1 && self.rank() > 1 {
            (self, other)
        } else if self.rank() == 1 && other.rank() > 1 {
            (other, self)
        } else {
            panic!(
                "add: shapes disagree and are not a feature-bias broadcast: {:?} vs {:?}",
                self.shape, other.shape
            );
        };
        let features = *x.shape.last().unwrap();
        assert_eq!(
            bias.len(),
            features,
            "add: bias length {:?} does not match feature axis of {:?}",
            bias.shape,
            x.shape
        );
        let out: Vec<f64> = x
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias.data[i % features])
            .collect();
        let tape = joint_tape(&[x, bias]);
        record(
            tape,
            Op::AddBias {
                x: x.arg(),
                bias: bias.arg(),
                features,
            },
            x.shape.clone(),
            Rc::new(out),
        )
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.shape, other.shape,
            "mul: shapes disagree: {:?} vs {:?}",
            self.shape, other.shape
        );
        let out: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).collect();
        let tape = joint_tape(&[self, other]);
        record(
            tape,
            Op::Mul {
                a: self.arg(),
                b: other.arg(),
            },
            self.shape.clone(),
            Rc::new(out),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Rc<Vec<f64>> =
            Rc::new(self.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect());
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::Sigmoid {
                x: self.arg(),
                out: Rc::clone(&out),
            },
            self.shape.clone(),
            out,
        )
    }

    pub fn tanh(&self) -> Tensor {
        let out: Rc<Vec<f64>> = Rc::new(self.data.iter().map(|v| v.tanh()).collect());
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::Tanh {
                x: self.arg(),
                out: Rc::clone(&out),
            },
            self.shape.clone(),
            out,
        )
    }

    /// Exponential linear unit: x for x >= 0, exp(x) - 1 below.
    pub fn elu(&self) -> Tensor {
        let out: Rc<Vec<f64>> = Rc::new(
            self.data
                .iter()
                .map(|&v| if v >= 0.0 { v } else { v.exp() - 1.0 })
                .collect(),
        );
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::Elu {
                x: self.arg(),
                out: Rc::clone(&out),
            },
            self.shape.clone(),
            out,
        )
    }

    /// Softmax along `axis`, computed with max-subtraction for stability.
    pub fn softmax(&self, axis: usize) -> Tensor {
        assert!(
            axis < self.rank(),
            "softmax: axis {axis} out of range for shape {:?}",
            self.shape
        );
        let axis_len = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    max = max.max(self.data[base + a * inner]);
                }
                let mut sum = 0.0;
                for a in 0..axis_len {
                    let e = (self.data[base + a * inner] - max).exp();
                    out[base + a * inner] = e;
                    sum += e;
                }
                for a in 0..axis_len {
                    out[base + a * inner] /= sum;
                }
            }
        }
        let out = Rc::new(out);
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::Softmax {
                x: self.arg(),
                out: Rc::clone(&out),
                outer,
                axis_len,
                inner,
            },
            self.shape.clone(),
            out,
        )
    }

    /// Reinterprets the data with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.len(),
            "reshape: {:?} and {shape:?} differ in element count",
            self.shape
        );
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "reshape: rank must be 1..=3, got {shape:?}"
        );
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::Reshape { x: self.arg() },
            shape.to_vec(),
            Rc::clone(&self.data),
        )
    }

    /// Sum of every element, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data.iter().sum();
        let tape = joint_tape(&[self]);
        record(tape, Op::SumAll { x: self.arg() }, vec![1], Rc::new(vec![s]))
    }

    /// Mean cross-entropy between rank-2 logits and class labels, computed
    /// via log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> Tensor {
        let (batch, classes) = self.dims2();
        assert_eq!(
            batch,
            labels.len(),
            "cross_entropy: {batch} logit rows vs {} labels",
            labels.len()
        );
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            assert!(
                label < classes,
                "cross_entropy: label {label} out of range for {classes} classes"
            );
            let row = &self.data[b * classes..(b + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..classes {
                let e = (row[c] - max).exp();
                probs[b * classes + c] = e;
                sum += e;
            }
            for c in 0..classes {
                probs[b * classes + c] /= sum;
            }
            total -= row[label] - max - sum.ln();
        }
        let loss = total / batch as f64;
        let tape = joint_tape(&[self]);
        record(
            tape,
            Op::CrossEntropy {
                logits: self.arg(),
                labels: labels.to_vec(),
                probs: Rc::new(probs),
                classes,
            },
            vec![1],
            Rc::new(vec![loss]),
        )
    }

    /// Feature-axis batch normalization. Rank-3 input is treated as
    /// (batch*time) rows of features. Training mode normalizes by batch
    /// statistics (biased variance) and folds them into the running
    /// statistics; eval mode normalizes by the running statistics.
    pub fn batch_norm(&self, params: &BatchNormParams, training: bool) -> Tensor {
        let features = *self.shape.last().unwrap();
        assert_eq!(
            features,
            params.features(),
            "batch_norm: feature axis {:?} does not match {} normalizer features",
            self.shape,
            params.features()
        );
        assert!(self.rank() >= 2, "batch_norm: input must be rank 2 or 3");
        let rows = self.len() / features;
        let eps = params.epsilon;

        let (mean, var) = if training {
            let mut mean = vec![0.0; features];
            let mut var = vec![0.0; features];
            for r in 0..rows {
                for f in 0..features {
                    mean[f] += self.data[r * features + f];
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            for r in 0..rows {
                for f in 0..features {
                    let d = self.data[r * features + f] - mean[f];
                    var[f] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= rows as f64;
            }
            // Running statistics take the unbiased variance when defined.
            let unbias = if rows > 1 {
                rows as f64 / (rows - 1) as f64
            } else {
                1.0
            };
            let momentum = params.momentum;
            let mut rm = params.running_mean.borrow_mut();
            let mut rv = params.running_var.borrow_mut();
            for f in 0..features {
                rm[f] = (1.0 - momentum) * rm[f] + momentum * mean[f];
                rv[f] = (1.0 - momentum) * rv[f] + momentum * var[f] * unbias;
            }
            (mean, var)
        } else {
            (
                params.running_mean.borrow().clone(),
                params.running_var.borrow().clone(),
            )
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; self.len()];
        let mut out = vec![0.0; self.len()];
        for r in 0..rows {
            for f in 0..features {
                let i = r * features + f;
                xhat[i] = (self.data[i] - mean[f]) * inv_std[f];
                out[i] = params.gamma.data[f] * xhat[i] + params.beta.data[f];
            }
        }
        let tape = joint_tape(&[self, &params.gamma, &params.beta]);
        record(
            tape,
            Op::BatchNorm {
                x: self.arg(),
                gamma: params.gamma.arg(),
                beta: params.beta.arg(),
                xhat: Rc::new(xhat),
                inv_std,
                rows,
                features,
                training,
            },
            self.shape.clone(),
            Rc::new(out),
        )
    }

    /// Concatenates tensors of equal rank along `axis`; all other extents
    /// must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat: no tensors given");
        let rank = parts[0].rank();
        assert!(axis < rank, "concat: axis {axis} out of range for rank {rank}");
        let mut out_shape = parts[0].shape.clone();
        for p in &parts[1..] {
            assert_eq!(p.rank(), rank, "concat: mixed ranks {:?} vs {:?}", parts[0].shape, p.shape);
            for d in 0..rank {
                if d != axis {
                    assert_eq!(
                        p.shape[d], out_shape[d],
                        "concat: off-axis extents disagree: {:?} vs {:?}",
                        parts[0].shape, p.shape
                    );
                }
            }
        }
        let axis_extents: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        out_shape[axis] = axis_extents.iter().sum();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];

        let mut out = vec![0.0; outer * total_axis * inner];
        for o in 0..outer {
            let mut offset = 0;
            for p in parts {
                let ext = p.shape[axis];
                let src = o * ext * inner;
                let dst = (o * total_axis + offset) * inner;
                out[dst..dst + ext * inner].copy_from_slice(&p.data[src..src + ext * inner]);
                offset += ext;
            }
        }
        let refs: Vec<&Tensor> = parts.to_vec();
        let tape = joint_tape(&refs);
        record(
            tape,
            Op::Concat {
                parts: parts.iter().map(|p| p.arg()).collect(),
                axis_extents,
                outer,
                inner,
            },
            out_shape,
            Rc::new(out),
        )
    }
}

// ── Attention primitives ────────────────────────────────────────────────

/// Per-head scaled dot products of a single query against every window
/// position: returns [batch, heads, positions] logits already divided by
/// sqrt(d_k).
pub fn attn_scores(query: &Tensor, key: &Tensor, heads: usize) -> Tensor {
    let (batch, width) = query.dims2();
    let (kb, positions, kw) = key.dims3();
    assert_eq!(batch, kb, "attn_scores: batch extents disagree: {batch} vs {kb}");
    assert_eq!(
        width, kw,
        "attn_scores: query width {width} vs key feature width {kw}"
    );
    assert!(
        heads > 0 && width % heads == 0,
        "attn_scores: width {width} not divisible by heads {heads}"
    );
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = vec![0.0; batch * heads * positions];
    for b in 0..batch {
        for h in 0..heads {
            let qbase = b * width + h * dk;
            for j in 0..positions {
                let kbase = (b * positions + j) * width + h * dk;
                let mut dot = 0.0;
                for d in 0..dk {
                    dot += query.data[qbase + d] * key.data[kbase + d];
                }
                out[(b * heads + h) * positions + j] = dot * scale;
            }
        }
    }
    let tape = joint_tape(&[query, key]);
    record(
        tape,
        Op::AttnScores {
            query: query.arg(),
            key: key.arg(),
            heads,
            dk,
            positions,
            scale,
        },
        vec![batch, heads, positions],
        Rc::new(out),
    )
}

/// Weighted per-head sum of value rows: [batch, heads, positions] weights
/// against [batch, positions, heads*d_k] values, heads re-concatenated.
pub fn attn_combine(weights: &Tensor, value: &Tensor, heads: usize) -> Tensor {
    let (batch, wh, positions) = weights.dims3();
    let (vb, vp, width) = value.dims3();
    assert_eq!(wh, heads, "attn_combine: weights carry {wh} heads, expected {heads}");
    assert_eq!(batch, vb, "attn_combine: batch extents disagree: {batch} vs {vb}");
    assert_eq!(
        positions, vp,
        "attn_combine: window extents disagree: {positions} vs {vp}"
    );
    assert!(
        width % heads == 0,
        "attn_combine: value width {width} not divisible by heads {heads}"
    );
    let dk = width / heads;
    let mut out = vec![0.0; batch * width];
    for b in 0..batch {
        for h in 0..heads {
            let obase = b * width + h * dk;
            for j in 0..positions {
                let w = weights.data[(b * heads + h) * positions + j];
                if w == 0.0 {
                    continue;
                }
                let vbase = (b * positions + j) * width + h * dk;
                for d in 0..dk {
                    out[obase + d] += w * value.data[vbase + d];
                }
            }
        }
    }
    let tape = joint_tape(&[weights, value]);
    record(
        tape,
        Op::AttnCombine {
            weights: weights.arg(),
            value: value.arg(),
            heads,
            dk,
            positions,
        },
        vec![batch, width],
        Rc::new(out),
    )
}

// ── Value-level utilities (no gradient flow) ────────────────────────────

impl Tensor {
    /// Copies time step `t` out of a [batch, time, feature] tensor as a
    /// detached [batch, feature] value.
    pub fn slice_time(&self, t: usize) -> Tensor {
        let (batch, time, feat) = self.dims3();
        assert!(t < time, "slice_time: index {t} out of range for {time} steps");
        let mut out = Vec::with_capacity(batch * feat);
        for b in 0..batch {
            let base = (b * time + t) * feat;
            out.extend_from_slice(&self.data[base..base + feat]);
        }
        Tensor::new(&[batch, feat], out)
    }

    /// Splits along `axis` into detached pieces of the given extents
    /// (the value-level inverse of `concat`).
    pub fn split(&self, axis: usize, extents: &[usize]) -> Vec<Tensor> {
        assert!(axis < self.rank(), "split: axis {axis} out of range");
        let total: usize = extents.iter().sum();
        assert_eq!(
            total, self.shape[axis],
            "split: extents {extents:?} do not sum to axis extent {}",
            self.shape[axis]
        );
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut offset = 0;
        extents
            .iter()
            .map(|&ext| {
                let mut data = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    let src = (o * self.shape[axis] + offset) * inner;
                    data.extend_from_slice(&self.data[src..src + ext * inner]);
                }
                offset += ext;
                let mut shape = self.shape.clone();
                shape[axis] = ext;
                Tensor::new(&shape, data)
            })
            .collect()
    }
}
