//! Gradient tape: records every differentiable operation during a forward
//! pass and replays them in reverse to accumulate gradients.
//!
//! Each recorded entry stores the operand handles plus whatever value
//! snapshots its backward rule needs. Replaying in reverse recording order
//! visits every node after all of its consumers, so a single sweep suffices.
//! Clearing the tape bumps a generation counter, which invalidates every
//! outstanding node handle atomically; using a stale handle panics.

use std::cell::RefCell;
use std::rc::Rc;

/// One operand of a recorded operation: the node id when the operand was
/// tracked (gradient flows back into it) and a snapshot of its values for
/// the backward rules that need them.
pub(crate) struct Arg {
    pub id: Option<usize>,
    pub data: Rc<Vec<f64>>,
}

pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Arg,
        b: Arg,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Arg,
        b: Arg,
    },
    /// Broadcast add of a rank-1 bias over the innermost (feature) axis.
    AddBias {
        x: Arg,
        bias: Arg,
        features: usize,
    },
    Mul {
        a: Arg,
        b: Arg,
    },
    Sigmoid {
        x: Arg,
        out: Rc<Vec<f64>>,
    },
    Tanh {
        x: Arg,
        out: Rc<Vec<f64>>,
    },
    Elu {
        x: Arg,
        out: Rc<Vec<f64>>,
    },
    Softmax {
        x: Arg,
        out: Rc<Vec<f64>>,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<Arg>,
        axis_extents: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Reshape {
        x: Arg,
    },
    SumAll {
        x: Arg,
    },
    /// Feature-axis batch normalization over `rows` rows of `features`
    /// columns. `xhat` is the normalized input and `inv_std` the per-feature
    /// 1/sqrt(var+eps) actually used in the forward pass (batch statistics
    /// in training mode, running statistics in eval mode).
    BatchNorm {
        x: Arg,
        gamma: Arg,
        beta: Arg,
        xhat: Rc<Vec<f64>>,
        inv_std: Vec<f64>,
        rows: usize,
        features: usize,
        training: bool,
    },
    /// Per-head scaled dot products of one query row against every window
    /// position: out[b,h,j] = scale * <q[b, h*dk..], key[b,j, h*dk..]>.
    AttnScores {
        query: Arg,
        key: Arg,
        heads: usize,
        dk: usize,
        positions: usize,
        scale: f64,
    },
    /// Per-head convex combination of value rows by attention weights:
    /// out[b, h*dk+d] = sum_j w[b,h,j] * v[b,j,h*dk+d].
    AttnCombine {
        weights: Arg,
        value: Arg,
        heads: usize,
        dk: usize,
        positions: usize,
    },
    /// Mean over the batch of -log softmax(logits)[label].
    CrossEntropy {
        logits: Arg,
        labels: Vec<usize>,
        probs: Rc<Vec<f64>>,
        classes: usize,
    },
}

pub(crate) struct Entry {
    pub op: Op,
    pub out_len: usize,
}

pub(crate) struct TapeInner {
    pub generation: u64,
    pub entries: Vec<Entry>,
    pub grads: Vec<Option<Vec<f64>>>,
}

/// Reverse-mode gradient tape. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                generation: 0,
                entries: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(&self, op: Op, out_len: usize) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.entries.len();
        inner.entries.push(Entry { op, out_len });
        inner.grads.push(None);
        id
    }

    /// Number of recorded entries (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded entry and gradient and invalidates all
    /// outstanding node handles in one step.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.generation += 1;
        inner.entries.clear();
        inner.grads.clear();
    }

    /// Resets accumulated gradients to zero without forgetting the graph.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
    }

    /// Seeds d(out)/d(out) = 1 at `seed` and sweeps the tape backwards.
    /// Each call propagates exactly one unit of seed gradient through a
    /// fresh workspace and folds the result into the persistent per-node
    /// accumulators, so repeated calls accumulate without compounding.
    pub(crate) fn backward_from(&self, seed: usize) {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        debug_assert_eq!(inner.entries[seed].out_len, 1);
        let mut work: Vec<Option<Vec<f64>>> = inner.entries.iter().map(|_| None).collect();
        work[seed] = Some(vec![1.0]);

        for id in (0..=seed).rev() {
            let Some(out_grad) = work[id].take() else {
                continue;
            };
            step_backward(&inner.entries[id].op, &out_grad, &mut work);
            match &mut inner.grads[id] {
                Some(g) => {
                    for (a, b) in g.iter_mut().zip(&out_grad) {
                        *a += b;
                    }
                }
                None => inner.grads[id] = Some(out_grad),
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, src: &[f64], len: usize) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => {
            debug_assert_eq!(src.len(), len);
            *slot = Some(src.to_vec());
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Applies one entry's backward rule, scattering `out_grad` into the
/// gradient slots of its tracked operands.
fn step_backward(op: &Op, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match op {
        Op::Leaf => {}

        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if let Some(ida) = a.id {
                // dA = go . B^T
                let da = add_into(&mut grads[ida], m * k);
                for i in 0..m {
                    for j in 0..n {
                        let g = go[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * b.data[p * n + j];
                        }
                    }
                }
            }
            if let Some(idb) = b.id {
                // dB = A^T . go
                let db = add_into(&mut grads[idb], k * n);
                for i in 0..m {
                    for p in 0..k {
                        let av = a.data[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * go[i * n + j];
                        }
                    }
                }
            }
        }

        Op::Add { a, b } => {
            if let Some(id) = a.id {
                accumulate(&mut grads[id], go, go.len());
            }
            if let Some(id) = b.id {
                accumulate(&mut grads[id], go, go.len());
            }
        }

        Op::AddBias { x, bias, features } => {
            if let Some(id) = x.id {
                accumulate(&mut grads[id], go, go.len());
            }
            if let Some(id) = bias.id {
                let db = add_into(&mut grads[id], *features);
                for (i, g) in go.iter().enumerate() {
                    db[i % features] += g;
                }
            }
        }

        Op::Mul { a, b } => {
            if let Some(id) = a.id {
                let da = add_into(&mut grads[id], go.len());
                for i in 0..go.len() {
                    da[i] += go[i] * b.data[i];
                }
            }
            if let Some(id) = b.id {
                let db = add_into(&mut grads[id], go.len());
                for i in 0..go.len() {
                    db[i] += go[i] * a.data[i];
                }
            }
        }

        Op::Sigmoid { x, out } => {
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], go.len());
                for i in 0..go.len() {
                    let s = out[i];
                    dx[i] += go[i] * s * (1.0 - s);
                }
            }
        }

        Op::Tanh { x, out } => {
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], go.len());
                for i in 0..go.len() {
                    let t = out[i];
                    dx[i] += go[i] * (1.0 - t * t);
                }
            }
        }

        Op::Elu { x, out } => {
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], go.len());
                for i in 0..go.len() {
                    // d elu = 1 for x >= 0, exp(x) = out + 1 for x < 0; the
                    // output sign alone distinguishes the branches.
                    let d = if out[i] >= 0.0 { 1.0 } else { out[i] + 1.0 };
                    dx[i] += go[i] * d;
                }
            }
        }

        Op::Softmax {
            x,
            out,
            outer,
            axis_len,
            inner,
        } => {
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], go.len());
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * axis_len * inner + i;
                        let mut dot = 0.0;
                        for a in 0..*axis_len {
                            let f = base + a * inner;
                            dot += go[f] * out[f];
                        }
                        for a in 0..*axis_len {
                            let f = base + a * inner;
                            dx[f] += out[f] * (go[f] - dot);
                        }
                    }
                }
            }
        }

        Op::Concat {
            parts,
            axis_extents,
            outer,
            inner,
        } => {
            let total_axis: usize = axis_extents.iter().sum();
            for (p, part) in parts.iter().enumerate() {
                let Some(id) = part.id else { continue };
                let ext = axis_extents[p];
                let offset: usize = axis_extents[..p].iter().sum();
                let dp = add_into(&mut grads[id], outer * ext * inner);
                for o in 0..*outer {
                    let src = (o * total_axis + offset) * inner;
                    let dst = o * ext * inner;
                    for i in 0..ext * inner {
                        dp[dst + i] += go[src + i];
                    }
                }
            }
        }

        Op::Reshape { x } => {
            if let Some(id) = x.id {
                accumulate(&mut grads[id], go, go.len());
            }
        }

        Op::SumAll { x } => {
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], x.data.len());
                for v in dx.iter_mut() {
                    *v += go[0];
                }
            }
        }

        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            rows,
            features,
            training,
        } => {
            let (rows, features) = (*rows, *features);
            if let Some(id) = beta.id {
                let db = add_into(&mut grads[id], features);
                for (i, g) in go.iter().enumerate() {
                    db[i % features] += g;
                }
            }
            if let Some(id) = gamma.id {
                let dg = add_into(&mut grads[id], features);
                for (i, g) in go.iter().enumerate() {
                    dg[i % features] += g * xhat[i];
                }
            }
            if let Some(id) = x.id {
                let dx = add_into(&mut grads[id], rows * features);
                if *training {
                    // Gradient flows through the batch statistics too.
                    let n = rows as f64;
                    for f in 0..features {
                        let g_f = gamma.data[f];
                        let is = inv_std[f];
                        let mut sum_go = 0.0;
                        let mut sum_go_xhat = 0.0;
                        for r in 0..rows {
                            let i = r * features + f;
                            sum_go += go[i];
                            sum_go_xhat += go[i] * xhat[i];
                        }
                        for r in 0..rows {
                            let i = r * features + f;
                            dx[i] += g_f * is / n
                                * (n * go[i] - sum_go - xhat[i] * sum_go_xhat);
                        }
                    }
                } else {
                    // Running statistics are constants: a pure affine map.
                    for r in 0..rows {
                        for f in 0..features {
                            let i = r * features + f;
                            dx[i] += go[i] * gamma.data[f] * inv_std[f];
                        }
                    }
                }
            }
        }

        Op::AttnScores {
            query,
            key,
            heads,
            dk,
            positions,
            scale,
        } => {
            let (heads, dk, positions) = (*heads, *dk, *positions);
            let h_total = heads * dk;
            let batch = query.data.len() / h_total;
            if let Some(id) = query.id {
                let dq = add_into(&mut grads[id], batch * h_total);
                for b in 0..batch {
                    for h in 0..heads {
                        for j in 0..positions {
                            let g = scale * go[(b * heads + h) * positions + j];
                            if g == 0.0 {
                                continue;
                            }
                            let kbase = (b * positions + j) * h_total + h * dk;
                            let qbase = b * h_total + h * dk;
                            for d in 0..dk {
                                dq[qbase + d] += g * key.data[kbase + d];
                            }
                        }
                    }
                }
            }
            if let Some(id) = key.id {
                let dkey = add_into(&mut grads[id], batch * positions * h_total);
                for b in 0..batch {
                    for h in 0..heads {
                        let qbase = b * h_total + h * dk;
                        for j in 0..positions {
                            let g = scale * go[(b * heads + h) * positions + j];
                            if g == 0.0 {
                                continue;
                            }
                            let kbase = (b * positions + j) * h_total + h * dk;
                            for d in 0..dk {
                                dkey[kbase + d] += g * query.data[qbase + d];
                            }
                        }
                    }
                }
            }
        }

        Op::AttnCombine {
            weights,
            value,
            heads,
            dk,
            positions,
        } => {
            let (heads, dk, positions) = (*heads, *dk, *positions);
            let h_total = heads * dk;
            let batch = weights.data.len() / (heads * positions);
            if let Some(id) = weights.id {
                let dw = add_into(&mut grads[id], batch * heads * positions);
                for b in 0..batch {
                    for h in 0..heads {
                        let obase = b * h_total + h * dk;
                        for j in 0..positions {
                            let vbase = (b * positions + j) * h_total + h * dk;
                            let mut acc = 0.0;
                            for d in 0..dk {
                                acc += go[obase + d] * value.data[vbase + d];
                            }
                            dw[(b * heads + h) * positions + j] += acc;
                        }
                    }
                }
            }
            if let Some(id) = value.id {
                let dv = add_into(&mut grads[id], batch * positions * h_total);
                for b in 0..batch {
                    for h in 0..heads {
                        let obase = b * h_total + h * dk;
                        for j in 0..positions {
                            let w = weights.data[(b * heads + h) * positions + j];
                            if w == 0.0 {
                                continue;
                            }
                            let vbase = (b * positions + j) * h_total + h * dk;
                            for d in 0..dk {
                                dv[vbase + d] += w * go[obase + d];
                            }
                        }
                    }
                }
            }
        }

        Op::CrossEntropy {
            logits,
            labels,
            probs,
            classes,
        } => {
            if let Some(id) = logits.id {
                let batch = labels.len();
                let dl = add_into(&mut grads[id], batch * classes);
                let g = go[0] / batch as f64;
                for b in 0..batch {
                    for c in 0..*classes {
                        let i = b * classes + c;
                        let target = if c == labels[b] { 1.0 } else { 0.0 };
                        dl[i] += g * (probs[i] - target);
                    }
                }
            }
        }
    }
}
