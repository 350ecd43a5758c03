//! Fixed-capacity FIFO queue of the most recent cell states.
//!
//! The queue is pre-filled to capacity at construction so that its tensor
//! view always has time extent exactly `k`; pushing at capacity drops the
//! oldest entry. Entry 0 is the newest state, matching position 0 of the
//! positional encoding. Entries pushed within the current unrolled window
//! stay gradient-tracked; anything older is a detached value snapshot.

use std::collections::VecDeque;

use crate::error::Error;
use crate::tensor::Tensor;

/// How to pre-fill a fresh queue.
#[derive(Debug, Clone)]
pub enum QueueInit {
    Zeros,
    Constant(f64),
    /// Every slot starts as a copy of this `[batch, features]` tensor.
    Seed(Tensor),
}

/// FIFO window over past cell states, newest first.
#[derive(Clone)]
pub struct StateQueue {
    entries: VecDeque<Tensor>,
    batch: usize,
    features: usize,
}

impl StateQueue {
    pub fn new(capacity: usize, batch: usize, features: usize, init: QueueInit) -> crate::Result<StateQueue> {
        if capacity == 0 {
            return Err(Error::contract("state queue: capacity must be >= 1"));
        }
        let seed = match init {
            QueueInit::Zeros => Tensor::zeros(&[batch, features]),
            QueueInit::Constant(c) => Tensor::filled(&[batch, features], c),
            QueueInit::Seed(t) => {
                if t.shape() != [batch, features] {
                    return Err(Error::contract(format!(
                        "state queue: seed tensor shape {:?} does not match [{batch}, {features}]",
                        t.shape()
                    )));
                }
                t.detach()
            }
        };
        Ok(StateQueue {
            entries: (0..capacity).map(|_| seed.clone()).collect(),
            batch,
            features,
        })
    }

    /// Capacity, which equals the length at all times.
    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &Tensor {
        &self.entries[index]
    }

    /// Inserts `state` as the newest entry, evicting the oldest.
    pub fn push(&mut self, state: &Tensor) {
        assert_eq!(
            state.shape(),
            [self.batch, self.features],
            "state queue: pushed shape {:?} does not match [{}, {}]",
            state.shape(),
            self.batch,
            self.features
        );
        self.entries.pop_back();
        self.entries.push_front(state.clone());
    }

    /// Functional push: the queue one state later.
    pub fn pushed(&self, state: &Tensor) -> StateQueue {
        let mut next = self.clone();
        next.push(state);
        next
    }

    /// Materializes the window as a `[batch, k, features]` tensor, newest
    /// state at time index 0. Tracked entries keep their gradient paths.
    pub fn as_tensor(&self) -> Tensor {
        let shaped: Vec<Tensor> = self
            .entries
            .iter()
            .map(|e| e.reshape(&[self.batch, 1, self.features]))
            .collect();
        let refs: Vec<&Tensor> = shaped.iter().collect();
        Tensor::concat(&refs, 1)
    }
}
