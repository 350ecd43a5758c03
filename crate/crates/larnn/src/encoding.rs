//! Modified sinusoidal positional encoding for the attention window.
//!
//! Wavelengths are exact powers of two, the longest being the smallest
//! power of two that is at least four times the window size, halving per
//! channel. Position zero is the most recent state, increasing toward older
//! states, and the sine block and cosine block are split rather than
//! interleaved. The encoding is concatenated onto the feature axis of the
//! windowed state tensor instead of being added to it.

use std::f64::consts::TAU;

use crate::error::Error;
use crate::tensor::Tensor;

/// Configuration of one positional encoding: `window` positions wide and
/// `n_pe` feature channels deep (half sines, half cosines).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSpec {
    pub window: usize,
    pub n_pe: usize,
    pub wavelengths: Vec<f64>,
}

impl EncodingSpec {
    /// Builds the wavelength ladder for a window of `k` positions and
    /// `n_pe` channels. `n_pe = 0` disables the encoding entirely.
    pub fn new(k: usize, n_pe: usize) -> crate::Result<EncodingSpec> {
        if k == 0 {
            return Err(Error::contract("positional encoding: window must be >= 1"));
        }
        if n_pe % 2 != 0 {
            return Err(Error::contract(format!(
                "positional encoding: n_pe must be even (half sines, half cosines), got {n_pe}"
            )));
        }
        let base = (4 * k).next_power_of_two() as f64;
        let wavelengths: Vec<f64> = (0..n_pe / 2).map(|j| base / (1u64 << j) as f64).collect();
        if let Some(&shortest) = wavelengths.last() {
            if shortest < 2.0 {
                return Err(Error::contract(format!(
                    "positional encoding: {} channels walk the shortest wavelength down to \
                     {shortest}, below the minimum of 2 (window {k})",
                    n_pe / 2
                )));
            }
        }
        Ok(EncodingSpec {
            window: k,
            n_pe,
            wavelengths,
        })
    }

    pub fn enabled(&self) -> bool {
        self.n_pe > 0
    }

    /// The `window x n_pe` encoding matrix. Row `pos` holds the sine block
    /// followed by the cosine block at phase `2*pi*pos / wavelength`;
    /// `pos = 0` is the most recent state. Deterministic, no random phase.
    pub fn build(&self) -> Tensor {
        let half = self.n_pe / 2;
        let mut data = Vec::with_capacity(self.window * self.n_pe);
        for pos in 0..self.window {
            for lambda in &self.wavelengths {
                data.push((pos as f64 / lambda * TAU).sin());
            }
            for lambda in &self.wavelengths {
                data.push((pos as f64 / lambda * TAU).cos());
            }
        }
        debug_assert_eq!(data.len(), self.window * half * 2);
        Tensor::new(&[self.window, self.n_pe], data)
    }

    /// Concatenates the encoding onto the feature axis of a windowed state
    /// tensor `[batch, window, features]`, broadcasting rows across the
    /// batch. The original features are left untouched in front. With the
    /// encoding disabled this is the identity.
    pub fn concat_onto(&self, v: &Tensor) -> Tensor {
        if !self.enabled() {
            return v.clone();
        }
        let (batch, time, _features) = v.dims3();
        assert_eq!(
            time, self.window,
            "positional encoding: window tensor has {time} steps, encoding expects {}",
            self.window
        );
        let rows = self.build();
        let mut tiled = Vec::with_capacity(batch * time * self.n_pe);
        for _ in 0..batch {
            tiled.extend_from_slice(rows.data());
        }
        let tiled = Tensor::new(&[batch, time, self.n_pe], tiled);
        Tensor::concat(&[v, &tiled], 2)
    }
}
